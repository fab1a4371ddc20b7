//! Per-feature statistics over a scan corpus, and the metrics built on them.
//!
//! A scan encodes every corpus row, keeps the sparse code at one dictionary
//! level and records, for each latent, the rows whose code exceeds that
//! latent's threshold. From those sets come the wrong ratio `M_i` (fraction of
//! activating rows labeled error), population relevance (fraction of all
//! latents with `M_i >= tau`), the wrong-ratio histogram and the per-generator
//! mean error count.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dict::DictModel;
use crate::error::{Error, Result};
use crate::store::{Label, RowMeta, RowSource};

pub const DEFAULT_TAU: f64 = 0.95;
pub const DEFAULT_MIN_SUPPORT: usize = 10;
pub const DEFAULT_BIN_WIDTH: f64 = 0.05;
pub const DEFAULT_TOP_N: usize = 20;

/// Histogram bin edges are computed in floating point; a value this close
/// below an edge is counted in the upper bin, so `0.7` lands in `[0.70, 0.75)`.
const BIN_SNAP: f64 = 1e-9;

/// How each latent's activation threshold is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ThetaRule {
    /// `theta_i = factor * max_x f_i(x)` over the scan corpus.
    RelativeToMax(f64),
    /// The same threshold for every latent.
    Absolute(f64),
    /// Nearest-rank `q`-quantile of the latent's positive activations.
    Quantile(f64),
}

impl Default for ThetaRule {
    fn default() -> Self {
        ThetaRule::RelativeToMax(0.5)
    }
}

impl ThetaRule {
    pub fn validate(self) -> Result<()> {
        let ok = match self {
            ThetaRule::RelativeToMax(f) => f.is_finite() && f >= 0.0,
            ThetaRule::Absolute(t) => t.is_finite() && t >= 0.0,
            ThetaRule::Quantile(q) => (0.0..=1.0).contains(&q),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid theta rule {self}")))
        }
    }

    /// The threshold for a latent given its positive activation values over
    /// the corpus, in any order.
    pub fn threshold(self, positive: &[f64]) -> f64 {
        match self {
            ThetaRule::RelativeToMax(f) => f * positive.iter().copied().fold(0.0, f64::max),
            ThetaRule::Absolute(t) => t,
            ThetaRule::Quantile(q) => {
                if positive.is_empty() {
                    return 0.0;
                }
                let mut v = positive.to_vec();
                v.sort_by(f64::total_cmp);
                let rank = (q * v.len() as f64).ceil() as usize;
                v[rank.clamp(1, v.len()) - 1]
            }
        }
    }
}

impl fmt::Display for ThetaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThetaRule::RelativeToMax(x) => write!(f, "relative:{x}"),
            ThetaRule::Absolute(x) => write!(f, "absolute:{x}"),
            ThetaRule::Quantile(x) => write!(f, "quantile:{x}"),
        }
    }
}

impl FromStr for ThetaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("theta rule {s:?}; expected relative:<f>, absolute:<t> or quantile:<q>"));
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        let rule = match kind.trim() {
            "relative" => ThetaRule::RelativeToMax(value),
            "absolute" => ThetaRule::Absolute(value),
            "quantile" => ThetaRule::Quantile(value),
            _ => return Err(bad()),
        };
        rule.validate()?;
        Ok(rule)
    }
}

impl TryFrom<String> for ThetaRule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ThetaRule> for String {
    fn from(r: ThetaRule) -> String {
        r.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub theta_rule: ThetaRule,
    pub min_support: usize,
    /// Dictionary level to read codes from; `None` means the largest.
    pub level: Option<usize>,
    /// Whether unlabeled rows join the corpus. They never count as errors.
    pub include_unlabeled: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            theta_rule: ThetaRule::default(),
            min_support: DEFAULT_MIN_SUPPORT,
            level: None,
            include_unlabeled: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub index: usize,
    pub theta: f64,
    pub max_activation: f64,
    /// Dataset row indices, ascending.
    pub activating_rows: Vec<usize>,
    pub activating_ids: Vec<String>,
    pub activating_values: Vec<f64>,
    pub n_error: usize,
    pub wrong_ratio: Option<f64>,
    pub active: bool,
}

impl FeatureStats {
    pub fn support(&self) -> usize {
        self.activating_rows.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub kind: String,
    pub d_z: usize,
    pub level: usize,
    pub options: ScanOptions,
    pub corpus_rows: usize,
    pub features: Vec<FeatureStats>,
}

impl ScanResult {
    pub fn thetas(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.theta).collect()
    }

    pub fn wrong_ratios(&self) -> Vec<Option<f64>> {
        self.features.iter().map(|f| f.wrong_ratio).collect()
    }

    pub fn active_count(&self) -> usize {
        self.features.iter().filter(|f| f.active).count()
    }
}

/// Encodes the corpus rows of `rows` and builds per-latent statistics.
pub fn scan(model: &DictModel, rows: &dyn RowSource, meta: &[RowMeta], opts: &ScanOptions) -> Result<ScanResult> {
    let spec = model.spec();
    if rows.dim() != spec.d_in {
        return Err(Error::DimMismatch { expected: spec.d_in, got: rows.dim() });
    }
    if meta.len() != rows.n_rows() {
        return Err(Error::RowCount(format!("{} rows vs {} metadata entries", rows.n_rows(), meta.len())));
    }
    opts.theta_rule.validate()?;
    let level = opts.level.unwrap_or(spec.n_levels() - 1);
    let corpus: Vec<usize> = (0..rows.n_rows())
        .filter(|&i| opts.include_unlabeled || meta[i].label.is_labeled())
        .collect();
    let codes: Vec<Vec<(usize, f64)>> = corpus
        .par_iter()
        .map(|&i| model.sparse_code(&rows.row(i), level))
        .collect::<Result<_>>()?;

    let d_z = model.d_z();
    let mut per_feature: Vec<Vec<(usize, f64)>> = vec![Vec::new(); d_z];
    for (&row, code) in corpus.iter().zip(&codes) {
        for &(j, v) in code {
            per_feature[j].push((row, v));
        }
    }
    drop(codes);

    let features = per_feature
        .into_par_iter()
        .enumerate()
        .map(|(index, hits)| {
            let values: Vec<f64> = hits.iter().map(|h| h.1).collect();
            let theta = opts.theta_rule.threshold(&values);
            let max_activation = values.iter().copied().fold(0.0, f64::max);
            let kept: Vec<(usize, f64)> = hits.into_iter().filter(|h| h.1 > theta).collect();
            let n_error = kept.iter().filter(|h| meta[h.0].label == Label::Error).count();
            let support = kept.len();
            let defined = support >= opts.min_support && support > 0;
            FeatureStats {
                index,
                theta,
                max_activation,
                activating_ids: kept.iter().map(|h| meta[h.0].id.clone()).collect(),
                activating_values: kept.iter().map(|h| h.1).collect(),
                activating_rows: kept.into_iter().map(|h| h.0).collect(),
                n_error,
                wrong_ratio: defined.then(|| n_error as f64 / support as f64),
                active: defined,
            }
        })
        .collect();

    Ok(ScanResult {
        kind: model.kind().as_str().to_string(),
        d_z,
        level,
        options: opts.clone(),
        corpus_rows: corpus.len(),
        features,
    })
}

/// `M_i = n_error / support`, or `None` below `min_support`.
pub fn wrong_ratio(stats: &FeatureStats, min_support: usize) -> Option<f64> {
    let n = stats.support();
    (n > 0 && n >= min_support).then(|| stats.n_error as f64 / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationRelevance {
    pub tau: f64,
    pub total_features: usize,
    pub relevant_set: Vec<usize>,
    pub r_population: f64,
}

/// Fraction of all latents whose wrong ratio is at least `tau`. Latents with
/// an undefined ratio count in the denominator only.
pub fn population_relevance(wrong_ratios: &[Option<f64>], tau: f64) -> PopulationRelevance {
    let relevant_set: Vec<usize> = wrong_ratios
        .iter()
        .enumerate()
        .filter(|(_, m)| m.is_some_and(|m| m >= tau))
        .map(|(i, _)| i)
        .collect();
    let total = wrong_ratios.len();
    PopulationRelevance {
        tau,
        total_features: total,
        r_population: if total == 0 { 0.0 } else { relevant_set.len() as f64 / total as f64 },
        relevant_set,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopActivating {
    pub rows: Vec<usize>,
    pub ids: Vec<String>,
    pub values: Vec<f64>,
    /// Fewer than the requested number of rows activate the latent.
    pub short: bool,
}

/// The `n` strongest activators of a latent, descending; equal values keep
/// ascending row order.
pub fn top_activating(stats: &FeatureStats, n: usize) -> TopActivating {
    let mut order: Vec<usize> = (0..stats.support()).collect();
    order.sort_by(|&a, &b| {
        stats.activating_values[b]
            .total_cmp(&stats.activating_values[a])
            .then(stats.activating_rows[a].cmp(&stats.activating_rows[b]))
    });
    order.truncate(n);
    TopActivating {
        rows: order.iter().map(|&k| stats.activating_rows[k]).collect(),
        ids: order.iter().map(|&k| stats.activating_ids[k].clone()).collect(),
        values: order.iter().map(|&k| stats.activating_values[k]).collect(),
        short: stats.support() < n,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub model_name: String,
    pub n_images: usize,
    pub mean_error_count: f64,
}

/// Per-row count of relevant latents whose code exceeds their scan threshold.
pub fn relevant_hits(model: &DictModel, scan: &ScanResult, relevant: &[usize], rows: &dyn RowSource) -> Result<Vec<usize>> {
    let d_in = model.spec().d_in;
    if rows.dim() != d_in {
        return Err(Error::DimMismatch { expected: d_in, got: rows.dim() });
    }
    if scan.d_z != model.d_z() {
        return Err(Error::Contract(format!("scan has {} latents, model has {}", scan.d_z, model.d_z())));
    }
    let mut is_relevant = vec![false; scan.d_z];
    for &j in relevant {
        *is_relevant.get_mut(j).ok_or_else(|| Error::Contract(format!("relevant latent {j} out of range")))? = true;
    }
    (0..rows.n_rows())
        .into_par_iter()
        .map(|i| {
            let code = model.sparse_code(&rows.row(i), scan.level)?;
            Ok(code
                .into_iter()
                .filter(|&(j, v)| is_relevant[j] && v > scan.features[j].theta)
                .count())
        })
        .collect()
}

/// Mean number of relevant latents firing per image, one entry per source
/// tag, ordered by tag. Every row needs a non-empty source; each name in
/// `require` must have at least one row.
pub fn error_count(
    model: &DictModel,
    scan: &ScanResult,
    relevant: &[usize],
    rows: &dyn RowSource,
    meta: &[RowMeta],
    require: &[String],
) -> Result<Vec<BenchmarkEntry>> {
    if meta.len() != rows.n_rows() {
        return Err(Error::RowCount(format!("{} rows vs {} metadata entries", rows.n_rows(), meta.len())));
    }
    if let Some(i) = meta.iter().position(|m| m.source.is_empty()) {
        return Err(Error::Metadata { line: i + 1, msg: "missing source tag".into() });
    }
    let hits = relevant_hits(model, scan, relevant, rows)?;
    let mut groups: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (m, h) in meta.iter().zip(&hits) {
        let g = groups.entry(m.source.as_str()).or_default();
        g.0 += 1;
        g.1 += h;
    }
    if let Some(missing) = require.iter().find(|s| !groups.contains_key(s.as_str())) {
        return Err(Error::EmptyGroup(missing.clone()));
    }
    if groups.is_empty() {
        return Err(Error::EmptyGroup(String::new()));
    }
    Ok(groups
        .into_iter()
        .map(|(name, (n, total))| BenchmarkEntry {
            model_name: name.to_string(),
            n_images: n,
            mean_error_count: total as f64 / n as f64,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceHistogram {
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl RelevanceHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn bin_start(&self, b: usize) -> f64 {
        b as f64 * self.bin_width
    }

    pub fn percentages(&self) -> Vec<f64> {
        let total = self.total();
        self.counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 })
            .collect()
    }

    /// `bin_start,bin_end,count,percent` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start,bin_end,count,percent\n");
        for (b, (c, p)) in self.counts.iter().zip(self.percentages()).enumerate() {
            let end = if b + 1 == self.counts.len() { 1.0 } else { self.bin_start(b + 1) };
            out.push_str(&format!("{:.2},{:.2},{c},{p:.4}\n", self.bin_start(b), end));
        }
        out
    }
}

/// Counts defined wrong ratios into bins `[b, b + width)`; the last bin is
/// closed at 1.0. `width` must divide 1 into a whole number of bins.
pub fn relevance_histogram(wrong_ratios: &[Option<f64>], width: f64) -> Result<RelevanceHistogram> {
    let n_bins = (1.0 / width).round();
    if !(width > 0.0 && n_bins >= 1.0 && (n_bins * width - 1.0).abs() < 1e-9) {
        return Err(Error::Config(format!("bin width {width} does not divide [0, 1]")));
    }
    let n_bins = n_bins as usize;
    let mut counts = vec![0; n_bins];
    for m in wrong_ratios.iter().flatten() {
        counts[bin_index(*m, n_bins)] += 1;
    }
    Ok(RelevanceHistogram { bin_width: width, counts })
}

fn bin_index(m: f64, n_bins: usize) -> usize {
    ((m * n_bins as f64 + BIN_SNAP).floor().max(0.0) as usize).min(n_bins - 1)
}

/// Everything the `metrics` step reports about one scanned model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceReport {
    pub kind: String,
    pub tau: f64,
    pub theta_rule: ThetaRule,
    pub min_support: usize,
    pub total_features: usize,
    pub defined_features: usize,
    pub active_features: usize,
    pub r_population: f64,
    pub relevant_set: Vec<usize>,
    pub wrong_ratios: Vec<Option<f64>>,
    pub histogram: RelevanceHistogram,
}

impl RelevanceReport {
    pub fn from_scan(scan: &ScanResult, tau: f64, bin_width: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Config(format!("tau {tau} outside (0, 1]")));
        }
        let wrong_ratios = scan.wrong_ratios();
        let pop = population_relevance(&wrong_ratios, tau);
        Ok(RelevanceReport {
            kind: scan.kind.clone(),
            tau,
            theta_rule: scan.options.theta_rule,
            min_support: scan.options.min_support,
            total_features: pop.total_features,
            defined_features: wrong_ratios.iter().flatten().count(),
            active_features: scan.active_count(),
            r_population: pop.r_population,
            relevant_set: pop.relevant_set,
            histogram: relevance_histogram(&wrong_ratios, bin_width)?,
            wrong_ratios,
        })
    }
}
