//! Planted-feature worlds with known ground truth, and brute-force oracles.
//!
//! A world holds `n_true` unit directions `D_true` in target space and a
//! matching input map `A_true`. Each row draws a sparse non-negative code
//! `c`; the input row is `A_true c + noise` and the target row is
//! `D_true c + noise`. A row is labeled error iff any latent of the error
//! subset is active.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::ThetaRule;
use crate::dict::DictModel;
use crate::error::{Error, Result};
use crate::rng;
use crate::store::{write_dataset_prefix, DenseRows, EmbeddingDataset, Label, RowMeta, RowSource};

pub const MATCH_COSINE: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_true: usize,
    pub d_in: usize,
    pub d_out: usize,
    /// Expected number of active latents per row.
    pub p: f64,
    pub amplitude: (f64, f64),
    pub sigma: f64,
    /// Planted latents whose activity marks a row as an error. `None` means
    /// the first half.
    pub error_subset: Option<Vec<usize>>,
    /// Rows are tagged `gen0`, `gen1`, ... round-robin.
    pub n_sources: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_true: 32,
            d_in: 96,
            d_out: 48,
            p: 3.0,
            amplitude: (0.5, 1.5),
            sigma: 0.01,
            error_subset: None,
            n_sources: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedWorld {
    pub config: WorldConfig,
    pub error_subset: Vec<usize>,
    /// `D_true` columns, each of length `d_out` and unit norm.
    pub d_true: Vec<Vec<f64>>,
    /// `A_true` columns, each of length `d_in` and unit norm.
    pub a_true: Vec<Vec<f64>>,
}

impl PlantedWorld {
    pub fn new(config: WorldConfig) -> Result<Self> {
        let c = &config;
        if c.n_true == 0 || c.d_in == 0 || c.d_out == 0 || c.n_sources == 0 {
            return Err(Error::Config("world dimensions must be positive".into()));
        }
        if !(c.p >= 0.0 && c.p <= c.n_true as f64) {
            return Err(Error::Config(format!("sparsity p = {} outside [0, n_true]", c.p)));
        }
        let (lo, hi) = c.amplitude;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("amplitude range {lo}..{hi} must be positive")));
        }
        if !(c.sigma >= 0.0 && c.sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma {}", c.sigma)));
        }
        let error_subset = c.error_subset.clone().unwrap_or_else(|| (0..c.n_true / 2).collect());
        if error_subset.iter().any(|&j| j >= c.n_true) {
            return Err(Error::Config("error subset index out of range".into()));
        }
        let mut r = rng::rng(c.seed, rng::stream::PLANTED_WORLD, 0);
        let d_true = (0..c.n_true).map(|_| random_unit(&mut r, c.d_out)).collect();
        let a_true = (0..c.n_true).map(|_| random_unit(&mut r, c.d_in)).collect();
        Ok(PlantedWorld { config, error_subset, d_true, a_true })
    }

    pub fn standard(seed: u64) -> Self {
        PlantedWorld::new(WorldConfig { seed, ..Default::default() }).expect("standard world is valid")
    }

    pub fn write_ground_truth(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

fn random_unit<R: Rng>(r: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(r)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedData {
    pub inputs: DenseRows,
    pub targets: DenseRows,
    pub meta: Vec<RowMeta>,
    /// Active planted latents and amplitudes per row, ascending by latent.
    pub codes: Vec<Vec<(usize, f64)>>,
}

/// Generates `n_rows` rows. Row `i` draws from its own counter stream.
pub fn gen_planted(world: &PlantedWorld, n_rows: usize) -> Result<PlantedData> {
    gen_planted_range(world, 0, n_rows)
}

/// Input row, target row and the sparse ground-truth code.
type PlantedRow = (Vec<f32>, Vec<f32>, Vec<(usize, f64)>);

/// Rows `first..first + n_rows` of the world's row sequence. Disjoint ranges
/// give independent samples, e.g. a held-out benchmark set.
pub fn gen_planted_range(world: &PlantedWorld, first: usize, n_rows: usize) -> Result<PlantedData> {
    let c = &world.config;
    let prob = c.p / c.n_true as f64;
    let mut is_error = vec![false; c.n_true];
    world.error_subset.iter().for_each(|&j| is_error[j] = true);
    let rows: Vec<PlantedRow> = (first..first + n_rows)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::rng(c.seed, rng::stream::PLANTED_ROWS, i as u64);
            let mut code = Vec::new();
            for j in 0..c.n_true {
                if r.random_bool(prob) {
                    let a = if c.amplitude.0 == c.amplitude.1 {
                        c.amplitude.0
                    } else {
                        r.random_range(c.amplitude.0..c.amplitude.1)
                    };
                    code.push((j, a));
                }
            }
            let mut x = mix(&world.a_true, &code, c.d_in);
            let mut t = mix(&world.d_true, &code, c.d_out);
            for v in x.iter_mut().chain(t.iter_mut()) {
                let n: f64 = StandardNormal.sample(&mut r);
                *v += c.sigma * n;
            }
            let to32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect();
            (to32(x), to32(t), code)
        })
        .collect();
    let mut xs = Vec::with_capacity(n_rows * c.d_in);
    let mut ts = Vec::with_capacity(n_rows * c.d_out);
    let mut meta = Vec::with_capacity(n_rows);
    let mut codes = Vec::with_capacity(n_rows);
    for (i, (x, t, code)) in (first..).zip(rows) {
        xs.extend(x);
        ts.extend(t);
        let error = code.iter().any(|&(j, _)| is_error[j]);
        let caption = code.iter().map(|(j, _)| format!("f{j}")).collect::<Vec<_>>().join(" ");
        meta.push(
            RowMeta::new(format!("synth-{i:06}"), if error { Label::Error } else { Label::Plausible })
                .with_caption(caption)
                .with_source(format!("gen{}", i % c.n_sources)),
        );
        codes.push(code);
    }
    Ok(PlantedData {
        inputs: DenseRows::new(c.d_in, xs)?,
        targets: DenseRows::new(c.d_out, ts)?,
        meta,
        codes,
    })
}

fn mix(cols: &[Vec<f64>], code: &[(usize, f64)], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for &(j, a) in code {
        out.iter_mut().zip(&cols[j]).for_each(|(o, c)| *o += a * c);
    }
    out
}

impl PlantedData {
    /// Writes `<input_prefix>.actv/.meta.jsonl` and the target pair.
    pub fn write(&self, input_prefix: impl AsRef<Path>, target_prefix: impl AsRef<Path>) -> Result<(EmbeddingDataset, EmbeddingDataset)> {
        let n = self.meta.len();
        let inputs = write_dataset_prefix(
            input_prefix,
            self.inputs.dim(),
            (0..n).map(|i| (self.inputs.row_slice(i), self.meta[i].clone())),
        )?;
        let targets = write_dataset_prefix(
            target_prefix,
            self.targets.dim(),
            (0..n).map(|i| (self.targets.row_slice(i), self.meta[i].clone())),
        )?;
        Ok((inputs, targets))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub threshold: f64,
    pub fraction: f64,
    /// Per planted direction: best absolute cosine and the learned column
    /// achieving it.
    pub best_cosine: Vec<f64>,
    pub best_index: Vec<usize>,
}

/// Matches each true direction to its closest learned column by absolute
/// cosine. Zero columns never match.
pub fn match_columns(learned: &[Vec<f64>], truth: &[Vec<f64>], threshold: f64) -> Result<MatchReport> {
    let d = truth.first().map_or(0, Vec::len);
    if let Some(c) = learned.iter().chain(truth).find(|c| c.len() != d) {
        return Err(Error::DimMismatch { expected: d, got: c.len() });
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let learned_norms: Vec<f64> = learned.iter().map(|c| norm(c)).collect();
    let mut best_cosine = Vec::with_capacity(truth.len());
    let mut best_index = Vec::with_capacity(truth.len());
    for t in truth {
        let tn = norm(t);
        let mut best = (0.0, 0);
        for (j, (l, ln)) in learned.iter().zip(&learned_norms).enumerate() {
            if *ln == 0.0 || tn == 0.0 {
                continue;
            }
            let cos = (l.iter().zip(t).map(|(a, b)| a * b).sum::<f64>() / (ln * tn)).abs();
            if cos > best.0 {
                best = (cos, j);
            }
        }
        best_cosine.push(best.0);
        best_index.push(best.1);
    }
    let matched = best_cosine.iter().filter(|c| **c >= threshold).count();
    Ok(MatchReport {
        threshold,
        fraction: if truth.is_empty() { 0.0 } else { matched as f64 / truth.len() as f64 },
        best_cosine,
        best_index,
    })
}

/// [`match_columns`] against a model's decoder.
pub fn match_features(model: &DictModel, world: &PlantedWorld, threshold: f64) -> Result<MatchReport> {
    let learned: Vec<Vec<f64>> = (0..model.d_z())
        .map(|j| model.decoder_column(j).iter().map(|v| *v as f64).collect())
        .collect();
    match_columns(&learned, &world.d_true, threshold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub theta_rule: ThetaRule,
    pub min_support: usize,
    pub include_unlabeled: bool,
    pub level: Option<usize>,
    pub tau: f64,
    pub bin_width: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            theta_rule: ThetaRule::default(),
            min_support: crate::analysis::DEFAULT_MIN_SUPPORT,
            include_unlabeled: false,
            level: None,
            tau: crate::analysis::DEFAULT_TAU,
            bin_width: crate::analysis::DEFAULT_BIN_WIDTH,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleMetrics {
    pub thetas: Vec<f64>,
    pub supports: Vec<usize>,
    pub n_errors: Vec<usize>,
    pub wrong_ratios: Vec<Option<f64>>,
    pub relevant_set: Vec<usize>,
    pub r_population: f64,
    pub histogram: Vec<usize>,
    /// Source tag to mean relevant-latent count over the benchmark rows.
    pub error_counts: BTreeMap<String, f64>,
}

/// Recomputes every relevance metric by dense enumeration: full encode, a
/// sort-based top-k per row, explicit loops for thresholds, counts, bins and
/// per-source sums.
pub fn brute_force_metrics(
    model: &DictModel,
    rows: &dyn RowSource,
    meta: &[RowMeta],
    bench_rows: &dyn RowSource,
    bench_meta: &[RowMeta],
    cfg: &OracleConfig,
) -> Result<OracleMetrics> {
    let spec = model.spec();
    let level = cfg.level.unwrap_or(spec.n_levels() - 1);
    let (m, k) = (spec.sizes[level], spec.sparsities[level]);
    let d_z = model.d_z();
    let dense_codes = |src: &dyn RowSource, idx: &[usize]| -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(idx.len());
        for &i in idx {
            let z = model.encode(&src.row(i))?;
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| z[b].partial_cmp(&z[a]).unwrap().then(a.cmp(&b)));
            let mut code = vec![0.0; d_z];
            for &j in order.iter().take(k) {
                code[j] = z[j];
            }
            out.push(code);
        }
        Ok(out)
    };

    let corpus: Vec<usize> = (0..rows.n_rows())
        .filter(|&i| cfg.include_unlabeled || meta[i].label != Label::Unlabeled)
        .collect();
    let codes = dense_codes(rows, &corpus)?;

    let mut thetas = vec![0.0; d_z];
    for (f, theta) in thetas.iter_mut().enumerate() {
        let mut positive = Vec::new();
        for code in &codes {
            if code[f] > 0.0 {
                positive.push(code[f]);
            }
        }
        *theta = match cfg.theta_rule {
            ThetaRule::Absolute(t) => t,
            ThetaRule::RelativeToMax(factor) => {
                let mut max = 0.0;
                for v in &positive {
                    if *v > max {
                        max = *v;
                    }
                }
                factor * max
            }
            ThetaRule::Quantile(q) => {
                if positive.is_empty() {
                    0.0
                } else {
                    positive.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let mut rank = (q * positive.len() as f64).ceil() as usize;
                    if rank < 1 {
                        rank = 1;
                    }
                    if rank > positive.len() {
                        rank = positive.len();
                    }
                    positive[rank - 1]
                }
            }
        };
    }

    let mut supports = vec![0usize; d_z];
    let mut n_errors = vec![0usize; d_z];
    for (code, &row) in codes.iter().zip(&corpus) {
        for f in 0..d_z {
            if code[f] > thetas[f] {
                supports[f] += 1;
                if meta[row].label == Label::Error {
                    n_errors[f] += 1;
                }
            }
        }
    }
    let wrong_ratios: Vec<Option<f64>> = (0..d_z)
        .map(|f| {
            if supports[f] >= cfg.min_support && supports[f] > 0 {
                Some(n_errors[f] as f64 / supports[f] as f64)
            } else {
                None
            }
        })
        .collect();
    let relevant_set: Vec<usize> = (0..d_z)
        .filter(|&f| matches!(wrong_ratios[f], Some(r) if r >= cfg.tau))
        .collect();
    let r_population = if d_z == 0 { 0.0 } else { relevant_set.len() as f64 / d_z as f64 };

    let n_bins = (1.0 / cfg.bin_width).round() as usize;
    let mut histogram = vec![0usize; n_bins];
    for r in wrong_ratios.iter().flatten() {
        let scaled = r * n_bins as f64 + 1e-9;
        let mut b = 0;
        while b + 1 < n_bins && (b + 1) as f64 <= scaled {
            b += 1;
        }
        histogram[b] += 1;
    }

    let all: Vec<usize> = (0..bench_rows.n_rows()).collect();
    let bench_codes = dense_codes(bench_rows, &all)?;
    let mut sums: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (code, m) in bench_codes.iter().zip(bench_meta) {
        let hits = relevant_set.iter().filter(|&&f| code[f] > thetas[f]).count();
        let e = sums.entry(m.source.clone()).or_insert((0, 0));
        e.0 += 1;
        e.1 += hits;
    }
    let error_counts = sums
        .into_iter()
        .map(|(s, (n, h))| (s, h as f64 / n as f64))
        .collect();

    Ok(OracleMetrics {
        thetas,
        supports,
        n_errors,
        wrong_ratios,
        relevant_set,
        r_population,
        histogram,
        error_counts,
    })
}
