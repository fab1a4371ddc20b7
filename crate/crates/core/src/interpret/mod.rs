//! Two-stage feature interpretation with a multimodal model.
//!
//! Stage 1 asks for the commonality of a latent's top-activating
//! image-caption pairs. Stage 2 shows the same pairs together with that
//! commonality and the share of error-labeled pairs, and asks whether they
//! share a physical plausibility error.

pub mod client;
pub mod parse;
pub mod prompt;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{top_activating, ScanResult, DEFAULT_TOP_N};
use crate::error::{Error, Result};
use crate::store::{Label, RowMeta};
use client::{LmmClient, Message, Request, Stage};
pub use parse::{parse_commonality, parse_error_verdict, Verdict};
pub use prompt::{build_interp_prompt, build_sum_prompt, ImageRef, Prompt, PromptBundle, PromptPair};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interpretation {
    pub feature: usize,
    pub commonality: String,
    pub verdict: Verdict,
    pub description: String,
}

impl Interpretation {
    fn uninterpreted(feature: usize, commonality: String) -> Self {
        Interpretation { feature, commonality, verdict: Verdict::Uninterpreted, description: String::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpretOptions {
    pub top_n: usize,
    /// Attempts per stage when the reply does not parse.
    pub max_attempts: usize,
    /// Retries per request on transport failure, with exponential backoff.
    pub transport_retries: usize,
    pub backoff_ms: u64,
    /// Maximum number of features in flight at once.
    pub concurrency: usize,
    /// Keep pairs whose image is missing, sending only marker and caption.
    pub allow_missing_images: bool,
    /// Restrict interpretation to these latents; the rest are uninterpreted.
    pub features: Option<Vec<usize>>,
}

impl Default for InterpretOptions {
    fn default() -> Self {
        InterpretOptions {
            top_n: DEFAULT_TOP_N,
            max_attempts: 3,
            transport_retries: 4,
            backoff_ms: 500,
            concurrency: 4,
            allow_missing_images: false,
            features: None,
        }
    }
}

/// Image location for a row: `meta.image` if set, else the id, resolved
/// against `image_root`.
pub fn image_path(meta: &RowMeta, image_root: &Path) -> PathBuf {
    image_root.join(meta.image.as_deref().unwrap_or(&meta.id))
}

/// Pairs for the top activators of every latent in the scan.
pub fn build_bundles(scan: &ScanResult, meta: &[RowMeta], image_root: &Path, opts: &InterpretOptions) -> Vec<PromptBundle> {
    scan.features
        .iter()
        .map(|f| {
            let top = top_activating(f, opts.top_n);
            let mut pairs = Vec::new();
            let mut error_count = 0;
            let mut images_missing = false;
            for &row in &top.rows {
                let m = &meta[row];
                let path = image_path(m, image_root);
                let image = if path.is_file() {
                    ImageRef::Path(path)
                } else {
                    images_missing = true;
                    if !opts.allow_missing_images {
                        log::warn!("feature {}: image {} not found; pair dropped", f.index, path.display());
                        continue;
                    }
                    ImageRef::Missing
                };
                if m.label == Label::Error {
                    error_count += 1;
                }
                pairs.push(PromptPair { id: m.id.clone(), image, caption: m.caption.clone() });
            }
            PromptBundle { feature_index: f.index, total_count: pairs.len(), error_count, pairs, images_missing }
        })
        .collect()
}

fn ask(client: &dyn LmmClient, feature: usize, stage: Stage, msg: &Message, opts: &InterpretOptions) -> Result<String> {
    let mut delay = opts.backoff_ms;
    let mut tries = 0;
    loop {
        match client.complete(&Request { feature, stage, message: msg }) {
            Err(Error::Transport(e)) if tries < opts.transport_retries => {
                log::warn!("feature {feature}: transport failure ({e}); retrying in {delay} ms");
                std::thread::sleep(Duration::from_millis(delay));
                delay = delay.saturating_mul(2);
                tries += 1;
            }
            other => return other,
        }
    }
}

/// Sends `msg` up to `max_attempts` times until `parse` accepts the reply.
fn ask_parsed<T>(
    client: &dyn LmmClient,
    feature: usize,
    stage: Stage,
    msg: &Message,
    opts: &InterpretOptions,
    parse: impl Fn(&str) -> Result<T>,
) -> Result<Option<T>> {
    for attempt in 1..=opts.max_attempts {
        let reply = ask(client, feature, stage, msg, opts)?;
        match parse(&reply) {
            Ok(v) => return Ok(Some(v)),
            Err(e) => log::debug!("feature {feature} {stage:?} attempt {attempt}: {e}"),
        }
    }
    Ok(None)
}

/// Runs both stages for one bundle. Replies that never parse, or transport
/// failures that outlast the retries, give [`Verdict::Uninterpreted`].
pub fn interpret_feature(client: &dyn LmmClient, bundle: &PromptBundle, opts: &InterpretOptions) -> Result<Interpretation> {
    let f = bundle.feature_index;
    if bundle.pairs.is_empty() {
        return Ok(Interpretation::uninterpreted(f, String::new()));
    }
    let sum = build_sum_prompt(bundle)?;
    let msg = Message::from_prompt(&sum, bundle)?;
    let commonality = match ask_parsed(client, f, Stage::Summarize, &msg, opts, parse_commonality) {
        Ok(Some(c)) => c,
        Ok(None) => return Ok(Interpretation::uninterpreted(f, String::new())),
        Err(Error::Transport(e)) => {
            log::warn!("feature {f}: giving up after transport failures: {e}");
            return Ok(Interpretation::uninterpreted(f, String::new()));
        }
        Err(e) => return Err(e),
    };
    let interp = build_interp_prompt(&commonality, bundle)?;
    let msg = Message::from_prompt(&interp, bundle)?;
    match ask_parsed(client, f, Stage::Interpret, &msg, opts, parse_error_verdict) {
        Ok(Some((verdict, description))) => Ok(Interpretation { feature: f, commonality, verdict, description }),
        Ok(None) => Ok(Interpretation::uninterpreted(f, commonality)),
        Err(Error::Transport(e)) => {
            log::warn!("feature {f}: giving up after transport failures: {e}");
            Ok(Interpretation::uninterpreted(f, commonality))
        }
        Err(e) => Err(e),
    }
}

/// Interprets every bundle with at most `opts.concurrency` in flight.
/// Results are in bundle order.
pub fn interpret_all(client: &dyn LmmClient, bundles: &[PromptBundle], opts: &InterpretOptions) -> Result<Vec<Interpretation>> {
    if opts.max_attempts == 0 || opts.concurrency == 0 {
        return Err(Error::Config("max_attempts and concurrency must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.concurrency)
        .build()
        .map_err(|e| Error::Other(e.to_string()))?;
    pool.install(|| {
        bundles
            .par_iter()
            .with_max_len(1)
            .map(|b| match &opts.features {
                Some(sel) if !sel.contains(&b.feature_index) => Ok(Interpretation::uninterpreted(b.feature_index, String::new())),
                _ => interpret_feature(client, b, opts),
            })
            .collect()
    })
}

/// Share of interpretations with an error verdict.
pub fn description_relevance(interps: &[Interpretation]) -> f64 {
    if interps.is_empty() {
        return 0.0;
    }
    interps.iter().filter(|i| i.verdict == Verdict::Error).count() as f64 / interps.len() as f64
}

pub fn write_jsonl(path: impl AsRef<Path>, interps: &[Interpretation]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for i in interps {
        serde_json::to_writer(&mut w, i)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Interpretation>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Metadata { line: n + 1, msg: e.to_string() })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Canned {
        sum: &'static str,
        interp: &'static str,
        calls: AtomicUsize,
    }

    impl LmmClient for Canned {
        fn complete(&self, req: &Request<'_>) -> Result<String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(match req.stage {
                Stage::Summarize => self.sum,
                Stage::Interpret => self.interp,
            }
            .to_string())
        }
    }

    struct Flaky(AtomicUsize);

    impl LmmClient for Flaky {
        fn complete(&self, req: &Request<'_>) -> Result<String> {
            if self.0.fetch_add(1, Ordering::SeqCst) % 2 == 0 {
                return Err(Error::Transport("reset".into()));
            }
            Ok(match req.stage {
                Stage::Summarize => "[Commonality: hands]",
                Stage::Interpret => "[No common errors]",
            }
            .into())
        }
    }

    fn bundle(feature: usize, n: usize, errors: usize) -> PromptBundle {
        PromptBundle {
            feature_index: feature,
            pairs: (0..n)
                .map(|i| PromptPair { id: format!("r{i}"), image: ImageRef::Missing, caption: format!("c{i}") })
                .collect(),
            error_count: errors,
            total_count: n,
            images_missing: true,
        }
    }

    fn canned(sum: &'static str, interp: &'static str) -> Canned {
        Canned { sum, interp, calls: AtomicUsize::new(0) }
    }

    #[test]
    fn valid_replies_need_one_call_per_stage() {
        let c = canned("[Commonality: Hands holding objects]", "[Error: Incorrect number of fingers]");
        let i = interpret_feature(&c, &bundle(7, 3, 3), &InterpretOptions::default()).unwrap();
        assert_eq!(i.commonality, "Hands holding objects");
        assert_eq!((i.verdict, i.description.as_str()), (Verdict::Error, "Incorrect number of fingers"));
        assert_eq!(c.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn garbage_exhausts_attempts() {
        let c = canned("I think these are cats.", "");
        let i = interpret_feature(&c, &bundle(1, 2, 0), &InterpretOptions::default()).unwrap();
        assert_eq!(i.verdict, Verdict::Uninterpreted);
        assert_eq!(c.calls.load(Ordering::SeqCst), 3);
        let c = canned("[Commonality: cats]", "[error: lowercase]");
        let i = interpret_feature(&c, &bundle(1, 2, 0), &InterpretOptions::default()).unwrap();
        assert_eq!((i.verdict, i.commonality.as_str()), (Verdict::Uninterpreted, "cats"));
        assert_eq!(c.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn transport_failures_are_retried() {
        let c = Flaky(AtomicUsize::new(0));
        let opts = InterpretOptions { backoff_ms: 1, ..Default::default() };
        let i = interpret_feature(&c, &bundle(0, 1, 0), &opts).unwrap();
        assert_eq!(i.verdict, Verdict::NoCommonErrors);
        assert_eq!(c.0.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn results_keep_bundle_order() {
        let c = canned("[Commonality: x]", "[No common errors]");
        let bundles: Vec<_> = (0..17).map(|f| bundle(f, 1 + f % 3, 0)).collect();
        let opts = InterpretOptions { features: Some(vec![2, 5]), ..Default::default() };
        let out = interpret_all(&c, &bundles, &opts).unwrap();
        assert_eq!(out.iter().map(|i| i.feature).collect::<Vec<_>>(), (0..17).collect::<Vec<_>>());
        assert_eq!(out.iter().filter(|i| i.verdict == Verdict::NoCommonErrors).count(), 2);
        assert_eq!(c.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn relevance_counts_error_verdicts() {
        let mk = |v| Interpretation { feature: 0, commonality: "c".into(), verdict: v, description: "d".into() };
        let mut all: Vec<_> = (0..16).map(|_| mk(Verdict::NoCommonErrors)).collect();
        all[3] = mk(Verdict::Error);
        all[9] = mk(Verdict::Error);
        all[10] = mk(Verdict::Uninterpreted);
        assert_eq!(description_relevance(&all), 0.125);
        assert_eq!(description_relevance(&[mk(Verdict::Error)]), 1.0);
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.jsonl");
        let items = vec![Interpretation { feature: 3, commonality: "c".into(), verdict: Verdict::NoCommonErrors, description: String::new() }];
        write_jsonl(&p, &items).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "{\"feature\":3,\"commonality\":\"c\",\"verdict\":\"no_common_errors\",\"description\":\"\"}\n"
        );
        assert_eq!(read_jsonl(&p).unwrap(), items);
    }
}
