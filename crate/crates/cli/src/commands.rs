use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use featscope::analysis::{error_count, scan, RelevanceReport, ScanOptions, ScanResult, ThetaRule};
use featscope::classifier::{dump_hidden, train_head, ClassWeights, ClassifierHead, HeadConfig};
use featscope::dict::{DictKind, DictModel, DictSpec};
use featscope::interpret::client::{EndpointConfig, HttpClient, LmmClient, MockClient, Provider};
use featscope::interpret::{self, InterpretOptions, Verdict};
use featscope::store::{dataset_paths, write_dataset_prefix, EmbeddingDataset, Label, RowMeta, RowSource};
use featscope::synth::{gen_planted_range, PlantedWorld, WorldConfig};
use featscope::trainer::{train_from, TrainConfig, TrainError};

use crate::config::RunConfig;
use crate::{report, CliError, Command};

pub const INGEST_SUMMARY: &str = "ingest_summary.json";
pub const HEAD_REPORT: &str = "head_report.json";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const SCAN: &str = "scan.json";
pub const RELEVANCE: &str = "relevance.json";
pub const HISTOGRAM: &str = "histogram.csv";
pub const INTERPRETATIONS: &str = "interpretations.jsonl";
pub const DESCRIPTION: &str = "description.json";
pub const BENCHMARK: &str = "benchmark.json";
pub const REPORT: &str = "report.txt";
pub const GROUND_TRUTH: &str = "ground_truth.json";

pub fn run(command: Command, cfg: &mut RunConfig) -> Result<(), CliError> {
    match command {
        Command::Ingest(a) => ingest(cfg, a.from, a.jsonl, &a.name),
        Command::TrainHead(a) => {
            cfg.set_opt("head_epochs", a.epochs)?;
            cfg.set_opt("head_lr", a.lr)?;
            train_head_cmd(cfg)
        }
        Command::DumpHidden(a) => dump_hidden_cmd(cfg, &a.input, &a.output),
        Command::TrainDict(a) => {
            cfg.set_opt("kind", a.kind)?;
            cfg.set_opt("epochs", a.epochs)?;
            cfg.set_opt("lr", a.lr)?;
            cfg.set_opt("batch_size", a.batch_size)?;
            cfg.set_opt("sizes", a.sizes)?;
            cfg.set_opt("sparsities", a.sparsities)?;
            train_dict_cmd(cfg, a.resume)
        }
        Command::Scan(a) => {
            cfg.set_opt("theta_rule", a.theta_rule)?;
            cfg.set_opt("level", a.level)?;
            cfg.set_opt("min_support", a.min_support)?;
            if a.include_unlabeled {
                cfg.set("include_unlabeled", "true")?;
            }
            scan_cmd(cfg)
        }
        Command::Metrics(a) => {
            cfg.set_opt("tau", a.tau)?;
            cfg.set_opt("bin_width", a.bin_width)?;
            metrics_cmd(cfg)
        }
        Command::Interpret(a) => {
            cfg.set_opt("image_root", a.image_root.map(|p| p.display().to_string()))?;
            cfg.set_opt("features", a.features)?;
            interpret_cmd(cfg, a.mock)
        }
        Command::Benchmark(a) => {
            cfg.set_opt("bench", a.bench.map(|p| p.display().to_string()))?;
            benchmark_cmd(cfg)
        }
        Command::Report(a) => report_cmd(cfg, &a.include),
        Command::Synth(a) => {
            cfg.set_opt("synth_rows", a.rows)?;
            cfg.set_opt("synth_bench_rows", a.bench_rows)?;
            synth_cmd(cfg)
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).context("serializing artifact")?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn open(cfg: &RunConfig, key: &str) -> Result<EmbeddingDataset, CliError> {
    let prefix = cfg.path(key)?;
    Ok(EmbeddingDataset::open(&prefix).with_context(|| format!("opening dataset {key} at {}", prefix.display()))?)
}

fn kind(cfg: &RunConfig) -> Result<DictKind, CliError> {
    cfg.require("kind")?.parse().map_err(|e: featscope::Error| CliError::Usage(e.to_string()))
}

/// Dataset keys a kind reads: transcoders map embeddings to hidden
/// activations, autoencoders reconstruct hidden activations.
fn dataset_keys(kind: DictKind) -> (&'static str, &'static str) {
    if kind.is_transcoder() {
        ("embeddings", "bench")
    } else {
        ("hidden", "bench_hidden")
    }
}

#[derive(Deserialize)]
struct JsonlRow {
    id: String,
    label: Label,
    #[serde(default)]
    caption: String,
    #[serde(default)]
    source: String,
    #[serde(default)]
    image: Option<String>,
    vector: Vec<f32>,
}

#[derive(Serialize)]
struct IngestSummary {
    name: String,
    n_rows: usize,
    dim: usize,
    labels: BTreeMap<String, usize>,
    sources: BTreeMap<String, usize>,
}

fn ingest(cfg: &RunConfig, from: Option<PathBuf>, jsonl: Option<PathBuf>, name: &str) -> Result<(), CliError> {
    let dest = cfg.path(name)?;
    let ds = match (from, jsonl) {
        (Some(src), None) => {
            let src_ds = EmbeddingDataset::open(&src).with_context(|| format!("opening {}", src.display()))?;
            let same = |a: &Path, b: &Path| match (a.canonicalize(), b.canonicalize()) {
                (Ok(a), Ok(b)) => a == b,
                _ => false,
            };
            if same(&dataset_paths(&src).0, &dataset_paths(&dest).0) {
                src_ds
            } else {
                let rows = (0..src_ds.n_rows()).map(|i| (src_ds.row(i), src_ds.meta()[i].clone()));
                write_dataset_prefix(&dest, src_ds.dim(), rows)?
            }
        }
        (None, Some(path)) => {
            let f = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            let mut parsed = Vec::new();
            for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
                let line = line.with_context(|| format!("reading {}", path.display()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let r: JsonlRow = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), n + 1))?;
                let meta = RowMeta { id: r.id, label: r.label, caption: r.caption, source: r.source, image: r.image };
                parsed.push((r.vector, meta));
            }
            let dim = parsed.first().map_or(0, |r| r.0.len());
            write_dataset_prefix(&dest, dim, parsed)?
        }
        _ => return Err(CliError::Usage("ingest needs exactly one of --from or --jsonl".into())),
    };
    let mut labels = BTreeMap::new();
    let mut sources = BTreeMap::new();
    for m in ds.meta() {
        *labels.entry(m.label.to_string()).or_insert(0) += 1;
        *sources.entry(m.source.clone()).or_insert(0) += 1;
    }
    let summary = IngestSummary { name: name.to_string(), n_rows: ds.n_rows(), dim: ds.dim(), labels, sources };
    write_json(&cfg.out().join(INGEST_SUMMARY), &summary)
}

#[derive(Serialize)]
struct HeadReport {
    config: HeadConfig,
    loss_history: Vec<f64>,
    train_accuracy: f64,
}

fn head_config(cfg: &RunConfig) -> Result<HeadConfig, CliError> {
    let class_weights = match cfg.raw("class_weights") {
        None => None,
        Some(raw) => {
            let mut w = ClassWeights { error: 1.0, plausible: 1.0 };
            for part in raw.split(',') {
                let (k, v) = part.split_once(':').ok_or_else(|| CliError::Usage(format!("class_weights {raw:?}")))?;
                let v: f64 = v.trim().parse().map_err(|_| CliError::Usage(format!("class_weights {raw:?}")))?;
                match k.trim() {
                    "error" => w.error = v,
                    "plausible" => w.plausible = v,
                    _ => return Err(CliError::Usage(format!("class_weights {raw:?}"))),
                }
            }
            Some(w)
        }
    };
    Ok(HeadConfig {
        d_hidden: cfg.get("head_hidden")?,
        lr: cfg.get("head_lr")?,
        beta1: cfg.get("beta1")?,
        beta2: cfg.get("beta2")?,
        eps: cfg.get("eps")?,
        weight_decay: cfg.get("head_weight_decay")?,
        epochs: cfg.get("head_epochs")?,
        batch_size: cfg.get("head_batch_size")?,
        seed: cfg.get("seed")?,
        class_weights,
    })
}

fn train_head_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let hc = head_config(cfg)?;
    let ds = open(cfg, "embeddings")?;
    let labels = ds.labels();
    let out = train_head(&ds, &labels, &hc)?;
    let acc = out.head.accuracy(&ds, &labels)?;
    log::info!("head trained: final loss {:.5}, accuracy {:.4}", out.loss_history.last().copied().unwrap_or(f64::NAN), acc);
    out.head.save(cfg.path("head")?)?;
    write_json(&cfg.out().join(HEAD_REPORT), &HeadReport { config: hc, loss_history: out.loss_history, train_accuracy: acc })
}

fn dump_hidden_cmd(cfg: &RunConfig, input: &str, output: &str) -> Result<(), CliError> {
    let head = ClassifierHead::load(cfg.path("head")?)?;
    let ds = open(cfg, input)?;
    let out = dump_hidden(&head, &ds, cfg.path(output)?)?;
    log::info!("wrote {} hidden rows of dim {}", out.n_rows(), out.dim());
    Ok(())
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig, CliError> {
    Ok(TrainConfig {
        lr: cfg.get("lr")?,
        beta1: cfg.get("beta1")?,
        beta2: cfg.get("beta2")?,
        eps: cfg.get("eps")?,
        epochs: cfg.get("epochs")?,
        batch_size: cfg.get("batch_size")?,
        seed: cfg.get("seed")?,
        decoder_norm: cfg.get("decoder_norm")?,
        dead_window: cfg.get("dead_window")?,
    })
}

fn train_dict_cmd(cfg: &RunConfig, resume: Option<PathBuf>) -> Result<(), CliError> {
    let kind = kind(cfg)?;
    let tc = train_config(cfg)?;
    let inputs = open(cfg, dataset_keys(kind).0)?;
    let targets = if kind.is_transcoder() { Some(open(cfg, "hidden")?) } else { None };
    let d_out = targets.as_ref().map_or(inputs.dim(), |t| t.dim());
    let model = match resume {
        Some(path) => {
            let m = DictModel::load(&path).with_context(|| format!("loading {}", path.display()))?;
            if m.kind() != kind {
                return Err(CliError::Usage(format!("checkpoint is {}, requested {kind}", m.kind())));
            }
            m
        }
        None => {
            let sizes = cfg.list("sizes")?;
            let ks = cfg.list("sparsities")?;
            let spec = if kind.is_matryoshka() {
                DictSpec::new(kind, inputs.dim(), d_out, sizes, ks)
            } else {
                let (Some(&m), Some(&k)) = (sizes.last(), ks.last()) else {
                    return Err(CliError::Usage("sizes and sparsities must be non-empty".into()));
                };
                DictSpec::single(kind, inputs.dim(), d_out, m, k)
            }
            .map_err(|e| CliError::Usage(e.to_string()))?;
            DictModel::init(spec, tc.seed)?
        }
    };
    let target_src = targets.as_ref().map(|t| t as &dyn RowSource);
    let result = train_from(model, &inputs, target_src, &tc, &mut |_| {});
    let out = match result {
        Ok(out) => out,
        Err(TrainError::Invalid(e)) => return Err(e.into()),
        Err(TrainError::Diverged(d)) => {
            d.last_good.save(cfg.path("dict")?)?;
            write_json(&cfg.out().join(TRAIN_REPORT), &d.report)?;
            return Err(CliError::Domain(anyhow::anyhow!(
                "training diverged at epoch {}; last finite checkpoint saved",
                d.epoch
            )));
        }
    };
    log::info!(
        "trained {kind}: final loss {:.6}, {} dead latents, {:.1}s",
        out.report.epoch_loss.last().copied().unwrap_or(f64::NAN),
        out.report.dead_features.len(),
        out.report.wall_time_secs
    );
    out.model.save(cfg.path("dict")?)?;
    write_json(&cfg.out().join(TRAIN_REPORT), &out.report)
}

fn scan_options(cfg: &RunConfig) -> Result<ScanOptions, CliError> {
    let theta_rule: ThetaRule = cfg
        .require("theta_rule")?
        .parse()
        .map_err(|e: featscope::Error| CliError::Usage(e.to_string()))?;
    Ok(ScanOptions {
        theta_rule,
        min_support: cfg.get("min_support")?,
        level: cfg.get_opt("level")?,
        include_unlabeled: cfg.get("include_unlabeled")?,
    })
}

fn scan_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let opts = scan_options(cfg)?;
    let model = DictModel::load(cfg.path("dict")?)?;
    let ds = open(cfg, dataset_keys(model.kind()).0)?;
    let result = scan(&model, &ds, ds.meta(), &opts)?;
    log::info!("scanned {} rows: {} of {} latents active", result.corpus_rows, result.active_count(), result.d_z);
    write_json(&cfg.out().join(SCAN), &result)
}

fn tau(cfg: &RunConfig) -> Result<f64, CliError> {
    let tau: f64 = cfg.get("tau")?;
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(CliError::Usage(format!("tau {tau} outside (0, 1]")));
    }
    Ok(tau)
}

fn metrics_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let (tau, bin_width) = (tau(cfg)?, cfg.get("bin_width")?);
    let scan: ScanResult = read_json(&cfg.out().join(SCAN))?;
    let report = RelevanceReport::from_scan(&scan, tau, bin_width)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    log::info!("R_population = {:.4} ({} relevant of {})", report.r_population, report.relevant_set.len(), report.total_features);
    let csv = cfg.out().join(HISTOGRAM);
    std::fs::write(&csv, report.histogram.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    write_json(&cfg.out().join(RELEVANCE), &report)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DescriptionSummary {
    pub kind: String,
    pub total_features: usize,
    pub error: usize,
    pub no_common_errors: usize,
    pub uninterpreted: usize,
    pub r_description: f64,
}

fn interpret_cmd(cfg: &RunConfig, mock: Option<PathBuf>) -> Result<(), CliError> {
    let features = match cfg.raw("features") {
        Some(_) => Some(cfg.list::<usize>("features")?),
        None => None,
    };
    let opts = InterpretOptions {
        top_n: cfg.get("top_n")?,
        max_attempts: cfg.get("lmm_max_attempts")?,
        concurrency: cfg.get("lmm_concurrency")?,
        allow_missing_images: mock.is_some(),
        features,
        ..Default::default()
    };
    let client: Box<dyn LmmClient> = match mock {
        Some(dir) => Box::new(MockClient::new(dir)?),
        None => {
            let provider: Provider = cfg
                .require("lmm_provider")?
                .parse()
                .map_err(|e: featscope::Error| CliError::Usage(e.to_string()))?;
            let endpoint = EndpointConfig {
                url: cfg.require("lmm_url")?.to_string(),
                model: cfg.require("lmm_model")?.to_string(),
                provider,
                max_tokens: cfg.get("lmm_max_tokens")?,
                timeout_secs: cfg.get("lmm_timeout_secs")?,
            };
            Box::new(HttpClient::from_env(endpoint).map_err(|e| CliError::Usage(e.to_string()))?)
        }
    };
    let scan: ScanResult = read_json(&cfg.out().join(SCAN))?;
    let kind: DictKind = scan.kind.parse()?;
    let ds = open(cfg, dataset_keys(kind).0)?;
    let image_root = cfg.path("image_root")?;
    let bundles = interpret::build_bundles(&scan, ds.meta(), &image_root, &opts);
    let interps = interpret::interpret_all(client.as_ref(), &bundles, &opts)?;
    interpret::write_jsonl(cfg.out().join(INTERPRETATIONS), &interps)?;
    let count = |v| interps.iter().filter(|i| i.verdict == v).count();
    let summary = DescriptionSummary {
        kind: scan.kind.clone(),
        total_features: interps.len(),
        error: count(Verdict::Error),
        no_common_errors: count(Verdict::NoCommonErrors),
        uninterpreted: count(Verdict::Uninterpreted),
        r_description: interpret::description_relevance(&interps),
    };
    log::info!("R_description = {:.4}", summary.r_description);
    write_json(&cfg.out().join(DESCRIPTION), &summary)
}

fn benchmark_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let model = DictModel::load(cfg.path("dict")?)?;
    let scan: ScanResult = read_json(&cfg.out().join(SCAN))?;
    let relevance: RelevanceReport = read_json(&cfg.out().join(RELEVANCE))?;
    let ds = open(cfg, dataset_keys(model.kind()).1)?;
    let entries = error_count(&model, &scan, &relevance.relevant_set, &ds, ds.meta(), &[])?;
    for e in &entries {
        log::info!("{}: {:.3} relevant latents per image over {} images", e.model_name, e.mean_error_count, e.n_images);
    }
    write_json(&cfg.out().join(BENCHMARK), &entries)
}

fn report_cmd(cfg: &RunConfig, include: &[PathBuf]) -> Result<(), CliError> {
    let mut dirs = vec![cfg.out().to_path_buf()];
    dirs.extend(include.iter().cloned());
    let text = report::render(&dirs)?;
    print!("{text}");
    let path = cfg.out().join(REPORT);
    std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn synth_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let world_cfg = WorldConfig {
        n_true: cfg.get("synth_n_true")?,
        d_in: cfg.get("synth_d_in")?,
        d_out: cfg.get("synth_d_out")?,
        p: cfg.get("synth_p")?,
        amplitude: (cfg.get("synth_amp_min")?, cfg.get("synth_amp_max")?),
        sigma: cfg.get("synth_sigma")?,
        error_subset: None,
        n_sources: cfg.get("synth_sources")?,
        seed: cfg.get("seed")?,
    };
    let world = PlantedWorld::new(world_cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    let rows: usize = cfg.get("synth_rows")?;
    let bench_rows: usize = cfg.get("synth_bench_rows")?;
    let train = gen_planted_range(&world, 0, rows)?;
    train.write(cfg.path("embeddings")?, cfg.path("hidden")?)?;
    let bench = gen_planted_range(&world, rows, bench_rows)?;
    bench.write(cfg.path("bench")?, cfg.path("bench_hidden")?)?;
    world.write_ground_truth(cfg.out().join(GROUND_TRUTH))?;
    log::info!("wrote {rows} training rows and {bench_rows} benchmark rows");
    Ok(())
}
