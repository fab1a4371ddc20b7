//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use featscope::analysis::{
    error_count, population_relevance, relevance_histogram, scan, RelevanceReport, ScanOptions, ThetaRule,
};
use featscope::classifier::{ClassifierHead, HeadConfig, HeadTrainer};
use featscope::dict::{DictKind, DictModel, DictSpec};
use featscope::interpret::{
    build_interp_prompt, build_sum_prompt, parse_commonality, parse_error_verdict, ImageRef, PromptBundle, PromptPair,
    Verdict,
};
use featscope::store::{DenseRows, Label, RowMeta, RowSource};
use featscope::synth::{brute_force_metrics, gen_planted, match_features, OracleConfig, PlantedWorld, MATCH_COSINE};
use featscope::trainer::{grad_check, train_dict, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn uniform_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DenseRows {
    DenseRows::new(d, (0..n * d).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for kind in DictKind::ALL {
        let d_out = if kind.is_transcoder() { 8 } else { 12 };
        let (sizes, ks) = if kind.is_matryoshka() { (vec![8, 16], vec![3, 6]) } else { (vec![16], vec![6]) };
        let spec = DictSpec::new(kind, 12, d_out, sizes, ks).map_err(|e| e.to_string())?;
        let mut model = DictModel::init(spec, 3).map_err(|e| e.to_string())?;
        model.b_enc_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        model.b_dec_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        let x = uniform_rows(&mut rng, 4, 12);
        let t = if kind.is_transcoder() { uniform_rows(&mut rng, 4, 8) } else { x.clone() };
        let rep = grad_check(&model, &x, &t, 1e-4).map_err(|e| e.to_string())?;
        ensure(rep.max_rel_err < 1e-3, || format!("{kind}: max relative error {:.3e}", rep.max_rel_err))?;
        ensure(rep.checked > rep.skipped, || format!("{kind}: only {} of {} coordinates checked", rep.checked - rep.skipped, rep.checked))?;
        worst = worst.max(rep.max_rel_err);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1}s"))?;
    Ok(format!("max relative error {worst:.2e} over four kinds in {secs:.2}s"))
}

fn degeneracy_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (d_in, d_out, d_z, k) = (20, 10, 32, 5);
    let nested = DictModel::init(DictSpec::new(DictKind::MatryoshkaTranscoder, d_in, d_out, vec![d_z], vec![k]).unwrap(), 1)
        .map_err(|e| e.to_string())?;
    let mut plain = DictModel::zeros(DictSpec::single(DictKind::Transcoder, d_in, d_out, d_z, k).unwrap()).unwrap();
    plain.w_enc_mut().copy_from_slice(nested.w_enc());
    plain.b_enc_mut().copy_from_slice(nested.b_enc());
    plain.w_dec_mut().copy_from_slice(nested.w_dec());
    plain.b_dec_mut().copy_from_slice(nested.b_dec());
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..64);
        let x = uniform_rows(&mut rng, n, d_in);
        let t = uniform_rows(&mut rng, n, d_out);
        let a = nested.nested_loss(&x, &t).map_err(|e| e.to_string())?.total;
        let b = plain.nested_loss(&x, &t).map_err(|e| e.to_string())?.total;
        worst = worst.max((a - b).abs());
    }
    ensure(worst <= 1e-6, || format!("max loss difference {worst:.3e}"))?;
    Ok(format!("max loss difference {worst:.1e} over 100 batches"))
}

const RECOVERY_ROWS: usize = 20_000;
const RECOVERY_SEED: u64 = 0;
const RECOVERY_LR: f64 = 1e-3;
const RECOVERY_EPOCHS: usize = 50;
const RECOVERY_BATCH: usize = 256;

fn planted_recovery() -> Outcome {
    let start = Instant::now();
    let world = PlantedWorld::standard(RECOVERY_SEED);
    let data = gen_planted(&world, RECOVERY_ROWS).map_err(|e| e.to_string())?;
    let spec = DictSpec::new(DictKind::MatryoshkaTranscoder, 96, 48, vec![32, 64], vec![4, 8]).unwrap();
    let cfg = TrainConfig {
        lr: RECOVERY_LR,
        epochs: RECOVERY_EPOCHS,
        batch_size: RECOVERY_BATCH,
        seed: RECOVERY_SEED,
        ..Default::default()
    };
    let out = train_dict(&data.inputs, Some(&data.targets), spec, &cfg).map_err(|e| e.to_string())?;
    let m = match_features(&out.model, &world, MATCH_COSINE).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "matched fraction {:.3} ({} of 32 at cosine >= {MATCH_COSINE}) in {secs:.1}s",
        m.fraction,
        (m.fraction * 32.0).round()
    );
    ensure(m.fraction >= 0.8 && secs < 300.0, || detail.clone())?;
    Ok(detail)
}

fn random_corpus(rng: &mut ChaCha8Rng, n: usize, d: usize, tag: &str, unlabeled: bool) -> (DenseRows, Vec<RowMeta>) {
    let rows = uniform_rows(rng, n, d);
    let meta = (0..n)
        .map(|i| {
            let x0 = rows.row_slice(i)[0];
            let p_error = if x0 > 0.6 { 0.98 } else if x0 < -0.6 { 0.02 } else { 0.5 };
            let label = if unlabeled && rng.random_bool(0.05) {
                Label::Unlabeled
            } else if rng.random_bool(p_error) {
                Label::Error
            } else {
                Label::Plausible
            };
            RowMeta::new(format!("{tag}{i}"), label).with_source(format!("gen{}", rng.random_range(0..3)))
        })
        .collect();
    (rows, meta)
}

fn metric_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    for corpus in 0..20 {
        let n = rng.random_range(1_000..=10_000);
        let d_in = rng.random_range(4..12);
        let kind = DictKind::ALL[corpus % 4];
        let d_out = if kind.is_transcoder() { 6 } else { d_in };
        let (sizes, ks) = if kind.is_matryoshka() { (vec![12, 24], vec![3, 5]) } else { (vec![24], vec![4]) };
        let mut model = DictModel::init(DictSpec::new(kind, d_in, d_out, sizes.clone(), ks).unwrap(), corpus as u64)
            .map_err(|e| e.to_string())?;
        model.b_enc_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
        let theta_rule = match corpus % 3 {
            0 => ThetaRule::RelativeToMax(rng.random_range(0.2..0.8)),
            1 => ThetaRule::Absolute(rng.random_range(0.0..0.5)),
            _ => ThetaRule::Quantile(rng.random_range(0.1..0.9)),
        };
        let min_support = [1, 10, 50][corpus % 3];
        let include_unlabeled = corpus % 5 == 0;
        let level = if kind.is_matryoshka() && corpus % 2 == 0 { Some(0) } else { None };
        let tau = [0.95, 0.9, 0.6][corpus % 3];
        let bin_width = [0.05, 0.1, 0.25][corpus % 3];
        let (rows, meta) = random_corpus(&mut rng, n, d_in, "r", include_unlabeled);
        let (bench, bench_meta) = random_corpus(&mut rng, n / 4, d_in, "b", false);

        let opts = ScanOptions { theta_rule, min_support, level, include_unlabeled };
        let s = scan(&model, &rows, &meta, &opts).map_err(|e| e.to_string())?;
        let ratios = s.wrong_ratios();
        let pop = population_relevance(&ratios, tau);
        let hist = relevance_histogram(&ratios, bin_width).map_err(|e| e.to_string())?;
        let bench_counts = error_count(&model, &s, &pop.relevant_set, &bench, &bench_meta, &[]).map_err(|e| e.to_string())?;

        let cfg = OracleConfig { theta_rule, min_support, include_unlabeled, level, tau, bin_width };
        let o = brute_force_metrics(&model, &rows, &meta, &bench, &bench_meta, &cfg).map_err(|e| e.to_string())?;
        let tag = format!("corpus {corpus} ({kind}, {n} rows)");
        for (j, f) in s.features.iter().enumerate() {
            ensure(f.theta == o.thetas[j], || format!("{tag}: theta of latent {j}"))?;
            ensure(f.support() == o.supports[j], || format!("{tag}: support of latent {j}"))?;
            ensure(f.n_error == o.n_errors[j], || format!("{tag}: error count of latent {j}"))?;
            let same = match (ratios[j], o.wrong_ratios[j]) {
                (Some(a), Some(b)) => close(a, b),
                (None, None) => true,
                _ => false,
            };
            ensure(same, || format!("{tag}: wrong ratio of latent {j}: {:?} vs {:?}", ratios[j], o.wrong_ratios[j]))?;
        }
        ensure(pop.relevant_set == o.relevant_set, || format!("{tag}: relevant set"))?;
        ensure(close(pop.r_population, o.r_population), || format!("{tag}: population relevance"))?;
        ensure(hist.counts == o.histogram, || format!("{tag}: histogram {:?} vs {:?}", hist.counts, o.histogram))?;
        let ours: BTreeMap<&str, f64> = bench_counts.iter().map(|e| (e.model_name.as_str(), e.mean_error_count)).collect();
        ensure(ours.len() == o.error_counts.len(), || format!("{tag}: benchmark sources"))?;
        for (src, v) in &o.error_counts {
            ensure(ours.get(src.as_str()).is_some_and(|x| close(*x, *v)), || format!("{tag}: error count for {src}"))?;
        }
    }
    Ok("20 corpora of 1,000 to 10,000 rows agree with the brute-force oracle".into())
}

fn threshold_semantics() -> Outcome {
    let spec = DictSpec::single(DictKind::Sae, 2, 2, 2, 1).unwrap();
    let mut model = DictModel::zeros(spec).unwrap();
    model.w_enc_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    model.w_dec_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    let verdict = |n_act: usize, n_err: usize| -> Result<bool, String> {
        let mut data = Vec::new();
        let mut meta = Vec::new();
        for i in 0..n_act {
            data.extend([1.0f32, 0.0]);
            meta.push(RowMeta::new(format!("a{i}"), if i < n_err { Label::Error } else { Label::Plausible }));
        }
        for i in 0..15 {
            data.extend([0.0f32, 1.0]);
            meta.push(RowMeta::new(format!("b{i}"), Label::Plausible));
        }
        let rows = DenseRows::new(2, data).unwrap();
        let s = scan(&model, &rows, &meta, &ScanOptions::default()).map_err(|e| e.to_string())?;
        let report = RelevanceReport::from_scan(&s, 0.95, 0.05).map_err(|e| e.to_string())?;
        Ok(report.relevant_set.contains(&0))
    };
    ensure(verdict(20, 19)?, || "19/20 error activators not classified relevant".into())?;
    ensure(!verdict(19, 18)?, || "18/19 error activators classified relevant".into())?;
    Ok("19/20 is relevant and 18/19 is not at tau 0.95".into())
}

fn blobs(seed: u64) -> (DenseRows, Vec<Label>) {
    let dim = 768;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0f64, 1.0).unwrap();
    let mut center: Vec<f64> = (0..dim).map(|_| unit.sample(&mut rng)).collect();
    let norm = center.iter().map(|x| x * x).sum::<f64>().sqrt();
    center.iter_mut().for_each(|x| *x *= 2.0 / norm);
    let noise = Normal::new(0.0f64, 0.1).unwrap();
    let mut data = Vec::with_capacity(1000 * dim);
    let mut labels = Vec::with_capacity(1000);
    for i in 0..1000 {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        data.extend(center.iter().map(|c| (sign * c + noise.sample(&mut rng)) as f32));
        labels.push(if sign > 0.0 { Label::Error } else { Label::Plausible });
    }
    (DenseRows::new(dim, data).unwrap(), labels)
}

fn perceptron_separable(x: &DenseRows, labels: &[Label]) -> bool {
    let dim = x.dim();
    let mut w = vec![0.0f64; dim + 1];
    for _ in 0..100 {
        let mut mistakes = 0;
        for (i, label) in labels.iter().enumerate() {
            let y = if *label == Label::Error { 1.0 } else { -1.0 };
            let row = x.row_slice(i);
            let score = w[dim] + row.iter().zip(&w).map(|(a, b)| *a as f64 * b).sum::<f64>();
            if y * score <= 0.0 {
                mistakes += 1;
                w.iter_mut().zip(row).for_each(|(wj, a)| *wj += y * *a as f64);
                w[dim] += y;
            }
        }
        if mistakes == 0 {
            return true;
        }
    }
    false
}

fn classifier_sanity() -> Outcome {
    let (x, labels) = blobs(11);
    ensure(perceptron_separable(&x, &labels), || "blob fixture is not linearly separable".into())?;
    let mut trainer = HeadTrainer::new(&x, &labels, HeadConfig { epochs: 200, seed: 3, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let mut reached = None;
    for epoch in 1..=200 {
        trainer.run_epoch().map_err(|e| e.to_string())?;
        let acc = trainer.head().accuracy(&x, &labels).map_err(|e| e.to_string())?;
        if acc >= 0.99 {
            reached = Some((epoch, acc));
            break;
        }
    }
    let (epoch, acc) = reached.ok_or("accuracy below 99% after 200 epochs")?;

    let cfg = HeadConfig { lr: 0.0, seed: 9, ..Default::default() };
    let init = ClassifierHead::init(768, cfg.d_hidden, cfg.seed).map_err(|e| e.to_string())?;
    let mut frozen = HeadTrainer::new(&x, &labels, cfg).map_err(|e| e.to_string())?;
    frozen.run_epoch().map_err(|e| e.to_string())?;
    frozen.run_epoch().map_err(|e| e.to_string())?;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    frozen.head().write_to(&mut a).unwrap();
    init.write_to(&mut b).unwrap();
    ensure(a == b, || "lr = 0 changed the parameters".into())?;
    Ok(format!("{:.1}% training accuracy after {epoch} epoch(s); lr = 0 leaves parameters bit-identical", 100.0 * acc))
}

fn prompt_fidelity() -> Outcome {
    let captions = ["a red apple on a table", "two hands holding a cup", "a cat with {n} and {ratio} in text"];
    let bundle = PromptBundle {
        feature_index: 7,
        pairs: captions
            .iter()
            .enumerate()
            .map(|(i, c)| PromptPair { id: format!("img{i}"), image: ImageRef::Missing, caption: c.to_string() })
            .collect(),
        error_count: 2,
        total_count: 3,
        images_missing: true,
    };
    let sum = build_sum_prompt(&bundle).map_err(|e| e.to_string())?.render();
    ensure(sum == include_str!("../../core/tests/fixtures/prompt_sum.golden"), || "summarization prompt differs from golden file".into())?;
    let interp = build_interp_prompt("[Commonality: hands with {commonality} braces]", &bundle)
        .map_err(|e| e.to_string())?
        .render();
    ensure(interp == include_str!("../../core/tests/fixtures/prompt_interp.golden"), || "interpretation prompt differs from golden file".into())?;

    let alphabet: Vec<char> = "ab Z09 \t[]]:.-é漢{}\n".chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut accepted = 0;
    for _ in 0..1000 {
        let len = rng.random_range(0..24);
        let inner: String = (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
        let expect = {
            let t = inner.trim();
            (!t.is_empty() && !t.contains(']')).then(|| t.to_string())
        };
        let got = parse_commonality(&format!("[Commonality:{inner}]")).ok();
        ensure(got == expect, || format!("commonality {inner:?}: {got:?} vs {expect:?}"))?;
        let got = parse_error_verdict(&format!("[Error:{inner}]")).ok();
        ensure(got == expect.clone().map(|d| (Verdict::Error, d)), || format!("error verdict {inner:?}"))?;
        ensure(parse_commonality(&format!("[commonality:{inner}]")).is_err(), || format!("lowercase tag accepted for {inner:?}"))?;
        ensure(parse_error_verdict(&format!("Answer [Error:{inner}]")).is_err(), || format!("unanchored reply accepted for {inner:?}"))?;
        accepted += usize::from(expect.is_some());
    }
    Ok(format!("both prompts match golden files; parsers agree on 1000 random inner strings ({accepted} valid)"))
}

const MOCK_SUM: &str = "[Commonality: warped hands]";
const MOCK_INTERP: &str = "[Error: extra fingers]";

fn featscope(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_featscope"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("LMM_API_KEY")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("`featscope {}` exited with {}: {}", args.join(" "), out.status, String::from_utf8_lossy(&out.stderr).trim())
    })
}

/// Runs every subcommand in `root` and returns the artifacts each produced.
fn full_run(root: &Path) -> Result<Vec<(&'static str, PathBuf)>, String> {
    std::fs::create_dir_all(root.join("mock")).map_err(|e| e.to_string())?;
    std::fs::write(root.join("mock/default.sum.txt"), MOCK_SUM).map_err(|e| e.to_string())?;
    std::fs::write(root.join("mock/default.interp.txt"), MOCK_INTERP).map_err(|e| e.to_string())?;
    std::fs::write(root.join("mock/2.interp.txt"), "[No common errors]").map_err(|e| e.to_string())?;
    let dict = ["--out", "a", "--seed", "5", "--set", "sizes=32,64", "--set", "sparsities=4,8", "--set", "lr=1e-3"];
    let step = |extra: &[&str]| featscope(root, &[&dict[..], extra].concat());
    step(&["synth", "--rows", "4000", "--bench-rows", "600"])?;
    step(&["train-dict", "--epochs", "5"])?;
    step(&["scan"])?;
    step(&["metrics"])?;
    step(&["interpret", "--mock", "mock"])?;
    step(&["benchmark"])?;
    step(&["report"])?;

    let mut jsonl = std::fs::File::create(root.join("rows.jsonl")).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..300 {
        let label = if i % 2 == 0 { "error" } else { "plausible" };
        let v: Vec<f32> = (0..16).map(|j| rng.random_range(-1.0f32..1.0) + if j == 0 && i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let row = serde_json::json!({"id": format!("row{i}"), "label": label, "caption": "c", "source": "real", "vector": v});
        writeln!(jsonl, "{row}").map_err(|e| e.to_string())?;
    }
    drop(jsonl);
    let head = ["--out", "b", "--seed", "7", "--set", "head_hidden=8", "--set", "kind=matryoshka_sae", "--set", "min_support=2"];
    let step = |extra: &[&str]| featscope(root, &[&head[..], extra].concat());
    step(&["ingest", "--jsonl", "rows.jsonl"])?;
    step(&["train-head", "--epochs", "3", "--lr", "1e-3"])?;
    step(&["dump-hidden"])?;
    step(&["train-dict", "--sizes", "4,8", "--sparsities", "1,2", "--epochs", "2"])?;
    step(&["scan"])?;
    step(&["metrics"])?;

    let produced = [
        ("synth", "a/embeddings.actv"),
        ("synth", "a/embeddings.meta.jsonl"),
        ("synth", "a/hidden.actv"),
        ("synth", "a/bench.actv"),
        ("synth", "a/bench_hidden.actv"),
        ("synth", "a/ground_truth.json"),
        ("train-dict", "a/dict.ckpt"),
        ("train-dict", "a/train_report.json"),
        ("scan", "a/scan.json"),
        ("metrics", "a/relevance.json"),
        ("metrics", "a/histogram.csv"),
        ("interpret", "a/interpretations.jsonl"),
        ("interpret", "a/description.json"),
        ("benchmark", "a/benchmark.json"),
        ("report", "a/report.txt"),
        ("ingest", "b/embeddings.actv"),
        ("ingest", "b/embeddings.meta.jsonl"),
        ("ingest", "b/ingest_summary.json"),
        ("train-head", "b/head.ckpt"),
        ("train-head", "b/head_report.json"),
        ("dump-hidden", "b/hidden.actv"),
        ("dump-hidden", "b/hidden.meta.jsonl"),
        ("train-dict", "b/dict.ckpt"),
        ("scan", "b/scan.json"),
        ("metrics", "b/relevance.json"),
    ];
    Ok(produced.iter().map(|(cmd, p)| (*cmd, root.join(p))).collect())
}

struct Runs {
    first: Vec<(&'static str, PathBuf)>,
    second: Vec<(&'static str, PathBuf)>,
    elapsed: Duration,
}

fn two_runs(tmp: &Path) -> Result<Runs, String> {
    let start = Instant::now();
    let first = full_run(&tmp.join("run1"))?;
    let second = full_run(&tmp.join("run2"))?;
    Ok(Runs { first, second, elapsed: start.elapsed() })
}

fn differing(runs: &Runs, only: Option<&str>) -> Result<Vec<String>, String> {
    let mut diffs = Vec::new();
    for ((cmd, a), (_, b)) in runs.first.iter().zip(&runs.second) {
        if only.is_some_and(|o| !a.to_string_lossy().contains(o)) {
            continue;
        }
        let x = std::fs::read(a).map_err(|e| format!("{cmd}: {}: {e}", a.display()))?;
        let y = std::fs::read(b).map_err(|e| format!("{cmd}: {}: {e}", b.display()))?;
        if x != y {
            diffs.push(format!("{cmd} ({})", a.file_name().unwrap().to_string_lossy()));
        }
    }
    Ok(diffs)
}

fn offline_pipeline(runs: &Result<Runs, String>) -> Outcome {
    let runs = runs.as_ref().map_err(Clone::clone)?;
    let diffs = differing(runs, Some("/a/"))?;
    ensure(diffs.is_empty(), || format!("artifacts differ between runs: {}", diffs.join(", ")))?;
    let desc = std::fs::read_to_string(runs.first.iter().find(|(_, p)| p.ends_with("a/description.json")).unwrap().1.clone())
        .map_err(|e| e.to_string())?;
    ensure(desc.contains("\"r_description\""), || "description summary missing".into())?;
    Ok(format!("synth, train-dict, scan, metrics, interpret --mock, benchmark and report exit 0 with identical artifacts ({:.1}s for both runs)", runs.elapsed.as_secs_f64()))
}

fn determinism(runs: &Result<Runs, String>) -> Outcome {
    let runs = runs.as_ref().map_err(Clone::clone)?;
    let diffs = differing(runs, None)?;
    ensure(diffs.is_empty(), || format!("artifacts differ between runs: {}", diffs.join(", ")))?;
    let mut commands: Vec<&str> = runs.first.iter().map(|(c, _)| *c).collect();
    commands.sort_unstable();
    commands.dedup();
    Ok(format!("{} artifacts byte-identical across {} subcommands", runs.first.len(), commands.len()))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let runs = two_runs(tmp.path());
    let criteria: Vec<Criterion<'_>> = vec![
        ("gradient fidelity", Box::new(gradient_fidelity)),
        ("degeneracy identity", Box::new(degeneracy_identity)),
        ("planted recovery", Box::new(planted_recovery)),
        ("metric oracle equivalence", Box::new(metric_oracle_equivalence)),
        ("threshold semantics", Box::new(threshold_semantics)),
        ("classifier sanity", Box::new(classifier_sanity)),
        ("prompt fidelity", Box::new(prompt_fidelity)),
        ("offline pipeline", Box::new(|| offline_pipeline(&runs))),
        ("determinism", Box::new(|| determinism(&runs))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
