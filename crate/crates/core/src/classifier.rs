//! Two-layer plausibility head on frozen image embeddings.
//!
//! `h1 = ReLU(W1 h2 + b1)`, `logit = W2 · h1 + b2`. The positive class is
//! [`Label::Error`] (physically implausible). The hidden activations `h1` are
//! the targets the transcoders learn to predict.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dict::{dot_f32, read_f32s, read_u32, write_f32s};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::rng;
use crate::store::{batch_iter, write_dataset_prefix, DenseRows, EmbeddingDataset, Label, RowSource};

pub const HEAD_MAGIC: [u8; 4] = *b"HEAD";
pub const HEAD_VERSION: u32 = 1;

const GRAD_CHUNK: usize = 32;
const DUMP_BLOCK: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    d_in: usize,
    d_hidden: usize,
    /// `d_hidden x d_in`, row-major.
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    pub hidden: Vec<f32>,
    pub logit: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl HeadGrad {
    fn zeros(d_in: usize, d_hidden: usize) -> Self {
        HeadGrad {
            w1: vec![0.0; d_in * d_hidden],
            b1: vec![0.0; d_hidden],
            w2: vec![0.0; d_hidden],
            b2: 0.0,
        }
    }

    fn add(&mut self, o: &HeadGrad) {
        for (a, b) in [(&mut self.w1, &o.w1), (&mut self.b1, &o.b1), (&mut self.w2, &o.w2)] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.b2 += o.b2;
    }
}

impl ClassifierHead {
    pub const REFERENCE_DIMS: (usize, usize) = (768, 256);

    pub fn zeros(d_in: usize, d_hidden: usize) -> Result<Self> {
        if d_in == 0 || d_hidden == 0 {
            return Err(Error::InvalidModel("head dims must be positive".into()));
        }
        Ok(ClassifierHead {
            d_in,
            d_hidden,
            w1: vec![0.0; d_in * d_hidden],
            b1: vec![0.0; d_hidden],
            w2: vec![0.0; d_hidden],
            b2: 0.0,
        })
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(d_in: usize, d_hidden: usize, seed: u64) -> Result<Self> {
        let mut h = ClassifierHead::zeros(d_in, d_hidden)?;
        let mut r = rng::rng(seed, rng::stream::HEAD_INIT, 0);
        let a1 = 1.0 / (d_in as f32).sqrt();
        h.w1.iter_mut().for_each(|w| *w = r.random_range(-a1..a1));
        let a2 = 1.0 / (d_hidden as f32).sqrt();
        h.w2.iter_mut().for_each(|w| *w = r.random_range(-a2..a2));
        Ok(h)
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_hidden(&self) -> usize {
        self.d_hidden
    }

    pub fn w1(&self) -> &[f32] {
        &self.w1
    }

    pub fn w1_mut(&mut self) -> &mut [f32] {
        &mut self.w1
    }

    pub fn b1_mut(&mut self) -> &mut [f32] {
        &mut self.b1
    }

    pub fn w2_mut(&mut self) -> &mut [f32] {
        &mut self.w2
    }

    pub fn b1(&self) -> &[f32] {
        &self.b1
    }

    pub fn w2(&self) -> &[f32] {
        &self.w2
    }

    pub fn b2(&self) -> f32 {
        self.b2
    }

    pub fn set_b2(&mut self, b2: f32) {
        self.b2 = b2;
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    pub fn forward(&self, h2: &[f32]) -> Result<HeadOutput> {
        if h2.len() != self.d_in {
            return Err(Error::DimMismatch {
                expected: self.d_in,
                got: h2.len(),
            });
        }
        let (hidden, logit) = self.forward_f64(h2);
        Ok(HeadOutput {
            hidden: hidden.into_iter().map(|v| v as f32).collect(),
            logit,
        })
    }

    fn forward_f64(&self, h2: &[f32]) -> (Vec<f64>, f64) {
        let hidden: Vec<f64> = self
            .w1
            .chunks_exact(self.d_in)
            .zip(&self.b1)
            .map(|(row, b)| (dot_f32(row, h2) + *b as f64).max(0.0))
            .collect();
        let logit = hidden.iter().zip(&self.w2).map(|(h, w)| h * *w as f64).sum::<f64>() + self.b2 as f64;
        (hidden, logit)
    }

    /// Weighted mean binary cross-entropy on `sigmoid(logit)` and its
    /// gradient. `targets` are 1 for error, 0 for plausible.
    pub fn loss_and_grad(&self, x: &DenseRows, targets: &[f64], weights: &[f64]) -> Result<(f64, HeadGrad)> {
        let (losses, g) = self.batch_pass(x, targets, weights, true)?;
        let n = losses.len() as f64;
        Ok((losses.iter().sum::<f64>() / n, g.expect("gradient requested")))
    }

    pub fn loss(&self, x: &DenseRows, targets: &[f64], weights: &[f64]) -> Result<f64> {
        let (losses, _) = self.batch_pass(x, targets, weights, false)?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    fn batch_pass(
        &self,
        x: &DenseRows,
        targets: &[f64],
        weights: &[f64],
        with_grad: bool,
    ) -> Result<(Vec<f64>, Option<HeadGrad>)> {
        let n = x.n_rows();
        if x.dim() != self.d_in {
            return Err(Error::DimMismatch { expected: self.d_in, got: x.dim() });
        }
        if n == 0 || targets.len() != n || weights.len() != n {
            return Err(Error::RowCount(format!(
                "{n} rows, {} targets, {} weights",
                targets.len(),
                weights.len()
            )));
        }
        let scale = 1.0 / n as f64;
        let chunks: Vec<(Vec<f64>, Option<HeadGrad>)> = (0..n.div_ceil(GRAD_CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut g = with_grad.then(|| HeadGrad::zeros(self.d_in, self.d_hidden));
                let lo = c * GRAD_CHUNK;
                let hi = (lo + GRAD_CHUNK).min(n);
                let losses = (lo..hi)
                    .map(|i| {
                        let h2 = x.row_slice(i);
                        let (hidden, logit) = self.forward_f64(h2);
                        let (y, w) = (targets[i], weights[i]);
                        let loss = w * bce_with_logits(logit, y);
                        if let Some(g) = g.as_mut() {
                            let dlogit = scale * w * (sigmoid(logit) - y);
                            g.b2 += dlogit;
                            for (k, hk) in hidden.iter().enumerate() {
                                g.w2[k] += dlogit * hk;
                                if *hk > 0.0 {
                                    let dpre = dlogit * self.w2[k] as f64;
                                    g.b1[k] += dpre;
                                    let row = &mut g.w1[k * self.d_in..(k + 1) * self.d_in];
                                    for (gw, xi) in row.iter_mut().zip(h2) {
                                        *gw += dpre * *xi as f64;
                                    }
                                }
                            }
                        }
                        loss
                    })
                    .collect();
                (losses, g)
            })
            .collect();
        let mut losses = Vec::with_capacity(n);
        let mut total: Option<HeadGrad> = None;
        for (l, g) in chunks {
            losses.extend(l);
            if let Some(g) = g {
                match total.as_mut() {
                    Some(t) => t.add(&g),
                    None => total = Some(g),
                }
            }
        }
        Ok((losses, total))
    }

    pub(crate) fn params_mut(&mut self) -> [&mut [f32]; 4] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            std::slice::from_mut(&mut self.b2),
        ]
    }

    /// Fraction of rows whose predicted class (`logit > 0` means error)
    /// matches the label.
    pub fn accuracy(&self, rows: &dyn RowSource, labels: &[Label]) -> Result<f64> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for (i, l) in labels.iter().enumerate() {
            if !l.is_labeled() {
                continue;
            }
            let out = self.forward(&rows.row(i))?;
            if (out.logit > 0.0) == (*l == Label::Error) {
                correct += 1;
            }
            total += 1;
        }
        Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&HEAD_MAGIC)?;
        for v in [HEAD_VERSION, self.d_in as u32, self.d_hidden as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        write_f32s(&mut w, &self.w1)?;
        write_f32s(&mut w, &self.b1)?;
        write_f32s(&mut w, &self.w2)?;
        write_f32s(&mut w, &[self.b2])
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::InvalidModel("checkpoint truncated".into()))?;
        if magic != HEAD_MAGIC {
            return Err(Error::BadMagic { expected: HEAD_MAGIC, found: magic });
        }
        let version = read_u32(&mut r)?;
        if version != HEAD_VERSION {
            return Err(Error::Version(version));
        }
        let d_in = read_u32(&mut r)? as usize;
        let d_hidden = read_u32(&mut r)? as usize;
        let mut h = ClassifierHead::zeros(d_in, d_hidden)?;
        for p in h.params_mut() {
            read_f32s(&mut r, p)?;
        }
        if h.params_mut().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidModel("non-finite head parameter".into()));
        }
        Ok(h)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        ClassifierHead::read_from(std::io::BufReader::new(f))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-[y log σ(x) + (1 - y) log(1 - σ(x))]`, stable for large `|x|`.
fn bce_with_logits(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

/// Per-class loss weights; off by default.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub error: f64,
    pub plausible: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub d_hidden: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub class_weights: Option<ClassWeights>,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            d_hidden: ClassifierHead::REFERENCE_DIMS.1,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            epochs: 50,
            batch_size: 256,
            seed: 0,
            class_weights: None,
        }
    }
}

impl HeadConfig {
    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Epoch-at-a-time AdamW training of a [`ClassifierHead`].
pub struct HeadTrainer<'a> {
    head: ClassifierHead,
    adam: Adam,
    cfg: HeadConfig,
    rows: &'a dyn RowSource,
    targets: Vec<f64>,
    weights: Vec<f64>,
    epoch: usize,
    shuffle_seed: u64,
}

impl<'a> HeadTrainer<'a> {
    pub fn new(rows: &'a dyn RowSource, labels: &[Label], cfg: HeadConfig) -> Result<Self> {
        cfg.adam().validate()?;
        if cfg.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if labels.len() != rows.n_rows() {
            return Err(Error::RowCount(format!("{} rows vs {} labels", rows.n_rows(), labels.len())));
        }
        if rows.n_rows() == 0 {
            return Err(Error::Config("no training rows".into()));
        }
        if let Some(i) = labels.iter().position(|l| !l.is_labeled()) {
            return Err(Error::Unlabeled(i));
        }
        let targets: Vec<f64> = labels.iter().map(|l| if *l == Label::Error { 1.0 } else { 0.0 }).collect();
        let weights = labels
            .iter()
            .map(|l| match (cfg.class_weights, l) {
                (Some(w), Label::Error) => w.error,
                (Some(w), _) => w.plausible,
                (None, _) => 1.0,
            })
            .collect();
        let head = ClassifierHead::init(rows.dim(), cfg.d_hidden, cfg.seed)?;
        Ok(HeadTrainer {
            adam: Adam::new(head.param_count(), cfg.adam()),
            shuffle_seed: rng::derive_seed(cfg.seed, rng::stream::HEAD_SHUFFLE),
            head,
            cfg,
            rows,
            targets,
            weights,
            epoch: 0,
        })
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn into_head(self) -> ClassifierHead {
        self.head
    }

    /// Runs one epoch and returns its mean loss (per-row losses at the time
    /// each row was seen, summed in row order).
    pub fn run_epoch(&mut self) -> Result<f64> {
        let n = self.rows.n_rows();
        let d = self.rows.dim();
        let mut row_loss = vec![0.0; n];
        let seed = rng::derive_seed(self.shuffle_seed, self.epoch as u64);
        for batch in batch_iter(n, self.cfg.batch_size, seed, true) {
            let mut xs = Vec::with_capacity(batch.len() * d);
            for &i in &batch {
                xs.extend(self.rows.row(i));
            }
            let x = DenseRows::new(d, xs)?;
            let t: Vec<f64> = batch.iter().map(|&i| self.targets[i]).collect();
            let w: Vec<f64> = batch.iter().map(|&i| self.weights[i]).collect();
            let (losses, g) = self.head.batch_pass(&x, &t, &w, true)?;
            for (l, &i) in losses.iter().zip(&batch) {
                row_loss[i] = *l;
            }
            let g = g.expect("gradient requested");
            self.adam.begin_step();
            let mut offset = 0;
            for (p, g) in self.head.params_mut().into_iter().zip([&g.w1[..], &g.b1, &g.w2, &[g.b2]]) {
                self.adam.update(offset, p, g);
                offset += p.len();
            }
        }
        let loss = row_loss.iter().sum::<f64>() / n as f64;
        let h = &self.head;
        let params_finite = [h.w1(), h.b1(), h.w2(), &[h.b2()]].iter().all(|p| p.iter().all(|v| v.is_finite()));
        if !loss.is_finite() || !params_finite {
            return Err(Error::Diverged { epoch: self.epoch });
        }
        self.epoch += 1;
        Ok(loss)
    }
}

pub struct HeadTrainOutput {
    pub head: ClassifierHead,
    pub loss_history: Vec<f64>,
}

/// Trains a head for `cfg.epochs` epochs on labeled rows.
pub fn train_head(rows: &dyn RowSource, labels: &[Label], cfg: &HeadConfig) -> Result<HeadTrainOutput> {
    let mut t = HeadTrainer::new(rows, labels, cfg.clone())?;
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        loss_history.push(t.run_epoch()?);
    }
    Ok(HeadTrainOutput { head: t.into_head(), loss_history })
}

/// Writes the hidden activations of every row of `ds` to a new dataset at
/// `out_prefix`, with metadata copied verbatim.
pub fn dump_hidden(head: &ClassifierHead, ds: &EmbeddingDataset, out_prefix: impl AsRef<Path>) -> Result<EmbeddingDataset> {
    if ds.dim() != head.d_in() {
        return Err(Error::DimMismatch { expected: head.d_in(), got: ds.dim() });
    }
    let n = ds.n_rows();
    let blocks = (0..n.div_ceil(DUMP_BLOCK)).flat_map(|b| {
        let lo = b * DUMP_BLOCK;
        let hi = (lo + DUMP_BLOCK).min(n);
        let hidden: Vec<Vec<f32>> = (lo..hi)
            .into_par_iter()
            .map(|i| head.forward_f64(&ds.row(i)).0.into_iter().map(|v| v as f32).collect())
            .collect();
        hidden.into_iter().zip(ds.meta()[lo..hi].iter().cloned())
    });
    write_dataset_prefix(out_prefix, head.d_hidden(), blocks)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::store::RowMeta;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_head(d_in: usize, d_h: usize, seed: u64) -> ClassifierHead {
        let mut h = ClassifierHead::zeros(d_in, d_h).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        for p in h.params_mut() {
            p.iter_mut().for_each(|v| *v = r.random_range(-0.5..0.5));
        }
        h
    }

    #[test]
    fn zero_head_outputs_zero() {
        let h = ClassifierHead::zeros(768, 256).unwrap();
        let out = h.forward(&vec![0.7; 768]).unwrap();
        assert!(out.hidden.iter().all(|v| *v == 0.0));
        assert_eq!(out.logit, 0.0);
    }

    #[test]
    fn relu_zeroes_negative_coordinates() {
        let mut h = ClassifierHead::zeros(768, 256).unwrap();
        for i in 0..256 {
            h.w1_mut()[i * 768 + i] = 1.0;
        }
        let x: Vec<f32> = (0..768).map(|i| if i % 3 == 0 { -1.0 } else { 2.0 }).collect();
        let out = h.forward(&x).unwrap();
        for i in 0..256 {
            assert_eq!(out.hidden[i], if i % 3 == 0 { 0.0 } else { 2.0 });
        }
    }

    #[test]
    fn forward_matches_scalar_loops() {
        let h = random_head(10, 6, 1);
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f32> = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
        let out = h.forward(&x).unwrap();
        let mut logit = h.b2() as f64;
        for k in 0..6 {
            let mut acc = h.b1()[k] as f64;
            for j in 0..10 {
                acc += h.w1()[k * 10 + j] as f64 * x[j] as f64;
            }
            let hk = acc.max(0.0);
            assert!((out.hidden[k] as f64 - hk).abs() < 1e-6);
            logit += hk * h.w2()[k] as f64;
        }
        assert!((out.logit - logit).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let head = random_head(12, 8, 3);
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let x = DenseRows::new(12, (0..48).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let t = [1.0, 0.0, 1.0, 0.0];
        let w = [1.0, 2.0, 0.5, 1.0];
        let (_, g) = head.loss_and_grad(&x, &t, &w).unwrap();
        let analytic: Vec<f64> = g.w1.iter().chain(&g.b1).chain(&g.w2).copied().chain([g.b2]).collect();
        let mut probe = head.clone();
        let mut flat = 0;
        let mut worst = 0.0f64;
        for gi in 0..4 {
            let len = probe.params_mut()[gi].len();
            for p in 0..len {
                let orig = probe.params_mut()[gi][p];
                let plus = orig + 1e-3;
                let minus = orig - 1e-3;
                probe.params_mut()[gi][p] = plus;
                let lp = probe.loss(&x, &t, &w).unwrap();
                probe.params_mut()[gi][p] = minus;
                let lm = probe.loss(&x, &t, &w).unwrap();
                probe.params_mut()[gi][p] = orig;
                let fd = (lp - lm) / (plus as f64 - minus as f64);
                let a = analytic[flat];
                worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-8));
                flat += 1;
            }
        }
        assert!(worst < 1e-3, "max relative error {worst}");
    }

    #[test]
    fn zero_lr_keeps_parameters_and_loss() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let rows = DenseRows::new(6, (0..60).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let labels: Vec<Label> = (0..10).map(|i| if i % 2 == 0 { Label::Error } else { Label::Plausible }).collect();
        let cfg = HeadConfig { d_hidden: 4, lr: 0.0, epochs: 3, batch_size: 3, seed: 9, ..Default::default() };
        let out = train_head(&rows, &labels, &cfg).unwrap();
        assert_eq!(out.head, ClassifierHead::init(6, 4, 9).unwrap());
        assert!(out.loss_history.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn overflowing_update_is_divergence() {
        let rows = DenseRows::new(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let cfg = HeadConfig { d_hidden: 3, lr: f64::MAX, epochs: 2, batch_size: 2, ..Default::default() };
        let err = train_head(&rows, &[Label::Error, Label::Plausible], &cfg).err().unwrap();
        assert!(matches!(err, Error::Diverged { epoch: 0 }));
    }

    #[test]
    fn unlabeled_rows_are_rejected() {
        let rows = DenseRows::new(2, vec![0.0; 4]).unwrap();
        let err = train_head(&rows, &[Label::Error, Label::Unlabeled], &HeadConfig::default()).err().unwrap();
        assert!(matches!(err, Error::Unlabeled(1)));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let h = random_head(7, 3, 6);
        let mut buf = Vec::new();
        h.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"HEAD");
        assert_eq!(buf.len(), 16 + 4 * h.param_count());
        assert_eq!(ClassifierHead::read_from(buf.as_slice()).unwrap(), h);
    }

    #[test]
    fn dump_matches_forward_and_copies_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let head = random_head(5, 3, 7);
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<(Vec<f32>, RowMeta)> = (0..9)
            .map(|i| {
                let v = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
                (v, RowMeta::new(format!("img{i}"), Label::Error).with_caption("a hand").with_source("sdxl"))
            })
            .collect();
        let ds = write_dataset_prefix(dir.path().join("emb"), 5, rows.clone()).unwrap();
        let out = dump_hidden(&head, &ds, dir.path().join("hid")).unwrap();
        assert_eq!((out.n_rows(), out.dim()), (9, 3));
        assert_eq!(out.meta(), ds.meta());
        for i in 0..9 {
            let h = out.row(i);
            assert!(h.iter().all(|v| *v >= 0.0));
            assert_eq!(h, head.forward(&rows[i].0).unwrap().hidden);
        }
        assert!(dump_hidden(&random_head(4, 3, 1), &ds, dir.path().join("bad")).is_err());
    }
}
