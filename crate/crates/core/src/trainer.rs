//! Optimization of [`DictModel`] parameters.
//!
//! Each step samples a shuffled batch, computes the analytic gradient of the
//! nested loss, optionally projects decoder-column gradients onto the tangent
//! of the unit sphere, applies Adam and renormalizes decoder columns.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dict::{DictModel, DictSpec, Gradients};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::rng;
use crate::store::{batch_iter, DenseRows, RowSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Keep decoder columns at unit norm.
    pub decoder_norm: bool,
    /// Number of recent batches over which dead features are counted.
    pub dead_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 200,
            batch_size: 256,
            seed: 0,
            decoder_norm: true,
            dead_window: 100,
        }
    }
}

impl TrainConfig {
    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.dead_window == 0 {
            return Err(Error::Config(
                "epochs, batch_size and dead_window must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub kind: String,
    pub spec: Option<DictSpec>,
    /// Mean total loss per epoch, as seen by each row when it was trained on.
    pub epoch_loss: Vec<f64>,
    /// Mean per-level loss per epoch.
    pub epoch_level_loss: Vec<Vec<f64>>,
    pub dead_per_epoch: Vec<usize>,
    /// Dead features at the end of training.
    pub dead_features: Vec<usize>,
    pub steps: u64,
    /// Not serialized.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Observed once per optimizer step, before the update.
#[derive(Debug)]
pub struct BatchEvent<'a> {
    pub epoch: usize,
    pub step: u64,
    pub rows: &'a [usize],
    /// Latents that fired (kept with a positive code at any level) in the batch.
    pub active: &'a [usize],
    pub loss: f64,
}

#[derive(Debug)]
pub struct Divergence {
    pub epoch: usize,
    /// Parameters at the end of the last epoch whose losses were all finite.
    pub last_good: DictModel,
    pub report: TrainReport,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Invalid(#[from] Error),
    #[error("training diverged at epoch {}", .0.epoch)]
    Diverged(Box<Divergence>),
}

/// Sliding window of per-batch activation sets.
#[derive(Clone, Debug)]
pub struct DeadFeatureTracker {
    window: usize,
    masks: VecDeque<Vec<usize>>,
    counts: Vec<u32>,
}

impl DeadFeatureTracker {
    pub fn new(d_z: usize, window: usize) -> Self {
        DeadFeatureTracker {
            window: window.max(1),
            masks: VecDeque::new(),
            counts: vec![0; d_z],
        }
    }

    /// Records the latents that fired in one batch.
    pub fn record(&mut self, active: &[usize]) {
        if self.masks.len() == self.window {
            for j in self.masks.pop_front().unwrap() {
                self.counts[j] -= 1;
            }
        }
        for &j in active {
            self.counts[j] += 1;
        }
        self.masks.push_back(active.to_vec());
    }

    /// Latents that never fired in the recorded window, ascending.
    pub fn dead(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|&j| self.counts[j] == 0).collect()
    }

    pub fn batches_seen(&self) -> usize {
        self.masks.len()
    }
}

pub struct TrainOutput {
    pub model: DictModel,
    pub report: TrainReport,
}

/// Initializes a model from `spec` and trains it. Autoencoder kinds pass
/// `targets = None` and reconstruct their inputs; transcoders need targets.
pub fn train_dict(
    inputs: &dyn RowSource,
    targets: Option<&dyn RowSource>,
    spec: DictSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutput, TrainError> {
    let model = DictModel::init(spec, cfg.seed)?;
    train_from(model, inputs, targets, cfg, &mut |_| {})
}

/// Trains an existing model (fresh optimizer state), reporting every step to
/// `observer`.
pub fn train_from(
    mut model: DictModel,
    inputs: &dyn RowSource,
    targets: Option<&dyn RowSource>,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&BatchEvent<'_>),
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    let spec = model.spec().clone();
    let targets: &dyn RowSource = match (spec.kind.is_transcoder(), targets) {
        (true, Some(t)) => t,
        (false, None) => inputs,
        (true, None) => {
            return Err(Error::Config(format!("{} needs a target dataset", spec.kind)).into())
        }
        (false, Some(_)) => {
            return Err(Error::Config(format!(
                "{} reconstructs its inputs; pass no target dataset",
                spec.kind
            ))
            .into())
        }
    };
    if inputs.dim() != spec.d_in {
        return Err(Error::DimMismatch { expected: spec.d_in, got: inputs.dim() }.into());
    }
    if targets.dim() != spec.d_out {
        return Err(Error::DimMismatch { expected: spec.d_out, got: targets.dim() }.into());
    }
    let n = inputs.n_rows();
    if n != targets.n_rows() {
        return Err(Error::RowCount(format!("{n} input rows vs {} target rows", targets.n_rows())).into());
    }
    if n == 0 {
        return Err(Error::Config("no training rows".into()).into());
    }

    let start = Instant::now();
    let levels = spec.n_levels();
    let d_z = spec.d_z();
    let mut adam = Adam::new(model.param_count(), cfg.adam());
    let mut tracker = DeadFeatureTracker::new(d_z, cfg.dead_window);
    let mut report = TrainReport {
        kind: spec.kind.to_string(),
        spec: Some(spec.clone()),
        ..Default::default()
    };
    let shuffle_seed = rng::derive_seed(cfg.seed, rng::stream::DICT_SHUFFLE);
    let mut last_good = model.clone();
    let mut row = vec![0f32; spec.d_in.max(spec.d_out)];

    for epoch in 0..cfg.epochs {
        let mut row_loss = vec![0.0f64; n];
        let mut row_level = vec![0.0f64; n * levels];
        for batch in batch_iter(n, cfg.batch_size, rng::derive_seed(shuffle_seed, epoch as u64), true) {
            let mut xs = Vec::with_capacity(batch.len() * spec.d_in);
            let mut ts = Vec::with_capacity(batch.len() * spec.d_out);
            for &i in &batch {
                inputs.row_into(i, &mut row[..spec.d_in]);
                xs.extend_from_slice(&row[..spec.d_in]);
                targets.row_into(i, &mut row[..spec.d_out]);
                ts.extend_from_slice(&row[..spec.d_out]);
            }
            let x = DenseRows::new(spec.d_in, xs)?;
            let t = DenseRows::new(spec.d_out, ts)?;
            let (samples, grad) = model.batch_pass(&x, &t, true)?;

            let mut batch_loss = 0.0;
            let mut fired = vec![false; d_z];
            for (s, &i) in samples.iter().zip(&batch) {
                row_level[i * levels..(i + 1) * levels].copy_from_slice(&s.per_level);
                row_loss[i] = s.per_level.iter().sum();
                batch_loss += row_loss[i];
                for sup in &s.supports {
                    for &j in sup {
                        fired[j] = true;
                    }
                }
            }
            batch_loss /= batch.len() as f64;
            if !batch_loss.is_finite() {
                report.wall_time_secs = start.elapsed().as_secs_f64();
                return Err(TrainError::Diverged(Box::new(Divergence { epoch, last_good, report })));
            }
            let active: Vec<usize> = (0..d_z).filter(|&j| fired[j]).collect();
            tracker.record(&active);
            observer(&BatchEvent {
                epoch,
                step: adam.steps() + 1,
                rows: &batch,
                active: &active,
                loss: batch_loss,
            });

            let mut grad: Gradients = grad.expect("gradient requested");
            if cfg.decoder_norm {
                model.project_decoder_grad(&mut grad.w_dec);
            }
            adam.begin_step();
            let mut offset = 0;
            for (p, g) in model
                .params_mut()
                .into_iter()
                .zip([&grad.w_enc, &grad.b_enc, &grad.w_dec, &grad.b_dec])
            {
                adam.update(offset, p, g);
                offset += p.len();
            }
            if cfg.decoder_norm {
                renormalize_drifted(&mut model);
            }
        }

        if !params_finite(&model) {
            report.wall_time_secs = start.elapsed().as_secs_f64();
            return Err(TrainError::Diverged(Box::new(Divergence { epoch, last_good, report })));
        }
        let epoch_loss = row_loss.iter().sum::<f64>() / n as f64;
        let level_loss: Vec<f64> = (0..levels)
            .map(|l| (0..n).map(|i| row_level[i * levels + l]).sum::<f64>() / n as f64)
            .collect();
        let dead = tracker.dead();
        log::debug!("epoch {epoch}: loss {epoch_loss:.6} dead {}", dead.len());
        report.epoch_loss.push(epoch_loss);
        report.epoch_level_loss.push(level_loss);
        report.dead_per_epoch.push(dead.len());
        report.dead_features = dead;
        report.steps = adam.steps();
        last_good = model.clone();
    }
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(TrainOutput { model, report })
}

/// Renormalizes decoder columns whose norm has moved away from one. Columns
/// already unit to within 1e-7 keep their exact bits.
fn renormalize_drifted(model: &mut DictModel) {
    let d = model.spec().d_out;
    for col in model.w_dec_mut().chunks_exact_mut(d) {
        let norm = col.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 && (norm - 1.0).abs() > 1e-7 {
            col.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
        }
    }
}

fn params_finite(model: &DictModel) -> bool {
    [model.w_enc(), model.b_enc(), model.w_dec(), model.b_dec()]
        .iter()
        .all(|p| p.iter().all(|v| v.is_finite()))
}

/// Maximum relative error between analytic and finite-difference gradients.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub w_enc: f64,
    pub b_enc: f64,
    pub w_dec: f64,
    pub b_dec: f64,
    pub checked: usize,
    /// Coordinates skipped because a perturbation changed a top-k or ReLU
    /// support, where the loss is not differentiable.
    pub skipped: usize,
}

/// Central finite differences of the nested loss for every parameter,
/// compared against [`DictModel::loss_and_grad`].
pub fn grad_check(model: &DictModel, inputs: &DenseRows, targets: &DenseRows, eps: f64) -> Result<GradCheckReport> {
    let (_, analytic) = model.loss_and_grad(inputs, targets)?;
    let supports = |m: &DictModel| -> Result<(f64, Vec<Vec<Vec<usize>>>)> {
        let (samples, _) = m.batch_pass(inputs, targets, false)?;
        let n = samples.len() as f64;
        let loss = samples.iter().map(|s| s.per_level.iter().sum::<f64>()).sum::<f64>() / n;
        Ok((loss, samples.into_iter().map(|s| s.supports).collect()))
    };
    let (_, base_support) = supports(model)?;

    let mut probe = model.clone();
    let mut report = GradCheckReport::default();
    let groups = [&analytic.w_enc, &analytic.b_enc, &analytic.w_dec, &analytic.b_dec];
    for (gi, grads) in groups.into_iter().enumerate() {
        let mut worst = 0.0f64;
        for (p, &a) in grads.iter().enumerate() {
            let orig = probe.params_mut()[gi][p];
            let plus = (orig as f64 + eps) as f32;
            let minus = (orig as f64 - eps) as f32;
            probe.params_mut()[gi][p] = plus;
            let (lp, sp) = supports(&probe)?;
            probe.params_mut()[gi][p] = minus;
            let (lm, sm) = supports(&probe)?;
            probe.params_mut()[gi][p] = orig;
            if sp != base_support || sm != base_support {
                report.skipped += 1;
                continue;
            }
            let fd = (lp - lm) / (plus as f64 - minus as f64);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
            report.checked += 1;
        }
        match gi {
            0 => report.w_enc = worst,
            1 => report.b_enc = worst,
            2 => report.w_dec = worst,
            _ => report.b_dec = worst,
        }
        report.max_rel_err = report.max_rel_err.max(worst);
    }
    Ok(report)
}
