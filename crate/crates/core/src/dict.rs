//! Sparse dictionary models: SAE, Matryoshka SAE, transcoder and Matryoshka
//! transcoder.
//!
//! All four share one parameterization. The encoder is
//! `z = ReLU(W_enc h + b_enc)`, with `W_enc` of shape `d_z x d_in`. The decoder
//! reads a prefix of the code, `r_m = W_dec[:, 0..m] z[0..m] + b_dec`, with
//! `W_dec` of shape `d_out x d_z`. A model carries a nested schedule of
//! dictionary sizes `m_1 < ... < m_L = d_z` and per-level sparsities `k_j`.
//! Level `j` keeps the `k_j` largest codes among the first `m_j` latents and
//! reconstructs from them. The training loss sums the per-level mean squared
//! errors.
//!
//! Autoencoders reconstruct their own input (`d_out = d_in`); transcoders
//! predict a different layer's activations from the input. The non-Matryoshka
//! kinds are the single-level special case.
//!
//! Parameters are stored as `f32`. Every forward and backward computation
//! accumulates in `f64`.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::store::DenseRows;

pub const CKPT_MAGIC: [u8; 4] = *b"DICT";
pub const CKPT_VERSION: u32 = 1;

/// Samples per gradient chunk. Chunks are reduced in order.
const GRAD_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictKind {
    Sae,
    MatryoshkaSae,
    Transcoder,
    MatryoshkaTranscoder,
}

impl DictKind {
    pub const ALL: [DictKind; 4] = [
        DictKind::Sae,
        DictKind::MatryoshkaSae,
        DictKind::Transcoder,
        DictKind::MatryoshkaTranscoder,
    ];

    pub fn is_matryoshka(self) -> bool {
        matches!(self, DictKind::MatryoshkaSae | DictKind::MatryoshkaTranscoder)
    }

    pub fn is_transcoder(self) -> bool {
        matches!(self, DictKind::Transcoder | DictKind::MatryoshkaTranscoder)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DictKind::Sae => "sae",
            DictKind::MatryoshkaSae => "matryoshka_sae",
            DictKind::Transcoder => "transcoder",
            DictKind::MatryoshkaTranscoder => "matryoshka_transcoder",
        }
    }

    /// Human-readable method name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            DictKind::Sae => "SAE",
            DictKind::MatryoshkaSae => "Matryoshka SAE",
            DictKind::Transcoder => "Transcoder",
            DictKind::MatryoshkaTranscoder => "Matryoshka Transcoder",
        }
    }

    fn tag(self) -> u32 {
        match self {
            DictKind::Sae => 0,
            DictKind::MatryoshkaSae => 1,
            DictKind::Transcoder => 2,
            DictKind::MatryoshkaTranscoder => 3,
        }
    }

    fn from_tag(tag: u32) -> Result<Self> {
        DictKind::ALL
            .get(tag as usize)
            .copied()
            .ok_or_else(|| Error::InvalidModel(format!("unknown kind tag {tag}")))
    }
}

impl fmt::Display for DictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DictKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DictKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?}")))
    }
}

/// Architecture and sparsity schedule of a [`DictModel`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictSpec {
    pub kind: DictKind,
    pub d_in: usize,
    pub d_out: usize,
    /// Nested dictionary sizes, strictly ascending; the last is `d_z`.
    pub sizes: Vec<usize>,
    /// Top-k per level, `sparsities[j] <= sizes[j]`.
    pub sparsities: Vec<usize>,
}

impl DictSpec {
    pub fn new(
        kind: DictKind,
        d_in: usize,
        d_out: usize,
        sizes: Vec<usize>,
        sparsities: Vec<usize>,
    ) -> Result<Self> {
        let spec = DictSpec {
            kind,
            d_in,
            d_out,
            sizes,
            sparsities,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A single-level spec with dictionary size `d_z` and top-`k`.
    pub fn single(kind: DictKind, d_in: usize, d_out: usize, d_z: usize, k: usize) -> Result<Self> {
        DictSpec::new(kind, d_in, d_out, vec![d_z], vec![k])
    }

    /// The configuration used for the physical-plausibility study:
    /// 768-dim embeddings to 256-dim hidden activations, sizes
    /// {128, 256, 512, 1024, 2048}, top-k {16, 32, 64, 128, 256}.
    pub fn reference_transcoder() -> Self {
        DictSpec {
            kind: DictKind::MatryoshkaTranscoder,
            d_in: 768,
            d_out: 256,
            sizes: vec![128, 256, 512, 1024, 2048],
            sparsities: vec![16, 32, 64, 128, 256],
        }
    }

    pub fn d_z(&self) -> usize {
        *self.sizes.last().expect("validated spec has at least one level")
    }

    pub fn n_levels(&self) -> usize {
        self.sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        if self.d_in == 0 || self.d_out == 0 {
            return bad("d_in and d_out must be positive".into());
        }
        if self.sizes.is_empty() {
            return bad("at least one dictionary size is required".into());
        }
        if self.sizes.len() != self.sparsities.len() {
            return bad(format!(
                "{} sizes but {} sparsities",
                self.sizes.len(),
                self.sparsities.len()
            ));
        }
        if self.sizes[0] == 0 || self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("sizes {:?} must be positive and strictly ascending", self.sizes));
        }
        for (m, k) in self.sizes.iter().zip(&self.sparsities) {
            if *k == 0 || k > m {
                return bad(format!("sparsity {k} must lie in 1..={m}"));
            }
        }
        if !self.kind.is_matryoshka() && self.sizes.len() != 1 {
            return bad(format!("{} takes a single level", self.kind));
        }
        if !self.kind.is_transcoder() && self.d_in != self.d_out {
            return bad(format!(
                "{} reconstructs its input; d_out {} != d_in {}",
                self.kind, self.d_out, self.d_in
            ));
        }
        Ok(())
    }
}

/// Per-level and total reconstruction loss over a batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_level: Vec<f64>,
}

/// Gradient of the batch loss, laid out like the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w_enc: Vec<f64>,
    pub b_enc: Vec<f64>,
    pub w_dec: Vec<f64>,
    pub b_dec: Vec<f64>,
}

impl Gradients {
    fn zeros(spec: &DictSpec) -> Self {
        let d_z = spec.d_z();
        Gradients {
            w_enc: vec![0.0; d_z * spec.d_in],
            b_enc: vec![0.0; d_z],
            w_dec: vec![0.0; d_z * spec.d_out],
            b_dec: vec![0.0; spec.d_out],
        }
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in [
            (&mut self.w_enc, &other.w_enc),
            (&mut self.b_enc, &other.b_enc),
            (&mut self.w_dec, &other.w_dec),
            (&mut self.b_dec, &other.b_dec),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn max_abs(&self) -> f64 {
        [&self.w_enc, &self.b_enc, &self.w_dec, &self.b_dec]
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

/// Per-sample output of a forward pass.
#[derive(Clone, Debug, Default)]
pub(crate) struct SampleOut {
    /// Squared reconstruction error at each level.
    pub per_level: Vec<f64>,
    /// Kept latents with a positive code at each level, ascending.
    pub supports: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DictModel {
    spec: DictSpec,
    /// `d_z x d_in`, row-major.
    w_enc: Vec<f32>,
    b_enc: Vec<f32>,
    /// Decoder directions, latent-major: `w_dec[j * d_out..(j + 1) * d_out]`
    /// is column `j` of the `d_out x d_z` decoder matrix.
    w_dec: Vec<f32>,
    b_dec: Vec<f32>,
}

impl DictModel {
    pub fn zeros(spec: DictSpec) -> Result<Self> {
        spec.validate()?;
        let d_z = spec.d_z();
        Ok(DictModel {
            w_enc: vec![0.0; d_z * spec.d_in],
            b_enc: vec![0.0; d_z],
            w_dec: vec![0.0; d_z * spec.d_out],
            b_dec: vec![0.0; spec.d_out],
            spec,
        })
    }

    /// Seeded initialization: decoder columns are random unit vectors and
    /// biases are zero. Autoencoders use `W_enc = W_decᵀ`; transcoders, whose
    /// encoder and decoder widths differ, draw unit encoder rows independently.
    pub fn init(spec: DictSpec, seed: u64) -> Result<Self> {
        let mut model = DictModel::zeros(spec)?;
        let mut r = rng::rng(seed, rng::stream::DICT_INIT, 0);
        let (d_in, d_out) = (model.spec.d_in, model.spec.d_out);
        for col in model.w_dec.chunks_exact_mut(d_out) {
            random_unit(&mut r, col);
        }
        if model.spec.kind.is_transcoder() {
            for row in model.w_enc.chunks_exact_mut(d_in) {
                random_unit(&mut r, row);
            }
        } else {
            model.w_enc.copy_from_slice(&model.w_dec);
        }
        Ok(model)
    }

    pub fn spec(&self) -> &DictSpec {
        &self.spec
    }

    pub fn kind(&self) -> DictKind {
        self.spec.kind
    }

    pub fn d_z(&self) -> usize {
        self.spec.d_z()
    }

    pub fn w_enc(&self) -> &[f32] {
        &self.w_enc
    }

    pub fn w_enc_mut(&mut self) -> &mut [f32] {
        &mut self.w_enc
    }

    pub fn b_enc(&self) -> &[f32] {
        &self.b_enc
    }

    pub fn b_enc_mut(&mut self) -> &mut [f32] {
        &mut self.b_enc
    }

    pub fn w_dec(&self) -> &[f32] {
        &self.w_dec
    }

    pub fn w_dec_mut(&mut self) -> &mut [f32] {
        &mut self.w_dec
    }

    pub fn b_dec(&self) -> &[f32] {
        &self.b_dec
    }

    pub fn b_dec_mut(&mut self) -> &mut [f32] {
        &mut self.b_dec
    }

    /// Decoder direction of latent `j` (column `j` of `W_dec`).
    pub fn decoder_column(&self, j: usize) -> &[f32] {
        let d = self.spec.d_out;
        &self.w_dec[j * d..(j + 1) * d]
    }

    pub fn encoder_row(&self, j: usize) -> &[f32] {
        let d = self.spec.d_in;
        &self.w_enc[j * d..(j + 1) * d]
    }

    pub fn param_count(&self) -> usize {
        self.w_enc.len() + self.b_enc.len() + self.w_dec.len() + self.b_dec.len()
    }

    pub(crate) fn params_mut(&mut self) -> [&mut [f32]; 4] {
        [
            &mut self.w_enc,
            &mut self.b_enc,
            &mut self.w_dec,
            &mut self.b_dec,
        ]
    }

    /// `z = ReLU(W_enc h + b_enc)`.
    pub fn encode(&self, h: &[f32]) -> Result<Vec<f64>> {
        check_len(self.spec.d_in, h.len())?;
        Ok(self.encode_unchecked(h))
    }

    fn encode_unchecked(&self, h: &[f32]) -> Vec<f64> {
        let d_in = self.spec.d_in;
        self.w_enc
            .chunks_exact(d_in)
            .zip(&self.b_enc)
            .map(|(row, b)| relu(dot_f32(row, h) + *b as f64))
            .collect()
    }

    /// `b_dec + sum_{j < m} s[j] * W_dec[:, j]`. Codes at or beyond `m` must be
    /// zero.
    pub fn decode_prefix(&self, sparse: &[f64], m: usize) -> Result<Vec<f64>> {
        check_len(self.d_z(), sparse.len())?;
        if m > self.d_z() {
            return Err(Error::Contract(format!("prefix {m} exceeds d_z {}", self.d_z())));
        }
        if let Some(j) = sparse[m..].iter().position(|v| *v != 0.0) {
            return Err(Error::Contract(format!(
                "nonzero code at latent {} outside prefix {m}",
                m + j
            )));
        }
        let mut out: Vec<f64> = self.b_dec.iter().map(|v| *v as f64).collect();
        for (j, s) in sparse[..m].iter().enumerate() {
            if *s != 0.0 {
                axpy(*s, self.decoder_column(j), &mut out);
            }
        }
        Ok(out)
    }

    /// Latents kept at `level` with a positive code, ascending by index.
    pub fn sparse_code(&self, h: &[f32], level: usize) -> Result<Vec<(usize, f64)>> {
        if level >= self.spec.n_levels() {
            return Err(Error::Config(format!("level {level} out of range")));
        }
        let z = self.encode(h)?;
        let kept = select_topk(&z, self.spec.sizes[level], self.spec.sparsities[level]);
        Ok(kept.into_iter().filter(|&j| z[j] > 0.0).map(|j| (j, z[j])).collect())
    }

    /// Sparse code at the largest dictionary level.
    pub fn full_code(&self, h: &[f32]) -> Result<Vec<(usize, f64)>> {
        self.sparse_code(h, self.spec.n_levels() - 1)
    }

    /// One sample through every level. When `grad` is given, `scale * dL/dθ`
    /// of the summed squared error is accumulated into it.
    pub(crate) fn sample_pass(
        &self,
        h: &[f32],
        t: &[f32],
        grad: Option<(&mut Gradients, f64)>,
    ) -> SampleOut {
        let spec = &self.spec;
        let d_out = spec.d_out;
        let z = self.encode_unchecked(h);

        let mut out = SampleOut {
            per_level: Vec::with_capacity(spec.n_levels()),
            supports: Vec::with_capacity(spec.n_levels()),
        };
        let mut residuals = Vec::with_capacity(spec.n_levels());
        for (&m, &k) in spec.sizes.iter().zip(&spec.sparsities) {
            let support: Vec<usize> = select_topk(&z, m, k).into_iter().filter(|&j| z[j] > 0.0).collect();
            let mut r: Vec<f64> = self.b_dec.iter().map(|v| *v as f64).collect();
            for &j in &support {
                axpy(z[j], self.decoder_column(j), &mut r);
            }
            let mut sq = 0.0;
            for (ri, ti) in r.iter_mut().zip(t) {
                *ri -= *ti as f64;
                sq += *ri * *ri;
            }
            out.per_level.push(sq);
            out.supports.push(support);
            residuals.push(r);
        }

        if let Some((g, scale)) = grad {
            let d_in = spec.d_in;
            let two = 2.0 * scale;
            let mut dz: Vec<(usize, f64)> = Vec::new();
            for (support, e) in out.supports.iter().zip(&residuals) {
                for (gb, ei) in g.b_dec.iter_mut().zip(e) {
                    *gb += two * ei;
                }
                for &j in support {
                    let col = self.decoder_column(j);
                    let gcol = &mut g.w_dec[j * d_out..(j + 1) * d_out];
                    let mut back = 0.0;
                    for ((gw, w), ei) in gcol.iter_mut().zip(col).zip(e) {
                        *gw += two * z[j] * ei;
                        back += *w as f64 * ei;
                    }
                    dz.push((j, two * back));
                }
            }
            // Kept latents have z > 0, so the ReLU passes the gradient.
            for (j, d) in dz {
                g.b_enc[j] += d;
                for (gw, hi) in g.w_enc[j * d_in..(j + 1) * d_in].iter_mut().zip(h) {
                    *gw += d * *hi as f64;
                }
            }
        }
        out
    }

    fn check_batch(&self, inputs: &DenseRows, targets: &DenseRows) -> Result<usize> {
        use crate::store::RowSource;
        check_len(self.spec.d_in, inputs.dim())?;
        check_len(self.spec.d_out, targets.dim())?;
        if inputs.n_rows() != targets.n_rows() {
            return Err(Error::RowCount(format!(
                "{} input rows vs {} target rows",
                inputs.n_rows(),
                targets.n_rows()
            )));
        }
        if inputs.n_rows() == 0 {
            return Err(Error::Config("empty batch".into()));
        }
        Ok(inputs.n_rows())
    }

    /// Per-sample, per-level squared errors (and optionally the batch-mean
    /// gradient) for a batch. Work is split into fixed chunks reduced in order.
    pub(crate) fn batch_pass(
        &self,
        inputs: &DenseRows,
        targets: &DenseRows,
        with_grad: bool,
    ) -> Result<(Vec<SampleOut>, Option<Gradients>)> {
        let n = self.check_batch(inputs, targets)?;
        let scale = 1.0 / n as f64;
        let (d_in, d_out) = (self.spec.d_in, self.spec.d_out);
        let xs = inputs.as_slice();
        let ts = targets.as_slice();
        let chunks: Vec<(Vec<SampleOut>, Option<Gradients>)> = (0..n.div_ceil(GRAD_CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut g = with_grad.then(|| Gradients::zeros(&self.spec));
                let lo = c * GRAD_CHUNK;
                let hi = (lo + GRAD_CHUNK).min(n);
                let outs = (lo..hi)
                    .map(|i| {
                        self.sample_pass(
                            &xs[i * d_in..(i + 1) * d_in],
                            &ts[i * d_out..(i + 1) * d_out],
                            g.as_mut().map(|g| (g, scale)),
                        )
                    })
                    .collect();
                (outs, g)
            })
            .collect();

        let mut samples = Vec::with_capacity(n);
        let mut total: Option<Gradients> = None;
        for (outs, g) in chunks {
            samples.extend(outs);
            if let Some(g) = g {
                match total.as_mut() {
                    Some(t) => t.add(&g),
                    None => total = Some(g),
                }
            }
        }
        Ok((samples, total))
    }

    fn breakdown(&self, samples: &[SampleOut]) -> Result<LossBreakdown> {
        let n = samples.len() as f64;
        let per_level: Vec<f64> = (0..self.spec.n_levels())
            .map(|l| samples.iter().map(|s| s.per_level[l]).sum::<f64>() / n)
            .collect();
        let total = per_level.iter().sum::<f64>();
        if !total.is_finite() {
            return Err(Error::Diverged { epoch: 0 });
        }
        Ok(LossBreakdown { total, per_level })
    }

    /// Sum over levels of the batch-mean squared reconstruction error.
    pub fn nested_loss(&self, inputs: &DenseRows, targets: &DenseRows) -> Result<LossBreakdown> {
        let (samples, _) = self.batch_pass(inputs, targets, false)?;
        self.breakdown(&samples)
    }

    /// Loss and its analytic gradient with respect to every parameter.
    pub fn loss_and_grad(&self, inputs: &DenseRows, targets: &DenseRows) -> Result<(LossBreakdown, Gradients)> {
        let (samples, g) = self.batch_pass(inputs, targets, true)?;
        Ok((self.breakdown(&samples)?, g.expect("gradient requested")))
    }

    /// Plain top-`k` loss over the whole dictionary, computed densely through
    /// [`DictModel::encode`], [`topk_prefix`] and [`DictModel::decode_prefix`].
    pub fn topk_loss(&self, inputs: &DenseRows, targets: &DenseRows, k: usize) -> Result<f64> {
        let n = self.check_batch(inputs, targets)?;
        let d_z = self.d_z();
        let mut sum = 0.0;
        for i in 0..n {
            let z = self.encode(inputs.row_slice(i))?;
            let s = topk_prefix(&z, d_z, k);
            let r = self.decode_prefix(&s, d_z)?;
            sum += r
                .iter()
                .zip(targets.row_slice(i))
                .map(|(a, b)| (a - *b as f64).powi(2))
                .sum::<f64>();
        }
        Ok(sum / n as f64)
    }

    /// Rescales every decoder column to unit L2 norm. Zero columns are left
    /// alone.
    pub fn normalize_decoder(&mut self) {
        let d = self.spec.d_out;
        for col in self.w_dec.chunks_exact_mut(d) {
            let norm = col.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                col.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
            }
        }
    }

    /// Removes from each decoder-column gradient its component along the
    /// column, so a step moves tangentially to the unit sphere.
    pub fn project_decoder_grad(&self, grad_w_dec: &mut [f64]) {
        let d = self.spec.d_out;
        for (col, g) in self.w_dec.chunks_exact(d).zip(grad_w_dec.chunks_exact_mut(d)) {
            let norm2 = col.iter().map(|v| (*v as f64).powi(2)).sum::<f64>();
            if norm2 == 0.0 {
                continue;
            }
            let along = col.iter().zip(g.iter()).map(|(w, gi)| *w as f64 * gi).sum::<f64>() / norm2;
            for (gi, w) in g.iter_mut().zip(col) {
                *gi -= along * *w as f64;
            }
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let s = &self.spec;
        w.write_all(&CKPT_MAGIC)?;
        for v in [
            CKPT_VERSION,
            s.kind.tag(),
            s.d_in as u32,
            s.d_out as u32,
            s.d_z() as u32,
            s.n_levels() as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in s.sizes.iter().chain(&s.sparsities) {
            w.write_all(&(*v as u32).to_le_bytes())?;
        }
        for arr in [&self.w_enc, &self.b_enc, &self.w_dec, &self.b_dec] {
            write_f32s(&mut w, arr)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(ckpt_err)?;
        if magic != CKPT_MAGIC {
            return Err(Error::BadMagic {
                expected: CKPT_MAGIC,
                found: magic,
            });
        }
        let version = read_u32(&mut r)?;
        if version != CKPT_VERSION {
            return Err(Error::Version(version));
        }
        let kind = DictKind::from_tag(read_u32(&mut r)?)?;
        let d_in = read_u32(&mut r)? as usize;
        let d_out = read_u32(&mut r)? as usize;
        let d_z = read_u32(&mut r)? as usize;
        let levels = read_u32(&mut r)? as usize;
        if levels > 4096 {
            return Err(Error::InvalidModel(format!("{levels} levels")));
        }
        let sizes = (0..levels).map(|_| read_u32(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let sparsities = (0..levels).map(|_| read_u32(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let spec = DictSpec::new(kind, d_in, d_out, sizes, sparsities)?;
        if spec.d_z() != d_z {
            return Err(Error::InvalidModel(format!("header d_z {d_z} != last size {}", spec.d_z())));
        }
        let mut model = DictModel::zeros(spec)?;
        for arr in model.params_mut() {
            read_f32s(&mut r, arr)?;
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(ckpt_err)? != 0 {
            return Err(Error::InvalidModel("trailing bytes after parameters".into()));
        }
        Ok(model)
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
        DictModel::read_from(std::io::BufReader::new(f))
    }
}

/// Indices of the `k` largest entries among `z[0..m]`, ascending by index.
/// Ties go to the lower index.
pub fn select_topk(z: &[f64], m: usize, k: usize) -> Vec<usize> {
    let m = m.min(z.len());
    let mut idx: Vec<usize> = (0..m).collect();
    if k < m {
        let by_value_then_index =
            |a: &usize, b: &usize| z[*b].total_cmp(&z[*a]).then(a.cmp(b));
        if k == 0 {
            return Vec::new();
        }
        idx.select_nth_unstable_by(k - 1, by_value_then_index);
        idx.truncate(k);
        idx.sort_unstable();
    }
    idx
}

/// Keeps the `k` largest entries of `z[0..m]` and zeros everything else,
/// including every coordinate at or beyond `m`.
pub fn topk_prefix(z: &[f64], m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    for j in select_topk(z, m, k) {
        out[j] = z[j];
    }
    out
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

fn axpy(alpha: f64, x: &[f32], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi as f64;
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimMismatch { expected, got })
    }
}

fn random_unit(r: &mut impl rand::Rng, out: &mut [f32]) {
    loop {
        let v: Vec<f64> = (0..out.len()).map(|_| StandardNormal.sample(r)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for (o, x) in out.iter_mut().zip(v) {
                *o = (x / norm) as f32;
            }
            return;
        }
    }
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, v: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(v.len() * 4);
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, out: &mut [f32]) -> Result<()> {
    let mut buf = vec![0u8; out.len() * 4];
    r.read_exact(&mut buf).map_err(ckpt_err)?;
    for (o, c) in out.iter_mut().zip(buf.chunks_exact(4)) {
        *o = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
    }
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(ckpt_err)?;
    Ok(u32::from_le_bytes(b))
}

fn ckpt_err(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::InvalidModel("checkpoint truncated".into())
    } else {
        Error::io("<checkpoint>", e)
    }
}
