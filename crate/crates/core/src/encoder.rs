//! Small MLP encoder with a projection head, trained from scratch with Adam
//! on the combined contrastive loss.
//!
//! Parameters live in one flat `Vec<f64>`; each layer stores its weight
//! matrix row-major (`out x in`) followed by its bias.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetIndex;
use crate::error::{io_err, Error, Result};
use crate::group::GroupSet;
use crate::loss::{loss_grad, LossBatch, LossConfig, RowMeta};
use crate::sampler::{build_epoch, default_batch_size};
use crate::seed;

/// Layer widths. The input width comes from the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Hidden widths of the encoder body (ReLU).
    pub hidden: Vec<usize>,
    /// Representation width; used for the metric.
    pub rep_dim: usize,
    /// Hidden widths of the projection head (ReLU).
    pub proj_hidden: Vec<usize>,
    /// Projection width; fed to the loss only.
    pub proj_dim: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, spec: &ArchSpec) -> Self {
        Self {
            input_dim,
            hidden: spec.hidden.clone(),
            rep_dim: spec.rep_dim,
            proj_hidden: spec.proj_hidden.clone(),
            proj_dim: spec.proj_dim,
        }
    }

    /// `(fan_in, fan_out, relu)` per layer, encoder body first.
    fn shapes(&self) -> Vec<(usize, usize, bool)> {
        let mut out = Vec::new();
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            out.push((prev, h, true));
            prev = h;
        }
        out.push((prev, self.rep_dim, false));
        prev = self.rep_dim;
        for &h in &self.proj_hidden {
            out.push((prev, h, true));
            prev = h;
        }
        out.push((prev, self.proj_dim, false));
        out
    }

    fn encoder_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn param_count(&self) -> usize {
        self.shapes().iter().map(|(i, o, _)| i * o + o).sum()
    }
}

/// Width settings independent of the input size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub hidden: Vec<usize>,
    pub rep_dim: usize,
    pub proj_hidden: Vec<usize>,
    pub proj_dim: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            rep_dim: 32,
            proj_hidden: vec![32],
            proj_dim: 16,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    offset: usize,
    fan_in: usize,
    fan_out: usize,
    relu: bool,
}

impl Layer {
    fn bias_offset(&self) -> usize {
        self.offset + self.fan_in * self.fan_out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    arch: Architecture,
    data: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(arch: Architecture) -> Self {
        let data = vec![0.0; arch.param_count()];
        Self { arch, data }
    }

    /// Uniform Glorot initialization, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut p = Self::zeros(arch);
        let mut rng = seed::rng(seed);
        for layer in p.layers() {
            let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut p.data[layer.offset..layer.bias_offset()] {
                *w = rng.random_range(-bound..=bound);
            }
        }
        p
    }

    pub fn from_flat(arch: Architecture, data: Vec<f64>) -> Result<Self> {
        if data.len() != arch.param_count() {
            return Err(Error::Shape {
                expected: arch.param_count(),
                got: data.len(),
            });
        }
        Ok(Self { arch, data })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn layers(&self) -> Vec<Layer> {
        let mut offset = 0;
        self.arch
            .shapes()
            .into_iter()
            .map(|(fan_in, fan_out, relu)| {
                let l = Layer {
                    offset,
                    fan_in,
                    fan_out,
                    relu,
                };
                offset += fan_in * fan_out + fan_out;
                l
            })
            .collect()
    }

    /// Mutable weight matrix (row-major `out x in`) and bias of layer `index`.
    pub fn layer_mut(&mut self, index: usize) -> (&mut [f64], &mut [f64]) {
        let l = self.layers()[index];
        let (w, rest) = self.data[l.offset..].split_at_mut(l.fan_in * l.fan_out);
        (w, &mut rest[..l.fan_out])
    }

    /// Post-activation outputs of every layer, input first.
    fn trace(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        if input.len() != self.arch.input_dim {
            return Err(Error::Shape {
                expected: self.arch.input_dim,
                got: input.len(),
            });
        }
        let mut acts = Vec::with_capacity(self.arch.shapes().len() + 1);
        acts.push(input.to_vec());
        for l in self.layers() {
            let x = acts.last().expect("input pushed");
            let w = &self.data[l.offset..l.bias_offset()];
            let b = &self.data[l.bias_offset()..l.bias_offset() + l.fan_out];
            let y: Vec<f64> = (0..l.fan_out)
                .map(|o| {
                    let row = &w[o * l.fan_in..(o + 1) * l.fan_in];
                    let v = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b[o];
                    if l.relu {
                        v.max(0.0)
                    } else {
                        v
                    }
                })
                .collect();
            acts.push(y);
        }
        Ok(acts)
    }

    /// `(representation, projection)` for one input.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut acts = self.trace(input)?;
        let proj = acts.pop().expect("at least one layer");
        let rep = acts.swap_remove(self.arch.encoder_layers());
        Ok((rep, proj))
    }

    /// Accumulate `d loss / d params` for one input given `d loss / d projection`.
    fn backward(&self, acts: &[Vec<f64>], d_proj: &[f64], grad: &mut [f64]) {
        let layers = self.layers();
        let mut delta = d_proj.to_vec();
        for (li, l) in layers.iter().enumerate().rev() {
            let out = &acts[li + 1];
            if l.relu {
                for (d, &y) in delta.iter_mut().zip(out) {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let x = &acts[li];
            let w = &self.data[l.offset..l.bias_offset()];
            let mut prev = vec![0.0; l.fan_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let gw = &mut grad[l.offset + o * l.fan_in..l.offset + (o + 1) * l.fan_in];
                for (g, &xi) in gw.iter_mut().zip(x) {
                    *g += d * xi;
                }
                grad[l.bias_offset() + o] += d;
                let row = &w[o * l.fan_in..(o + 1) * l.fan_in];
                for (p, &wi) in prev.iter_mut().zip(row) {
                    *p += d * wi;
                }
            }
            delta = prev;
        }
    }
}

/// Loss and parameter gradient for one batch of `2N` input views.
pub fn batch_loss_grad(
    params: &EncoderParams,
    views: &Array2<f64>,
    meta: &[RowMeta],
    labeled: GroupSet,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let traces = views
        .rows()
        .into_iter()
        .map(|r| params.trace(r.as_slice().expect("standard layout")))
        .collect::<Result<Vec<_>>>()?;
    let proj_dim = params.arch.proj_dim;
    let mut z = Array2::zeros((views.nrows(), proj_dim));
    for (mut row, t) in z.rows_mut().into_iter().zip(&traces) {
        row.assign(&ndarray::ArrayView1::from(t.last().expect("layers")));
    }
    let batch = LossBatch::new(z, meta.to_vec(), labeled)?;
    let (breakdown, dz) = loss_grad(&batch, cfg)?;
    let mut grad = vec![0.0; params.param_count()];
    for (t, d) in traces.iter().zip(dz.rows()) {
        params.backward(t, d.as_slice().expect("standard layout"), &mut grad);
    }
    Ok((breakdown.total, grad))
}

/// Random view generation for the augmented half of each batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub flip_prob: f64,
    pub noise_sigma: f64,
    /// Intensity is scaled by a factor drawn from `[1 - jitter, 1 + jitter]`.
    pub intensity_jitter: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            flip_prob: 0.0,
            noise_sigma: 0.2,
            intensity_jitter: 0.2,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::InvalidTrainConfig("flip probability outside [0, 1]".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(self.intensity_jitter >= 0.0) {
            return Err(Error::InvalidTrainConfig("augmentation scales must be >= 0".into()));
        }
        Ok(())
    }

    pub fn apply<R: Rng>(&self, pixels: &[f32], h: usize, w: usize, rng: &mut R) -> Vec<f64> {
        let scale = if self.intensity_jitter > 0.0 {
            1.0 + rng.random_range(-self.intensity_jitter..=self.intensity_jitter)
        } else {
            1.0
        };
        let flip = self.flip_prob > 0.0 && rng.random_bool(self.flip_prob);
        let mut out = Vec::with_capacity(pixels.len());
        for r in 0..h {
            for c in 0..w {
                let src = if flip { r * w + (w - 1 - c) } else { r * w + c };
                let noise = if self.noise_sigma > 0.0 {
                    let n: f64 = StandardNormal.sample(rng);
                    self.noise_sigma * n
                } else {
                    0.0
                };
                out.push(pixels[src] as f64 * scale + noise);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Slices per batch; `None` picks 9 for tuple width 3 and 8 otherwise.
    pub batch_size: Option<usize>,
    pub arch: ArchSpec,
    pub augment: AugmentSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            weight_decay: 1e-6,
            epochs: 100,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: None,
            arch: ArchSpec::default(),
            augment: AugmentSpec::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidTrainConfig("learning rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidTrainConfig("epochs must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidTrainConfig("weight decay must be >= 0".into()));
        }
        self.augment.validate()
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            let p = params[i];
            params[i] = p - lr * weight_decay * p - lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    /// Mean batch loss per epoch.
    pub history: Vec<f64>,
}

fn row_meta(ds: &DatasetIndex, row: usize) -> RowMeta {
    let s = ds.slice(row);
    RowMeta {
        patient: s.patient_id,
        volume: s.volume_id,
        slice_index: s.slice_index,
    }
}

/// Train from a fresh seed-derived initialization.
pub fn train(
    ds: &DatasetIndex,
    groups: GroupSet,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    let arch = Architecture::new(ds.pixel_dim(), &cfg.arch);
    let params = EncoderParams::init(arch, seed::derive(cfg.seed, seed::tag::INIT));
    train_from(ds, groups, loss_cfg, cfg, params)
}

/// Train starting from given parameters. Single-threaded so the result is a
/// pure function of the inputs.
pub fn train_from(
    ds: &DatasetIndex,
    groups: GroupSet,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
    mut params: EncoderParams,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    let batch_size = cfg.batch_size.unwrap_or_else(|| default_batch_size(groups));
    let (h, w) = (ds.height(), ds.width());
    let dim = ds.pixel_dim();
    let mut aug_rng: ChaCha8Rng = seed::rng(seed::derive(cfg.seed, seed::tag::AUGMENT));
    let epoch_seed = seed::derive(cfg.seed, seed::tag::EPOCH);
    let mut adam = Adam::new(params.param_count(), cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let plan = build_epoch(ds, groups, batch_size, seed::derive(epoch_seed, epoch as u64))?;
        if plan.batches.is_empty() {
            return Err(Error::InvalidTrainConfig(
                "sampler produced no full batch for this dataset".into(),
            ));
        }
        let mut sum = 0.0;
        for b in 0..plan.batches.len() {
            let rows = plan.batch_rows(b);
            let n = rows.len();
            let mut views = Array2::zeros((2 * n, dim));
            for (i, &r) in rows.iter().enumerate() {
                let px = &ds.slice(r).pixels;
                for (dst, &src) in views.row_mut(i).iter_mut().zip(px) {
                    *dst = src as f64;
                }
                let aug = cfg.augment.apply(px, h, w, &mut aug_rng);
                views.row_mut(n + i).assign(&ndarray::ArrayView1::from(&aug));
            }
            let meta: Vec<RowMeta> = rows.iter().map(|&r| row_meta(ds, r)).collect();
            let (loss, grad) = batch_loss_grad(&params, &views, &meta, GroupSet::ALL, loss_cfg)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            sum += loss;
            adam.step(params.as_mut_slice(), &grad, cfg.lr, cfg.weight_decay);
        }
        let mean = sum / plan.batches.len() as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.push(mean);
    }
    Ok(TrainOutcome { params, history })
}

/// Representations of every slice, row-aligned with the dataset.
pub fn embed_all(params: &EncoderParams, ds: &DatasetIndex) -> Result<Array2<f64>> {
    let reps = ds
        .slices()
        .par_iter()
        .map(|s| {
            let px: Vec<f64> = s.pixels.iter().map(|&p| p as f64).collect();
            params.forward(&px).map(|(rep, _)| rep)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Array2::zeros((ds.len(), params.arch.rep_dim));
    for (mut row, rep) in out.axis_iter_mut(Axis(0)).zip(reps) {
        row.assign(&ndarray::ArrayView1::from(&rep));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    pub train_config: TrainConfig,
    pub loss_config: LossConfig,
    pub groups: GroupSet,
    pub seed: u64,
}

/// `u32 header length | JSON header | f32 little-endian parameters`.
pub fn write_checkpoint(path: &Path, header: &CheckpointHeader, params: &EncoderParams) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(4 + json.len() + 4 * params.param_count());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for &v in params.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(io_err(path))
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, EncoderParams)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: 4,
            found: bytes.len(),
        });
    }
    let hlen = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if bytes.len() < 4 + hlen {
        return Err(Error::Truncated {
            expected: 4 + hlen,
            found: bytes.len(),
        });
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[4..4 + hlen])?;
    let count = header.architecture.param_count();
    let payload = &bytes[4 + hlen..];
    if payload.len() != 4 * count {
        return Err(Error::Truncated {
            expected: 4 + hlen + 4 * count,
            found: bytes.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let params = EncoderParams::from_flat(header.architecture.clone(), data)?;
    Ok((header, params))
}

/// `epoch,mean_loss` with a header row.
pub fn history_csv(history: &[f64]) -> String {
    let mut s = String::from("epoch,mean_loss\n");
    for (e, l) in history.iter().enumerate() {
        s.push_str(&format!("{},{}\n", e + 1, l));
    }
    s
}
