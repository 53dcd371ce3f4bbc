//! Unit predictor: 25 Hz audio features plus a 25 Hz visual surrogate in,
//! 50 Hz unit log-probabilities out. Gradients are derived by hand.

mod optim;
mod train;
mod visual;

pub use optim::{adam_step, adam_update, lr_at, AdamState, ADAM_BETAS, ADAM_EPS, FINAL_LR_FRACTION};
pub use train::{
    frame_accuracy, log_to_csv, train, Checkpoint, Trainer, Example, FeatureNorm, LogRow, TrainConfig, TrainOutcome,
    CHECKPOINT_VERSION,
};
pub use visual::{audio_features, spec_augment, visual_surrogate, VisualEmbedding, VisualSurrogate};

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, input_err, Result};
use crate::rng::seeded;

pub const AUDIO_DIM: usize = 92;
pub const VISUAL_DIM: usize = 16;
pub const CONV_KERNEL: usize = 5;
pub const UPSAMPLE_KERNEL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub hidden: usize,
    pub depth: usize,
    pub vocab: usize,
}

impl ModelDims {
    pub fn new(hidden: usize, depth: usize, vocab: usize) -> Self {
        Self {
            audio_dim: AUDIO_DIM,
            visual_dim: VISUAL_DIM,
            hidden,
            depth,
            vocab,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.audio_dim == 0 || self.visual_dim == 0 || self.hidden == 0 || self.vocab < 2 {
            return config_err(format!("invalid model dimensions {self:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    /// `[in × out]`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Affine {
    fn random<R: Rng>(n_in: usize, n_out: usize, scale: f64, rng: &mut R) -> Self {
        let std = scale / (n_in as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((n_in, n_out), |_| {
                std * normal(rng)
            }),
            b: Array1::zeros(n_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulate parameter gradients; returns the input gradient.
    fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Affine) -> Array2<f64> {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }
}

/// Affine map, depthwise temporal convolution, GeLU; residual when the
/// input width equals the hidden width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub affine: Affine,
    /// `[kernel × hidden]`, tap `k` reads frame `t + k - kernel/2`.
    pub conv: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub audio_proj: Affine,
    pub visual_proj: Affine,
    pub blocks: Vec<Block>,
    /// `[kernel × hidden × hidden]`, stride 2.
    pub upsampler: Array3<f64>,
    pub up_bias: Array1<f64>,
    pub head: Affine,
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}

fn depthwise_conv(u: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (t_len, _) = u.dim();
    let half = kernel.nrows() / 2;
    let mut out = Array2::zeros(u.raw_dim());
    for t in 0..t_len {
        let mut row = out.row_mut(t);
        for (k, taps) in kernel.rows().into_iter().enumerate() {
            let src = t + k;
            if src < half || src - half >= t_len {
                continue;
            }
            row.zip_mut_with(&(&taps * &u.row(src - half)), |o, v| *o += v);
        }
    }
    out
}

fn depthwise_conv_backward(
    u: &Array2<f64>,
    kernel: &Array2<f64>,
    dv: &Array2<f64>,
    dkernel: &mut Array2<f64>,
) -> Array2<f64> {
    let (t_len, _) = u.dim();
    let half = kernel.nrows() / 2;
    let mut du = Array2::zeros(u.raw_dim());
    for t in 0..t_len {
        for k in 0..kernel.nrows() {
            let src = t + k;
            if src < half || src - half >= t_len {
                continue;
            }
            let src = src - half;
            let g = dv.row(t);
            dkernel.row_mut(k).zip_mut_with(&(&g * &u.row(src)), |a, b| *a += b);
            du.row_mut(src).zip_mut_with(&(&g * &kernel.row(k)), |a, b| *a += b);
        }
    }
    du
}

pub fn log_softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

struct BlockCache {
    input: Array2<f64>,
    u: Array2<f64>,
    v: Array2<f64>,
}

/// Intermediate values kept for the backward pass.
pub struct ForwardCache {
    audio: Array2<f64>,
    visual: Array2<f64>,
    blocks: Vec<BlockCache>,
    trunk_out: Array2<f64>,
    z: Array2<f64>,
    g: Array2<f64>,
    pub log_probs: Array2<f64>,
}

impl ForwardCache {
    /// Post-GeLU upsampler activations `[2T × hidden]` at 50 Hz.
    pub fn activations(&self) -> &Array2<f64> {
        &self.g
    }
}

impl ModelParams {
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = seeded(seed);
        let h = dims.hidden;
        let audio_proj = Affine::random(dims.audio_dim, h, 1.0, &mut rng);
        let visual_proj = Affine::random(dims.visual_dim, h, 1.0, &mut rng);
        let blocks = (0..dims.depth)
            .map(|l| {
                let n_in = if l == 0 { 2 * h } else { h };
                let affine = Affine::random(n_in, h, 1.0, &mut rng);
                let conv = Array2::from_shape_fn((CONV_KERNEL, h), |(k, _)| {
                    let centre = if k == CONV_KERNEL / 2 { 1.0 } else { 0.0 };
                    centre + 0.1 * normal(&mut rng)
                });
                Block { affine, conv }
            })
            .collect();
        let up_std = 1.0 / (2.0 * h as f64).sqrt();
        let upsampler = Array3::from_shape_fn((UPSAMPLE_KERNEL, h, h), |_| {
            up_std * normal(&mut rng)
        });
        let head = Affine::random(h, dims.vocab, 0.5, &mut rng);
        Ok(Self {
            dims,
            audio_proj,
            visual_proj,
            blocks,
            upsampler,
            up_bias: Array1::zeros(h),
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dims: self.dims,
            audio_proj: self.audio_proj.zeros_like(),
            visual_proj: self.visual_proj.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    affine: b.affine.zeros_like(),
                    conv: Array2::zeros(b.conv.raw_dim()),
                })
                .collect(),
            upsampler: Array3::zeros(self.upsampler.raw_dim()),
            up_bias: Array1::zeros(self.up_bias.raw_dim()),
            head: self.head.zeros_like(),
        }
    }

    /// Named parameter tensors in a fixed order.
    pub fn groups(&self) -> Vec<(String, &[f64])> {
        let mut out = vec![
            ("audio_proj.w".to_string(), self.audio_proj.w.as_slice().unwrap()),
            ("audio_proj.b".to_string(), self.audio_proj.b.as_slice().unwrap()),
            ("visual_proj.w".to_string(), self.visual_proj.w.as_slice().unwrap()),
            ("visual_proj.b".to_string(), self.visual_proj.b.as_slice().unwrap()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("blocks.{i}.affine.w"), b.affine.w.as_slice().unwrap()));
            out.push((format!("blocks.{i}.affine.b"), b.affine.b.as_slice().unwrap()));
            out.push((format!("blocks.{i}.conv"), b.conv.as_slice().unwrap()));
        }
        out.push(("upsampler.w".to_string(), self.upsampler.as_slice().unwrap()));
        out.push(("upsampler.b".to_string(), self.up_bias.as_slice().unwrap()));
        out.push(("head.w".to_string(), self.head.w.as_slice().unwrap()));
        out.push(("head.b".to_string(), self.head.b.as_slice().unwrap()));
        out
    }

    pub fn groups_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![
            ("audio_proj.w".to_string(), self.audio_proj.w.as_slice_mut().unwrap()),
            ("audio_proj.b".to_string(), self.audio_proj.b.as_slice_mut().unwrap()),
            ("visual_proj.w".to_string(), self.visual_proj.w.as_slice_mut().unwrap()),
            ("visual_proj.b".to_string(), self.visual_proj.b.as_slice_mut().unwrap()),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("blocks.{i}.affine.w"), b.affine.w.as_slice_mut().unwrap()));
            out.push((format!("blocks.{i}.affine.b"), b.affine.b.as_slice_mut().unwrap()));
            out.push((format!("blocks.{i}.conv"), b.conv.as_slice_mut().unwrap()));
        }
        out.push(("upsampler.w".to_string(), self.upsampler.as_slice_mut().unwrap()));
        out.push(("upsampler.b".to_string(), self.up_bias.as_slice_mut().unwrap()));
        out.push(("head.w".to_string(), self.head.w.as_slice_mut().unwrap()));
        out.push(("head.b".to_string(), self.head.b.as_slice_mut().unwrap()));
        out
    }

    pub fn n_params(&self) -> usize {
        self.groups().iter().map(|(_, g)| g.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|(_, g)| g.iter().all(|v| v.is_finite()))
    }

    pub fn forward_cached(&self, audio: &Array2<f64>, visual: &Array2<f64>) -> Result<ForwardCache> {
        let d = self.dims;
        if audio.nrows() != visual.nrows() {
            return input_err(format!(
                "audio has {} frames, visual has {}",
                audio.nrows(),
                visual.nrows()
            ));
        }
        if audio.ncols() != d.audio_dim || visual.ncols() != d.visual_dim {
            return input_err(format!(
                "feature widths {}/{} do not match model {}/{}",
                audio.ncols(),
                visual.ncols(),
                d.audio_dim,
                d.visual_dim
            ));
        }
        let t_len = audio.nrows();
        if t_len == 0 {
            return input_err("empty input");
        }
        let h = d.hidden;
        let mut x = Array2::zeros((t_len, 2 * h));
        x.slice_mut(s![.., ..h]).assign(&self.audio_proj.forward(audio));
        x.slice_mut(s![.., h..]).assign(&self.visual_proj.forward(visual));

        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let u = b.affine.forward(&x);
            let v = depthwise_conv(&u, &b.conv);
            let mut out = v.mapv(gelu);
            if x.ncols() == h {
                out += &x;
            }
            blocks.push(BlockCache { input: x, u, v });
            x = out;
        }
        let trunk_out = if x.ncols() == h {
            x
        } else {
            // depth 0: fold the two streams together
            &x.slice(s![.., ..h]) + &x.slice(s![.., h..])
        };

        let mut raw = Array2::zeros((2 * t_len + 2, h));
        for k in 0..UPSAMPLE_KERNEL {
            let p = trunk_out.dot(&self.upsampler.index_axis(Axis(0), k));
            let mut dst = raw.slice_mut(s![k..k + 2 * t_len - 1;2, ..]);
            dst += &p;
        }
        let z = &raw.slice(s![1..2 * t_len + 1, ..]) + &self.up_bias;
        let g = z.mapv(gelu);
        let log_probs = log_softmax_rows(&self.head.forward(&g));
        Ok(ForwardCache {
            audio: audio.clone(),
            visual: visual.clone(),
            blocks,
            trunk_out,
            z,
            g,
            log_probs,
        })
    }

    /// Log-probabilities `[2T × vocab]`.
    pub fn forward(&self, audio: &Array2<f64>, visual: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(audio, visual)?.log_probs)
    }

    /// Accumulate gradients of `sum_t weight·(−log p[target_t])` into `grad`.
    pub fn backward(&self, cache: &ForwardCache, target: &[u32], weight: f64, grad: &mut ModelParams) {
        let h = self.dims.hidden;
        let t_len = cache.audio.nrows();
        let mut dlogits = cache.log_probs.mapv(f64::exp);
        for (t, &c) in target.iter().enumerate() {
            dlogits[[t, c as usize]] -= 1.0;
        }
        dlogits *= weight;
        let dg = self.head.backward(&cache.g, &dlogits, &mut grad.head);
        let dz = &dg * &cache.z.mapv(gelu_grad);
        grad.up_bias += &dz.sum_axis(Axis(0));
        let mut draw = Array2::zeros((2 * t_len + 2, h));
        draw.slice_mut(s![1..2 * t_len + 1, ..]).assign(&dz);
        let mut dx = Array2::zeros((t_len, h));
        for k in 0..UPSAMPLE_KERNEL {
            let dk = draw.slice(s![k..k + 2 * t_len - 1;2, ..]);
            let uk = self.upsampler.index_axis(Axis(0), k);
            let mut gk = grad.upsampler.index_axis_mut(Axis(0), k);
            gk += &cache.trunk_out.t().dot(&dk);
            dx += &dk.dot(&uk.t());
        }

        if self.blocks.is_empty() {
            dx = ndarray::concatenate(Axis(1), &[dx.view(), dx.view()]).unwrap();
        }
        for (l, (b, c)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let dv = &dx * &c.v.mapv(gelu_grad);
            let gb = &mut grad.blocks[l];
            let du = depthwise_conv_backward(&c.u, &b.conv, &dv, &mut gb.conv);
            let din = b.affine.backward(&c.input, &du, &mut gb.affine);
            dx = if c.input.ncols() == h { din + &dx } else { din };
        }
        let da = dx.slice(s![.., ..h]).to_owned();
        let dvis = dx.slice(s![.., h..]).to_owned();
        self.audio_proj.backward(&cache.audio, &da, &mut grad.audio_proj);
        self.visual_proj.backward(&cache.visual, &dvis, &mut grad.visual_proj);
    }
}

/// One training pair at 25 Hz in, 50 Hz out.
pub struct BatchItem<'a> {
    pub audio: &'a Array2<f64>,
    pub visual: &'a Array2<f64>,
    pub target: &'a [u32],
}

fn check_target(params: &ModelParams, item: &BatchItem) -> Result<()> {
    if item.target.len() != 2 * item.audio.nrows() {
        return input_err(format!(
            "target has {} frames, expected {}",
            item.target.len(),
            2 * item.audio.nrows()
        ));
    }
    if let Some(u) = item.target.iter().find(|u| **u as usize >= params.dims.vocab) {
        return input_err(format!("target unit {u} outside vocabulary {}", params.dims.vocab));
    }
    Ok(())
}

/// Mean negative log-likelihood over all output frames of the batch and its
/// gradient. Items are processed in order so the sum is reproducible.
pub fn loss_and_grad(params: &ModelParams, batch: &[BatchItem]) -> Result<(f64, ModelParams)> {
    let mut grad = params.zeros_like();
    let n_frames: usize = batch.iter().map(|b| b.target.len()).sum();
    if n_frames == 0 {
        return input_err("empty batch");
    }
    let weight = 1.0 / n_frames as f64;
    let mut loss = 0.0;
    for item in batch {
        check_target(params, item)?;
        let cache = params.forward_cached(item.audio, item.visual)?;
        for (t, &c) in item.target.iter().enumerate() {
            loss -= cache.log_probs[[t, c as usize]];
        }
        params.backward(&cache, item.target, weight, &mut grad);
    }
    Ok((loss * weight, grad))
}

pub fn loss_only(params: &ModelParams, batch: &[BatchItem]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for item in batch {
        check_target(params, item)?;
        let lp = params.forward(item.audio, item.visual)?;
        for (t, &c) in item.target.iter().enumerate() {
            total -= lp[[t, c as usize]];
        }
        n += item.target.len();
    }
    Ok(total / n as f64)
}

pub fn argmax_rows(log_probs: &Array2<f64>) -> Vec<u32> {
    log_probs
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (j, v) in r.iter().enumerate() {
                if *v > r[best] {
                    best = j;
                }
            }
            best as u32
        })
        .collect()
}
