use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::{adam_step, lr_at, AdamState, ADAM_BETAS, ADAM_EPS};
use super::{argmax_rows, loss_and_grad, spec_augment, BatchItem, ModelDims, ModelParams};
use crate::error::{config_err, input_err, GseError, Result};
use crate::rng::{derive_seed, seeded, tag_of};
use crate::signal::{FeatureKind, FeatureMatrix};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_updates: usize,
    /// Updates during which only the upsampler and head move.
    pub frozen_steps: usize,
    pub peak_lr: f64,
    /// Warm-up, hold and decay fractions of `total_updates`.
    pub schedule: [f64; 3],
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub mask_prob: f64,
    pub mask_span: usize,
    /// Chance that a training item sees an all-zero visual stream.
    pub modality_dropout: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: usize,
    pub depth: usize,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_updates: 1500,
            frozen_steps: 20,
            peak_lr: 2e-3,
            schedule: [0.33, 0.0, 0.67],
            adam_betas: ADAM_BETAS,
            adam_eps: ADAM_EPS,
            mask_prob: 0.35,
            mask_span: 1,
            modality_dropout: 0.3,
            batch_size: 8,
            seed: 0,
            hidden: 128,
            depth: 2,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let s = self.schedule;
        if s.iter().any(|v| !(0.0..=1.0).contains(v)) || ((s[0] + s[1] + s[2]) - 1.0).abs() > 1e-9 {
            return config_err(format!("schedule {s:?} must be three fractions summing to 1"));
        }
        if self.total_updates == 0 || self.frozen_steps >= self.total_updates {
            return config_err(format!(
                "frozen steps {} must be below total updates {}",
                self.frozen_steps, self.total_updates
            ));
        }
        if self.batch_size == 0 || self.mask_span == 0 || self.eval_every == 0 {
            return config_err("batch size, mask span and eval interval must be positive");
        }
        if !(0.0..1.0).contains(&self.modality_dropout) {
            return config_err(format!("modality dropout {} outside [0, 1)", self.modality_dropout));
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return config_err(format!("mask prob {} outside [0, 1)", self.mask_prob));
        }
        if !(self.peak_lr > 0.0) {
            return config_err("peak learning rate must be positive");
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        lr_at(step, self.total_updates, self.peak_lr, self.schedule)
    }
}

/// Per-dimension standardization fitted on the training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    pub fn fit<'a>(inputs: impl Iterator<Item = &'a Array2<f64>>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for x in inputs {
            if sum.is_empty() {
                sum = vec![0.0; x.ncols()];
                sq = vec![0.0; x.ncols()];
            }
            if x.ncols() != sum.len() {
                return input_err("feature widths differ across utterances");
            }
            for row in x.rows() {
                for (j, v) in row.iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
            }
            n += x.nrows();
        }
        if n == 0 {
            return config_err("no frames to fit feature normalization");
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(1e-3))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

/// Raw (unnormalized) 25 Hz audio features, 25 Hz visual stream and 50 Hz
/// target units for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub audio: Array2<f64>,
    pub visual: Array2<f64>,
    pub target: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub step: usize,
    pub config: TrainConfig,
    pub norm: FeatureNorm,
    pub params: ModelParams,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn dims(&self) -> ModelDims {
        self.params.dims
    }

    pub fn log_probs(&self, audio: &Array2<f64>, visual: &Array2<f64>) -> Result<Array2<f64>> {
        self.params.forward(&self.norm.apply(audio), visual)
    }

    /// Most likely unit per 50 Hz frame.
    pub fn predict(&self, audio: &Array2<f64>, visual: &Array2<f64>) -> Result<Vec<u32>> {
        Ok(argmax_rows(&self.log_probs(audio, visual)?))
    }

    /// Hidden activations at 50 Hz, for re-clustering.
    pub fn activations(&self, audio: &Array2<f64>, visual: &Array2<f64>) -> Result<FeatureMatrix> {
        let cache = self.params.forward_cached(&self.norm.apply(audio), visual)?;
        FeatureMatrix::new(cache.activations().clone(), 50.0, FeatureKind::Activation)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        if c.version != CHECKPOINT_VERSION {
            return input_err(format!("checkpoint version {} is not supported", c.version));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_string(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&crate::io::read_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub heldout_unit_acc: Option<f64>,
}

pub fn log_to_csv(rows: &[LogRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| GseError::Input(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| GseError::Input(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub struct TrainOutcome {
    /// Highest held-out accuracy seen (the final state without held-out data).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<LogRow>,
}

/// Share of output frames whose most likely unit is the target.
pub fn frame_accuracy(params: &ModelParams, items: &[BatchItem]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for item in items {
        let pred = argmax_rows(&params.forward(item.audio, item.visual)?);
        correct += pred.iter().zip(item.target).filter(|(p, t)| p == t).count();
        total += item.target.len();
    }
    if total == 0 {
        return input_err("no frames to score");
    }
    Ok(correct as f64 / total as f64)
}

fn frozen_phase_group(name: &str) -> bool {
    name.starts_with("upsampler") || name.starts_with("head")
}

struct Prepared {
    audio: Array2<f64>,
    visual: Array2<f64>,
    target: Vec<u32>,
}

fn prepare(examples: &[Example], norm: &FeatureNorm) -> Vec<Prepared> {
    examples
        .iter()
        .map(|e| Prepared {
            audio: norm.apply(&e.audio),
            visual: e.visual.clone(),
            target: e.target.clone(),
        })
        .collect()
}

fn items(p: &[Prepared]) -> Vec<BatchItem<'_>> {
    p.iter()
        .map(|e| BatchItem {
            audio: &e.audio,
            visual: &e.visual,
            target: &e.target,
        })
        .collect()
}

/// Stepwise trainer: mini-batches from a seeded reshuffle per epoch, span
/// masking on the audio stream, the tri-stage schedule and Adam.
pub struct Trainer {
    cfg: TrainConfig,
    norm: FeatureNorm,
    train: Vec<Prepared>,
    heldout: Vec<Prepared>,
    pub params: ModelParams,
    pub adam: AdamState,
    order_rng: crate::rng::SeededRng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, vocab: usize, train_set: &[Example], heldout: &[Example]) -> Result<Self> {
        cfg.validate()?;
        let Some(first) = train_set.first() else {
            return config_err("empty training set");
        };
        let mut dims = ModelDims::new(cfg.hidden, cfg.depth, vocab);
        dims.audio_dim = first.audio.ncols();
        dims.visual_dim = first.visual.ncols();
        let norm = FeatureNorm::fit(train_set.iter().map(|e| &e.audio))?;
        let params = ModelParams::init(dims, derive_seed(cfg.seed, tag_of("init")))?;
        let adam = AdamState::new(&params, cfg.adam_betas, cfg.adam_eps);
        Ok(Self {
            cfg: cfg.clone(),
            train: prepare(train_set, &norm),
            heldout: prepare(heldout, &norm),
            norm,
            params,
            adam,
            order_rng: seeded(derive_seed(cfg.seed, tag_of("batches"))),
            order: (0..train_set.len()).collect(),
            cursor: train_set.len(),
            step: 0,
        })
    }

    pub fn updates_done(&self) -> usize {
        self.step
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let n = self.cfg.batch_size.min(self.train.len());
        let mut idx = Vec::with_capacity(n);
        while idx.len() < n {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.order_rng);
                self.cursor = 0;
            }
            idx.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        idx
    }

    /// One update. Held-out accuracy is measured every `eval_every` updates
    /// and after the last one.
    pub fn step(&mut self) -> Result<LogRow> {
        let step = self.step + 1;
        let batch_idx = self.next_batch();
        let cfg = &self.cfg;
        let masked: Vec<Array2<f64>> = batch_idx
            .iter()
            .map(|&i| {
                let fm = FeatureMatrix {
                    data: self.train[i].audio.clone(),
                    frame_rate: 25.0,
                    kind: FeatureKind::FbankStacked,
                };
                let seed = derive_seed(cfg.seed, ((step as u64) << 20) ^ i as u64);
                spec_augment(&fm, cfg.mask_prob, cfg.mask_span, seed).map(|f| f.data)
            })
            .collect::<Result<_>>()?;
        let mut drop_rng = seeded(derive_seed(cfg.seed, tag_of("modality") ^ step as u64));
        let blank: Vec<Array2<f64>> = batch_idx
            .iter()
            .map(|&i| Array2::zeros(self.train[i].visual.raw_dim()))
            .collect();
        let batch: Vec<BatchItem> = batch_idx
            .iter()
            .zip(&masked)
            .zip(&blank)
            .map(|((&i, a), z)| BatchItem {
                audio: a,
                visual: if drop_rng.random::<f64>() < cfg.modality_dropout {
                    z
                } else {
                    &self.train[i].visual
                },
                target: &self.train[i].target,
            })
            .collect();
        let (loss, grad) = loss_and_grad(&self.params, &batch)?;
        if !loss.is_finite() {
            return Err(GseError::Training(format!("loss became {loss} at update {step}")));
        }
        let lr = cfg.lr_at(step);
        let trainable: &dyn Fn(&str) -> bool = if step <= cfg.frozen_steps {
            &frozen_phase_group
        } else {
            &|_| true
        };
        adam_step(&mut self.params, &grad, &mut self.adam, lr, trainable)?;
        self.step = step;

        let evaluate = !self.heldout.is_empty()
            && (step.is_multiple_of(cfg.eval_every) || step == cfg.total_updates);
        let heldout_unit_acc = if evaluate {
            Some(frame_accuracy(&self.params, &items(&self.heldout))?)
        } else {
            None
        };
        Ok(LogRow {
            step,
            loss,
            lr,
            heldout_unit_acc,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            step: self.step,
            config: self.cfg.clone(),
            norm: self.norm.clone(),
            params: self.params.clone(),
            adam: Some(self.adam.clone()),
        }
    }

    pub fn train_accuracy(&self) -> Result<f64> {
        frame_accuracy(&self.params, &items(&self.train))
    }
}

/// Run all updates, keeping the checkpoint with the best held-out accuracy.
pub fn train(cfg: &TrainConfig, vocab: usize, train_set: &[Example], heldout: &[Example]) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg, vocab, train_set, heldout)?;
    let mut log = Vec::with_capacity(cfg.total_updates);
    let mut best: Option<(f64, Checkpoint)> = None;
    for _ in 0..cfg.total_updates {
        let row = trainer.step()?;
        if let Some(a) = row.heldout_unit_acc {
            if best.as_ref().is_none_or(|(b, _)| a > *b) {
                best = Some((a, trainer.checkpoint()));
            }
        }
        log.push(row);
    }
    let last = trainer.checkpoint();
    let best = best.map(|(_, c)| c).unwrap_or_else(|| last.clone());
    Ok(TrainOutcome { best, last, log })
}
