//! Unit-to-waveform decoder: per-unit log-mel prototypes, pseudo-inverse
//! mel inversion and Griffin-Lim phase retrieval.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, input_err, Result};
use crate::rng::seeded;
use crate::signal::{
    istft, log_mel, stft_with, whole_frames, ComplexSpectrogram, FeatureKind, FeatureMatrix,
    MelFilterbank, MelFilterbankConfig, StftConfig, Waveform, LOG_FLOOR,
};
use crate::tokenizer::UnitSequence;

pub const VOCODER_HOP: usize = 320;
pub const DEFAULT_SMOOTH: usize = 1;
pub const DEFAULT_GL_ITERS: usize = 32;

pub fn vocoder_stft() -> StftConfig {
    StftConfig {
        fft_len: 1024,
        win_len: 2 * VOCODER_HOP,
        hop: VOCODER_HOP,
    }
}

/// 80-band log-mel at 50 Hz, one frame per whole 20 ms of audio.
pub fn vocoder_features(wave: &Waveform) -> Result<FeatureMatrix> {
    let samples = wave.require_mono("vocoder_features")?;
    let fb = MelFilterbank::new(MelFilterbankConfig::vocoder(wave.sample_rate()))?;
    let spec = stft_with(samples, vocoder_stft(), wave.sample_rate())?;
    let lm = log_mel(&spec, &fb)?;
    Ok(lm.truncated(whole_frames(samples.len(), VOCODER_HOP)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeTable {
    /// `[K × n_mels]` log-mel.
    pub mel_prototypes: Array2<f64>,
    pub hop: usize,
    /// Units that never occurred and got the global mean frame.
    pub fallback: Vec<bool>,
}

impl PrototypeTable {
    pub fn k(&self) -> usize {
        self.mel_prototypes.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.mel_prototypes.ncols()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_string(path, &serde_json::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&crate::io::read_string(path)?)?)
    }
}

/// Mean log-mel frame per unit over an aligned corpus.
pub fn build_prototypes(k: usize, corpus: &[(UnitSequence, FeatureMatrix)]) -> Result<PrototypeTable> {
    let Some((_, first)) = corpus.first() else {
        return config_err("empty prototype corpus");
    };
    let n_mels = first.dim();
    let mut sums = Array2::<f64>::zeros((k, n_mels));
    let mut counts = vec![0usize; k];
    let mut global = ndarray::Array1::<f64>::zeros(n_mels);
    let mut total = 0usize;
    for (units, mel) in corpus {
        units.validate(k)?;
        if units.len().abs_diff(mel.n_frames()) > 1 || mel.dim() != n_mels {
            return input_err(format!(
                "{} units against {} mel frames of width {}",
                units.len(),
                mel.n_frames(),
                mel.dim()
            ));
        }
        for (u, frame) in units.units.iter().zip(mel.data.rows()) {
            sums.row_mut(*u as usize).scaled_add(1.0, &frame);
            counts[*u as usize] += 1;
            global.scaled_add(1.0, &frame);
            total += 1;
        }
    }
    if total == 0 {
        return config_err("prototype corpus has no frames");
    }
    global /= total as f64;
    let mut fallback = vec![false; k];
    for j in 0..k {
        if counts[j] == 0 {
            fallback[j] = true;
            sums.row_mut(j).assign(&global);
        } else {
            let mean = &sums.row(j) / counts[j] as f64;
            sums.row_mut(j).assign(&mean);
        }
    }
    Ok(PrototypeTable {
        mel_prototypes: sums,
        hop: VOCODER_HOP,
        fallback,
    })
}

/// Prototype lookup followed by a centred moving average over `smooth`
/// frames with edge frames repeated.
pub fn units_to_mel(units: &UnitSequence, table: &PrototypeTable, smooth: usize) -> Result<FeatureMatrix> {
    if smooth == 0 || smooth.is_multiple_of(2) {
        return config_err(format!("smoothing window {smooth} must be odd and positive"));
    }
    units.validate(table.k())?;
    let n = units.len();
    let lookup = Array2::from_shape_fn((n, table.n_mels()), |(t, j)| {
        table.mel_prototypes[[units.units[t] as usize, j]]
    });
    let half = (smooth / 2) as isize;
    let mut out = Array2::zeros(lookup.raw_dim());
    for t in 0..n as isize {
        let mut row = out.row_mut(t as usize);
        for o in -half..=half {
            let src = (t + o).clamp(0, n as isize - 1) as usize;
            row += &lookup.row(src);
        }
        row /= smooth as f64;
    }
    FeatureMatrix::new(out, 50.0, FeatureKind::LogMel)
}

/// `[n_bins × n_mels]` Moore-Penrose pseudo-inverse of the filterbank.
pub fn filterbank_pinv(fb: &MelFilterbank) -> Array2<f64> {
    let w = &fb.weights;
    let m = DMatrix::from_row_iterator(w.nrows(), w.ncols(), w.iter().cloned());
    let p = m
        .pseudo_inverse(1e-10)
        .expect("non-negative epsilon");
    Array2::from_shape_fn((p.nrows(), p.ncols()), |(i, j)| p[(i, j)])
}

/// Log-mel to linear magnitude: undo the log, apply the pseudo-inverse,
/// clamp negative power and take the square root.
pub fn mel_to_linear(mel: &FeatureMatrix, cfg: MelFilterbankConfig) -> Result<Array2<f64>> {
    let fb = MelFilterbank::new(cfg)?;
    if mel.dim() != fb.n_mels() {
        return config_err(format!("{} mel bands for a {}-band filterbank", mel.dim(), fb.n_mels()));
    }
    let power = mel.data.mapv(|v| (v.exp() - LOG_FLOOR).max(0.0));
    let pinv = filterbank_pinv(&fb);
    Ok(power.dot(&pinv.t()).mapv(|p| p.max(0.0).sqrt()))
}

fn spectral_convergence(target: &Array2<f64>, spec: &ComplexSpectrogram) -> f64 {
    let num: f64 = target
        .iter()
        .zip(spec.bins.iter())
        .map(|(m, c)| (c.norm() - m).powi(2))
        .sum();
    let den: f64 = target.iter().map(|m| m * m).sum();
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// Griffin-Lim reconstruction of a `signal_len`-sample waveform whose STFT
/// (config `cfg`) has magnitude `mag`. Returns the waveform and the spectral
/// convergence measured after each iteration.
pub fn griffin_lim_traced(
    mag: &Array2<f64>,
    cfg: StftConfig,
    sample_rate: u32,
    signal_len: usize,
    iters: usize,
    seed: u64,
) -> Result<(Waveform, Vec<f64>)> {
    if iters == 0 {
        return config_err("griffin-lim needs at least one iteration");
    }
    if mag.ncols() != cfg.n_bins() || mag.nrows() != cfg.n_frames(signal_len) {
        return config_err(format!(
            "magnitude {:?} does not fit {} samples with {cfg:?}",
            mag.dim(),
            signal_len
        ));
    }
    let mut rng = seeded(seed);
    let phase = Array2::from_shape_fn(mag.raw_dim(), |_| rng.random_range(-PI..PI));
    let mut spec = ComplexSpectrogram {
        bins: ndarray::Zip::from(mag)
            .and(&phase)
            .map_collect(|m, p| Complex64::from_polar(*m, *p)),
        config: cfg,
        sample_rate,
        signal_len,
    };
    let mut trace = Vec::with_capacity(iters);
    let mut x = istft(&spec)?;
    for _ in 0..iters {
        let est = stft_with(x.samples(), cfg, sample_rate)?;
        trace.push(spectral_convergence(mag, &est));
        spec.bins = ndarray::Zip::from(mag).and(&est.bins).map_collect(|m, c| {
            let n = c.norm();
            if n > 0.0 {
                c * (*m / n)
            } else {
                Complex64::new(*m, 0.0)
            }
        });
        x = istft(&spec)?;
    }
    Ok((x, trace))
}

pub fn griffin_lim(mag: &Array2<f64>, cfg: StftConfig, sample_rate: u32, signal_len: usize, iters: usize, seed: u64) -> Result<Waveform> {
    Ok(griffin_lim_traced(mag, cfg, sample_rate, signal_len, iters, seed)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocoderConfig {
    pub smooth: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        Self {
            smooth: DEFAULT_SMOOTH,
            iters: DEFAULT_GL_ITERS,
            seed: 0,
        }
    }
}

/// Units at 50 Hz to `units.len() · 320` samples.
pub fn vocode(units: &UnitSequence, table: &PrototypeTable, cfg: &VocoderConfig, sample_rate: u32) -> Result<Waveform> {
    if units.is_empty() {
        return Ok(Waveform::zeros(0, sample_rate));
    }
    let mel = units_to_mel(units, table, cfg.smooth)?;
    let mut mag = mel_to_linear(&mel, MelFilterbankConfig::vocoder(sample_rate))?;
    // centred framing has one more frame than whole hops
    let last = mag.row(mag.nrows() - 1).to_owned();
    mag.push(Axis(0), last.view()).expect("row width matches");
    let len = units.len() * table.hop;
    griffin_lim(&mag, vocoder_stft(), sample_rate, len, cfg.iters, cfg.seed)
}
