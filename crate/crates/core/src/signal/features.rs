use std::f64::consts::PI;

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::mel::{MelFilterbank, MelFilterbankConfig};
use super::stft::{stft_with, ComplexSpectrogram, StftConfig};
use crate::error::{config_err, input_err, Result};

pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    LogMel,
    Mfcc,
    FbankStacked,
    Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    /// `[frames × dim]`
    pub data: Array2<f64>,
    pub frame_rate: f64,
    pub kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>, frame_rate: f64, kind: FeatureKind) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return input_err("feature matrix contains non-finite entries");
        }
        Ok(Self {
            data,
            frame_rate,
            kind,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Keep at most `n` leading frames.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.n_frames());
        Self {
            data: self.data.slice(s![..n, ..]).to_owned(),
            frame_rate: self.frame_rate,
            kind: self.kind,
        }
    }
}

/// Row-wise `log(filterbank · |bins|² + ε)`.
pub fn log_mel(spec: &ComplexSpectrogram, fb: &MelFilterbank) -> Result<FeatureMatrix> {
    if fb.config.fft_len != spec.config.fft_len {
        return config_err(format!(
            "filterbank fft_len {} does not match spectrogram fft_len {}",
            fb.config.fft_len, spec.config.fft_len
        ));
    }
    let mel = spec.power().dot(&fb.weights.t());
    FeatureMatrix::new(
        mel.mapv(|p| (p + LOG_FLOOR).ln()),
        spec.sample_rate as f64 / spec.config.hop as f64,
        FeatureKind::LogMel,
    )
}

/// Orthonormal DCT-II, `[n_out × n_in]`.
pub fn dct_matrix(n_out: usize, n_in: usize) -> Array2<f64> {
    let mut m = Array2::zeros((n_out, n_in));
    for k in 0..n_out {
        let scale = if k == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        for n in 0..n_in {
            m[[k, n]] = scale * (PI * k as f64 * (n as f64 + 0.5) / n_in as f64).cos();
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfccConfig {
    pub n_mels: usize,
    pub n_coeffs: usize,
    pub stft: StftConfig,
    pub f_min: f64,
    pub f_max: f64,
}

impl MfccConfig {
    /// 25 ms window, 10 ms shift at 16 kHz.
    pub fn default_10ms() -> Self {
        Self::with_hop(160)
    }

    /// 25 ms window, 20 ms shift: frames line up with 50 Hz units.
    pub fn default_20ms() -> Self {
        Self::with_hop(320)
    }

    fn with_hop(hop: usize) -> Self {
        Self {
            n_mels: 23,
            n_coeffs: 13,
            stft: StftConfig {
                fft_len: 512,
                win_len: 400,
                hop,
            },
            f_min: 0.0,
            f_max: 8000.0,
        }
    }

    pub fn filterbank(&self, sample_rate: u32) -> MelFilterbankConfig {
        MelFilterbankConfig {
            n_mels: self.n_mels,
            f_min: self.f_min,
            f_max: self.f_max.min(sample_rate as f64 / 2.0),
            fft_len: self.stft.fft_len,
            sample_rate,
        }
    }
}

/// MFCCs with the 10 ms default front-end.
pub fn mfcc(wave: &super::Waveform, n_coeffs: usize) -> Result<FeatureMatrix> {
    let cfg = MfccConfig {
        n_coeffs,
        ..MfccConfig::default_10ms()
    };
    mfcc_with(wave.require_mono("mfcc")?, &cfg, wave.sample_rate())
}

pub fn mfcc_with(samples: &[f64], cfg: &MfccConfig, sample_rate: u32) -> Result<FeatureMatrix> {
    if cfg.n_coeffs > cfg.n_mels {
        return config_err(format!(
            "{} cepstral coefficients requested from {} mel bands",
            cfg.n_coeffs, cfg.n_mels
        ));
    }
    let fb = MelFilterbank::new(cfg.filterbank(sample_rate))?;
    let spec = stft_with(samples, cfg.stft, sample_rate)?;
    let lm = log_mel(&spec, &fb)?;
    let dct = dct_matrix(cfg.n_coeffs, cfg.n_mels);
    FeatureMatrix::new(lm.data.dot(&dct.t()), lm.frame_rate, FeatureKind::Mfcc)
}

/// Append first and second order regression deltas over ±`width` frames.
pub fn deltas(feat: &FeatureMatrix, width: usize) -> FeatureMatrix {
    fn delta(x: &Array2<f64>, width: usize) -> Array2<f64> {
        let n = x.nrows();
        let denom: f64 = 2.0 * (1..=width).map(|k| (k * k) as f64).sum::<f64>();
        let mut out = Array2::zeros(x.raw_dim());
        if n == 0 {
            return out;
        }
        for t in 0..n {
            for k in 1..=width {
                let fwd = (t + k).min(n - 1);
                let back = t.saturating_sub(k);
                let diff = &x.row(fwd) - &x.row(back);
                out.row_mut(t).scaled_add(k as f64 / denom, &diff);
            }
        }
        out
    }
    let d1 = delta(&feat.data, width);
    let d2 = delta(&d1, width);
    let data = ndarray::concatenate(Axis(1), &[feat.data.view(), d1.view(), d2.view()])
        .expect("equal row counts");
    FeatureMatrix {
        data,
        frame_rate: feat.frame_rate,
        kind: feat.kind,
    }
}

/// Concatenate every `factor` consecutive frames; the tail is padded by
/// repeating the last frame.
pub fn stack_frames(feat: &FeatureMatrix, factor: usize) -> FeatureMatrix {
    let factor = factor.max(1);
    let (n, d) = feat.data.dim();
    let n_out = n.div_ceil(factor);
    let mut data = Array2::zeros((n_out, d * factor));
    for t in 0..n_out {
        for j in 0..factor {
            let src = (t * factor + j).min(n - 1);
            data.slice_mut(s![t, j * d..(j + 1) * d])
                .assign(&feat.data.row(src));
        }
    }
    FeatureMatrix {
        data,
        frame_rate: feat.frame_rate / factor as f64,
        kind: if factor == 1 {
            feat.kind
        } else {
            FeatureKind::FbankStacked
        },
    }
}
