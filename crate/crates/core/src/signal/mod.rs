//! Time-frequency primitives shared by every stage: waveforms, framing,
//! STFT/iSTFT, mel filterbanks, log-mel and MFCC features, frame stacking.

mod features;
mod mel;
pub(crate) mod stft;

pub use features::{
    deltas, dct_matrix, log_mel, mfcc, mfcc_with, stack_frames, FeatureKind, FeatureMatrix,
    MfccConfig, LOG_FLOOR,
};
pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank, MelFilterbankConfig};
pub use stft::{hann_window, istft, stft, stft_with, ComplexSpectrogram, StftConfig};

use crate::error::{config_err, input_err, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Sampled audio, one `Vec` per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl Waveform {
    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::multichannel(vec![samples], sample_rate)
    }

    pub fn multichannel(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return config_err("waveform needs at least one channel");
        }
        if sample_rate == 0 {
            return config_err("sample rate must be positive");
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return input_err("all channels must have identical length");
        }
        if channels.iter().flatten().any(|s| !s.is_finite()) {
            return input_err("waveform contains non-finite samples");
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            channels: vec![vec![0.0; len]],
            sample_rate,
        }
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn is_mono(&self) -> bool {
        self.channels.len() == 1
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, idx: usize) -> &[f64] {
        &self.channels[idx]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    /// The single channel of a mono waveform.
    pub fn samples(&self) -> &[f64] {
        &self.channels[0]
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn require_mono(&self, what: &str) -> Result<&[f64]> {
        if !self.is_mono() {
            return config_err(format!(
                "{what} expects mono audio, got {} channels",
                self.n_channels()
            ));
        }
        Ok(&self.channels[0])
    }

    pub fn energy(&self) -> f64 {
        self.channels.iter().flatten().map(|s| s * s).sum()
    }

    /// Mono waveform holding only channel `idx`.
    pub fn select_channel(&self, idx: usize) -> Result<Waveform> {
        match self.channels.get(idx) {
            Some(c) => Waveform::mono(c.clone(), self.sample_rate),
            None => config_err(format!(
                "channel {idx} out of range for {} channels",
                self.n_channels()
            )),
        }
    }

    /// Truncate or zero-pad every channel to `len` samples.
    pub fn fit_to_len(&self, len: usize) -> Waveform {
        let channels = self
            .channels
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.resize(len, 0.0);
                c
            })
            .collect();
        Waveform {
            channels,
            sample_rate: self.sample_rate,
        }
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|s| s * gain).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Number of whole `hop`-sized frames in `len` samples.
pub fn whole_frames(len: usize, hop: usize) -> usize {
    len / hop
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|s| s * s).sum()
}
