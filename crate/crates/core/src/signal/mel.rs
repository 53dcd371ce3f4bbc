use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelFilterbankConfig {
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub fft_len: usize,
    pub sample_rate: u32,
}

impl MelFilterbankConfig {
    /// 23-band front-end filterbank over a 512-point FFT.
    pub fn fbank(sample_rate: u32) -> Self {
        Self {
            n_mels: 23,
            f_min: 0.0,
            f_max: sample_rate as f64 / 2.0,
            fft_len: 512,
            sample_rate,
        }
    }

    /// 80-band filterbank used by the unit vocoder.
    pub fn vocoder(sample_rate: u32) -> Self {
        Self {
            n_mels: 80,
            f_min: 0.0,
            f_max: sample_rate as f64 / 2.0,
            fft_len: 1024,
            sample_rate,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.fft_len / 2 + 1
    }
}

/// Triangular filters, peak-normalized to 1, equally spaced on the mel scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub config: MelFilterbankConfig,
    /// `[n_mels × n_bins]`
    pub weights: Array2<f64>,
}

impl MelFilterbank {
    pub fn new(config: MelFilterbankConfig) -> Result<Self> {
        let nyquist = config.sample_rate as f64 / 2.0;
        if !(config.f_min >= 0.0 && config.f_min < config.f_max && config.f_max <= nyquist) {
            return config_err(format!(
                "mel range [{}, {}] must satisfy 0 <= f_min < f_max <= {nyquist}",
                config.f_min, config.f_max
            ));
        }
        if config.n_mels == 0 {
            return config_err("n_mels must be positive");
        }
        if !config.fft_len.is_power_of_two() {
            return config_err(format!("fft_len {} is not a power of two", config.fft_len));
        }
        let n_bins = config.n_bins();
        let (m_lo, m_hi) = (hz_to_mel(config.f_min), hz_to_mel(config.f_max));
        let edges: Vec<f64> = (0..config.n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (config.n_mels + 1) as f64))
            .collect();
        let bin_hz = config.sample_rate as f64 / config.fft_len as f64;
        let mut weights = Array2::zeros((config.n_mels, n_bins));
        for m in 0..config.n_mels {
            let (lo, peak, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= peak {
                    (f - lo) / (peak - lo)
                } else if f > peak && f < hi {
                    (hi - f) / (hi - peak)
                } else {
                    0.0
                };
                weights[[m, k]] = w;
            }
            if weights.row(m).sum() <= 0.0 {
                return config_err(format!(
                    "mel filter {m} covers no FFT bin; use fewer mels or a longer FFT"
                ));
            }
        }
        Ok(Self { config, weights })
    }

    pub fn n_mels(&self) -> usize {
        self.config.n_mels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trips() {
        for f in [0.0, 100.0, 700.0, 4000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
    }

    #[test]
    fn rows_are_single_peaked_and_cover_the_range() {
        for cfg in [MelFilterbankConfig::fbank(16000), MelFilterbankConfig::vocoder(16000)] {
            let fb = MelFilterbank::new(cfg).unwrap();
            let bin_hz = 16000.0 / cfg.fft_len as f64;
            let mut covered = vec![false; cfg.n_bins()];
            for row in fb.weights.rows() {
                assert!(row.sum() > 0.0);
                assert!(row.iter().all(|w| *w >= 0.0 && *w <= 1.0));
                // rises then falls: at most one sign change in the differences
                let support: Vec<f64> = row.iter().copied().filter(|w| *w > 0.0).collect();
                let peak = support
                    .iter()
                    .enumerate()
                    .fold((0, 0.0), |acc, (i, w)| if *w > acc.1 { (i, *w) } else { acc })
                    .0;
                assert!(support[..=peak].windows(2).all(|p| p[0] <= p[1]));
                assert!(support[peak..].windows(2).all(|p| p[0] >= p[1]));
                for (k, w) in row.iter().enumerate() {
                    if *w > 0.0 {
                        covered[k] = true;
                    }
                }
            }
            // every interior bin of (f_min, f_max) lies under some filter
            for (k, c) in covered.iter().enumerate() {
                let f = k as f64 * bin_hz;
                if f > cfg.f_min && f < cfg.f_max {
                    assert!(c, "bin {k} ({f} Hz) uncovered");
                }
            }
        }
    }

    #[test]
    fn invalid_ranges_rejected() {
        let mut cfg = MelFilterbankConfig::fbank(16000);
        cfg.f_max = 9000.0;
        assert!(MelFilterbank::new(cfg).is_err());
        cfg.f_max = 100.0;
        cfg.f_min = 200.0;
        assert!(MelFilterbank::new(cfg).is_err());
        let mut cfg = MelFilterbankConfig::fbank(16000);
        cfg.n_mels = 400;
        assert!(MelFilterbank::new(cfg).is_err());
    }
}
