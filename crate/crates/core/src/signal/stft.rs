use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{config_err, Result};

/// Framing parameters. The analysis window is a periodic Hann of `win_len`
/// samples, zero-padded to `fft_len` before the DFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_len: usize,
    pub win_len: usize,
    pub hop: usize,
}

impl StftConfig {
    /// Hann window spanning the whole FFT with 50% overlap.
    pub fn half_overlap(fft_len: usize) -> Self {
        Self {
            fft_len,
            win_len: fft_len,
            hop: fft_len / 2,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_len < 2 || !self.fft_len.is_power_of_two() {
            return config_err(format!("fft_len {} is not a power of two", self.fft_len));
        }
        if self.win_len == 0 || self.win_len > self.fft_len {
            return config_err(format!(
                "window length {} must be in 1..={}",
                self.win_len, self.fft_len
            ));
        }
        if self.hop == 0 || self.hop > self.win_len {
            return config_err(format!(
                "hop {} must be in 1..={}",
                self.hop, self.win_len
            ));
        }
        Ok(())
    }

    /// Frames produced for a signal of `len` samples with centered framing.
    pub fn n_frames(&self, len: usize) -> usize {
        if len == 0 {
            0
        } else {
            1 + len / self.hop
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    /// `[frames × (fft_len/2 + 1)]`
    pub bins: Array2<Complex64>,
    pub config: StftConfig,
    pub sample_rate: u32,
    /// Length of the signal the frames were taken from.
    pub signal_len: usize,
}

impl ComplexSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.bins.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.bins.ncols()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.bins.mapv(|c| c.norm())
    }

    pub fn power(&self) -> Array2<f64> {
        self.bins.mapv(|c| c.norm_sqr())
    }

    /// Same framing, new bin values.
    pub fn with_bins(&self, bins: Array2<Complex64>) -> Self {
        Self {
            bins,
            config: self.config,
            sample_rate: self.sample_rate,
            signal_len: self.signal_len,
        }
    }

    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.config.fft_len as f64
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

type Plans = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<usize, Plans>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

pub(crate) fn fft_plans(len: usize) -> Plans {
    PLANS.with(|cell| {
        let (planner, cache) = &mut *cell.borrow_mut();
        cache
            .entry(len)
            .or_insert_with(|| (planner.plan_fft_forward(len), planner.plan_fft_inverse(len)))
            .clone()
    })
}

/// STFT of a mono waveform with a full-length Hann window.
pub fn stft(wave: &Waveform, fft_len: usize, hop: usize) -> Result<ComplexSpectrogram> {
    let samples = wave.require_mono("stft")?;
    if !fft_len.is_power_of_two() {
        return config_err(format!("fft_len {fft_len} is not a power of two"));
    }
    if hop == 0 || !fft_len.is_multiple_of(hop) {
        return config_err(format!("hop {hop} must divide fft_len {fft_len}"));
    }
    let cfg = StftConfig {
        fft_len,
        win_len: fft_len,
        hop,
    };
    stft_with(samples, cfg, wave.sample_rate())
}

/// Centered STFT: frame `t` is centered on sample `t·hop`; the signal is
/// zero-extended by `win_len/2` on both sides.
pub fn stft_with(samples: &[f64], cfg: StftConfig, sample_rate: u32) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    let n_frames = cfg.n_frames(samples.len());
    let n_bins = cfg.n_bins();
    let mut bins = Array2::<Complex64>::zeros((n_frames, n_bins));
    if n_frames == 0 {
        return Ok(ComplexSpectrogram {
            bins,
            config: cfg,
            sample_rate,
            signal_len: 0,
        });
    }
    let window = hann_window(cfg.win_len);
    let (fwd, _) = fft_plans(cfg.fft_len);
    let half = (cfg.win_len / 2) as isize;
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_len];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fwd.get_inplace_scratch_len()];
    for t in 0..n_frames {
        let start = (t * cfg.hop) as isize - half;
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (n, w) in window.iter().enumerate() {
            let idx = start + n as isize;
            if idx >= 0 && (idx as usize) < samples.len() {
                buf[n] = Complex64::new(samples[idx as usize] * w, 0.0);
            }
        }
        fwd.process_with_scratch(&mut buf, &mut scratch);
        for (k, v) in buf.iter().take(n_bins).enumerate() {
            bins[[t, k]] = *v;
        }
    }
    Ok(ComplexSpectrogram {
        bins,
        config: cfg,
        sample_rate,
        signal_len: samples.len(),
    })
}

/// Weighted overlap-add resynthesis with a Hann synthesis window and
/// window-square normalization. Output has `spec.signal_len` samples.
pub fn istft(spec: &ComplexSpectrogram) -> Result<Waveform> {
    let cfg = spec.config;
    cfg.validate()?;
    if !cfg.win_len.is_multiple_of(cfg.hop) || cfg.win_len / cfg.hop < 2 {
        return config_err(format!(
            "hop {} with window {} is not an overlap-add compliant Hann setting",
            cfg.hop, cfg.win_len
        ));
    }
    if spec.n_bins() != cfg.n_bins() {
        return config_err(format!(
            "spectrogram has {} bins, expected {}",
            spec.n_bins(),
            cfg.n_bins()
        ));
    }
    let len = spec.signal_len;
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    if len == 0 {
        return Waveform::mono(out, spec.sample_rate);
    }
    let window = hann_window(cfg.win_len);
    let (_, inv) = fft_plans(cfg.fft_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_len];
    let mut scratch = vec![Complex64::new(0.0, 0.0); inv.get_inplace_scratch_len()];
    let half = (cfg.win_len / 2) as isize;
    let n_bins = cfg.n_bins();
    let scale = 1.0 / cfg.fft_len as f64;
    for t in 0..spec.n_frames() {
        for k in 0..n_bins {
            buf[k] = spec.bins[[t, k]];
        }
        // Hermitian completion; DC and Nyquist imaginary parts are dropped.
        buf[0].im = 0.0;
        buf[cfg.fft_len / 2].im = 0.0;
        for k in 1..cfg.fft_len / 2 {
            buf[cfg.fft_len - k] = buf[k].conj();
        }
        inv.process_with_scratch(&mut buf, &mut scratch);
        let start = (t * cfg.hop) as isize - half;
        for (n, w) in window.iter().enumerate() {
            let idx = start + n as isize;
            if idx >= 0 && (idx as usize) < len {
                out[idx as usize] += w * buf[n].re * scale;
                norm[idx as usize] += w * w;
            }
        }
    }
    for (y, d) in out.iter_mut().zip(&norm) {
        *y = if *d > 1e-10 { *y / d } else { 0.0 };
    }
    Waveform::mono(out, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn snr_db(reference: &[f64], estimate: &[f64]) -> f64 {
        let sig: f64 = reference.iter().map(|x| x * x).sum();
        let err: f64 = reference
            .iter()
            .zip(estimate)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        10.0 * (sig / err).log10()
    }

    fn direct_dft(frame: &[f64]) -> Vec<Complex64> {
        let n = frame.len();
        (0..n / 2 + 1)
            .map(|k| {
                frame
                    .iter()
                    .enumerate()
                    .map(|(i, x)| {
                        let ang = -2.0 * PI * (k * i) as f64 / n as f64;
                        Complex64::new(x * ang.cos(), x * ang.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn zero_signal_gives_zero_bins() {
        let w = Waveform::zeros(16000, 16000);
        let s = stft(&w, 1024, 512).unwrap();
        assert!(s.bins.iter().all(|c| c.norm() == 0.0));
        let back = istft(&s).unwrap();
        assert!(back.samples().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn frame_duration_matches_beamformer_setting() {
        // 1024 samples at 16 kHz
        assert_eq!(1024.0 / 16000.0, 0.064);
    }

    #[test]
    fn bin_centered_sine_concentrates_energy_and_matches_direct_dft() {
        let (fs, n, k) = (16000usize, 1024usize, 37usize);
        let f = k as f64 * fs as f64 / n as f64;
        let x: Vec<f64> = (0..fs)
            .map(|i| (2.0 * PI * f * i as f64 / fs as f64).sin())
            .collect();
        let w = Waveform::mono(x.clone(), fs as u32).unwrap();
        let s = stft(&w, n, n / 2).unwrap();
        for t in 2..s.n_frames() - 2 {
            let total: f64 = s.bins.row(t).iter().map(|c| c.norm_sqr()).sum();
            let near: f64 = (k - 1..=k + 1).map(|j| s.bins[[t, j]].norm_sqr()).sum();
            assert!(near / total >= 0.99, "frame {t}: {}", near / total);
        }
        // one interior frame against the O(N²) DFT
        let t = 10;
        let win = hann_window(n);
        let start = t * n / 2 - n / 2;
        let frame: Vec<f64> = (0..n).map(|i| x[start + i] * win[i]).collect();
        let oracle = direct_dft(&frame);
        for (a, b) in oracle.iter().zip(s.bins.row(t)) {
            assert!((a - b).norm() < 1e-8);
        }
    }

    #[test]
    fn round_trip_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..16000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = Waveform::mono(x.clone(), 16000).unwrap();
        let s = stft(&w, 1024, 512).unwrap();
        let y = istft(&s).unwrap();
        assert!(snr_db(&x, y.samples()) > 60.0);

        let alpha = -2.75;
        let scaled = s.with_bins(s.bins.mapv(|c| c * alpha));
        let ys = istft(&scaled).unwrap();
        for (a, b) in ys.samples().iter().zip(y.samples()) {
            assert!((a - alpha * b).abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_per_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = 512;
        let s = stft_with(&x, StftConfig::half_overlap(n), 16000).unwrap();
        let win = hann_window(n);
        for t in 1..s.n_frames() - 1 {
            let start = t * n / 2 - n / 2;
            let time: f64 = (0..n).map(|i| (x[start + i] * win[i]).powi(2)).sum();
            let row = s.bins.row(t);
            let mut freq = row[0].norm_sqr() + row[n / 2].norm_sqr();
            freq += 2.0 * (1..n / 2).map(|k| row[k].norm_sqr()).sum::<f64>();
            assert!(((freq / n as f64) - time).abs() <= 1e-9 * time);
        }
    }

    #[test]
    fn configuration_errors() {
        let w = Waveform::zeros(100, 16000);
        assert!(stft(&w, 1000, 500).is_err());
        assert!(stft(&w, 1024, 300).is_err());
        let empty = Waveform::zeros(0, 16000);
        assert_eq!(stft(&empty, 1024, 512).unwrap().n_frames(), 0);
        let s = stft_with(
            &[0.0; 100],
            StftConfig {
                fft_len: 64,
                win_len: 64,
                hop: 48,
            },
            16000,
        )
        .unwrap();
        assert!(istft(&s).is_err());
    }

    #[test]
    fn short_window_round_trip() {
        // 640-sample window, 320 hop inside a 1024 FFT
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..8000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cfg = StftConfig {
            fft_len: 1024,
            win_len: 640,
            hop: 320,
        };
        let s = stft_with(&x, cfg, 16000).unwrap();
        let y = istft(&s).unwrap();
        assert!(snr_db(&x, y.samples()) > 60.0);
    }
}
