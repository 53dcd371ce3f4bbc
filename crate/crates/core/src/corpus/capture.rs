use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};

use crate::beamformer::{cholesky, sinc, ArrayGeometry};
use crate::error::Result;
use crate::rng::seeded;
use crate::signal::{energy, stft::fft_plans, Waveform};
use ndarray::Array2;
use std::f64::consts::PI;

const SINC_HALF_WIDTH: isize = 64;

/// Delay `x` by `delay` samples (fractional, possibly negative) with a
/// Hann-windowed sinc interpolator.
pub fn fractional_delay(x: &[f64], delay: f64) -> Vec<f64> {
    let n = x.len() as isize;
    let int = delay.floor() as isize;
    let frac = delay - int as f64;
    let taps: Vec<(isize, f64)> = (-SINC_HALF_WIDTH..=SINC_HALF_WIDTH)
        .map(|j| {
            let t = j as f64 - frac;
            let w = if t.abs() >= (SINC_HALF_WIDTH + 1) as f64 {
                0.0
            } else {
                0.5 + 0.5 * (PI * t / (SINC_HALF_WIDTH + 1) as f64).cos()
            };
            (j, sinc(t) * w)
        })
        .filter(|(_, h)| *h != 0.0)
        .collect();
    (0..n)
        .map(|i| {
            taps.iter()
                .map(|(j, h)| {
                    let src = i - int - j;
                    if src >= 0 && src < n {
                        h * x[src as usize]
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureSimulation {
    pub mixture: Waveform,
    pub target: Waveform,
    pub noise: Waveform,
}

/// Spatially diffuse white noise: every DFT bin of a full-length transform
/// is drawn with the sinc coherence of the array.
fn diffuse_noise(geometry: &ArrayGeometry, len: usize, sample_rate: u32, seed: u64) -> Vec<Vec<f64>> {
    let m = geometry.n_mics();
    let n = len.next_power_of_two().max(2);
    let mut rng = seeded(seed);
    let mut spectra = vec![vec![Complex64::new(0.0, 0.0); n]; m];
    let mut gamma = Array2::<Complex64>::zeros((m, m));
    for k in 0..=n / 2 {
        let f = k as f64 * sample_rate as f64 / n as f64;
        for i in 0..m {
            for j in 0..m {
                let x = 2.0 * f * geometry.distance(i, j) / geometry.speed_of_sound;
                gamma[[i, j]] = Complex64::new(sinc(x) + if i == j { 1e-9 } else { 0.0 }, 0.0);
            }
        }
        let l = cholesky(&gamma).expect("regularized coherence is positive definite");
        let z: Vec<Complex64> = (0..m)
            .map(|_| {
                Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
            })
            .collect();
        for i in 0..m {
            let mut v: Complex64 = (0..=i).map(|j| l[[i, j]] * z[j]).sum();
            if k == 0 || k == n / 2 {
                v.im = 0.0;
            }
            spectra[i][k] = v;
            if k > 0 && k < n / 2 {
                spectra[i][n - k] = v.conj();
            }
        }
    }
    let (_, inv) = fft_plans(n);
    spectra
        .into_iter()
        .map(|mut s| {
            inv.process(&mut s);
            s.iter().take(len).map(|c| c.re).collect()
        })
        .collect()
}

/// Far-field capture of `source` by `geometry` for a wave travelling along
/// `direction`, plus diffuse noise scaled to `diffuse_snr_db` at the
/// reference microphone (`None` for a noiseless capture).
pub fn simulate_capture(
    source: &Waveform,
    geometry: &ArrayGeometry,
    direction: [f64; 3],
    diffuse_snr_db: Option<f64>,
    seed: u64,
) -> Result<CaptureSimulation> {
    let x = source.require_mono("simulate_capture")?;
    geometry.validate()?;
    let fs = source.sample_rate();
    let delays = geometry.relative_delays(direction)?;
    let target: Vec<Vec<f64>> = delays
        .iter()
        .map(|tau| fractional_delay(x, tau * fs as f64))
        .collect();
    let noise = match diffuse_snr_db {
        Some(snr) => {
            let mut raw = diffuse_noise(geometry, x.len(), fs, seed);
            let e_target = energy(&target[geometry.reference_mic]);
            let e_noise = energy(&raw[geometry.reference_mic]);
            let gain = if e_noise > 0.0 {
                (e_target / (e_noise * 10f64.powf(snr / 10.0))).sqrt()
            } else {
                0.0
            };
            raw.iter_mut().flatten().for_each(|v| *v *= gain);
            raw
        }
        None => vec![vec![0.0; x.len()]; geometry.n_mics()],
    };
    let mixture: Vec<Vec<f64>> = target
        .iter()
        .zip(&noise)
        .map(|(t, n)| t.iter().zip(n).map(|(a, b)| a + b).collect())
        .collect();
    Ok(CaptureSimulation {
        mixture: Waveform::multichannel(mixture, fs)?,
        target: Waveform::multichannel(target, fs)?,
        noise: Waveform::multichannel(noise, fs)?,
    })
}
