use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::generator::{generate_utterance, Alphabet, UtteranceSpec};
use crate::error::{config_err, Result};
use crate::rng::{derive_seed, seeded};
use crate::signal::{stft::fft_plans, Waveform};

const NOISE_RMS: f64 = 0.1;
const BABBLE_TALKERS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Pink,
    Babble,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [Self::White, Self::Pink, Self::Babble];
}

fn normalize_rms(x: &mut [f64]) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= NOISE_RMS / rms);
    }
}

/// White Gaussian noise shaped to a 1/f power spectrum.
fn pink(len: usize, seed: u64) -> Vec<f64> {
    let n = len.next_power_of_two().max(2);
    let mut rng = seeded(seed);
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    let (fwd, inv) = fft_plans(n);
    fwd.process(&mut buf);
    buf[0] = Complex64::new(0.0, 0.0);
    for k in 1..n {
        let bin = k.min(n - k) as f64;
        buf[k] /= bin.sqrt();
    }
    inv.process(&mut buf);
    buf.iter().take(len).map(|c| c.re).collect()
}

/// Noise of `len` samples at RMS 0.1. Babble sums six synthetic talkers
/// from `alphabet`.
pub fn generate_noise(
    kind: NoiseKind,
    len: usize,
    sample_rate: u32,
    seed: u64,
    alphabet: &Alphabet,
) -> Result<Waveform> {
    if len == 0 {
        return config_err("noise duration must be positive");
    }
    let mut x = match kind {
        NoiseKind::White => {
            let mut rng = seeded(seed);
            (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
        }
        NoiseKind::Pink => pink(len, seed),
        NoiseKind::Babble => {
            let mut acc = vec![0.0; len];
            let mut rng = seeded(seed);
            for talker in 0..BABBLE_TALKERS {
                let spec = UtteranceSpec::sample(
                    alphabet,
                    (2.0, 4.0),
                    derive_seed(seed, talker as u64 + 1),
                    sample_rate,
                );
                let (w, _) = generate_utterance(&spec)?;
                let s = w.samples();
                let offset = rng.random_range(0..s.len());
                for (i, a) in acc.iter_mut().enumerate() {
                    *a += s[(offset + i) % s.len()];
                }
            }
            acc
        }
    };
    normalize_rms(&mut x);
    Waveform::mono(x, sample_rate)
}
