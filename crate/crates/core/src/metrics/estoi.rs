//! Extended short-time objective intelligibility.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{config_err, degenerate, Result};
use crate::signal::{stft::fft_plans, Waveform};

const FS: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const N_BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const DYN_RANGE_DB: f64 = 40.0;
const ZERO_CROSSINGS: f64 = 32.0;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Band-limited rational resampling with a Hann-windowed sinc kernel whose
/// cutoff sits at the lower of the two Nyquist frequencies.
pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to {
        return x.to_vec();
    }
    let g = gcd(from as u64, to as u64);
    let (up, down) = (to as u64 / g, from as u64 / g);
    let n_out = (x.len() as u64 * up).div_ceil(down) as usize;
    let fc = (to as f64 / from as f64).min(1.0);
    let half = ZERO_CROSSINGS / fc;
    let mut y = vec![0.0; n_out];
    for (m, out) in y.iter_mut().enumerate() {
        let t = (m as u64 * down) as f64 / up as f64;
        let lo = (t - half).ceil().max(0.0) as usize;
        let hi = ((t + half).floor() as usize).min(x.len().saturating_sub(1));
        let mut acc = 0.0;
        for (k, xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
            let d = t - k as f64;
            let w = 0.5 + 0.5 * (std::f64::consts::PI * d / half).cos();
            acc += xk * fc * sinc(fc * d) * w;
        }
        *out = acc;
    }
    y
}

/// Symmetric Hann without its zero end points.
fn frame_window() -> Vec<f64> {
    (1..=FRAME)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (FRAME + 1) as f64).cos())
        .collect()
}

fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..(len + 1).saturating_sub(FRAME)).step_by(HOP)
}

/// Drop frames more than 40 dB below the loudest reference frame and
/// overlap-add what remains.
fn remove_silent_frames(x: &[f64], y: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    let energy: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = (0..FRAME).map(|i| (w[i] * x[s + i]).powi(2)).sum();
            20.0 * (e.sqrt() + f64::EPSILON).log10()
        })
        .collect();
    let max = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energy)
        .filter(|(_, e)| max - DYN_RANGE_DB - **e < 0.0)
        .map(|(s, _)| *s)
        .collect();
    let out_len = if kept.is_empty() {
        0
    } else {
        (kept.len() - 1) * HOP + FRAME
    };
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (j, &s) in kept.iter().enumerate() {
        for i in 0..FRAME {
            xs[j * HOP + i] += w[i] * x[s + i];
            ys[j * HOP + i] += w[i] * y[s + i];
        }
    }
    (xs, ys)
}

/// Third-octave band energies `[bands × frames]`.
fn band_envelopes(x: &[f64], w: &[f64], obm: &Array2<f64>) -> Array2<f64> {
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    let (fwd, _) = fft_plans(NFFT);
    let n_bins = NFFT / 2 + 1;
    let mut out = Array2::zeros((N_BANDS, starts.len()));
    let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
    for (t, &s) in starts.iter().enumerate() {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for i in 0..FRAME {
            buf[i] = Complex64::new(w[i] * x[s + i], 0.0);
        }
        fwd.process(&mut buf);
        for b in 0..N_BANDS {
            let p: f64 = (0..n_bins).map(|k| obm[[b, k]] * buf[k].norm_sqr()).sum();
            out[[b, t]] = p.sqrt();
        }
    }
    out
}

fn third_octave_matrix() -> Array2<f64> {
    let n_bins = NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..n_bins).map(|k| k as f64 * FS as f64 / NFFT as f64).collect();
    let closest = |f: f64| {
        (0..n_bins)
            .min_by(|a, b| (freqs[*a] - f).abs().total_cmp(&(freqs[*b] - f).abs()))
            .unwrap()
    };
    let mut obm = Array2::zeros((N_BANDS, n_bins));
    for b in 0..N_BANDS {
        let k = b as f64;
        let lo = closest(MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0));
        let hi = closest(MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0));
        for j in lo..hi {
            obm[[b, j]] = 1.0;
        }
    }
    obm
}

/// Zero-mean, unit-norm rows then columns of a `[bands × SEGMENT]` block.
fn row_col_normalize(seg: &mut [[f64; SEGMENT]; N_BANDS]) {
    for row in seg.iter_mut() {
        let mean = row.iter().sum::<f64>() / SEGMENT as f64;
        row.iter_mut().for_each(|v| *v -= mean);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm + f64::EPSILON);
    }
    for n in 0..SEGMENT {
        let mean = (0..N_BANDS).map(|b| seg[b][n]).sum::<f64>() / N_BANDS as f64;
        (0..N_BANDS).for_each(|b| seg[b][n] -= mean);
        let norm = (0..N_BANDS).map(|b| seg[b][n].powi(2)).sum::<f64>().sqrt();
        (0..N_BANDS).for_each(|b| seg[b][n] /= norm + f64::EPSILON);
    }
}

fn segment(env: &Array2<f64>, end: usize) -> [[f64; SEGMENT]; N_BANDS] {
    let mut seg = [[0.0; SEGMENT]; N_BANDS];
    for (b, row) in seg.iter_mut().enumerate() {
        for (n, v) in row.iter_mut().enumerate() {
            *v = env[[b, end - SEGMENT + n]];
        }
    }
    seg
}

/// Extended STOI of `degraded` against `reference`. The degraded signal is
/// padded or trimmed to the reference length first.
pub fn estoi(reference: &Waveform, degraded: &Waveform) -> Result<f64> {
    if reference.sample_rate() != degraded.sample_rate() {
        return config_err("estoi inputs have different sample rates");
    }
    let sr = reference.sample_rate();
    let x = reference.require_mono("estoi")?;
    let degraded = degraded.fit_to_len(x.len());
    let y = degraded.require_mono("estoi")?;
    let x = resample(x, sr, FS);
    let y = resample(y, sr, FS);
    let w = frame_window();
    let (xs, ys) = remove_silent_frames(&x, &y, &w);
    let obm = third_octave_matrix();
    let ex = band_envelopes(&xs, &w, &obm);
    let ey = band_envelopes(&ys, &w, &obm);
    let frames = ex.ncols();
    if frames < SEGMENT {
        return degenerate(format!(
            "{frames} non-silent frames, one segment needs {SEGMENT}"
        ));
    }
    let mut total = 0.0;
    for end in SEGMENT..=frames {
        let mut sx = segment(&ex, end);
        let mut sy = segment(&ey, end);
        row_col_normalize(&mut sx);
        row_col_normalize(&mut sy);
        let mut acc = 0.0;
        for b in 0..N_BANDS {
            for n in 0..SEGMENT {
                acc += sx[b][n] * sy[b][n];
            }
        }
        total += acc / SEGMENT as f64;
    }
    Ok(total / (frames - SEGMENT + 1) as f64)
}
