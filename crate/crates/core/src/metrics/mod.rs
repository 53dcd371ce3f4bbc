//! Evaluation: low-level fidelity (ESTOI, MCD, SI-SNR), content (unit error
//! rate) and timing (envelope cross-correlation).

mod estoi;
mod report;

pub use estoi::{estoi, resample};
pub use report::{Aggregate, EvalReport, EvalRow};

use ndarray::{s, Array2};

use crate::error::{config_err, degenerate, input_err, Result};
use crate::signal::{mfcc, Waveform};
use crate::tokenizer::UnitSequence;

pub const SI_SNR_CAP_DB: f64 = 100.0;
pub const MAX_SYNC_LAG_MS: f64 = 500.0;
const ENVELOPE_HOP_MS: f64 = 20.0;

fn same_rate(a: &Waveform, b: &Waveform) -> Result<()> {
    if a.sample_rate() != b.sample_rate() {
        return config_err(format!(
            "sample rates differ: {} vs {}",
            a.sample_rate(),
            b.sample_rate()
        ));
    }
    Ok(())
}

/// Scale-invariant SNR in dB, clamped to ±100.
pub fn si_snr(reference: &Waveform, degraded: &Waveform) -> Result<f64> {
    same_rate(reference, degraded)?;
    let r = reference.require_mono("si_snr")?;
    let d = degraded.require_mono("si_snr")?;
    if r.len() != d.len() {
        return input_err(format!("lengths differ: {} vs {}", r.len(), d.len()));
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len().max(1) as f64;
    let (mr, md) = (mean(r), mean(d));
    let r: Vec<f64> = r.iter().map(|x| x - mr).collect();
    let d: Vec<f64> = d.iter().map(|x| x - md).collect();
    let rr: f64 = r.iter().map(|x| x * x).sum();
    if !(rr > 0.0) {
        return degenerate("reference has no energy");
    }
    let alpha = r.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target = alpha * alpha * rr;
    let residual: f64 = r
        .iter()
        .zip(&d)
        .map(|(a, b)| (b - alpha * a).powi(2))
        .sum();
    let db = if target <= 0.0 {
        -SI_SNR_CAP_DB
    } else if residual <= 0.0 {
        SI_SNR_CAP_DB
    } else {
        10.0 * (target / residual).log10()
    };
    Ok(db.clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB))
}

/// `10·√2/ln 10 · mean_t ‖a_t − b_t‖` over cepstral coefficients 1.. (c0 is
/// column 0 and is skipped). Frame counts must already agree.
pub fn mcd_from_cepstra(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let k = 10.0 * 2f64.sqrt() / std::f64::consts::LN_10;
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let a = a.slice(s![.., 1..]);
    let b = b.slice(s![.., 1..]);
    let total: f64 = a
        .rows()
        .into_iter()
        .zip(b.rows())
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt())
        .sum();
    k * total / n as f64
}

/// Frame-aligned mel cepstral distortion over coefficients 1..12 of the
/// 10 ms MFCC.
pub fn mcd(reference: &Waveform, degraded: &Waveform) -> Result<f64> {
    same_rate(reference, degraded)?;
    let hop = crate::signal::MfccConfig::default_10ms().stft.hop;
    if reference.len().abs_diff(degraded.len()) > hop {
        return input_err(format!(
            "lengths differ by more than one frame: {} vs {}",
            reference.len(),
            degraded.len()
        ));
    }
    let a = mfcc(reference, 13)?;
    let b = mfcc(degraded, 13)?;
    let n = a.n_frames().min(b.n_frames());
    Ok(mcd_from_cepstra(
        &a.truncated(n).data,
        &b.truncated(n).data,
    ))
}

/// Remove consecutive repeats.
pub fn dedup_runs(units: &[u32]) -> Vec<u32> {
    let mut out = units.to_vec();
    out.dedup();
    out
}

/// Edit distance between run-length-deduplicated sequences divided by the
/// deduplicated reference length.
pub fn unit_error_rate(reference: &UnitSequence, hypothesis: &UnitSequence) -> Result<f64> {
    let r = dedup_runs(&reference.units);
    if r.is_empty() {
        return degenerate("empty reference unit sequence");
    }
    let h = dedup_runs(&hypothesis.units);
    Ok(strsim::generic_levenshtein(&r, &h) as f64 / r.len() as f64)
}

fn log_energy_envelope(x: &[f64], hop: usize) -> Vec<f64> {
    x.chunks_exact(hop)
        .map(|c| 10.0 * (c.iter().map(|v| v * v).sum::<f64>() / hop as f64 + 1e-10).log10())
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Lag of `degraded` relative to `reference` (positive when degraded is
/// late) from 50 Hz log-energy envelopes, with peak-minus-mean confidence.
pub fn sync_offset(reference: &Waveform, degraded: &Waveform, max_lag_ms: f64) -> Result<(f64, f64)> {
    same_rate(reference, degraded)?;
    if !(0.0..=MAX_SYNC_LAG_MS).contains(&max_lag_ms) {
        return config_err(format!("max lag {max_lag_ms} ms outside [0, {MAX_SYNC_LAG_MS}]"));
    }
    let r = reference.require_mono("sync_offset")?;
    let d = degraded.require_mono("sync_offset")?;
    if r.iter().all(|x| *x == 0.0) || d.iter().all(|x| *x == 0.0) {
        return degenerate("silent input to sync_offset");
    }
    let hop = (reference.sample_rate() as f64 * ENVELOPE_HOP_MS / 1000.0).round() as usize;
    let er = log_energy_envelope(r, hop);
    let ed = log_energy_envelope(d, hop);
    let n = er.len().min(ed.len());
    if n < 3 {
        return degenerate("signals shorter than three envelope frames");
    }
    let max_lag = ((max_lag_ms / ENVELOPE_HOP_MS).floor() as isize).min(n as isize - 2);
    let mut best = (0isize, f64::NEG_INFINITY);
    let mut sum = 0.0;
    let mut count = 0usize;
    for lag in -max_lag..=max_lag {
        let (a, b) = if lag >= 0 {
            let l = lag as usize;
            (&er[..n - l], &ed[l..n])
        } else {
            let l = (-lag) as usize;
            (&er[l..n], &ed[..n - l])
        };
        let c = pearson(a, b);
        sum += c;
        count += 1;
        if c > best.1 {
            best = (lag, c);
        }
    }
    let confidence = (best.1 - sum / count as f64).max(0.0);
    Ok((best.0 as f64 * ENVELOPE_HOP_MS, confidence))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_noise, generate_utterance, Alphabet, NoiseKind, UtteranceSpec};
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn speech(seed: u64) -> Waveform {
        let alpha = Alphabet::generate(20, 7).unwrap();
        let spec = UtteranceSpec::sample(&alpha, (2.0, 2.5), seed, 16000);
        generate_utterance(&spec).unwrap().0
    }

    fn gaussian(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn si_snr_basics() {
        let x = speech(1);
        assert_eq!(si_snr(&x, &x).unwrap(), SI_SNR_CAP_DB);
        let a = si_snr(&x, &x.scaled(0.3)).unwrap();
        let b = si_snr(&x, &x.scaled(3.0)).unwrap();
        assert_eq!(a, SI_SNR_CAP_DB);
        assert_eq!(b, SI_SNR_CAP_DB);
        assert!(matches!(
            si_snr(&Waveform::zeros(100, 16000), &x.fit_to_len(100)),
            Err(crate::GseError::Degenerate(_))
        ));
        let mut values = Vec::new();
        for seed in 0..20 {
            let s = gaussian(16000, seed);
            let n = gaussian(16000, 1000 + seed);
            let es: f64 = s.iter().map(|v| v * v).sum();
            let en: f64 = n.iter().map(|v| v * v).sum();
            let g = (es / en).sqrt();
            let d: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + g * b).collect();
            values.push(
                si_snr(&Waveform::mono(s, 16000).unwrap(), &Waveform::mono(d, 16000).unwrap()).unwrap(),
            );
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        assert!(mean.abs() < 0.5, "{mean}");
    }

    #[test]
    fn mcd_identity_symmetry_linearity() {
        let x = speech(2);
        let y = speech(3).fit_to_len(x.len());
        assert_eq!(mcd(&x, &x).unwrap(), 0.0);
        assert_eq!(mcd(&x, &y).unwrap(), mcd(&y, &x).unwrap());
        assert!(mcd(&x, &x.fit_to_len(x.len() - 1000)).is_err());

        let c = mfcc(&x, 13).unwrap().data;
        let mut rng = seeded(9);
        let delta: Array2<f64> = Array2::from_shape_fn(c.dim(), |_| StandardNormal.sample(&mut rng));
        let one = mcd_from_cepstra(&c, &(&c + &delta));
        let two = mcd_from_cepstra(&c, &(&c + &(&delta * 2.0)));
        assert!((two - 2.0 * one).abs() <= 1e-12 * two);
    }

    #[test]
    fn uer_examples() {
        let u = |v: &[u32]| UnitSequence::new(v.to_vec());
        assert_eq!(unit_error_rate(&u(&[1, 2, 3]), &u(&[1, 2, 3])).unwrap(), 0.0);
        assert!((unit_error_rate(&u(&[1, 2, 3]), &u(&[1, 3])).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(unit_error_rate(&u(&[1, 1, 2, 2, 3]), &u(&[1, 2, 3, 3])).unwrap(), 0.0);
        assert!(unit_error_rate(&u(&[]), &u(&[1])).is_err());
        assert_eq!(unit_error_rate(&u(&[4, 5]), &u(&[])).unwrap(), 1.0);
    }

    /// Edit distance by exhaustive recursion over the three operations.
    fn brute_edit(a: &[u32], b: &[u32]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = brute_edit(ra, rb) + usize::from(x != y);
                sub.min(brute_edit(ra, b) + 1).min(brute_edit(a, rb) + 1)
            }
        }
    }

    proptest! {
        #[test]
        fn uer_matches_exhaustive_oracle(
            a in proptest::collection::vec(0u32..4, 1..=8),
            b in proptest::collection::vec(0u32..4, 0..=8),
        ) {
            let ra = dedup_runs(&a);
            let rb = dedup_runs(&b);
            let want = brute_edit(&ra, &rb) as f64 / ra.len() as f64;
            let got = unit_error_rate(&UnitSequence::new(a), &UnitSequence::new(b)).unwrap();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn sync_offset_recovers_delay() {
        for seed in 0..5 {
            let x = speech(10 + seed);
            let (off, conf) = sync_offset(&x, &x, 300.0).unwrap();
            assert_eq!(off, 0.0);
            assert!(conf > 0.0);
            let mut delayed = vec![0.0; 1600];
            delayed.extend_from_slice(&x.samples()[..x.len() - 1600]);
            let d = Waveform::mono(delayed, 16000).unwrap();
            let (off, _) = sync_offset(&x, &d, 300.0).unwrap();
            assert!((off - 100.0).abs() <= 20.0, "{off}");

            let alpha = Alphabet::generate(20, 7).unwrap();
            let n = generate_noise(NoiseKind::White, x.len(), 16000, seed, &alpha).unwrap();
            let (_, cn) = sync_offset(&x, &n, 300.0).unwrap();
            assert!(cn < conf);
        }
        let x = speech(1);
        assert!(sync_offset(&x, &x, 600.0).is_err());
        assert!(sync_offset(&x, &Waveform::zeros(x.len(), 16000), 100.0).is_err());
    }
}
