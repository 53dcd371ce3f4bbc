//! MVDR beamforming with a diffuse-noise covariance model and far-field
//! (anechoic) steering, applied frame-wise through weighted overlap-add.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, GseError, Result};
use crate::signal::{istft, stft_with, StftConfig, Waveform};

pub const BEAMFORMER_FFT_LEN: usize = 1024;
pub const DEFAULT_LOADING: f64 = 1e-4;
pub const SPEED_OF_SOUND: f64 = 343.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// Microphone coordinates in meters.
    pub mic_positions: Vec<[f64; 3]>,
    /// Zero-based; the default 1 is the second microphone.
    pub reference_mic: usize,
    pub speed_of_sound: f64,
}

impl ArrayGeometry {
    pub fn new(mic_positions: Vec<[f64; 3]>, reference_mic: usize) -> Result<Self> {
        let g = Self {
            mic_positions,
            reference_mic,
            speed_of_sound: SPEED_OF_SOUND,
        };
        g.validate()?;
        Ok(g)
    }

    /// Square of four microphones in the xy-plane with the given side length.
    pub fn square(side: f64) -> Self {
        let h = side / 2.0;
        Self {
            mic_positions: vec![[-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0]],
            reference_mic: 1,
            speed_of_sound: SPEED_OF_SOUND,
        }
    }

    /// Uniform line along the x axis.
    pub fn linear(n: usize, spacing: f64) -> Self {
        Self {
            mic_positions: (0..n).map(|i| [i as f64 * spacing, 0.0, 0.0]).collect(),
            reference_mic: if n > 1 { 1 } else { 0 },
            speed_of_sound: SPEED_OF_SOUND,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mic_positions.is_empty() {
            return config_err("array needs at least one microphone");
        }
        if self.reference_mic >= self.mic_positions.len() {
            return config_err(format!(
                "reference mic {} out of range for {} microphones",
                self.reference_mic,
                self.mic_positions.len()
            ));
        }
        if !(self.speed_of_sound > 0.0) {
            return config_err("speed of sound must be positive");
        }
        Ok(())
    }

    pub fn n_mics(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.mic_positions[i], self.mic_positions[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    /// Arrival delay of each microphone relative to the reference, in
    /// seconds, for a plane wave travelling along `direction`.
    pub fn relative_delays(&self, direction: [f64; 3]) -> Result<Vec<f64>> {
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return config_err(format!("direction must be a unit vector (norm {norm})"));
        }
        let r = self.mic_positions[self.reference_mic];
        Ok(self
            .mic_positions
            .iter()
            .map(|p| {
                ((p[0] - r[0]) * direction[0] + (p[1] - r[1]) * direction[1]
                    + (p[2] - r[2]) * direction[2])
                    / self.speed_of_sound
            })
            .collect())
    }
}

/// Unit vector in the xy-plane at `azimuth_deg` from the x axis.
pub fn planar_direction(azimuth_deg: f64) -> [f64; 3] {
    let a = azimuth_deg.to_radians();
    [a.cos(), a.sin(), 0.0]
}

fn bin_frequency(k: usize, fft_len: usize, sample_rate: u32) -> f64 {
    k as f64 * sample_rate as f64 / fft_len as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringSet {
    /// `[freq_bins × mics]`, reference entry 1 at every bin.
    pub vectors: Array2<Complex64>,
    pub fft_len: usize,
    pub sample_rate: u32,
}

pub fn steering_vector(
    geometry: &ArrayGeometry,
    direction: [f64; 3],
    fft_len: usize,
    sample_rate: u32,
) -> Result<SteeringSet> {
    geometry.validate()?;
    let taus = geometry.relative_delays(direction)?;
    let n_bins = fft_len / 2 + 1;
    let vectors = Array2::from_shape_fn((n_bins, geometry.n_mics()), |(k, m)| {
        let f = bin_frequency(k, fft_len, sample_rate);
        Complex64::from_polar(1.0, -2.0 * PI * f * taus[m])
    });
    Ok(SteeringSet {
        vectors,
        fft_len,
        sample_rate,
    })
}

/// Normalized sinc, `sin(πx)/(πx)`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    /// `[freq_bins × mics × mics]`
    pub matrices: Array3<Complex64>,
}

impl CovarianceSet {
    pub fn n_bins(&self) -> usize {
        self.matrices.dim().0
    }

    pub fn n_mics(&self) -> usize {
        self.matrices.dim().1
    }

    pub fn bin(&self, k: usize) -> Array2<Complex64> {
        self.matrices.index_axis(ndarray::Axis(0), k).to_owned()
    }
}

/// Spherically isotropic noise coherence with diagonal loading of
/// `loading · trace/M` per bin.
pub fn diffuse_covariance(
    geometry: &ArrayGeometry,
    fft_len: usize,
    sample_rate: u32,
    loading: f64,
) -> Result<CovarianceSet> {
    geometry.validate()?;
    if !(loading > 0.0) {
        return config_err("diagonal loading must be positive");
    }
    let m = geometry.n_mics();
    let n_bins = fft_len / 2 + 1;
    let mut matrices = Array3::zeros((n_bins, m, m));
    for k in 0..n_bins {
        let f = bin_frequency(k, fft_len, sample_rate);
        for i in 0..m {
            for j in 0..m {
                let x = 2.0 * f * geometry.distance(i, j) / geometry.speed_of_sound;
                matrices[[k, i, j]] = Complex64::new(sinc(x), 0.0);
            }
        }
        let trace: f64 = (0..m).map(|i| matrices[[k, i, i]].re).sum();
        for i in 0..m {
            matrices[[k, i, i]] += loading * trace / m as f64;
        }
    }
    Ok(CovarianceSet { matrices })
}

/// Lower Cholesky factor of a Hermitian positive-definite matrix.
pub(crate) fn cholesky(a: &Array2<Complex64>) -> Option<Array2<Complex64>> {
    let n = a.nrows();
    let mut l = Array2::<Complex64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]].re;
        for k in 0..j {
            d -= l[[j, k]].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = Complex64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

/// Solve `L Lᴴ x = b`.
pub(crate) fn cholesky_solve(l: &Array2<Complex64>, b: &[Complex64]) -> Vec<Complex64> {
    let n = l.nrows();
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[[k, i]].conj() * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// `xᴴ y`
pub fn inner(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// `wᴴ A w`, real for Hermitian `A`.
pub fn quadratic_form(a: &Array2<Complex64>, w: &[Complex64]) -> f64 {
    let aw: Vec<Complex64> = (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[[i, j]] * w[j]).sum())
        .collect();
    inner(w, &aw).re
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    /// `[freq_bins × mics]`
    pub weights: Array2<Complex64>,
    pub fft_len: usize,
}

impl WeightSet {
    pub fn n_mics(&self) -> usize {
        self.weights.ncols()
    }

    pub fn bin(&self, k: usize) -> Vec<Complex64> {
        self.weights.row(k).to_vec()
    }
}

pub const DISTORTIONLESS_TOL: f64 = 1e-10;

/// Per bin `w = Φ⁻¹d / (dᴴΦ⁻¹d)`.
pub fn mvdr_weights(
    cov: &CovarianceSet,
    steering: &SteeringSet,
    reference_mic: usize,
) -> Result<WeightSet> {
    let (n_bins, m) = steering.vectors.dim();
    if cov.n_bins() != n_bins || cov.n_mics() != m {
        return config_err(format!(
            "covariance is {}×{} mics, steering {}×{}",
            cov.n_bins(),
            cov.n_mics(),
            n_bins,
            m
        ));
    }
    if reference_mic >= m {
        return config_err(format!("reference mic {reference_mic} out of range"));
    }
    let mut weights = Array2::zeros((n_bins, m));
    for k in 0..n_bins {
        let d = steering.vectors.row(k).to_vec();
        if (d[reference_mic] - Complex64::new(1.0, 0.0)).norm() > 1e-9 {
            return config_err(format!(
                "steering vector at bin {k} is not normalized to the reference mic"
            ));
        }
        let l = cholesky(&cov.bin(k)).ok_or_else(|| GseError::Numeric {
            bin: k,
            reason: "covariance is not positive definite".into(),
        })?;
        let phi_inv_d = cholesky_solve(&l, &d);
        let denom = inner(&d, &phi_inv_d);
        if !(denom.norm() > 0.0) || !denom.is_finite() {
            return Err(GseError::Numeric {
                bin: k,
                reason: "dᴴΦ⁻¹d vanished".into(),
            });
        }
        let w: Vec<Complex64> = phi_inv_d.iter().map(|v| v / denom).collect();
        let gain = inner(&w, &d);
        if (gain - Complex64::new(1.0, 0.0)).norm() > DISTORTIONLESS_TOL {
            return Err(GseError::Numeric {
                bin: k,
                reason: format!("distortionless constraint violated: wᴴd = {gain}"),
            });
        }
        for (j, v) in w.into_iter().enumerate() {
            weights[[k, j]] = v;
        }
    }
    Ok(WeightSet {
        weights,
        fft_len: steering.fft_len,
    })
}

/// MVDR weights for a target along `direction` with the diffuse model and
/// the 1024-point front-end.
pub fn design_mvdr(
    geometry: &ArrayGeometry,
    direction: [f64; 3],
    sample_rate: u32,
) -> Result<WeightSet> {
    let steering = steering_vector(geometry, direction, BEAMFORMER_FFT_LEN, sample_rate)?;
    let cov = diffuse_covariance(geometry, BEAMFORMER_FFT_LEN, sample_rate, DEFAULT_LOADING)?;
    mvdr_weights(&cov, &steering, geometry.reference_mic)
}

/// Filter-and-sum in the STFT domain: `Y = Σ_m conj(w_m)·X_m`, then WOLA.
pub fn beamform(capture: &Waveform, weights: &WeightSet) -> Result<Waveform> {
    if capture.n_channels() != weights.n_mics() {
        return config_err(format!(
            "capture has {} channels, weights expect {}",
            capture.n_channels(),
            weights.n_mics()
        ));
    }
    let cfg = StftConfig::half_overlap(weights.fft_len);
    let specs = capture
        .channels()
        .iter()
        .map(|c| stft_with(c, cfg, capture.sample_rate()))
        .collect::<Result<Vec<_>>>()?;
    let first = &specs[0];
    if first.n_bins() != weights.weights.nrows() {
        return config_err("weight bin count does not match the capture STFT");
    }
    let mut out = Array2::<Complex64>::zeros(first.bins.raw_dim());
    for (m, spec) in specs.iter().enumerate() {
        for ((t, k), v) in out.indexed_iter_mut() {
            *v += weights.weights[[k, m]].conj() * spec.bins[[t, k]];
        }
    }
    istft(&first.with_bins(out))
}

/// Beam response `wᴴ d(direction)` per bin.
pub fn beam_response(
    weights: &WeightSet,
    geometry: &ArrayGeometry,
    direction: [f64; 3],
    sample_rate: u32,
) -> Result<Vec<Complex64>> {
    let d = steering_vector(geometry, direction, weights.fft_len, sample_rate)?;
    Ok((0..weights.weights.nrows())
        .map(|k| inner(&weights.bin(k), &d.vectors.row(k).to_vec()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand_distr::{Distribution, StandardNormal};

    fn random_hpd(m: usize, seed: u64) -> Array2<Complex64> {
        let mut rng = seeded(seed);
        let a = Array2::from_shape_fn((m, m), |_| {
            Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
        });
        let mut phi = Array2::zeros((m, m));
        for i in 0..m {
            for j in 0..m {
                phi[[i, j]] = (0..m).map(|k| a[[i, k]] * a[[j, k]].conj()).sum::<Complex64>();
            }
            phi[[i, i]] += 0.1;
        }
        phi
    }

    #[test]
    fn single_mic_steering_and_weights_are_unity() {
        let g = ArrayGeometry::new(vec![[0.0; 3]], 0).unwrap();
        let d = steering_vector(&g, [1.0, 0.0, 0.0], 1024, 16000).unwrap();
        assert!(d.vectors.iter().all(|v| (*v - 1.0).norm() < 1e-15));
        let w = design_mvdr(&g, [1.0, 0.0, 0.0], 16000).unwrap();
        assert!(w.weights.iter().all(|v| (*v - 1.0).norm() < 1e-12));
    }

    #[test]
    fn broadside_pair_is_in_phase() {
        let g = ArrayGeometry::linear(2, 0.1);
        let d = steering_vector(&g, [0.0, 1.0, 0.0], 1024, 16000).unwrap();
        assert!(d.vectors.iter().all(|v| (*v - 1.0).norm() < 1e-12));
    }

    #[test]
    fn endfire_phase_difference() {
        // 0.1 m at 1715 Hz: τ = 0.1/343 s, 2πfτ = π
        let g = ArrayGeometry::new(vec![[0.0; 3], [0.1, 0.0, 0.0]], 0).unwrap();
        let fs = 1715 * 2 * 8;
        let d = steering_vector(&g, [1.0, 0.0, 0.0], 16, fs).unwrap();
        let k = 1;
        assert_eq!(k as f64 * fs as f64 / 16.0, 1715.0);
        let phase = d.vectors[[k, 1]].arg();
        assert!((phase.abs() - PI).abs() < 1e-9, "{phase}");
        assert!(steering_vector(&g, [1.0, 1.0, 0.0], 16, fs).is_err());
    }

    #[test]
    fn diffuse_covariance_values() {
        let g = ArrayGeometry::new(vec![[0.0; 3], [0.1715, 0.0, 0.0]], 0).unwrap();
        let loading = 1e-4;
        let cov = diffuse_covariance(&g, 16, 16000, loading).unwrap();
        // bin 1 is exactly 1000 Hz: 2·1000·0.1715/343 = 1
        assert!(cov.matrices[[1, 0, 1]].norm() < 1e-15);
        for k in 0..cov.n_bins() {
            assert!((cov.matrices[[k, 0, 0]].re - (1.0 + loading)).abs() < 1e-15);
            assert_eq!(cov.matrices[[k, 0, 1]], cov.matrices[[k, 1, 0]].conj());
        }
        // DC: all-ones plus loading
        assert!((cov.matrices[[0, 0, 1]].re - 1.0).abs() < 1e-15);
        assert!(diffuse_covariance(&g, 16, 16000, 0.0).is_err());
    }

    #[test]
    fn identity_covariance_gives_matched_filter() {
        let g = ArrayGeometry::square(0.05);
        let d = steering_vector(&g, planar_direction(30.0), 64, 16000).unwrap();
        let mut eye = Array3::zeros((33, 4, 4));
        for k in 0..33 {
            for i in 0..4 {
                eye[[k, i, i]] = Complex64::new(1.0, 0.0);
            }
        }
        let w = mvdr_weights(&CovarianceSet { matrices: eye }, &d, 1).unwrap();
        for k in 0..33 {
            for m in 0..4 {
                assert!((w.weights[[k, m]] - d.vectors[[k, m]] / 4.0).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn constrained_minimality_against_random_feasible_vectors() {
        let m = 4;
        let phi = random_hpd(m, 1);
        let mut rng = seeded(2);
        let d: Vec<Complex64> = (0..m)
            .map(|i| {
                if i == 1 {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::from_polar(1.0, StandardNormal.sample(&mut rng))
                }
            })
            .collect();
        let mut mats = Array3::zeros((1, m, m));
        mats.index_axis_mut(ndarray::Axis(0), 0).assign(&phi);
        let steer = SteeringSet {
            vectors: Array2::from_shape_vec((1, m), d.clone()).unwrap(),
            fft_len: 0,
            sample_rate: 16000,
        };
        let w = mvdr_weights(&CovarianceSet { matrices: mats }, &steer, 1).unwrap();
        let w = w.bin(0);
        let best = quadratic_form(&phi, &w);
        for _ in 0..1000 {
            // v = w + u with uᴴd = 0 stays feasible
            let r: Vec<Complex64> = (0..m)
                .map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
                .collect();
            let proj = inner(&d, &r) / inner(&d, &d);
            let v: Vec<Complex64> = w
                .iter()
                .zip(r.iter().zip(&d))
                .map(|(wi, (ri, di))| wi + ri - di * proj)
                .collect();
            assert!((inner(&v, &d) - 1.0).norm() < 1e-9);
            assert!(best <= quadratic_form(&phi, &v) + 1e-12);
        }
    }

    #[test]
    fn diffuse_mvdr_never_worse_than_reference() {
        let g = ArrayGeometry::square(0.05);
        let cov = diffuse_covariance(&g, 1024, 16000, DEFAULT_LOADING).unwrap();
        let steer = steering_vector(&g, planar_direction(45.0), 1024, 16000).unwrap();
        let w = mvdr_weights(&cov, &steer, 1).unwrap();
        for k in 0..cov.n_bins() {
            let wb = w.bin(k);
            assert!((inner(&wb, &steer.vectors.row(k).to_vec()) - 1.0).norm() < DISTORTIONLESS_TOL);
            let phi = cov.bin(k);
            assert!(quadratic_form(&phi, &wb) <= phi[[1, 1]].re + 1e-12);
        }
    }

    #[test]
    fn single_channel_pass_through() {
        let mut rng = seeded(4);
        let x: Vec<f64> = (0..16000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let g = ArrayGeometry::new(vec![[0.0; 3]], 0).unwrap();
        let w = design_mvdr(&g, [0.0, 0.0, 1.0], 16000).unwrap();
        let y = beamform(&Waveform::mono(x.clone(), 16000).unwrap(), &w).unwrap();
        let err: f64 = x.iter().zip(y.samples()).map(|(a, b)| (a - b).powi(2)).sum();
        let sig: f64 = x.iter().map(|a| a * a).sum();
        assert!(10.0 * (sig / err).log10() > 60.0);
        let two = Waveform::multichannel(vec![x.clone(), x], 16000).unwrap();
        assert!(beamform(&two, &w).is_err());
    }

    #[test]
    fn cholesky_solves_random_systems() {
        let phi = random_hpd(5, 8);
        let l = cholesky(&phi).unwrap();
        let b: Vec<Complex64> = (0..5).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let x = cholesky_solve(&l, &b);
        for i in 0..5 {
            let row: Complex64 = (0..5).map(|j| phi[[i, j]] * x[j]).sum();
            assert!((row - b[i]).norm() < 1e-10);
        }
        let mut bad = phi.clone();
        bad[[0, 0]] = Complex64::new(-1.0, 0.0);
        assert!(cholesky(&bad).is_none());
    }

    fn snr_interior(reference: &[f64], estimate: &[f64]) -> f64 {
        let r = &reference[2048..reference.len() - 2048];
        let e = &estimate[2048..estimate.len() - 2048];
        let err: f64 = r.iter().zip(e).map(|(a, b)| (a - b).powi(2)).sum();
        10.0 * (r.iter().map(|a| a * a).sum::<f64>() / err).log10()
    }

    fn speech(seed: u64) -> Waveform {
        use crate::corpus::{generate_utterance, Alphabet, UtteranceSpec};
        let alphabet = Alphabet::generate(16, 1).unwrap();
        generate_utterance(&UtteranceSpec::sample(&alphabet, (3.0, 3.5), seed, 16000))
            .unwrap()
            .0
    }

    #[test]
    fn anechoic_target_reconstructs_reference_channel() {
        use crate::corpus::simulate_capture;
        let g = ArrayGeometry::square(0.05);
        let dir = planar_direction(60.0);
        let cap = simulate_capture(&speech(5), &g, dir, None, 0).unwrap();
        let w = design_mvdr(&g, dir, 16000).unwrap();
        let y = beamform(&cap.mixture, &w).unwrap();
        // Low-frequency weights on a 5 cm array are superdirective and amplify
        // the simulator's interpolation error, so this is well short of exact.
        let snr = snr_interior(cap.target.channel(1), y.samples());
        assert!(snr > 30.0, "{snr}");
    }

    #[test]
    fn diffuse_noise_gain() {
        use crate::corpus::simulate_capture;
        use crate::metrics::si_snr;
        let g = ArrayGeometry::square(0.05);
        let dir = planar_direction(10.0);
        let cap = simulate_capture(&speech(6), &g, dir, Some(0.0), 9).unwrap();
        let w = design_mvdr(&g, dir, 16000).unwrap();
        let y = beamform(&cap.mixture, &w).unwrap();
        let reference = cap.target.select_channel(1).unwrap();
        let before = si_snr(&reference, &cap.mixture.select_channel(1).unwrap()).unwrap();
        let after = si_snr(&reference, &y).unwrap();
        assert!(after - before >= 3.0, "{before} -> {after}");
    }
}
