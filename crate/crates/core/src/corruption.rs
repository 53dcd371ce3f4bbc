//! Seeded distortion families: additive noise, interfering speech, dropped
//! spans and full silencing. Each operation keeps the ground truth needed
//! for evaluation (the drop mask, the scaled interferer, the realized SNR).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, degenerate, Result};
use crate::rng::{derive_seed, seeded};
use crate::signal::{energy, stft::fft_plans, Waveform};
use num_complex::Complex64;

pub const FRAME_MS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    Denoise,
    Separate,
    Inpaint,
    Silence,
}

impl CorruptionKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Denoise => "denoise",
            Self::Separate => "separate",
            Self::Inpaint => "inpaint",
            Self::Silence => "silence",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "denoise" => Some(Self::Denoise),
            "separate" => Some(Self::Separate),
            "inpaint" => Some(Self::Inpaint),
            "silence" => Some(Self::Silence),
            _ => None,
        }
    }

    pub fn needs_interferer(&self) -> bool {
        matches!(self, Self::Denoise | Self::Separate)
    }
}

/// Evaluation SNR bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnrLevel {
    Lvl1,
    Lvl2,
    Lvl3,
    Lvl4,
}

impl SnrLevel {
    pub const ALL: [SnrLevel; 4] = [Self::Lvl1, Self::Lvl2, Self::Lvl3, Self::Lvl4];

    pub fn range_db(&self) -> [f64; 2] {
        match self {
            Self::Lvl1 => [10.0, 20.0],
            Self::Lvl2 => [0.0, 10.0],
            Self::Lvl3 => [-10.0, 0.0],
            Self::Lvl4 => [-20.0, -10.0],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Lvl1 => "lvl1",
            Self::Lvl2 => "lvl2",
            Self::Lvl3 => "lvl3",
            Self::Lvl4 => "lvl4",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub snr_db_range: [f64; 2],
    pub span_frames: usize,
    pub drop_prob: f64,
    pub frame_ms: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn denoise(snr_db_range: [f64; 2], seed: u64) -> Self {
        Self {
            kind: CorruptionKind::Denoise,
            snr_db_range,
            span_frames: 1,
            drop_prob: 0.5,
            frame_ms: FRAME_MS,
            seed,
        }
    }

    pub fn separate(snr_db_range: [f64; 2], seed: u64) -> Self {
        Self {
            kind: CorruptionKind::Separate,
            ..Self::denoise(snr_db_range, seed)
        }
    }

    pub fn inpaint(span_frames: usize, drop_prob: f64, seed: u64) -> Self {
        Self {
            kind: CorruptionKind::Inpaint,
            snr_db_range: [0.0, 0.0],
            span_frames,
            drop_prob,
            frame_ms: FRAME_MS,
            seed,
        }
    }

    pub fn silence(seed: u64) -> Self {
        Self {
            kind: CorruptionKind::Silence,
            ..Self::inpaint(1, 0.5, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.snr_db_range;
        if !(lo <= hi) {
            return config_err(format!("snr range [{lo}, {hi}] is inverted"));
        }
        if !(self.drop_prob > 0.0 && self.drop_prob < 1.0) {
            return config_err(format!("drop_prob {} must lie in (0, 1)", self.drop_prob));
        }
        if self.span_frames == 0 {
            return config_err("span_frames must be at least 1");
        }
        if !(self.frame_ms > 0.0) {
            return config_err("frame_ms must be positive");
        }
        Ok(())
    }

    pub fn frame_len(&self, sample_rate: u32) -> usize {
        (self.frame_ms * sample_rate as f64 / 1000.0).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionRecord {
    pub corrupted: Waveform,
    /// Per 20 ms frame: 1 kept, 0 dropped.
    pub mask: Vec<u8>,
    pub scaled_interferer: Option<Waveform>,
    pub realized_snr_db: Option<f64>,
    pub spec: CorruptionSpec,
}

impl CorruptionRecord {
    pub fn dropped_fraction(&self) -> f64 {
        if self.mask.is_empty() {
            return 0.0;
        }
        self.mask.iter().filter(|m| **m == 0).count() as f64 / self.mask.len() as f64
    }
}

fn mask_len(samples: usize, frame_len: usize) -> usize {
    samples.div_ceil(frame_len)
}

/// Per-frame start probability that makes the expected dropped fraction of
/// an infinitely long signal equal to `prob` with spans of `span` frames.
pub fn span_start_rate(span: usize, prob: f64) -> f64 {
    prob / (span as f64 * (1.0 - prob) + prob)
}

/// Expected number of dropped frames in `n` frames when a span may only
/// start where it fits completely.
fn expected_dropped(n: usize, span: usize, q: f64) -> f64 {
    let mut e = vec![0.0; n + 1];
    for t in (0..n).rev() {
        e[t] = if t + span <= n {
            q * (span as f64 + e[t + span]) + (1.0 - q) * e[t + 1]
        } else {
            0.0
        };
    }
    e[0]
}

/// Start probability for a horizon of `n` frames, calibrated so the expected
/// dropped fraction is exactly `prob` (or the largest reachable fraction).
/// Tends to [`span_start_rate`] as `n` grows.
pub fn calibrated_start_rate(n: usize, span: usize, prob: f64) -> f64 {
    if n < span || prob <= 0.0 {
        return 0.0;
    }
    let target = prob * n as f64;
    if expected_dropped(n, span, 1.0) <= target {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if expected_dropped(n, span, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Left-to-right span process over `n` frames. `true` marks a dropped frame.
/// A span starts at a free frame with the calibrated rate and always covers
/// exactly `span` frames; adjacent spans may abut.
pub fn sample_span_mask<R: Rng>(n: usize, span: usize, prob: f64, rng: &mut R) -> Vec<bool> {
    let mut dropped = vec![false; n];
    let q = calibrated_start_rate(n, span, prob);
    let mut t = 0;
    while t < n {
        let u: f64 = rng.random();
        if t + span <= n && u < q {
            dropped[t..t + span].iter_mut().for_each(|d| *d = true);
            t += span;
        } else {
            t += 1;
        }
    }
    dropped
}

/// Loop (with a seeded circular offset) or crop `x` to exactly `len` samples.
fn fit_interferer(x: &[f64], len: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    if x.len() >= len {
        let offset = rng.random_range(0..=x.len() - len);
        x[offset..offset + len].to_vec()
    } else {
        let offset = rng.random_range(0..x.len());
        (0..len).map(|i| x[(offset + i) % x.len()]).collect()
    }
}

/// `clean + g·interferer` with `g` chosen so the energy ratio is exactly
/// `snr_db`. Energies are taken over the whole utterance.
pub fn mix_at_snr(
    clean: &Waveform,
    interferer: &Waveform,
    snr_db: f64,
    seed: u64,
) -> Result<CorruptionRecord> {
    let x = clean.require_mono("mix_at_snr")?;
    let n = interferer.require_mono("mix_at_snr")?;
    if clean.sample_rate() != interferer.sample_rate() {
        return config_err("clean and interferer sample rates differ");
    }
    let e_clean = energy(x);
    if e_clean <= 0.0 {
        return degenerate("clean signal has zero energy");
    }
    if n.is_empty() {
        return degenerate("interferer is empty");
    }
    let fitted = fit_interferer(n, x.len(), seed);
    let e_int = energy(&fitted);
    if e_int <= 0.0 {
        return degenerate("interferer has zero energy over the clean duration");
    }
    let gain = (e_clean / (e_int * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = fitted.iter().map(|v| v * gain).collect();
    let mixed: Vec<f64> = x.iter().zip(&scaled).map(|(a, b)| a + b).collect();
    let realized = 10.0 * (e_clean / energy(&scaled)).log10();
    let frame_len = (FRAME_MS * clean.sample_rate() as f64 / 1000.0).round() as usize;
    Ok(CorruptionRecord {
        corrupted: Waveform::mono(mixed, clean.sample_rate())?,
        mask: vec![1; mask_len(x.len(), frame_len)],
        scaled_interferer: Some(Waveform::mono(scaled, clean.sample_rate())?),
        realized_snr_db: Some(realized),
        spec: CorruptionSpec::denoise([snr_db, snr_db], seed),
    })
}

/// Linear convolution with `impulse`, truncated to the clean length.
pub fn apply_rir(clean: &Waveform, impulse: &Waveform) -> Result<Waveform> {
    let x = clean.require_mono("apply_rir")?;
    let h = impulse.require_mono("apply_rir")?;
    if h.is_empty() {
        return config_err("impulse response is empty");
    }
    if clean.sample_rate() != impulse.sample_rate() {
        return config_err("clean and impulse sample rates differ");
    }
    if h.len() > x.len() {
        return config_err("impulse response longer than the signal");
    }
    let full = x.len() + h.len() - 1;
    let n = full.next_power_of_two();
    let (fwd, inv) = fft_plans(n);
    let to_buf = |v: &[f64]| {
        let mut b = vec![Complex64::new(0.0, 0.0); n];
        for (dst, src) in b.iter_mut().zip(v) {
            dst.re = *src;
        }
        b
    };
    let mut a = to_buf(x);
    let mut b = to_buf(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let out = a.iter().take(x.len()).map(|c| c.re / n as f64).collect();
    Waveform::mono(out, clean.sample_rate())
}

/// Zero random spans of `span_frames` 20 ms frames.
pub fn drop_spans(clean: &Waveform, spec: &CorruptionSpec) -> Result<CorruptionRecord> {
    if spec.kind != CorruptionKind::Inpaint {
        return config_err("drop_spans requires an inpaint spec");
    }
    spec.validate()?;
    let x = clean.require_mono("drop_spans")?;
    let frame_len = spec.frame_len(clean.sample_rate());
    let n_frames = mask_len(x.len(), frame_len);
    if spec.span_frames * frame_len > x.len() {
        return degenerate(format!(
            "span of {} frames exceeds the {:.3} s signal",
            spec.span_frames,
            clean.duration_secs()
        ));
    }
    let mut rng = seeded(spec.seed);
    let dropped = sample_span_mask(n_frames, spec.span_frames, spec.drop_prob, &mut rng);
    let mut out = x.to_vec();
    for (f, d) in dropped.iter().enumerate() {
        if *d {
            let end = ((f + 1) * frame_len).min(out.len());
            out[f * frame_len..end].iter_mut().for_each(|s| *s = 0.0);
        }
    }
    Ok(CorruptionRecord {
        corrupted: Waveform::mono(out, clean.sample_rate())?,
        mask: dropped.iter().map(|d| u8::from(!d)).collect(),
        scaled_interferer: None,
        realized_snr_db: None,
        spec: spec.clone(),
    })
}

/// Replace the signal with silence (video-only condition).
pub fn silence(clean: &Waveform) -> Result<CorruptionRecord> {
    let x = clean.require_mono("silence")?;
    let frame_len = (FRAME_MS * clean.sample_rate() as f64 / 1000.0).round() as usize;
    Ok(CorruptionRecord {
        corrupted: Waveform::zeros(x.len(), clean.sample_rate()),
        mask: vec![0; mask_len(x.len(), frame_len)],
        scaled_interferer: None,
        realized_snr_db: None,
        spec: CorruptionSpec::silence(0),
    })
}

/// Apply `spec` to `clean`. Denoise and Separate draw the SNR uniformly from
/// the spec's range and need an interferer (noise or another utterance).
pub fn corrupt(
    clean: &Waveform,
    spec: &CorruptionSpec,
    interferer: Option<&Waveform>,
) -> Result<CorruptionRecord> {
    spec.validate()?;
    match spec.kind {
        CorruptionKind::Denoise | CorruptionKind::Separate => {
            let Some(interferer) = interferer else {
                return config_err(format!("{} needs an interferer", spec.kind.name()));
            };
            let mut rng = seeded(spec.seed);
            let [lo, hi] = spec.snr_db_range;
            let snr = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let mut rec = mix_at_snr(clean, interferer, snr, derive_seed(spec.seed, 1))?;
            rec.spec = spec.clone();
            Ok(rec)
        }
        CorruptionKind::Inpaint => drop_spans(clean, spec),
        CorruptionKind::Silence => {
            let mut rec = silence(clean)?;
            rec.spec = spec.clone();
            Ok(rec)
        }
    }
}

/// JSON sidecar stored next to a corrupted WAV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSidecar {
    pub kind: CorruptionKind,
    pub seed: u64,
    pub realized_snr_db: Option<f64>,
    pub snr_db_range: [f64; 2],
    pub span_frames: usize,
    pub drop_prob: f64,
    pub frame_ms: f64,
    pub n_frames: usize,
    /// `(value, run length)` pairs over the per-frame mask.
    pub mask_rle: Vec<(u8, usize)>,
}

impl CorruptionSidecar {
    pub fn from_record(rec: &CorruptionRecord) -> Self {
        let mut rle: Vec<(u8, usize)> = Vec::new();
        for m in &rec.mask {
            match rle.last_mut() {
                Some((v, n)) if v == m => *n += 1,
                _ => rle.push((*m, 1)),
            }
        }
        Self {
            kind: rec.spec.kind,
            seed: rec.spec.seed,
            realized_snr_db: rec.realized_snr_db,
            snr_db_range: rec.spec.snr_db_range,
            span_frames: rec.spec.span_frames,
            drop_prob: rec.spec.drop_prob,
            frame_ms: rec.spec.frame_ms,
            n_frames: rec.mask.len(),
            mask_rle: rle,
        }
    }

    pub fn mask(&self) -> Vec<u8> {
        self.mask_rle
            .iter()
            .flat_map(|(v, n)| std::iter::repeat_n(*v, *n))
            .collect()
    }
}
