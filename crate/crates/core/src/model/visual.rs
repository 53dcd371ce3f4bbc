use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corruption::sample_span_mask;
use crate::error::{config_err, input_err, Result};
use crate::rng::seeded;
use crate::signal::{
    log_mel, stack_frames, stft_with, whole_frames, FeatureKind, FeatureMatrix, MelFilterbank,
    MfccConfig, Waveform,
};

/// 23 log-mel bands at 100 Hz, four consecutive frames stacked to 25 Hz.
pub fn audio_features(wave: &Waveform) -> Result<FeatureMatrix> {
    let cfg = MfccConfig::default_10ms();
    let samples = wave.require_mono("audio_features")?;
    let fb = MelFilterbank::new(cfg.filterbank(wave.sample_rate()))?;
    let spec = stft_with(samples, cfg.stft, wave.sample_rate())?;
    let lm = log_mel(&spec, &fb)?;
    let n = whole_frames(samples.len(), cfg.stft.hop).max(1);
    Ok(stack_frames(&lm.truncated(n), 4))
}

/// Fixed random embedding per content symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualEmbedding {
    pub table: Array2<f64>,
}

impl VisualEmbedding {
    pub fn generate(n_symbols: usize, dim: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        Self {
            table: Array2::from_shape_fn((n_symbols, dim), |_| StandardNormal.sample(&mut rng)),
        }
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualSurrogate {
    pub stream: FeatureMatrix,
    pub informativeness: f64,
}

/// A 25 Hz content side-channel built from 50 Hz symbol labels: each frame
/// is the mean embedding of its two label frames, zeroed with probability
/// `1 - informativeness`.
pub fn visual_surrogate(
    labels: &[usize],
    embedding: &VisualEmbedding,
    informativeness: f64,
    seed: u64,
) -> Result<VisualSurrogate> {
    if !(0.0..=1.0).contains(&informativeness) {
        return config_err(format!("informativeness {informativeness} outside [0, 1]"));
    }
    if let Some(l) = labels.iter().find(|l| **l >= embedding.table.nrows()) {
        return input_err(format!("symbol {l} has no embedding"));
    }
    let n = labels.len().div_ceil(2);
    let mut rng = seeded(seed);
    let mut data = Array2::zeros((n, embedding.dim()));
    for t in 0..n {
        let keep = rng.random::<f64>() < informativeness;
        if !keep {
            continue;
        }
        let a = labels[2 * t];
        let b = labels[(2 * t + 1).min(labels.len() - 1)];
        let mean = (&embedding.table.row(a) + &embedding.table.row(b)) * 0.5;
        data.row_mut(t).assign(&mean);
    }
    Ok(VisualSurrogate {
        stream: FeatureMatrix::new(data, 25.0, FeatureKind::Activation)?,
        informativeness,
    })
}

/// Zero whole frames in spans of `span` so that a fraction `prob` is masked
/// in expectation.
pub fn spec_augment(audio: &FeatureMatrix, prob: f64, span: usize, seed: u64) -> Result<FeatureMatrix> {
    if !(0.0..1.0).contains(&prob) || span == 0 {
        return config_err(format!("mask prob {prob} / span {span} invalid"));
    }
    if prob == 0.0 {
        return Ok(audio.clone());
    }
    let mut rng = seeded(seed);
    let mask = sample_span_mask(audio.n_frames(), span, prob, &mut rng);
    let mut out = audio.clone();
    for (t, m) in mask.iter().enumerate() {
        if *m {
            out.data.row_mut(t).fill(0.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_rate_is_a_quarter_of_the_front_end() {
        let w = Waveform::zeros(320 * 100, 16000);
        let f = audio_features(&w).unwrap();
        assert_eq!(f.dim(), 92);
        assert_eq!(f.n_frames(), 50);
        assert_eq!(f.frame_rate, 25.0);
    }

    #[test]
    fn surrogate_shapes_and_dropout() {
        let emb = VisualEmbedding::generate(5, 16, 0);
        let labels: Vec<usize> = (0..400).map(|i| (i / 7) % 5).collect();
        let full = visual_surrogate(&labels, &emb, 1.0, 1).unwrap();
        assert_eq!(full.stream.n_frames(), 200);
        let expect = (&emb.table.row(labels[2]) + &emb.table.row(labels[3])) * 0.5;
        assert_eq!(full.stream.data.row(1), expect);
        let none = visual_surrogate(&labels, &emb, 0.0, 1).unwrap();
        assert!(none.stream.data.iter().all(|v| *v == 0.0));
        assert!(visual_surrogate(&labels, &emb, 1.5, 1).is_err());
        assert!(visual_surrogate(&[9], &emb, 1.0, 1).is_err());
    }

    #[test]
    fn masking_statistics() {
        let audio = FeatureMatrix::new(Array2::ones((20_000, 4)), 25.0, FeatureKind::FbankStacked).unwrap();
        assert_eq!(spec_augment(&audio, 0.0, 1, 0).unwrap(), audio);
        for (prob, span) in [(0.35, 1), (0.35, 5), (0.2, 10)] {
            let m = spec_augment(&audio, prob, span, 3).unwrap();
            let frac = m.data.column(0).iter().filter(|v| **v == 0.0).count() as f64 / 20_000.0;
            assert!((frac - prob).abs() < 0.02, "{prob}/{span}: {frac}");
        }
        assert!(spec_augment(&audio, 1.0, 1, 0).is_err());
    }
}
