//! Discrete unit extraction: k-means over MFCC(+Δ+ΔΔ) frames at 50 Hz,
//! nearest-centroid quantization, and re-clustering of learned activations.

use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, degenerate, input_err, GseError, Result};
use crate::rng::seeded;
use crate::signal::{deltas, mfcc_with, whole_frames, FeatureKind, FeatureMatrix, MfccConfig, Waveform};

pub const UNIT_RATE_HZ: f64 = 50.0;
pub const DEFAULT_CODEBOOK_SIZE: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// `[K × dim]`
    pub centroids: Array2<f64>,
    pub feature_kind: FeatureKind,
    pub training_inertia: f64,
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    k: usize,
    dim: usize,
    kind: FeatureKind,
    training_inertia: f64,
    centroids: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CodebookFile {
            k: self.k(),
            dim: self.dim(),
            kind: self.feature_kind,
            training_inertia: self.training_inertia,
            centroids: self.centroids.rows().into_iter().map(|r| r.to_vec()).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: CodebookFile = serde_json::from_str(s)?;
        if file.centroids.len() != file.k || file.centroids.iter().any(|r| r.len() != file.dim) {
            return input_err("codebook payload does not match its header");
        }
        let flat: Vec<f64> = file.centroids.into_iter().flatten().collect();
        let centroids = Array2::from_shape_vec((file.k, file.dim), flat)
            .map_err(|e| GseError::Input(e.to_string()))?;
        Ok(Self {
            centroids,
            feature_kind: file.kind,
            training_inertia: file.training_inertia,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_string(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&crate::io::read_string(path)?)
    }
}

/// Unit indices at a fixed frame rate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSequence {
    pub units: Vec<u32>,
    /// Stored in mHz so the type stays `Eq`.
    pub frame_rate_mhz: u32,
}

impl UnitSequence {
    pub fn new(units: Vec<u32>) -> Self {
        Self {
            units,
            frame_rate_mhz: (UNIT_RATE_HZ * 1000.0) as u32,
        }
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate_mhz as f64 / 1000.0
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn validate(&self, vocab: usize) -> Result<()> {
        match self.units.iter().find(|u| **u as usize >= vocab) {
            Some(u) => input_err(format!("unit {u} outside vocabulary of {vocab}")),
            None => Ok(()),
        }
    }

    pub fn to_line(&self) -> String {
        self.units
            .iter()
            .map(|u| u.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let units = line
            .split_whitespace()
            .map(|t| {
                t.parse::<u32>()
                    .map_err(|e| GseError::Input(format!("bad unit '{t}': {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(units))
    }
}

/// One utterance per line, space-separated unit indices.
pub fn write_unit_file(path: &Path, seqs: &[UnitSequence]) -> Result<()> {
    let mut s = String::new();
    for seq in seqs {
        s.push_str(&seq.to_line());
        s.push('\n');
    }
    crate::io::write_string(path, &s)
}

pub fn read_unit_file(path: &Path) -> Result<Vec<UnitSequence>> {
    crate::io::read_string(path)?
        .lines()
        .map(UnitSequence::parse_line)
        .collect()
}

/// 13 MFCCs with ±2-frame deltas and delta-deltas at a 20 ms hop, trimmed
/// to one frame per whole 20 ms of audio.
pub fn unit_features(wave: &Waveform) -> Result<FeatureMatrix> {
    let cfg = MfccConfig::default_20ms();
    let samples = wave.require_mono("unit_features")?;
    let mfcc = mfcc_with(samples, &cfg, wave.sample_rate())?;
    let n = whole_frames(samples.len(), cfg.stft.hop);
    Ok(deltas(&mfcc.truncated(n), 2))
}

pub fn concat_features(parts: &[FeatureMatrix]) -> Result<FeatureMatrix> {
    let Some(first) = parts.first() else {
        return degenerate("no features to concatenate");
    };
    let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
    let data = ndarray::concatenate(Axis(0), &views)
        .map_err(|e| GseError::Input(format!("feature dims differ: {e}")))?;
    Ok(FeatureMatrix {
        data,
        frame_rate: first.frame_rate,
        kind: first.kind,
    })
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    match (a.as_slice(), b.as_slice()) {
        (Some(a), Some(b)) => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        _ => a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum(),
    }
}

/// Nearest centroid (lowest index on ties) and its squared distance.
fn nearest(x: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(data: &Array2<f64>, centroids: &Array2<f64>, labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut inertia = 0.0;
    for (i, row) in data.rows().into_iter().enumerate() {
        let (j, d) = nearest(row, centroids);
        labels[i] = j;
        dists[i] = d;
        inertia += d;
    }
    inertia
}

fn kmeans_pp_init<R: Rng>(data: &Array2<f64>, k: usize, rng: &mut R) -> Result<Array2<f64>> {
    let n = data.nrows();
    let mut centroids = Array2::zeros((k, data.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut d2: Vec<f64> = data
        .rows()
        .into_iter()
        .map(|r| sq_dist(r, centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            return degenerate(format!("only {c} distinct feature rows for {k} clusters"));
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, d) in d2.iter().enumerate() {
            if *d > 0.0 && target < *d {
                pick = i;
                break;
            }
            target -= d;
        }
        if d2[pick] == 0.0 {
            pick = (0..n).rev().find(|i| d2[*i] > 0.0).unwrap();
        }
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, row) in data.rows().into_iter().enumerate() {
            let d = sq_dist(row, centroids.row(c));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    Ok(centroids)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub codebook: Codebook,
    /// Inertia after each assignment step, starting with the initial one.
    pub inertia_history: Vec<f64>,
}

/// k-means++ seeding followed by Lloyd iterations until the assignment is a
/// fixpoint or `max_iters` updates have run. Empty clusters are reseeded at
/// the point farthest from its current centroid.
pub fn kmeans_fit(features: &FeatureMatrix, k: usize, max_iters: usize, seed: u64) -> Result<KMeansFit> {
    let data = &features.data.as_standard_layout().into_owned();
    let (n, dim) = data.dim();
    if k == 0 {
        return config_err("codebook size must be positive");
    }
    if n < k {
        return degenerate(format!("{n} feature rows for {k} clusters"));
    }
    let mut rng = seeded(seed);
    let mut centroids = kmeans_pp_init(data, k, &mut rng)?;
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0; n];
    let mut history = vec![assign(data, &centroids, &mut labels, &mut dists)];

    for _ in 0..max_iters {
        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for (i, row) in data.rows().into_iter().enumerate() {
            sums.row_mut(labels[i]).scaled_add(1.0, &row);
            counts[labels[i]] += 1;
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                let mean = &sums.row(j) / counts[j] as f64;
                centroids.row_mut(j).assign(&mean);
            } else {
                let far = (0..n)
                    .filter(|i| !taken[*i])
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    })
                    .expect("n >= k leaves a free point");
                taken[far] = true;
                dists[far] = 0.0;
                centroids.row_mut(j).assign(&data.row(far));
            }
        }
        let prev = labels.clone();
        history.push(assign(data, &centroids, &mut labels, &mut dists));
        if prev == labels {
            break;
        }
    }
    Ok(KMeansFit {
        codebook: Codebook {
            centroids,
            feature_kind: features.kind,
            training_inertia: *history.last().unwrap(),
        },
        inertia_history: history,
    })
}

/// Map each frame to its nearest centroid.
pub fn quantize(features: &FeatureMatrix, codebook: &Codebook) -> Result<UnitSequence> {
    if features.dim() != codebook.dim() {
        return config_err(format!(
            "feature dim {} does not match codebook dim {}",
            features.dim(),
            codebook.dim()
        ));
    }
    let units = features
        .data
        .as_standard_layout()
        .rows()
        .into_iter()
        .map(|r| nearest(r, &codebook.centroids).0 as u32)
        .collect();
    Ok(UnitSequence {
        units,
        frame_rate_mhz: (features.frame_rate * 1000.0).round() as u32,
    })
}

/// Sum of squared distances to the assigned centroids.
pub fn quantization_inertia(features: &FeatureMatrix, codebook: &Codebook) -> Result<f64> {
    let units = quantize(features, codebook)?;
    Ok(features
        .data
        .rows()
        .into_iter()
        .zip(&units.units)
        .map(|(r, u)| sq_dist(r, codebook.centroids.row(*u as usize)))
        .sum())
}

/// Tokenize audio with a fitted MFCC codebook.
pub fn tokenize(wave: &Waveform, codebook: &Codebook) -> Result<UnitSequence> {
    quantize(&unit_features(wave)?, codebook)
}

/// Re-cluster hidden activations of a trained enhancer.
pub fn refine_codebook(activations: &FeatureMatrix, k: usize, seed: u64) -> Result<KMeansFit> {
    kmeans_fit(activations, k, 100, seed)
}
