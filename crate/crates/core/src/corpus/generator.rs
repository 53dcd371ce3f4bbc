use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::rng::{derive_seed, seeded};
use crate::signal::Waveform;

pub const PAUSE_SYMBOL: usize = 0;
const PITCH_RANGE: (f64, f64) = (80.0, 300.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    pub freq: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolDef {
    pub formants: Vec<Formant>,
    pub voiced: bool,
}

/// Pseudo-phone inventory. Symbol 0 is the pause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alphabet {
    pub symbols: Vec<SymbolDef>,
}

impl Alphabet {
    pub fn generate(size: usize, seed: u64) -> Result<Self> {
        if !(12..=40).contains(&size) {
            return config_err(format!("alphabet size {size} outside 12..=40"));
        }
        let mut rng = seeded(seed);
        let mut symbols = vec![SymbolDef {
            formants: vec![
                Formant { freq: 500.0, bandwidth: 100.0 },
                Formant { freq: 1500.0, bandwidth: 150.0 },
                Formant { freq: 2500.0, bandwidth: 200.0 },
            ],
            voiced: true,
        }];
        while symbols.len() < size {
            // roughly one in four symbols is a fricative-like noise source
            let voiced = rng.random::<f64>() < 0.75;
            let formants = if voiced {
                vec![
                    Formant { freq: rng.random_range(250.0..900.0), bandwidth: rng.random_range(60.0..140.0) },
                    Formant { freq: rng.random_range(900.0..2400.0), bandwidth: rng.random_range(80.0..180.0) },
                    Formant { freq: rng.random_range(2400.0..3600.0), bandwidth: rng.random_range(120.0..250.0) },
                ]
            } else {
                vec![
                    Formant { freq: rng.random_range(1800.0..3500.0), bandwidth: rng.random_range(300.0..600.0) },
                    Formant { freq: rng.random_range(3500.0..5500.0), bandwidth: rng.random_range(400.0..900.0) },
                    Formant { freq: rng.random_range(5500.0..7200.0), bandwidth: rng.random_range(500.0..1000.0) },
                ]
            };
            // keep vowels apart in the F1/F2 plane
            let distinct = symbols.iter().skip(1).all(|s: &SymbolDef| {
                s.voiced != voiced
                    || (s.formants[0].freq - formants[0].freq).abs() > 60.0
                    || (s.formants[1].freq - formants[1].freq).abs() > 150.0
            });
            if distinct {
                symbols.push(SymbolDef { formants, voiced });
            }
        }
        Ok(Self { symbols })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub symbol: usize,
    /// Duration in 20 ms frames.
    pub frames: usize,
    pub formants: Vec<Formant>,
    pub voiced: bool,
}

/// The generative factors of one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceSpec {
    pub segments: Vec<Segment>,
    /// Hz per 20 ms frame.
    pub pitch_contour: Vec<f64>,
    /// Linear gain per 20 ms frame.
    pub amplitude_envelope: Vec<f64>,
    pub speed: f64,
    pub seed: u64,
    pub sample_rate: u32,
}

impl UtteranceSpec {
    /// Random utterance of roughly `duration_s` seconds; the frame count is
    /// always even so the 25 Hz and 50 Hz grids line up.
    pub fn sample(alphabet: &Alphabet, duration_s: (f64, f64), seed: u64, sample_rate: u32) -> Self {
        let mut rng = seeded(seed);
        let target_frames = (rng.random_range(duration_s.0..=duration_s.1) * 50.0).round() as usize;
        let speed: f64 = rng.random_range(0.8..1.25);
        let formant_scale: f64 = rng.random_range(0.92..1.1);
        let base_pitch: f64 = rng.random_range(95.0..220.0);
        let jitter = |f: &Formant, rng: &mut crate::rng::SeededRng| Formant {
            freq: f.freq * formant_scale * rng.random_range(0.97..1.03),
            bandwidth: f.bandwidth,
        };

        let mut segments = Vec::new();
        let lead = rng.random_range(3..=6);
        segments.push(Segment {
            symbol: PAUSE_SYMBOL,
            frames: lead,
            formants: alphabet.symbols[PAUSE_SYMBOL].formants.clone(),
            voiced: true,
        });
        let mut total = lead;
        let tail = rng.random_range(3..=6);
        while total + tail < target_frames {
            let symbol = if rng.random::<f64>() < 0.08 {
                PAUSE_SYMBOL
            } else {
                rng.random_range(1..alphabet.len())
            };
            let base: f64 = rng.random_range(4.0..10.0);
            let frames = ((base / speed).round() as usize)
                .max(2)
                .min(target_frames - tail - total);
            if frames == 0 {
                break;
            }
            let def = &alphabet.symbols[symbol];
            segments.push(Segment {
                symbol,
                frames,
                formants: def.formants.iter().map(|f| jitter(f, &mut rng)).collect(),
                voiced: def.voiced,
            });
            total += frames;
        }
        let mut tail = tail.max(target_frames.saturating_sub(total));
        if (total + tail) % 2 == 1 {
            tail += 1;
        }
        segments.push(Segment {
            symbol: PAUSE_SYMBOL,
            frames: tail,
            formants: alphabet.symbols[PAUSE_SYMBOL].formants.clone(),
            voiced: true,
        });
        total += tail;

        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        let period: f64 = rng.random_range(40.0..90.0);
        let drift: f64 = rng.random_range(-0.15..0.15);
        let pitch_contour = (0..total)
            .map(|t| {
                let x = t as f64;
                let f = base_pitch
                    * (1.0 + 0.12 * (2.0 * PI * x / period + phase).sin() + drift * x / total as f64);
                f.clamp(PITCH_RANGE.0, PITCH_RANGE.1)
            })
            .collect();
        let mut amplitude_envelope = Vec::with_capacity(total);
        for seg in &segments {
            let gain = if seg.symbol == PAUSE_SYMBOL {
                0.0
            } else if seg.voiced {
                rng.random_range(0.6..1.0)
            } else {
                rng.random_range(0.25..0.45)
            };
            amplitude_envelope.extend(std::iter::repeat_n(gain, seg.frames));
        }
        Self {
            segments,
            pitch_contour,
            amplitude_envelope,
            speed,
            seed,
            sample_rate,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.segments.iter().map(|s| s.frames).sum()
    }

    pub fn n_samples(&self) -> usize {
        self.n_frames() * self.frame_samples()
    }

    pub fn frame_samples(&self) -> usize {
        (self.sample_rate as usize) / 50
    }

    pub fn labels(&self) -> Vec<usize> {
        self.segments
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.symbol, s.frames))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_frames();
        if self.pitch_contour.len() != n || self.amplitude_envelope.len() != n {
            return config_err(format!(
                "{} frames of segments but {} pitch and {} amplitude values",
                n,
                self.pitch_contour.len(),
                self.amplitude_envelope.len()
            ));
        }
        if let Some(p) = self
            .pitch_contour
            .iter()
            .find(|p| !(PITCH_RANGE.0..=PITCH_RANGE.1).contains(*p))
        {
            return config_err(format!("pitch {p} Hz outside 80..300 Hz"));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        for seg in &self.segments {
            if seg.formants.len() != 3 {
                return config_err("every segment needs three resonances");
            }
            if let Some(f) = seg.formants.iter().find(|f| f.freq >= nyquist || f.freq <= 0.0) {
                return config_err(format!("formant {} Hz not below Nyquist {nyquist}", f.freq));
            }
        }
        Ok(())
    }
}

/// Linear interpolation of per-frame values at frame centers.
fn frame_to_sample(values: &[f64], frame_samples: usize, n: usize) -> f64 {
    let pos = (n as f64 + 0.5) / frame_samples as f64 - 0.5;
    if pos <= 0.0 {
        return values[0];
    }
    let i = pos.floor() as usize;
    if i + 1 >= values.len() {
        return values[values.len() - 1];
    }
    let frac = pos - i as f64;
    values[i] * (1.0 - frac) + values[i + 1] * frac
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub wave: Waveform,
    /// Content symbol per 20 ms frame.
    pub labels: Vec<usize>,
}

/// Glottal pulse train (or noise for unvoiced symbols) through a cascade of
/// three second-order resonators, amplitude-enveloped and peak-normalized to
/// 0.5. Resonances glide linearly over one frame at segment boundaries.
pub fn generate_utterance(spec: &UtteranceSpec) -> Result<(Waveform, Vec<usize>)> {
    spec.validate()?;
    let fs = spec.sample_rate as f64;
    let fl = spec.frame_samples();
    let n = spec.n_samples();
    let mut noise_rng = seeded(derive_seed(spec.seed, 0x5eed));

    // per-sample segment lookup
    let mut seg_of = Vec::with_capacity(n);
    let mut seg_start = Vec::with_capacity(spec.segments.len());
    for (i, seg) in spec.segments.iter().enumerate() {
        seg_start.push(seg_of.len());
        seg_of.extend(std::iter::repeat_n(i, seg.frames * fl));
    }

    let mut out = vec![0.0; n];
    let mut phase = 0.0;
    let mut glottal = 0.0;
    let mut state = [[0.0f64; 2]; 3];
    for i in 0..n {
        let s = seg_of[i];
        let seg = &spec.segments[s];
        let f0 = frame_to_sample(&spec.pitch_contour, fl, i);
        let amp = frame_to_sample(&spec.amplitude_envelope, fl, i);

        let excitation = if seg.voiced {
            phase += f0 / fs;
            let pulse = if phase >= 1.0 {
                phase -= 1.0;
                1.0
            } else {
                0.0
            };
            glottal = pulse + 0.7 * glottal;
            glottal
        } else {
            phase = 0.0;
            let g: f64 = StandardNormal.sample(&mut noise_rng);
            0.3 * g
        };

        let into = i - seg_start[s];
        let blend = if s > 0 && into < fl {
            into as f64 / fl as f64
        } else {
            1.0
        };
        let mut x = excitation;
        for (k, st) in state.iter_mut().enumerate() {
            let cur = seg.formants[k];
            let (freq, bw) = if blend < 1.0 {
                let prev = spec.segments[s - 1].formants[k];
                (
                    prev.freq + (cur.freq - prev.freq) * blend,
                    prev.bandwidth + (cur.bandwidth - prev.bandwidth) * blend,
                )
            } else {
                (cur.freq, cur.bandwidth)
            };
            let r = (-PI * bw / fs).exp();
            let theta = 2.0 * PI * freq / fs;
            let a1 = 2.0 * r * theta.cos();
            let a2 = -r * r;
            let b0 = (1.0 - r) * (1.0 - 2.0 * r * (2.0 * theta).cos() + r * r).sqrt();
            let y = b0 * x + a1 * st[0] + a2 * st[1];
            st[1] = st[0];
            st[0] = y;
            x = y;
        }
        out[i] = x * amp;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    Ok((Waveform::mono(out, spec.sample_rate)?, spec.labels()))
}
