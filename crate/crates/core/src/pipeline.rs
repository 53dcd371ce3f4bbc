//! Stage-level building blocks shared by the CLI and the acceptance suite:
//! corpus synthesis, task corruption, enhancer example assembly, inference
//! and scoring.

use serde::{Deserialize, Serialize};

use crate::corpus::{generate_noise, generate_utterance, Alphabet, NoiseKind, Utterance, UtteranceSpec};
use crate::corruption::{corrupt, CorruptionKind, CorruptionRecord, CorruptionSpec, SnrLevel};
use crate::error::{config_err, input_err, Result};
use crate::io::manifest::Split;
use crate::metrics::{estoi, mcd, si_snr, sync_offset, unit_error_rate, EvalRow};
use crate::model::{audio_features, visual_surrogate, Checkpoint, Example, VisualEmbedding};
use crate::rng::{derive_seed, seeded, tag_of};
use crate::signal::Waveform;
use crate::tokenizer::{
    concat_features, kmeans_fit, quantize, tokenize, unit_features, Codebook, KMeansFit, UnitSequence,
};
use crate::vocoder::{build_prototypes, vocode, vocoder_features, PrototypeTable, VocoderConfig};
use rand::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub alphabet_size: usize,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 500,
            n_valid: 50,
            n_test: 50,
            min_duration_s: 2.0,
            max_duration_s: 4.0,
            alphabet_size: 24,
            sample_rate: 16_000,
            seed: 0,
        }
    }
}

pub struct Corpus {
    pub alphabet: Alphabet,
    pub utterances: Vec<Utterance>,
    pub splits: Vec<Split>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Utterance> {
        self.utterances
            .iter()
            .zip(&self.splits)
            .filter(move |(_, s)| **s == split)
            .map(|(u, _)| u)
    }
}

pub fn utterance_id(i: usize) -> String {
    format!("utt{i:05}")
}

/// The pseudo-phone inventory a corpus config draws from.
pub fn corpus_alphabet(cfg: &CorpusConfig) -> Result<Alphabet> {
    Alphabet::generate(cfg.alphabet_size, derive_seed(cfg.seed, tag_of("alphabet")))
}

/// Synthesize the corpus; split membership is a seeded shuffle.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    if !(cfg.min_duration_s > 0.0 && cfg.min_duration_s <= cfg.max_duration_s) {
        return config_err("corpus durations must satisfy 0 < min <= max");
    }
    let alphabet = corpus_alphabet(cfg)?;
    let n = cfg.n_train + cfg.n_valid + cfg.n_test;
    if n == 0 {
        return config_err("corpus is empty");
    }
    let utt_base = derive_seed(cfg.seed, tag_of("utterance"));
    let utterances = (0..n)
        .map(|i| {
            let spec = UtteranceSpec::sample(
                &alphabet,
                (cfg.min_duration_s, cfg.max_duration_s),
                derive_seed(utt_base, i as u64),
                cfg.sample_rate,
            );
            let (wave, labels) = generate_utterance(&spec)?;
            Ok(Utterance {
                id: utterance_id(i),
                wave,
                labels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(&mut order[..], &mut seeded(derive_seed(cfg.seed, tag_of("splits"))));
    let mut splits = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < cfg.n_train {
            Split::Train
        } else if rank < cfg.n_train + cfg.n_valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
    Ok(Corpus {
        alphabet,
        utterances,
        splits,
    })
}

/// A corruption setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case")]
pub enum Task {
    Clean,
    Denoise { level: SnrLevel },
    Separate { level: SnrLevel },
    Inpaint { drop_prob: f64, span_frames: usize },
    Silence,
}

impl Task {
    pub fn name(&self) -> String {
        match self {
            Task::Clean => "clean".into(),
            Task::Denoise { level } => format!("denoise-{}", level.name()),
            Task::Separate { level } => format!("separate-{}", level.name()),
            Task::Inpaint {
                drop_prob,
                span_frames,
            } => format!("inpaint-p{:02}-s{span_frames}", (drop_prob * 100.0).round() as u32),
            Task::Silence => "silence".into(),
        }
    }

    /// Inverse of `name`.
    pub fn parse(s: &str) -> Option<Task> {
        if s == "clean" {
            return Some(Task::Clean);
        }
        if s == "silence" {
            return Some(Task::Silence);
        }
        if let Some(l) = s.strip_prefix("denoise-") {
            return SnrLevel::parse(l).map(|level| Task::Denoise { level });
        }
        if let Some(l) = s.strip_prefix("separate-") {
            return SnrLevel::parse(l).map(|level| Task::Separate { level });
        }
        let rest = s.strip_prefix("inpaint-p")?;
        let (p, span) = rest.split_once("-s")?;
        Some(Task::Inpaint {
            drop_prob: p.parse::<u32>().ok()? as f64 / 100.0,
            span_frames: span.parse().ok()?,
        })
    }

    pub fn spec(&self, seed: u64) -> Option<CorruptionSpec> {
        match *self {
            Task::Clean => None,
            Task::Denoise { level } => Some(CorruptionSpec::denoise(level.range_db(), seed)),
            Task::Separate { level } => Some(CorruptionSpec::separate(level.range_db(), seed)),
            Task::Inpaint {
                drop_prob,
                span_frames,
            } => Some(CorruptionSpec::inpaint(span_frames, drop_prob, seed)),
            Task::Silence => Some(CorruptionSpec::silence(seed)),
        }
    }
}

/// Corrupt one utterance. Separation uses `partner` as the interfering
/// talker; denoising draws white, pink or babble noise from the seed.
pub fn corrupt_for_task(
    task: Task,
    clean: &Waveform,
    partner: Option<&Waveform>,
    alphabet: &Alphabet,
    seed: u64,
) -> Result<Option<CorruptionRecord>> {
    let Some(spec) = task.spec(seed) else {
        return Ok(None);
    };
    let rec = match spec.kind {
        CorruptionKind::Denoise => {
            let kind = NoiseKind::ALL[(derive_seed(seed, tag_of("noise-kind")) % 3) as usize];
            let noise = generate_noise(
                kind,
                clean.len(),
                clean.sample_rate(),
                derive_seed(seed, tag_of("noise")),
                alphabet,
            )?;
            corrupt(clean, &spec, Some(&noise))?
        }
        CorruptionKind::Separate => {
            let Some(p) = partner else {
                return input_err("separation needs an interfering utterance");
            };
            corrupt(clean, &spec, Some(p))?
        }
        _ => corrupt(clean, &spec, None)?,
    };
    Ok(Some(rec))
}

/// Enhancer inputs for a (possibly corrupted) waveform and the clean
/// utterance's content labels.
pub fn model_inputs(
    corrupted: &Waveform,
    labels: &[usize],
    embedding: &VisualEmbedding,
    informativeness: f64,
    seed: u64,
) -> Result<(ndarray::Array2<f64>, ndarray::Array2<f64>)> {
    let audio = audio_features(corrupted)?.data;
    let visual = visual_surrogate(labels, embedding, informativeness, seed)?.stream.data;
    let t = audio.nrows().min(visual.nrows());
    Ok((
        audio.slice(ndarray::s![..t, ..]).to_owned(),
        visual.slice(ndarray::s![..t, ..]).to_owned(),
    ))
}

pub fn build_example(
    id: &str,
    corrupted: &Waveform,
    labels: &[usize],
    target: &UnitSequence,
    embedding: &VisualEmbedding,
    informativeness: f64,
    seed: u64,
) -> Result<Example> {
    let (audio, visual) = model_inputs(corrupted, labels, embedding, informativeness, seed)?;
    let t = audio.nrows().min(target.len() / 2);
    Ok(Example {
        id: id.to_string(),
        audio: audio.slice(ndarray::s![..t, ..]).to_owned(),
        visual: visual.slice(ndarray::s![..t, ..]).to_owned(),
        target: target.units[..2 * t].to_vec(),
    })
}

/// Predicted units for a corrupted utterance.
pub fn enhance_units(
    model: &Checkpoint,
    corrupted: &Waveform,
    labels: &[usize],
    embedding: &VisualEmbedding,
    informativeness: f64,
    seed: u64,
) -> Result<UnitSequence> {
    let (audio, visual) = model_inputs(corrupted, labels, embedding, informativeness, seed)?;
    Ok(UnitSequence::new(model.predict(&audio, &visual)?))
}

/// Units of the input, decoded back to audio.
pub fn resynthesize(wave: &Waveform, codebook: &Codebook, table: &PrototypeTable, voc: &VocoderConfig) -> Result<Waveform> {
    let units = tokenize(wave, codebook)?;
    Ok(vocode(&units, table, voc, wave.sample_rate())?.fit_to_len(wave.len()))
}

pub const SYNC_MAX_LAG_MS: f64 = 200.0;

/// Score `degraded` against `reference`. Content error compares the
/// reference units with the tokenizer's transcript of `degraded` and is left
/// empty without a codebook.
pub fn score(
    id: &str,
    method: &str,
    split: &str,
    reference: &Waveform,
    degraded: &Waveform,
    content: Option<(&UnitSequence, &Codebook)>,
) -> Result<EvalRow> {
    let degraded = degraded.fit_to_len(reference.len());
    let uer = match content {
        Some((units, codebook)) => Some(unit_error_rate(units, &tokenize(&degraded, codebook)?)?),
        None => None,
    };
    let sync = sync_offset(reference, &degraded, SYNC_MAX_LAG_MS).ok();
    Ok(EvalRow {
        id: id.to_string(),
        method: method.to_string(),
        split: split.to_string(),
        estoi: estoi(reference, &degraded).ok(),
        mcd_db: Some(mcd(reference, &degraded)?),
        si_snr_db: si_snr(reference, &degraded).ok(),
        uer,
        sync_offset_ms: sync.map(|s| s.0),
        sync_confidence: sync.map(|s| s.1),
    })
}

/// Majority vote over a window of `2·radius + 1` units. The centre unit
/// wins ties it takes part in; other ties go to the smallest id.
pub fn mode_filter(units: &UnitSequence, radius: usize) -> UnitSequence {
    let u = &units.units;
    let n = u.len();
    let out = (0..n)
        .map(|t| {
            let lo = t.saturating_sub(radius);
            let hi = (t + radius + 1).min(n);
            let mut counts = std::collections::BTreeMap::new();
            for &x in &u[lo..hi] {
                *counts.entry(x).or_insert(0usize) += 1;
            }
            let top = *counts.values().max().unwrap();
            if counts[&u[t]] == top {
                u[t]
            } else {
                *counts.iter().find(|(_, c)| **c == top).unwrap().0
            }
        })
        .collect();
    UnitSequence {
        units: out,
        frame_rate_mhz: units.frame_rate_mhz,
    }
}

/// Seed for one (utterance, purpose) pair, independent of processing order.
pub fn item_seed(base: u64, id: &str, purpose: &str) -> u64 {
    derive_seed(base, tag_of(&format!("{id}/{purpose}")))
}

/// Training-mix entry to a concrete task. `denoise` and `separate` draw a
/// level, `inpaint` a drop rate in {0.3, 0.4, 0.5} and a span in
/// {20, 30, 40} frames; anything else must be a full task name.
pub fn draw_train_task(name: &str, seed: u64) -> Result<Task> {
    let mut rng = seeded(seed);
    let task = match name {
        "denoise" => Task::Denoise {
            level: SnrLevel::ALL[rng.random_range(0..4)],
        },
        "separate" => Task::Separate {
            level: SnrLevel::ALL[rng.random_range(0..4)],
        },
        "inpaint" => Task::Inpaint {
            drop_prob: [0.3, 0.4, 0.5][rng.random_range(0..3)],
            span_frames: [20, 30, 40][rng.random_range(0..3)],
        },
        other => match Task::parse(other) {
            Some(t) => t,
            None => return config_err(format!("unknown training task '{other}'")),
        },
    };
    Ok(task)
}

/// Interfering talker for utterance `i` of a split: the next one, wrapping.
pub fn partner_index(i: usize, n: usize) -> usize {
    (i + 1) % n
}

/// Corrupt `utts[i]` for `task`, with the partner drawn from the same list.
/// `None` for the clean task.
pub fn corrupt_in_split(
    utts: &[&Utterance],
    i: usize,
    task: Task,
    alphabet: &Alphabet,
    seed: u64,
) -> Result<Option<CorruptionRecord>> {
    let u = utts[i];
    let partner = &utts[partner_index(i, utts.len())].wave;
    corrupt_for_task(task, &u.wave, Some(partner), alphabet, item_seed(seed, &u.id, &task.name()))
}

/// The corrupted waveform, or the clean one when nothing was applied.
pub fn corrupted_or_clean(rec: Option<CorruptionRecord>, clean: &Waveform) -> Waveform {
    rec.map(|r| r.corrupted).unwrap_or_else(|| clean.clone())
}

/// Codebook fit on the training utterances plus the vocoder's mel
/// prototypes for it.
pub fn fit_unit_stack(train: &[&Utterance], k: usize, max_iters: usize, seed: u64) -> Result<(KMeansFit, PrototypeTable)> {
    let feats = train.iter().map(|u| unit_features(&u.wave)).collect::<Result<Vec<_>>>()?;
    let fit = kmeans_fit(&concat_features(&feats)?, k, max_iters, seed)?;
    let pairs = train
        .iter()
        .zip(&feats)
        .map(|(u, f)| Ok((quantize(f, &fit.codebook)?, vocoder_features(&u.wave)?)))
        .collect::<Result<Vec<_>>>()?;
    let table = build_prototypes(k, &pairs)?;
    Ok((fit, table))
}

/// One example per (utterance, training-mix entry).
pub fn training_examples(
    utts: &[&Utterance],
    units: &[&UnitSequence],
    tasks: &[String],
    alphabet: &Alphabet,
    embedding: &VisualEmbedding,
    informativeness: f64,
    seed: u64,
) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(utts.len() * tasks.len());
    for (i, u) in utts.iter().enumerate() {
        for name in tasks {
            let s = item_seed(seed, &u.id, &format!("train/{name}"));
            let task = draw_train_task(name, s)?;
            let corrupted = corrupted_or_clean(corrupt_in_split(utts, i, task, alphabet, s)?, &u.wave);
            out.push(build_example(&u.id, &corrupted, &u.labels, units[i], embedding, informativeness, s)?);
        }
    }
    Ok(out)
}

/// Everything needed to turn a corrupted waveform into enhanced audio.
pub struct Enhancer<'a> {
    pub model: &'a Checkpoint,
    pub embedding: &'a VisualEmbedding,
    pub informativeness: f64,
    pub filter_radius: usize,
    pub table: &'a PrototypeTable,
    pub vocoder: &'a VocoderConfig,
}

impl Enhancer<'_> {
    /// Filtered unit prediction and its resynthesis, trimmed to the input.
    pub fn run(&self, corrupted: &Waveform, labels: &[usize], seed: u64) -> Result<(UnitSequence, Waveform)> {
        let raw = enhance_units(self.model, corrupted, labels, self.embedding, self.informativeness, seed)?;
        let units = mode_filter(&raw, self.filter_radius);
        let wave = vocode(&units, self.table, self.vocoder, corrupted.sample_rate())?.fit_to_len(corrupted.len());
        Ok((units, wave))
    }
}

pub const METHODS: [&str; 4] = ["input", "resynthesis", "enhanced", "silence"];

/// Rows for every method on one corrupted utterance. `enhanced` is skipped
/// when absent.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_methods(
    id: &str,
    task: &str,
    clean: &Waveform,
    corrupted: &Waveform,
    enhanced: Option<&Waveform>,
    clean_units: &UnitSequence,
    codebook: &Codebook,
    table: &PrototypeTable,
    vocoder: &VocoderConfig,
) -> Result<Vec<EvalRow>> {
    let resyn = resynthesize(corrupted, codebook, table, vocoder)?;
    let silent = Waveform::zeros(clean.len(), clean.sample_rate());
    let content = Some((clean_units, codebook));
    let mut rows = vec![
        score(id, "input", task, clean, corrupted, content)?,
        score(id, "resynthesis", task, clean, &resyn, content)?,
    ];
    if let Some(e) = enhanced {
        rows.push(score(id, "enhanced", task, clean, e, content)?);
    }
    rows.push(score(id, "silence", task, clean, &silent, content)?);
    Ok(rows)
}
