//! Run configuration: one JSON document with a section per stage.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{config_err, Result};
use crate::io::wav::WavFormat;
use crate::model::TrainConfig;
use crate::pipeline::{CorpusConfig, Task};
use crate::vocoder::VocoderConfig;

pub const SEED_ENV: &str = "GSE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    /// Settings scored by `evaluate` and `report`.
    pub eval_tasks: Vec<String>,
    /// Settings mixed into the enhancer's training data. Each training
    /// utterance gets one variant per entry; `denoise`, `separate` and
    /// `inpaint` pick a level, drop rate and span at random.
    pub train_tasks: Vec<String>,
    pub seed: u64,
    pub wav_format: WavFormat,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            eval_tasks: vec![
                "inpaint-p50-s20".into(),
                "denoise-lvl4".into(),
                "separate-lvl4".into(),
            ],
            train_tasks: vec![
                "clean".into(),
                "denoise".into(),
                "separate".into(),
                "inpaint".into(),
            ],
            seed: 0,
            wav_format: WavFormat::Float32,
        }
    }
}

impl CorruptionConfig {
    pub fn parsed_eval_tasks(&self) -> Result<Vec<Task>> {
        self.eval_tasks
            .iter()
            .map(|t| match Task::parse(t) {
                Some(task) => Ok(task),
                None => config_err(format!("unknown task '{t}'")),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            k: crate::tokenizer::DEFAULT_CODEBOOK_SIZE,
            max_iters: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub train: TrainConfig,
    /// Share of visual frames that survive; 0 gives an audio-only model.
    pub informativeness: f64,
    pub visual_dim: usize,
    pub visual_seed: u64,
    /// Radius of the majority filter applied to predicted units.
    pub filter_radius: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            informativeness: 1.0,
            visual_dim: crate::model::VISUAL_DIM,
            visual_seed: 0,
            filter_radius: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub corruption: CorruptionConfig,
    pub tokenizer: TokenizerConfig,
    pub model: ModelConfig,
    pub vocoder: VocoderConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        super::read_json(path)
    }

    /// Every seed in the document set to `seed`.
    pub fn set_all_seeds(&mut self, seed: u64) {
        self.corpus.seed = seed;
        self.corruption.seed = seed;
        self.tokenizer.seed = seed;
        self.model.train.seed = seed;
        self.model.visual_seed = seed;
        self.vocoder.seed = seed;
    }

    /// Apply `GSE_SEED` when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            match v.trim().parse::<u64>() {
                Ok(seed) => self.set_all_seeds(seed),
                Err(_) => return config_err(format!("{SEED_ENV}='{v}' is not an unsigned integer")),
            }
        }
        Ok(())
    }

    /// `section.key=value` with a JSON value (bare words are taken as
    /// strings). Unknown keys are rejected.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let Some((path, raw)) = assignment.split_once('=') else {
            return config_err(format!("override '{assignment}' is not key=value"));
        };
        let value: Value =
            serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut doc = serde_json::to_value(&*self)?;
        let mut node = &mut doc;
        let keys: Vec<&str> = path.split('.').collect();
        for (i, key) in keys.iter().enumerate() {
            let Some(obj) = node.as_object_mut() else {
                return config_err(format!("'{path}' descends into a non-section"));
            };
            if !obj.contains_key(*key) {
                return config_err(format!("unknown config key '{path}'"));
            }
            if i + 1 == keys.len() {
                obj.insert(key.to_string(), value.clone());
                break;
            }
            node = obj.get_mut(*key).unwrap();
        }
        *self = serde_json::from_value(doc)
            .map_err(|e| crate::GseError::Config(format!("override '{assignment}': {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.train.validate()?;
        self.corruption.parsed_eval_tasks()?;
        if self.tokenizer.k == 0 {
            return config_err("tokenizer.k must be positive");
        }
        if !(0.0..=1.0).contains(&self.model.informativeness) {
            return config_err("model.informativeness must lie in [0, 1]");
        }
        Ok(())
    }
}
