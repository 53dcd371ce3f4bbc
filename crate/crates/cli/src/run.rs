//! Run directory layout and config resolution.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gse_core::corpus::Utterance;
use gse_core::io::config::{RunConfig, SEED_ENV};
use gse_core::io::manifest::{Manifest, ManifestRecord, Split};
use gse_core::io::wav::read_wav;
use gse_core::io::{read_string, write_json};
use gse_core::tokenizer::{read_unit_file, write_unit_file, UnitSequence};

pub const RESOLVED_CONFIG: &str = "config.resolved.json";

pub struct Run {
    pub dir: PathBuf,
    pub cfg: RunConfig,
}

impl Run {
    /// Resolve the config for `dir`. The first command run against a
    /// directory writes the snapshot; later ones must resolve to the same
    /// document or are refused.
    pub fn open(dir: &Path, config: Option<&Path>, sets: &[String]) -> Result<Run> {
        let snapshot = dir.join(RESOLVED_CONFIG);
        let existing = if snapshot.exists() {
            Some(RunConfig::load(&snapshot).with_context(|| format!("reading {}", snapshot.display()))?)
        } else {
            None
        };
        let mut cfg = match (config, &existing) {
            (Some(p), _) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            (None, Some(c)) => c.clone(),
            (None, None) => RunConfig::default(),
        };
        cfg.apply_env()?;
        for s in sets {
            cfg.apply_override(s)?;
        }
        cfg.validate()?;
        match existing {
            Some(prev) if prev != cfg => bail!(
                "{} already holds a different resolved config; use a fresh run directory \
                 (check --config, --set and {SEED_ENV})",
                dir.display()
            ),
            Some(_) => {}
            None => write_json(&snapshot, &cfg)?,
        }
        Ok(Run {
            dir: dir.to_path_buf(),
            cfg,
        })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn corpus_manifest(&self) -> PathBuf {
        self.path("corpus/manifest.jsonl")
    }

    pub fn codebook_path(&self) -> PathBuf {
        self.path("units/codebook.json")
    }

    pub fn prototypes_path(&self) -> PathBuf {
        self.path("units/prototypes.json")
    }

    pub fn model_path(&self) -> PathBuf {
        self.path("model/model.json")
    }

    pub fn task_dir(&self, stage: &str, task: &str) -> PathBuf {
        self.path(stage).join(task)
    }

    pub fn load_corpus(&self) -> Result<LoadedCorpus> {
        let path = self.corpus_manifest();
        if !path.exists() {
            bail!("{} not found; run gen-corpus first", path.display());
        }
        LoadedCorpus::load(&path)
    }
}

pub fn labels_to_line(labels: &[usize]) -> String {
    let mut s = labels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" ");
    s.push('\n');
    s
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    read_string(path)?
        .split_whitespace()
        .map(|t| t.parse::<usize>().with_context(|| format!("{}: bad label '{t}'", path.display())))
        .collect()
}

pub fn write_units(path: &Path, units: &UnitSequence) -> Result<()> {
    Ok(write_unit_file(path, std::slice::from_ref(units))?)
}

pub fn read_units(path: &Path) -> Result<UnitSequence> {
    match read_unit_file(path)?.into_iter().next() {
        Some(u) => Ok(u),
        None => bail!("{} holds no unit sequence", path.display()),
    }
}

/// Clean utterances with their labels, in manifest order.
pub struct LoadedCorpus {
    pub manifest: Manifest,
    pub utterances: Vec<Utterance>,
}

impl LoadedCorpus {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest = Manifest::load(path)?;
        let utterances = manifest
            .records
            .iter()
            .map(|r| load_utterance(&manifest, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, utterances })
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.utterances.len())
            .filter(|&i| self.manifest.records[i].split == split)
            .collect()
    }

    pub fn select(&self, idx: &[usize]) -> Vec<&Utterance> {
        idx.iter().map(|&i| &self.utterances[i]).collect()
    }

    /// Reference units per utterance; fails if `tokenize quantize` has not run.
    pub fn units(&self) -> Result<Vec<UnitSequence>> {
        self.manifest
            .records
            .iter()
            .map(|r| match &r.units_path {
                Some(p) => read_units(&self.manifest.resolve(p)),
                None => bail!("no units for '{}'; run tokenize quantize first", r.id),
            })
            .collect()
    }
}

fn load_utterance(manifest: &Manifest, r: &ManifestRecord) -> Result<Utterance> {
    let wave = read_wav(&manifest.resolve(&r.clean_path))?;
    let labels = match &r.labels_path {
        Some(p) => read_labels(&manifest.resolve(p))?,
        None => bail!("record '{}' has no labels", r.id),
    };
    Ok(Utterance {
        id: r.id.clone(),
        wave,
        labels,
    })
}
