//! One function per subcommand, all driven by a resolved run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gse_core::beamformer::{beamform, design_mvdr, planar_direction, ArrayGeometry};
use gse_core::corpus::simulate_capture;
use gse_core::corruption::{CorruptionSidecar, SnrLevel};
use gse_core::io::manifest::{Manifest, ManifestRecord, Split};
use gse_core::io::wav::{read_wav, write_wav};
use gse_core::io::{write_json, write_string};
use gse_core::metrics::{EvalReport, EvalRow};
use gse_core::model::{log_to_csv, train, Checkpoint, VisualEmbedding};
use gse_core::pipeline::{
    corpus_alphabet, corrupt_in_split, corrupted_or_clean, evaluate_methods, fit_unit_stack, generate_corpus,
    item_seed, score, training_examples, Enhancer, Task, METHODS,
};
use gse_core::rng::derive_seed;
use gse_core::tokenizer::{tokenize, Codebook};
use gse_core::vocoder::PrototypeTable;

use crate::run::{labels_to_line, read_labels, read_units, write_units, Run};

fn note(msg: impl AsRef<str>) {
    eprintln!("[gse] {}", msg.as_ref());
}

/// Path of `target` relative to the directory `base`, both under the run.
fn relative(base: &Path, target: &Path) -> PathBuf {
    let b: Vec<_> = base.components().collect();
    let t: Vec<_> = target.components().collect();
    let common = b.iter().zip(&t).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &t[common..] {
        out.push(c);
    }
    out
}

/// `base.join(rel)` with `dir/..` pairs folded away.
fn join_folded(base: &Path, rel: &Path) -> PathBuf {
    let joined = base.join(rel);
    let mut parts: Vec<std::path::Component> = Vec::new();
    for c in joined.components() {
        match (c, parts.last()) {
            (std::path::Component::ParentDir, Some(std::path::Component::Normal(_))) => {
                parts.pop();
            }
            _ => parts.push(c),
        }
    }
    parts.iter().collect()
}

pub fn gen_corpus(run: &Run) -> Result<()> {
    let corpus = generate_corpus(&run.cfg.corpus)?;
    let fmt = run.cfg.corruption.wav_format;
    let dir = run.path("corpus");
    let mut records = Vec::with_capacity(corpus.utterances.len());
    for (u, split) in corpus.utterances.iter().zip(&corpus.splits) {
        let wav = PathBuf::from("wav").join(format!("{}.wav", u.id));
        let labels = PathBuf::from("labels").join(format!("{}.txt", u.id));
        write_wav(&dir.join(&wav), &u.wave, fmt)?;
        write_string(&dir.join(&labels), &labels_to_line(&u.labels))?;
        records.push(ManifestRecord {
            id: u.id.clone(),
            clean_path: wav,
            corrupted_path: None,
            sidecar_path: None,
            units_path: None,
            labels_path: Some(labels),
            split: *split,
        });
    }
    Manifest::new(records, &dir)?.save(&run.corpus_manifest())?;
    let total: f64 = corpus.utterances.iter().map(|u| u.wave.duration_secs()).sum();
    note(format!("wrote {} utterances ({total:.1} s) to {}", corpus.utterances.len(), dir.display()));
    Ok(())
}

/// Task from CLI flags: a full name, or a kind plus `--level`/`--drop`/`--span`.
pub fn task_from_flags(task: &str, level: Option<&str>, drop: Option<f64>, span: Option<usize>) -> Result<Task> {
    let level = || -> Result<SnrLevel> {
        let l = level.unwrap_or("lvl4");
        SnrLevel::parse(l).with_context(|| format!("unknown level '{l}' (lvl1..lvl4)"))
    };
    let t = match task {
        "denoise" => Task::Denoise { level: level()? },
        "separate" => Task::Separate { level: level()? },
        "inpaint" => Task::Inpaint {
            drop_prob: drop.unwrap_or(0.5),
            span_frames: span.unwrap_or(20),
        },
        other => match Task::parse(other) {
            Some(t) => t,
            None => bail!("unknown task '{other}'"),
        },
    };
    if let Some(s) = t.spec(0) {
        s.validate()?;
    }
    Ok(t)
}

pub fn corrupt(run: &Run, tasks: &[Task], split: Split) -> Result<()> {
    let corpus = run.load_corpus()?;
    let alphabet = corpus_alphabet(&run.cfg.corpus)?;
    let idx = corpus.indices(split);
    if idx.is_empty() {
        bail!("split '{}' is empty", split.name());
    }
    let utts = corpus.select(&idx);
    let fmt = run.cfg.corruption.wav_format;
    for task in tasks {
        let name = task.name();
        let dir = run.task_dir("corrupted", &name);
        let mut records = Vec::with_capacity(utts.len());
        let (mut dropped, mut snr, mut n_snr) = (0.0, 0.0, 0usize);
        for (i, u) in utts.iter().enumerate() {
            let rec = corrupt_in_split(&utts, i, *task, &alphabet, run.cfg.corruption.seed)?;
            let wav = PathBuf::from("wav").join(format!("{}.wav", u.id));
            let sidecar = match &rec {
                Some(r) => {
                    dropped += r.dropped_fraction();
                    if let Some(s) = r.realized_snr_db {
                        snr += s;
                        n_snr += 1;
                    }
                    let p = PathBuf::from("sidecar").join(format!("{}.json", u.id));
                    write_json(&dir.join(&p), &CorruptionSidecar::from_record(r))?;
                    Some(p)
                }
                None => None,
            };
            write_wav(&dir.join(&wav), &corrupted_or_clean(rec, &u.wave), fmt)?;
            let src = &corpus.manifest.records[idx[i]];
            let back = relative(&dir, &corpus.manifest.root);
            records.push(ManifestRecord {
                id: u.id.clone(),
                clean_path: join_folded(&back, &src.clean_path),
                corrupted_path: Some(wav),
                sidecar_path: sidecar,
                units_path: src.units_path.as_ref().map(|p| join_folded(&back, p)),
                labels_path: src.labels_path.as_ref().map(|p| join_folded(&back, p)),
                split,
            });
        }
        Manifest::new(records, &dir)?.save(&dir.join("manifest.jsonl"))?;
        let n = utts.len() as f64;
        let mut msg = format!("{name}: {} utterances", utts.len());
        if matches!(task, Task::Inpaint { .. }) {
            msg += &format!(", dropped fraction {:.3}", dropped / n);
        }
        if n_snr > 0 {
            msg += &format!(", mean SNR {:.2} dB", snr / n_snr as f64);
        }
        note(msg);
    }
    Ok(())
}

pub fn eval_tasks(run: &Run, task: Option<Task>) -> Result<Vec<Task>> {
    Ok(match task {
        Some(t) => vec![t],
        None => run.cfg.corruption.parsed_eval_tasks()?,
    })
}

pub fn tokenize_fit(run: &Run) -> Result<()> {
    let corpus = run.load_corpus()?;
    let train = corpus.select(&corpus.indices(Split::Train));
    if train.is_empty() {
        bail!("no training utterances");
    }
    let t = &run.cfg.tokenizer;
    let (fit, table) = fit_unit_stack(&train, t.k, t.max_iters, t.seed)?;
    fit.codebook.save(&run.codebook_path())?;
    table.save(&run.prototypes_path())?;
    note(format!(
        "k-means: {} units, {} assignment passes, inertia {:.4e} -> {:.4e}",
        t.k,
        fit.inertia_history.len(),
        fit.inertia_history.first().copied().unwrap_or(0.0),
        fit.inertia_history.last().copied().unwrap_or(0.0)
    ));
    Ok(())
}

pub fn tokenize_quantize(run: &Run) -> Result<()> {
    let codebook = Codebook::load(&run.codebook_path()).context("run tokenize fit first")?;
    let mut corpus = run.load_corpus()?;
    let dir = run.path("units");
    let back = relative(&corpus.manifest.root, &dir);
    for (u, r) in corpus.utterances.iter().zip(corpus.manifest.records.iter_mut()) {
        let units = tokenize(&u.wave, &codebook)?;
        write_units(&dir.join(format!("{}.txt", u.id)), &units)?;
        r.units_path = Some(back.join(format!("{}.txt", u.id)));
    }
    corpus.manifest.save(&run.corpus_manifest())?;
    note(format!("quantized {} utterances", corpus.utterances.len()));
    Ok(())
}

pub fn quantize_file(codebook: &Path, input: &Path, output: &Path) -> Result<()> {
    let codebook = Codebook::load(codebook)?;
    let units = tokenize(&read_wav(input)?, &codebook)?;
    write_units(output, &units)
}

fn embedding(run: &Run) -> Result<VisualEmbedding> {
    let alphabet = corpus_alphabet(&run.cfg.corpus)?;
    Ok(VisualEmbedding::generate(alphabet.len(), run.cfg.model.visual_dim, run.cfg.model.visual_seed))
}

pub fn train_model(run: &Run) -> Result<()> {
    let corpus = run.load_corpus()?;
    let units = corpus.units()?;
    let alphabet = corpus_alphabet(&run.cfg.corpus)?;
    let emb = embedding(run)?;
    let m = &run.cfg.model;
    let tasks = &run.cfg.corruption.train_tasks;
    let build = |split: Split, seed: u64| {
        let idx = corpus.indices(split);
        let u: Vec<_> = idx.iter().map(|&i| &units[i]).collect();
        training_examples(&corpus.select(&idx), &u, tasks, &alphabet, &emb, m.informativeness, seed)
    };
    let train_set = build(Split::Train, run.cfg.corruption.seed)?;
    let heldout = build(Split::Valid, derive_seed(run.cfg.corruption.seed, 1))?;
    note(format!("training on {} examples, {} held out", train_set.len(), heldout.len()));
    let vocab = run.cfg.tokenizer.k;
    let out = train(&m.train, vocab, &train_set, &heldout)?;
    out.best.save(&run.model_path())?;
    out.last.save(&run.path("model/last.json"))?;
    write_string(&run.path("model/train_log.csv"), &log_to_csv(&out.log)?)?;
    let accs: Vec<f64> = out.log.iter().filter_map(|r| r.heldout_unit_acc).collect();
    let best = accs.iter().copied().fold(f64::NAN, f64::max);
    note(format!(
        "loss {:.3} -> {:.3}, best held-out unit accuracy {best:.3}",
        out.log.first().map(|r| r.loss).unwrap_or(f64::NAN),
        out.log.last().map(|r| r.loss).unwrap_or(f64::NAN)
    ));
    Ok(())
}

struct Assets {
    codebook: Codebook,
    table: PrototypeTable,
}

fn assets(run: &Run) -> Result<Assets> {
    Ok(Assets {
        codebook: Codebook::load(&run.codebook_path()).context("run tokenize fit first")?,
        table: PrototypeTable::load(&run.prototypes_path()).context("run tokenize fit first")?,
    })
}

fn task_manifest(run: &Run, task: &Task) -> Result<Manifest> {
    let p = run.task_dir("corrupted", &task.name()).join("manifest.jsonl");
    if !p.exists() {
        bail!("{} not found; run corrupt first", p.display());
    }
    Ok(Manifest::load(&p)?)
}

pub fn enhance(run: &Run, tasks: &[Task]) -> Result<()> {
    let a = assets(run)?;
    let model = Checkpoint::load(&run.model_path()).context("run train first")?;
    let emb = embedding(run)?;
    let enhancer = Enhancer {
        model: &model,
        embedding: &emb,
        informativeness: run.cfg.model.informativeness,
        filter_radius: run.cfg.model.filter_radius,
        table: &a.table,
        vocoder: &run.cfg.vocoder,
    };
    for task in tasks {
        let name = task.name();
        let m = task_manifest(run, task)?;
        let dir = run.task_dir("enhanced", &name);
        for r in &m.records {
            let Some(cp) = &r.corrupted_path else {
                bail!("record '{}' has no corrupted audio", r.id);
            };
            let Some(lp) = &r.labels_path else {
                bail!("record '{}' has no labels", r.id);
            };
            let corrupted = read_wav(&m.resolve(cp))?;
            let labels = read_labels(&m.resolve(lp))?;
            let seed = item_seed(run.cfg.model.visual_seed, &r.id, &format!("enhance/{name}"));
            let (units, wave) = enhancer.run(&corrupted, &labels, seed)?;
            write_wav(&dir.join("wav").join(format!("{}.wav", r.id)), &wave, run.cfg.corruption.wav_format)?;
            write_units(&dir.join("units").join(format!("{}.txt", r.id)), &units)?;
        }
        note(format!("{name}: enhanced {} utterances", m.records.len()));
    }
    Ok(())
}

pub fn evaluate_run(run: &Run, tasks: &[Task]) -> Result<EvalReport> {
    let a = assets(run)?;
    let mut report = EvalReport::default();
    for task in tasks {
        let name = task.name();
        let m = task_manifest(run, task)?;
        let enh_dir = run.task_dir("enhanced", &name).join("wav");
        for r in &m.records {
            let clean = read_wav(&m.resolve(&r.clean_path))?;
            let corrupted = read_wav(&m.resolve(r.corrupted_path.as_ref().context("no corrupted audio")?))?;
            let units = read_units(&m.resolve(r.units_path.as_ref().context("no units; run tokenize quantize")?))?;
            let ep = enh_dir.join(format!("{}.wav", r.id));
            let enhanced = if ep.exists() { Some(read_wav(&ep)?) } else { None };
            let rows = evaluate_methods(
                &r.id,
                &name,
                &clean,
                &corrupted,
                enhanced.as_ref(),
                &units,
                &a.codebook,
                &a.table,
                &run.cfg.vocoder,
            )?;
            report.extend(EvalReport { rows });
        }
        note(format!("{name}: scored {} utterances", m.records.len()));
    }
    report.write(&run.path("eval"), "metrics")?;
    Ok(report)
}

/// Metrics for a single pair; UER needs a codebook.
pub fn evaluate_pair(reference: &Path, degraded: &Path, codebook: Option<&Path>) -> Result<EvalReport> {
    let r = read_wav(reference)?;
    let d = read_wav(degraded)?;
    let cb = codebook.map(Codebook::load).transpose()?;
    let ref_units = cb.as_ref().map(|c| tokenize(&r, c)).transpose()?;
    let content = ref_units.as_ref().zip(cb.as_ref());
    let id = degraded.file_stem().and_then(|s| s.to_str()).unwrap_or("degraded");
    let row = score(id, "pair", "-", &r, &d, content)?;
    Ok(EvalReport { rows: vec![row] })
}

pub const REPORT_METRICS: [&str; 5] = ["uer", "estoi", "mcd_db", "si_snr_db", "sync_offset_ms"];

fn metric(a: &gse_core::metrics::Aggregate, name: &str) -> Option<f64> {
    match name {
        "uer" => a.uer,
        "estoi" => a.estoi,
        "mcd_db" => a.mcd_db,
        "si_snr_db" => a.si_snr_db,
        "sync_offset_ms" => a.sync_offset_ms,
        _ => None,
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// Mean of each metric with one row per method and one column per task.
pub fn report(run: &Run) -> Result<String> {
    let path = run.path("eval/metrics.csv");
    let text = std::fs::read_to_string(&path).with_context(|| format!("{} (run evaluate first)", path.display()))?;
    let report = EvalReport::from_csv(&text)?;
    let aggs = report.aggregates();
    let mut tasks: Vec<String> = Vec::new();
    for a in &aggs {
        if !tasks.contains(&a.split) {
            tasks.push(a.split.clone());
        }
    }
    let mut csv = format!("metric,method,{}\n", tasks.join(","));
    let mut json: BTreeMap<&str, BTreeMap<&str, BTreeMap<String, Option<f64>>>> = BTreeMap::new();
    for name in REPORT_METRICS {
        for method in METHODS {
            if !aggs.iter().any(|a| a.method == method) {
                continue;
            }
            let cells: Vec<Option<f64>> = tasks
                .iter()
                .map(|t| aggs.iter().find(|a| a.method == method && &a.split == t).and_then(|a| metric(a, name)))
                .collect();
            csv += &format!("{name},{method},{}\n", cells.iter().map(|c| fmt_cell(*c)).collect::<Vec<_>>().join(","));
            let entry = json.entry(name).or_default().entry(method).or_default();
            for (t, c) in tasks.iter().zip(&cells) {
                entry.insert(t.clone(), *c);
            }
        }
    }
    write_string(&run.path("report/report.csv"), &csv)?;
    write_json(&run.path("report/report.json"), &json)?;
    Ok(table_text(&aggs, &tasks))
}

fn table_text(aggs: &[gse_core::metrics::Aggregate], tasks: &[String]) -> String {
    let mut s = format!("{:<12}", "UER");
    for t in tasks {
        s += &format!(" {t:>16}");
    }
    s.push('\n');
    for method in METHODS {
        if !aggs.iter().any(|a| a.method == method) {
            continue;
        }
        s += &format!("{method:<12}");
        for t in tasks {
            let v = aggs.iter().find(|a| a.method == method && &a.split == t).and_then(|a| a.uer);
            s += &format!(" {:>16}", v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into()));
        }
        s.push('\n');
    }
    s
}

pub struct ArrayArgs {
    pub mics: usize,
    pub spacing: f64,
    pub linear: bool,
    pub azimuth_deg: f64,
}

impl ArrayArgs {
    fn geometry(&self) -> ArrayGeometry {
        if self.linear {
            ArrayGeometry::linear(self.mics, self.spacing)
        } else {
            ArrayGeometry::square(self.spacing)
        }
    }
}

pub fn capture(input: &Path, output: &Path, array: &ArrayArgs, snr_db: Option<f64>, seed: u64) -> Result<()> {
    let src = read_wav(input)?;
    let sim = simulate_capture(&src, &array.geometry(), planar_direction(array.azimuth_deg), snr_db, seed)?;
    write_wav(output, &sim.mixture, gse_core::io::wav::WavFormat::Float32)?;
    Ok(())
}

pub fn beamform_file(input: &Path, output: &Path, array: &ArrayArgs) -> Result<()> {
    let cap = read_wav(input)?;
    let geometry = array.geometry();
    if cap.n_channels() != geometry.n_mics() {
        bail!("{} has {} channels, the array has {} mics", input.display(), cap.n_channels(), geometry.n_mics());
    }
    let w = design_mvdr(&geometry, planar_direction(array.azimuth_deg), cap.sample_rate())?;
    let out = beamform(&cap, &w)?.fit_to_len(cap.len());
    write_wav(output, &out, gse_core::io::wav::WavFormat::Float32)?;
    Ok(())
}

/// Pretty table for a report written by `evaluate_pair`.
pub fn rows_text(rows: &[EvalRow]) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    rows.iter()
        .map(|r| {
            format!(
                "{}: estoi {} mcd {} dB si-snr {} dB uer {} sync {} ms\n",
                r.id,
                f(r.estoi),
                f(r.mcd_db),
                f(r.si_snr_db),
                f(r.uer),
                f(r.sync_offset_ms)
            )
        })
        .collect()
}
