use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use gse_core::io::manifest::Split;
use gse_core::io::write_string;

mod run;
mod stages;

use run::Run;
use stages::ArrayArgs;

/// Unit-based speech enhancement: synthetic corpus, corruption, tokenizer,
/// enhancer training, resynthesis and scoring.
#[derive(Parser)]
#[command(name = "gse", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run directory; every artifact of one experiment lives here.
    #[arg(long, default_value = "run")]
    run: PathBuf,
    /// JSON config. Missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set model.train.hidden=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl RunArgs {
    fn open(&self) -> Result<Run> {
        Run::open(&self.run, self.config.as_deref(), &self.sets)
    }
}

#[derive(Args, Clone)]
struct TaskArgs {
    /// `denoise`, `separate`, `inpaint`, `silence`, `clean` or a full task
    /// name such as `inpaint-p50-s20`. Defaults to the config's eval tasks.
    #[arg(long)]
    task: Option<String>,
    /// SNR band for denoise/separate (lvl1..lvl4).
    #[arg(long)]
    level: Option<String>,
    /// Dropped fraction for inpaint.
    #[arg(long)]
    drop: Option<f64>,
    /// Span length in 20 ms frames for inpaint.
    #[arg(long)]
    span: Option<usize>,
}

impl TaskArgs {
    fn resolve(&self, run: &Run) -> Result<Vec<gse_core::pipeline::Task>> {
        let t = match &self.task {
            Some(name) => Some(stages::task_from_flags(name, self.level.as_deref(), self.drop, self.span)?),
            None => {
                if self.level.is_some() || self.drop.is_some() || self.span.is_some() {
                    bail!("--level, --drop and --span need --task");
                }
                None
            }
        };
        stages::eval_tasks(run, t)
    }
}

#[derive(Args, Clone)]
struct ArrayFlags {
    /// Look direction in degrees from the x axis.
    #[arg(long, default_value_t = 0.0)]
    azimuth: f64,
    /// Square side (default array) or line spacing, metres.
    #[arg(long, default_value_t = 0.05)]
    spacing: f64,
    /// Use a uniform line of `--mics` microphones instead of the 4-mic square.
    #[arg(long)]
    linear: bool,
    #[arg(long, default_value_t = 4)]
    mics: usize,
}

impl ArrayFlags {
    fn args(&self) -> ArrayArgs {
        ArrayArgs {
            mics: self.mics,
            spacing: self.spacing,
            linear: self.linear,
            azimuth_deg: self.azimuth,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the corpus: WAVs, label files and a JSONL manifest.
    GenCorpus(RunArgs),
    /// Corrupt one split for each task.
    Corrupt {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Simulate a far-field array recording of a mono WAV.
    Capture {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Diffuse-noise SNR at the reference mic; omit for a noiseless capture.
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        array: ArrayFlags,
    },
    /// MVDR beamforming of a multichannel WAV toward `--azimuth`.
    Beamform {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        array: ArrayFlags,
    },
    /// Fit the unit codebook or quantize audio with it.
    Tokenize {
        #[command(subcommand)]
        action: TokenizeCmd,
    },
    /// Train the unit enhancer.
    Train(RunArgs),
    /// Corrupted audio to units to enhanced audio.
    Enhance {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        task: TaskArgs,
    },
    /// Score a run's tasks, or one reference/degraded pair.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long, requires = "degraded")]
        reference: Option<PathBuf>,
        #[arg(long, requires = "reference")]
        degraded: Option<PathBuf>,
        /// Codebook for the pair's unit error rate.
        #[arg(long)]
        codebook: Option<PathBuf>,
        /// CSV destination for a pair; stdout otherwise.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Aggregate tables: rows are methods, columns are tasks.
    Report(RunArgs),
    /// Every stage in order.
    Pipeline(RunArgs),
}

#[derive(Subcommand)]
enum TokenizeCmd {
    /// k-means codebook and vocoder prototypes from the training split.
    Fit(RunArgs),
    /// Units for every corpus utterance, or for one WAV with `--input`.
    Quantize {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, requires_all = ["output", "codebook"])]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        codebook: Option<PathBuf>,
    },
}

fn parse_split(s: &str) -> Result<Split> {
    match Split::parse(s) {
        Some(x) => Ok(x),
        None => bail!("unknown split '{s}' (train, valid, test)"),
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenCorpus(r) => stages::gen_corpus(&r.open()?),
        Command::Corrupt { run, task, split } => {
            let run = run.open()?;
            stages::corrupt(&run, &task.resolve(&run)?, parse_split(&split)?)
        }
        Command::Capture {
            input,
            output,
            snr,
            seed,
            array,
        } => stages::capture(&input, &output, &array.args(), snr, seed),
        Command::Beamform { input, output, array } => stages::beamform_file(&input, &output, &array.args()),
        Command::Tokenize { action } => match action {
            TokenizeCmd::Fit(r) => stages::tokenize_fit(&r.open()?),
            TokenizeCmd::Quantize {
                input: Some(input),
                output: Some(output),
                codebook: Some(codebook),
                ..
            } => stages::quantize_file(&codebook, &input, &output),
            TokenizeCmd::Quantize { run, .. } => stages::tokenize_quantize(&run.open()?),
        },
        Command::Train(r) => stages::train_model(&r.open()?),
        Command::Enhance { run, task } => {
            let run = run.open()?;
            stages::enhance(&run, &task.resolve(&run)?)
        }
        Command::Evaluate {
            reference: Some(reference),
            degraded: Some(degraded),
            codebook,
            output,
            ..
        } => {
            let report = stages::evaluate_pair(&reference, &degraded, codebook.as_deref())?;
            match output {
                Some(p) => write_string(&p, &report.to_csv()?)?,
                None => print!("{}", report.to_csv()?),
            }
            eprint!("{}", stages::rows_text(&report.rows));
            Ok(())
        }
        Command::Evaluate { run, task, .. } => {
            let run = run.open()?;
            stages::evaluate_run(&run, &task.resolve(&run)?)?;
            Ok(())
        }
        Command::Report(r) => {
            print!("{}", stages::report(&r.open()?)?);
            Ok(())
        }
        Command::Pipeline(r) => {
            let run = r.open()?;
            let tasks = stages::eval_tasks(&run, None)?;
            stages::gen_corpus(&run)?;
            stages::tokenize_fit(&run)?;
            stages::tokenize_quantize(&run)?;
            stages::corrupt(&run, &tasks, Split::Test)?;
            stages::train_model(&run)?;
            stages::enhance(&run, &tasks)?;
            stages::evaluate_run(&run, &tasks)?;
            print!("{}", stages::report(&run)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
