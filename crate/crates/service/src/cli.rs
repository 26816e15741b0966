use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rpnformer::model::{count_params, export_attention, Checkpoint, Model, ModelConfig};
use rpnformer::synth::{make_dataset, Dataset, DatasetConfig, Split};
use rpnformer::train::{ablate_and_score, evaluate, prepare, train, AblationTarget, Example};
use serde::Serialize;

use crate::config::{self, ConfigError, ModelSpec, TrainRun};
use crate::recognize::{recognize, RecognizeError, RecognizeRequest};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NO_CHECKPOINT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "rpnformer", version, about = "Handwritten expression recognition from strokes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    GenData {
        /// Dataset config (TOML or JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model as described by a run file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 128)]
        batch: usize,
        /// Write the confusion matrix as CSV here.
        #[arg(long)]
        confusion: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Remove one glyph per sample and score what the model restores.
    Ablate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// equals, closing_bracket or operator.
        #[arg(long)]
        target: AblationTarget,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 128)]
        batch: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recognize a stroke file in the /recognize request format.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump decoder cross-attention for one input.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Stroke file in the /recognize request format.
        #[arg(long, conflicts_with_all = ["data", "index"])]
        sample: Option<PathBuf>,
        /// Dataset directory; with --index picks a sample of --split.
        #[arg(long, requires = "index")]
        data: Option<PathBuf>,
        #[arg(long)]
        index: Option<usize>,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter counts of a preset or a model config file.
    CountParams {
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print JSON instead of key=value lines.
        #[arg(long)]
        json: bool,
    },
    /// Serve a checkpoint over HTTP.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

/// Failure of a subcommand, mapped to an exit status.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    MissingCheckpoint(PathBuf),
    Failed(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::MissingCheckpoint(_) => EXIT_NO_CHECKPOINT,
            CliError::Failed(_) => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "bad config: {m}"),
            CliError::MissingCheckpoint(p) => write!(f, "checkpoint not found: {}", p.display()),
            CliError::Failed(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<rpnformer::Error> for CliError {
    fn from(e: rpnformer::Error) -> Self {
        match e {
            rpnformer::Error::Config(m) => CliError::Config(m),
            other => CliError::Failed(other.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Failed(e.into())
    }
}

impl From<RecognizeError> for CliError {
    fn from(e: RecognizeError) -> Self {
        match e {
            RecognizeError::Internal(m) => CliError::Failed(anyhow::anyhow!(m)),
            other => CliError::Config(other.to_string()),
        }
    }
}

/// Parses `args` and runs the subcommand; returns the exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData { config, out } => {
            let cfg: DatasetConfig = config::load(&config)?;
            cfg.validate()?;
            let manifest = make_dataset(&cfg)?.save(&out)?;
            emit(&manifest, None)
        }
        Command::Train { config } => run_train(&config),
        Command::Eval {
            checkpoint,
            data,
            split,
            batch,
            confusion,
            out,
        } => {
            let model = load_model(&checkpoint)?;
            let dataset = load_data(&data)?;
            let examples = prepare(dataset.split(split), &model.config)?;
            let refs: Vec<&Example> = examples.iter().collect();
            let report = evaluate(&model, &refs, batch.max(1))?;
            if let Some(path) = confusion {
                fs::write(path, report.confusion_csv())?;
            }
            emit(&report, out.as_deref())
        }
        Command::Ablate {
            checkpoint,
            data,
            target,
            split,
            batch,
            out,
        } => {
            let model = load_model(&checkpoint)?;
            let dataset = load_data(&data)?;
            let samples: Vec<_> = dataset.split(split).collect();
            let report = ablate_and_score(&model, &samples, target, batch.max(1))?;
            emit(&report, out.as_deref())
        }
        Command::Infer {
            checkpoint,
            sample,
            out,
        } => {
            let model = load_model(&checkpoint)?;
            let request: RecognizeRequest = config::load(&sample)?;
            emit(&recognize(&model, &request)?, out.as_deref())
        }
        Command::ExportAttention {
            checkpoint,
            sample,
            data,
            index,
            split,
            out,
        } => {
            let model = load_model(&checkpoint)?;
            let report = match (sample, data, index) {
                (Some(path), _, _) => {
                    let request: RecognizeRequest = config::load(&path)?;
                    recognize(&model, &request)?.attention
                }
                (None, Some(dir), Some(i)) => {
                    let dataset = load_data(&dir)?;
                    let sample = dataset.split(split).nth(i).ok_or_else(|| {
                        CliError::Config(format!("{split:?} split has no sample {i}"))
                    })?;
                    export_attention(&model, sample)?
                }
                _ => return Err(CliError::Config("give --sample or --data with --index".into())),
            };
            emit(&report, out.as_deref())
        }
        Command::CountParams {
            preset,
            config: path,
            json,
        } => {
            let model = match (preset, path) {
                (Some(name), None) => ModelSpec::Preset(name).resolve()?,
                (None, Some(path)) => {
                    let c: ModelConfig = config::load(&path)?;
                    ModelSpec::Config(Box::new(c)).resolve()?
                }
                _ => return Err(CliError::Config("give --preset or --config".into())),
            };
            let counts = count_params(&model);
            if json {
                return emit(&counts, None);
            }
            let value = serde_json::to_value(counts)?;
            let mut stdout = std::io::stdout().lock();
            for (key, v) in value.as_object().expect("counts serialize to a map") {
                writeln!(stdout, "{key}={v}")?;
            }
            Ok(())
        }
        Command::Serve { checkpoint, bind } => {
            let model = load_model(&checkpoint)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(crate::server::serve(model, &bind))?;
            Ok(())
        }
    }
}

fn run_train(path: &Path) -> Result<(), CliError> {
    let run: TrainRun = config::load(path)?;
    let model_config = run.model.resolve()?;
    run.train.validate()?;
    let source = run.init.as_deref().map(load_checkpoint).transpose()?;
    let dataset = load_data(&run.data)?;
    fs::create_dir_all(&run.out)?;
    let mut log = fs::File::create(run.out.join("log.jsonl"))?;
    let mut log_err = None;
    let outcome = train(&dataset, &model_config, &run.train, source.as_ref(), |record| {
        let line = serde_json::to_string(record).expect("records serialize");
        eprintln!("{line}");
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    let best = run.out.join("best.ckpt");
    let last = run.out.join("last.ckpt");
    outcome.best.save(&best)?;
    outcome.last.save(&last)?;
    let best_la = outcome.log[outcome.best_epoch].val_la;
    emit(
        &serde_json::json!({
            "best_epoch": outcome.best_epoch,
            "epochs": outcome.log.len(),
            "val_la": best_la,
            "best": best,
            "last": last,
        }),
        None,
    )
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingCheckpoint(path.to_path_buf()));
    }
    Checkpoint::load(path).map_err(|e| CliError::Failed(anyhow::anyhow!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    Ok(load_checkpoint(path)?.model)
}

fn load_data(dir: &Path) -> Result<Dataset, CliError> {
    Dataset::load(dir).map_err(|e| CliError::Failed(anyhow::anyhow!("{}: {e}", dir.display())))
}

/// Pretty JSON to `out`, or stdout.
fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}
