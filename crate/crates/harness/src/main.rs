use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hc_core::model::{load_checkpoint, Checkpoint, ModelConfig};
use hc_harness::analyze::{analysis_batch, ensure_dir, export_cosine, export_cost, export_unfold};
use hc_harness::eval::checkpoint_seq_len;
use hc_harness::{evaluate, train, verify, Error, Result, RunConfig, Suite};

#[derive(Parser)]
#[command(name = "hc", version, about = "Train and inspect hyper-connection transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Loss and perplexity of a checkpoint on a corpus.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        /// Window length; defaults to the one the checkpoint was trained with.
        #[arg(long)]
        seq_len: Option<usize>,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
    },
    /// Export connection matrices, similarity profiles or cost estimates.
    Analyze {
        kind: AnalysisKind,
        #[arg(long, required_unless_present = "config")]
        ckpt: Option<PathBuf>,
        /// Model or run configuration (cost only).
        #[arg(long, conflicts_with = "ckpt")]
        config: Option<PathBuf>,
        /// Text whose windows feed forward-pass analyses; seeded random bytes otherwise.
        #[arg(long, num_args = 1..)]
        corpus: Option<Vec<PathBuf>>,
        #[arg(long, default_value = "analysis")]
        out: PathBuf,
        /// Sequences per forward-pass analysis, or the batch size for memory estimates.
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long)]
        seq_len: Option<usize>,
    },
    /// Run built-in correctness checks.
    Verify {
        suite: SuiteArg,
        /// Corrupt one side of every comparison; the checks should then fail.
        #[arg(long)]
        inject_fault: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalysisKind {
    Unfold,
    Cosine,
    Cost,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Algebra,
    Gradients,
    Unfolding,
    Accounting,
    All,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Algebra => Suite::Algebra,
            SuiteArg::Gradients => Suite::Gradients,
            SuiteArg::Unfolding => Suite::Unfolding,
            SuiteArg::Accounting => Suite::Accounting,
            SuiteArg::All => Suite::All,
        }
    }
}

/// A model configuration file, or the `model` section of a run configuration.
fn read_model_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let model = value.get("model").cloned().unwrap_or(value);
    let cfg: ModelConfig =
        serde_json::from_value(model).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<S: serde::Serialize>(value: &S) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config } => {
            let run = RunConfig::load(&config)?;
            let outcome = train(&run)?;
            print_json(&serde_json::json!({
                "steps": run.steps,
                "final_train_loss": outcome.records.last().map(|r| r.train_loss),
                "final_val_loss": outcome.final_val_loss,
                "checkpoint": outcome.checkpoint,
            }))?;
            Ok(true)
        }
        Command::Eval { ckpt, corpus, seq_len, batch_size } => {
            print_json(&evaluate(&ckpt, &corpus, seq_len, batch_size)?)?;
            Ok(true)
        }
        Command::Analyze { kind, ckpt, config, corpus, out, batch, seq_len } => {
            ensure_dir(&out)?;
            let ckpt: Option<Checkpoint<f32>> = ckpt.map(load_checkpoint).transpose()?;
            let files = match (kind, &ckpt) {
                (AnalysisKind::Cost, _) => {
                    let cfg = match (&ckpt, &config) {
                        (Some(c), _) => c.model.config().clone(),
                        (None, Some(p)) => read_model_config(p)?,
                        (None, None) => return Err(Error::Config("analyze cost needs --ckpt or --config".into())),
                    };
                    let seq = seq_len.unwrap_or(cfg.max_seq_len);
                    let (report, path) = export_cost(&cfg, batch, seq, &out)?;
                    print_json(&report)?;
                    vec![path]
                }
                (_, None) => return Err(Error::Config("this analysis needs --ckpt".into())),
                (kind, Some(c)) => {
                    let seq = seq_len.unwrap_or_else(|| checkpoint_seq_len(c));
                    let tokens = analysis_batch(c.model.config(), corpus.as_deref(), batch, seq)?;
                    match kind {
                        AnalysisKind::Unfold => export_unfold(&c.model, &tokens, &out)?,
                        _ => export_cosine(&c.model, &tokens, &out)?,
                    }
                }
            };
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            Ok(true)
        }
        Command::Verify { suite, inject_fault } => {
            let report = verify(suite.into(), inject_fault)?;
            print_json(&report)?;
            for c in report.failed() {
                eprintln!("FAILED {}: {}", c.name, c.detail);
            }
            Ok(report.passed)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
