//! memseal: dataset provenance sealing through injected template
//! memorization.

mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "memseal", version, about = "Seal captioned image datasets with template memorization and verify unauthorized fine-tuning")]
struct Cli {
    /// Run directory; every stage writes under <run-dir>/<stage>/.
    #[arg(long, global = true, default_value = "runs/default")]
    run_dir: PathBuf,

    /// Master seed propagated to every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// JSON run configuration (defaults applied when absent).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Dotted-path overrides, e.g. --set diffusion.max_steps=5000.
    #[arg(long = "set", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the clean procedural demo corpus.
    Demo,
    /// Build the templated set and inject it into the corpus.
    Protect {
        /// Input manifest (defaults to <run-dir>/demo/manifest.jsonl).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Simulate the unauthorized builder's preprocessing.
    Attack {
        /// dedup | recaption | corrupt:<kind> | purify:<method> (overrides config).
        #[arg(long)]
        kind: Option<String>,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long = "out")]
        output: Option<PathBuf>,
    },
    /// Train the toy diffusion model on a manifest.
    Finetune {
        /// Input manifest (defaults to attack output, then protect output).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Checkpoint to continue from (otherwise trains from scratch).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Output name: artifacts land in <run-dir>/finetune-<name>/.
        #[arg(long, default_value = "suspect")]
        name: String,
    },
    /// Run the one-query or multiple-query usage test against a checkpoint.
    Verify {
        /// Suspect checkpoint (defaults to <run-dir>/finetune-suspect/model.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Clean-trained reference checkpoint for tau estimation.
        #[arg(long)]
        clean_checkpoint: Option<PathBuf>,
        /// one | multi (overrides config).
        #[arg(long)]
        mode: Option<String>,
        /// Query count N (overrides config).
        #[arg(long)]
        n: Option<usize>,
        /// Significance level (overrides config).
        #[arg(long)]
        alpha: Option<f64>,
        /// hard | soft (overrides config).
        #[arg(long)]
        trigger: Option<String>,
        /// correlation | learned (overrides config).
        #[arg(long)]
        detector: Option<String>,
    },
    /// Consolidate stage outputs into a run report.
    Report,
    /// Run the full pipeline once per value of a swept variable.
    Sweep {
        /// alteration-rate | fine-tune-steps | foreground-k | corruption.
        #[arg(long)]
        variable: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
}

fn effective_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let stored = cli.run_dir.join("run_config.json");
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None if stored.exists() => RunConfig::load(&stored)?,
        None => RunConfig::default(),
    };
    config = config.with_overrides(&cli.overrides)?;
    if let Some(seed) = cli.seed {
        config = config.seeded(seed);
    }
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut config = effective_config(&cli)?;
    let run_dir = cli.run_dir.clone();
    match cli.command {
        Command::Demo => {
            stages::cmd_demo(&config, &run_dir)?;
        }
        Command::Protect { input } => {
            stages::cmd_protect(&config, &run_dir, input.as_deref())?;
        }
        Command::Attack { kind, input, output } => {
            if let Some(kind) = kind {
                config.attack.kind = kind;
            }
            stages::cmd_attack(&config, &run_dir, input.as_deref(), output.as_deref())?;
        }
        Command::Finetune { input, init, name } => {
            stages::cmd_finetune(&config, &run_dir, input.as_deref(), init.as_deref(), &name)?;
        }
        Command::Verify {
            checkpoint,
            clean_checkpoint,
            mode,
            n,
            alpha,
            trigger,
            detector,
        } => {
            if let Some(mode) = mode {
                config.verify.mode = mode;
            }
            if let Some(n) = n {
                config.verify.n = n;
            }
            if let Some(alpha) = alpha {
                config.verify.alpha = alpha;
            }
            if let Some(trigger) = trigger {
                config.verify.trigger = trigger;
            }
            if let Some(detector) = detector {
                config.verify.detector = detector;
            }
            let outcome = stages::cmd_verify(
                &config,
                &run_dir,
                checkpoint.as_deref(),
                clean_checkpoint.as_deref(),
            )?;
            // exit code distinguishes the verdict: 0 = reject H0
            // (unauthorized use detected), 3 = fail to reject
            if !outcome.decision_is_reject {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Report => {
            stages::cmd_report(&config, &run_dir)?;
        }
        Command::Sweep { variable, values } => {
            stages::cmd_sweep(&config, &run_dir, &variable, &values)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            // machine-readable failure on stderr
            eprintln!(
                "{}",
                serde_json::json!({ "error": format!("{e:#}") })
            );
            ExitCode::FAILURE
        }
    }
}
