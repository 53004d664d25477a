//! Command-line entry point: train, eval, sweep-inner-steps, ablate,
//! selfcheck.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use msd::harness::{self, EvalRequest, RunConfig};
use msd::Error;

#[derive(Parser)]
#[command(name = "msd", about = "Meta-learning experiments: MAML baselines and meta self-distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the run configuration (JSON)
    #[arg(long)]
    config: PathBuf,

    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,

    /// Override the config's output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::from_path(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train, writing checkpoints and the metrics log
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint on meta-test tasks
    Eval {
        #[command(flatten)]
        config: ConfigArgs,

        /// Checkpoint to evaluate
        #[arg(long)]
        checkpoint: PathBuf,

        /// Number of meta-test tasks (defaults to the config's eval_tasks)
        #[arg(long)]
        tasks: Option<usize>,

        /// Fine-tune on augmented support views and report consistency
        #[arg(long)]
        augmented: bool,

        /// Override the fine-tuning step count
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate a checkpoint at several fine-tuning step counts
    SweepInnerSteps {
        #[command(flatten)]
        config: ConfigArgs,

        #[arg(long)]
        checkpoint: PathBuf,

        /// Comma-separated step counts, e.g. 1,5,10,20
        #[arg(long, value_delimiter = ',')]
        steps: Vec<usize>,

        #[arg(long)]
        tasks: Option<usize>,
    },
    /// Train and evaluate the four-row ablation grid
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,

        /// Evaluation tasks per row (defaults to the config's eval_tasks)
        #[arg(long)]
        eval_tasks: Option<usize>,
    },
    /// Run the built-in oracle and property checks
    Selfcheck,
}

fn run() -> Result<(), Error> {
    match Cli::parse().command {
        Command::Train { config } => {
            let cfg = config.load()?;
            let artifacts = harness::run_train(&cfg)?;
            for record in &artifacts.output.records {
                println!(
                    "{}: val accuracy {:.2} \u{00b1} {:.2}",
                    record.context, record.accuracy_mean, record.accuracy_ci95
                );
            }
            println!(
                "best epoch {} (val accuracy {:.2}); checkpoints in {}",
                artifacts.output.best_epoch,
                artifacts.output.best_val_accuracy,
                cfg.out_dir.display()
            );
            Ok(())
        }
        Command::Eval { config, checkpoint, tasks, augmented, steps } => {
            let cfg = config.load()?;
            let record = harness::run_eval(
                &cfg,
                &EvalRequest { checkpoint, tasks, augmented, steps_override: steps },
            )?;
            println!("{}", harness::format_eval_line(&cfg, &record));
            Ok(())
        }
        Command::SweepInnerSteps { config, checkpoint, steps, tasks } => {
            let cfg = config.load()?;
            let rows = harness::run_sweep(&cfg, &checkpoint, &steps, tasks)?;
            for (k, record) in steps.iter().zip(&rows) {
                println!("steps {k}: {}", harness::format_eval_line(&cfg, record));
            }
            Ok(())
        }
        Command::Ablate { config, eval_tasks } => {
            let cfg = config.load()?;
            let rows = harness::run_ablate(&cfg, eval_tasks)?;
            for row in &rows {
                println!("{}", row.format_line());
            }
            Ok(())
        }
        Command::Selfcheck => {
            let failures = harness::run_selfcheck();
            if failures == 0 {
                Ok(())
            } else {
                Err(Error::Numeric(format!("{failures} selfcheck(s) failed")))
            }
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (category, code) = e.category();
            eprintln!("error[{category}]: {e}");
            ExitCode::from(code as u8)
        }
    }
}
