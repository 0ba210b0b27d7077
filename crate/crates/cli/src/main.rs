use std::path::PathBuf;
use std::process::ExitCode;

use cjtvae::commands::{self, GenerateOptions, StageSelection, TrainOptions, GRAD_TOLERANCE};
use cjtvae::{Failure, RunConfig};
use cjtvae_core::training::Stage;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "cjtvae",
    version,
    about = "Property-controlled molecule generation with a conditional junction-tree VAE"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    All,
    Extractor,
    Vae,
    Joint,
}

#[derive(Subcommand)]
enum Command {
    /// Score the corpus with the configured oracles and normalize each column.
    Preprocess {
        #[arg(long)]
        config: PathBuf,
        /// Score table path (default: `scores` from the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the cluster vocabulary of the corpus.
    Vocab {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the training stages, resuming from existing checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        stage: StageArg,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint directory (default: `checkpoints` from the config).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Decode each input under a target property vector.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Model checkpoint (default: the joint checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// SMILES file (default: held-out molecules of the score table).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Comma-separated property targets in [0, 1].
        #[arg(
            long,
            value_delimiter = ',',
            required = true,
            allow_negative_numbers = true
        )]
        target_c: Vec<f64>,
        /// Record file (default: `generated.jsonl` in the output directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize generation records and write the similarity/improvement scatter.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Record file (default: `generated.jsonl` in the output directory).
        #[arg(long)]
        records: Option<PathBuf>,
        /// Scatter CSV (default: `scatter.csv` next to the records).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare autodiff gradients with central differences for every network.
    GradCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 50)]
        probes: usize,
    },
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Preprocess { config, out } => {
            let s = commands::preprocess(&RunConfig::load(&config)?, out.as_deref())?;
            println!(
                "{} molecules scored, {} skipped -> {}",
                s.rows,
                s.skipped,
                s.path.display()
            );
            for c in s.columns {
                let note = if c.degenerate {
                    " (degenerate: all zeros)"
                } else {
                    ""
                };
                println!(
                    "{}: 5th percentile {}, 95th percentile {}{note}",
                    c.name, c.low, c.high
                );
            }
        }
        Command::Vocab { config, out } => {
            let s = commands::vocab(&RunConfig::load(&config)?, out.as_deref())?;
            println!(
                "{} labels from {} molecules, {} skipped -> {}",
                s.labels,
                s.molecules,
                s.skipped,
                s.path.display()
            );
        }
        Command::Train {
            config,
            stage,
            seed,
            checkpoint,
        } => {
            let stage = match stage {
                StageArg::All => StageSelection::All,
                StageArg::Extractor => StageSelection::Only(Stage::Extractor),
                StageArg::Vae => StageSelection::Only(Stage::Vae),
                StageArg::Joint => StageSelection::Only(Stage::Joint),
            };
            let opts = TrainOptions {
                stage,
                seed,
                checkpoints: checkpoint,
            };
            for r in commands::train(&RunConfig::load(&config)?, &opts)? {
                let done = match (r.stage, r.converged) {
                    (Stage::Joint, true) => "all epochs",
                    (Stage::Joint, false) => "interrupted",
                    (_, true) => "converged",
                    (_, false) => "step cap",
                };
                println!(
                    "{}: {} steps run, {} total, {done}",
                    r.stage.name(),
                    r.steps_run,
                    r.total_steps
                );
            }
        }
        Command::Generate {
            config,
            checkpoint,
            input,
            target_c,
            out,
        } => {
            let opts = GenerateOptions {
                checkpoint,
                input,
                target_c,
                out,
            };
            let s = commands::generate(&RunConfig::load(&config)?, &opts)?;
            let ok = s.records.iter().filter(|r| r.output.is_some()).count();
            println!(
                "{ok} of {} inputs decoded -> {}",
                s.records.len(),
                s.path.display()
            );
        }
        Command::Evaluate {
            config,
            records,
            out,
        } => {
            let records = match (records, config) {
                (Some(r), _) => r,
                (None, Some(c)) => RunConfig::load(&c)?.output.join("generated.jsonl"),
                (None, None) => {
                    return Err(Failure::usage("either --records or --config is required"))
                }
            };
            let out = out.unwrap_or_else(|| records.with_file_name("scatter.csv"));
            let s = commands::evaluate(&records, &out)?;
            print!("{}", s.table());
            println!("{} records, {} not decoded", s.records, s.failed);
        }
        Command::GradCheck {
            config,
            seed,
            probes,
        } => {
            let checks = commands::grad_check(&RunConfig::load(&config)?, seed, probes)?;
            let mut worst: f64 = 0.0;
            for c in &checks {
                let ok = if c.report.max_rel_error <= GRAD_TOLERANCE {
                    "ok"
                } else {
                    "FAIL"
                };
                println!(
                    "{:<22} {:>4} probes  max rel error {:.3e}  {ok}",
                    c.name,
                    c.report.probes.len(),
                    c.report.max_rel_error
                );
                worst = worst.max(c.report.max_rel_error);
            }
            if worst > GRAD_TOLERANCE {
                return Err(Failure {
                    code: 1,
                    error: anyhow::anyhow!("gradient check above tolerance {GRAD_TOLERANCE}"),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
