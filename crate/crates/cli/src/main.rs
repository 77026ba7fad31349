use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use civrec_cli::commands::{
    self, metric_csv, metric_table, parse_ks, AblateArgs, CliError, EvalArgs, PrepareSource, TrainArgs,
};
use civrec_cli::config::RunConfig;
use civrec_core::data::{PrepareOptions, SplitKind};
use civrec_core::par::Execution;
use civrec_core::trainer::Variant;
use log::LevelFilter;

#[derive(Parser)]
#[command(name = "civrec", version, about = "Debiased top-K recommendation with conditional instrumental variables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct ConfigArgs {
    /// key=value run configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value overrides; applied after the file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run everything on one thread
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a rating log (or the synthetic generator) into a bundle directory
    Prepare {
        #[arg(long, required_unless_present = "synthetic")]
        input: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 5)]
        binarize_threshold: u8,
        #[arg(long, default_value_t = 10)]
        kcore: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generate a confounded synthetic bundle from the synthetic.* keys
        #[arg(long, conflicts_with = "input")]
        synthetic: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a model and write a checkpoint plus a per-epoch run log
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out_checkpoint: PathBuf,
        /// Run log path; defaults to the checkpoint path with a .log extension
        #[arg(long)]
        run_log: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a checkpoint on a split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitKind,
        #[arg(long, default_value = "20,50")]
        k: String,
        /// Write metric rows as CSV here
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Train full, causal, con and original under several seeds and compare
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long, default_value = "20,50")]
        k: String,
        #[arg(long, default_value = "test")]
        split: SplitKind,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn run_config(a: &ConfigArgs) -> Result<RunConfig, CliError> {
    let mut c = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for pair in &a.set {
        c.set_pair(pair)?;
    }
    if a.sequential {
        c.train.execution = Execution::Sequential;
    }
    Ok(c)
}

fn init_logging() {
    let level = match std::env::var("CIVREC_LOG").as_deref() {
        Ok("quiet") => LevelFilter::Off,
        Ok("debug") => LevelFilter::Debug,
        _ => LevelFilter::Info,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .init();
}

fn quiet() -> bool {
    std::env::var("CIVREC_LOG").as_deref() == Ok("quiet")
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Prepare {
            input,
            output,
            binarize_threshold,
            kcore,
            seed,
            synthetic,
            cfg,
        } => {
            let source = if synthetic {
                PrepareSource::Synthetic(run_config(&cfg)?)
            } else {
                PrepareSource::Log {
                    input: input.ok_or_else(|| CliError::Usage("--input is required".into()))?,
                    options: PrepareOptions {
                        threshold: binarize_threshold,
                        k: kcore,
                        seed,
                    },
                }
            };
            println!("{}", commands::prepare(&source, &output)?);
        }
        Command::Train {
            data,
            variant,
            seed,
            epochs,
            out_checkpoint,
            run_log,
            cfg,
        } => {
            let mut config = run_config(&cfg)?;
            if let Some(v) = variant {
                config.train.variant = v;
            }
            if let Some(s) = seed {
                config.train.seed = s;
            }
            if let Some(e) = epochs {
                config.train.epochs = e;
            }
            let args = TrainArgs {
                config,
                data,
                checkpoint: out_checkpoint,
                run_log,
            };
            let q = quiet();
            commands::train_cmd(&args, |line| {
                if !q {
                    println!("{line}");
                }
            })?;
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            k,
            report,
            sequential,
        } => {
            let args = EvalArgs {
                checkpoint,
                data,
                split,
                ks: parse_ks(&k)?,
                report,
                execution: if sequential { Execution::Sequential } else { Execution::Auto },
            };
            let rows = commands::eval_cmd(&args)?;
            print!("{}", metric_table(&rows));
            if args.report.is_none() && !quiet() {
                print!("\n{}", metric_csv(&rows));
            }
        }
        Command::Ablate {
            data,
            seeds,
            k,
            split,
            report,
            cfg,
        } => {
            let args = AblateArgs {
                config: run_config(&cfg)?,
                data,
                seeds,
                ks: parse_ks(&k)?,
                split,
                variants: Variant::ABLATION.to_vec(),
                report,
            };
            let rows = commands::ablate_cmd(&args)?;
            print!("{}", metric_table(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    init_logging();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
