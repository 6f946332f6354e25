use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use mlsd::cli::{cmd_run, load_report, prepare, smoke_sizes, write_synthetic_experiment, RunError, Stage, StageSelector};
use mlsd::synthetic::{transfer_settings, TransferSizes};

#[derive(Parser)]
#[command(name = "mlsd", version, about = "Metric-learning few-shot sample selection for stance transfer")]
struct Cli {
    /// Root for relative output directories.
    #[arg(long, env = "MLSD_OUTPUT_ROOT", global = true)]
    output_root: Option<PathBuf>,

    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config; prints diagnostics as JSON, exits 1 if any.
    Validate { config: PathBuf },
    /// Run one pipeline stage, or all of them in order.
    Run {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = StageArg::All)]
        stage: StageArg,
    },
    /// Print the report of a finished run.
    Report {
        config: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write the synthetic transfer benchmark and a config for it.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Small fixture that runs in about a second.
        #[arg(long)]
        smoke: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Mine,
    TrainMetric,
    Select,
    Evaluate,
    All,
}

impl From<StageArg> for StageSelector {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Mine => StageSelector::One(Stage::Mine),
            StageArg::TrainMetric => StageSelector::One(Stage::TrainMetric),
            StageArg::Select => StageSelector::One(Stage::Select),
            StageArg::Evaluate => StageSelector::One(Stage::Evaluate),
            StageArg::All => StageSelector::All,
        }
    }
}

fn report_error(e: &RunError) {
    match e {
        RunError::Validation(diags) => {
            for d in diags {
                eprintln!("{}: {}", d.code, d.message);
            }
        }
        other => eprintln!("error: {other}"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let root = cli.output_root.as_deref();
    match cli.command {
        Command::Validate { config } => {
            let diags = match prepare(&config, root) {
                Ok(_) => Vec::new(),
                Err(d) => d,
            };
            println!("{}", serde_json::json!({ "ok": diags.is_empty(), "diagnostics": diags }));
            ExitCode::from(if diags.is_empty() { 0 } else { 1 })
        }
        Command::Run { config, stage } => match cmd_run(&config, stage.into(), root) {
            Ok(outcomes) => {
                for o in outcomes {
                    if cli.verbose {
                        eprintln!("{:<14}{}", o.stage, if o.cached { "cached" } else { "done" });
                    }
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                report_error(&e);
                ExitCode::from(e.exit_code() as u8)
            }
        },
        Command::Report { config, json } => match load_report(&config, root) {
            Ok(r) => {
                if json {
                    match r.to_json() {
                        Ok(s) => print!("{s}"),
                        Err(e) => {
                            eprintln!("error: {e}");
                            return ExitCode::from(2);
                        }
                    }
                } else {
                    print!("{}", r.to_text());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                report_error(&e);
                ExitCode::from(e.exit_code() as u8)
            }
        },
        Command::Synth { out, seed, smoke } => {
            let (sizes, settings) = if smoke {
                smoke_sizes()
            } else {
                (TransferSizes::default(), transfer_settings(mlsd::stance::experiment::DEFAULT_SEEDS.to_vec()))
            };
            match write_synthetic_experiment(&out, sizes, &settings, seed).context("writing the synthetic benchmark") {
                Ok(path) => {
                    println!("{}", path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
