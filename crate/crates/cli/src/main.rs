//! `ctpm` experiment driver.
//!
//! Every command takes the experiment config as its only positional argument.
//! Flags override file locations and verbosity, nothing else. `CTPM_LOG`
//! sets the log filter when no verbosity flag is given.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctpm::experiment::{Experiment, Overrides};
use ctpm::{Error, ErrorClass};

const EXIT_CONFIG: u8 = 3;
const EXIT_DATA: u8 = 4;
const EXIT_NUMERIC: u8 = 5;
const EXIT_IO: u8 = 6;

#[derive(Debug, Parser)]
#[command(
    name = "ctpm",
    version,
    about = "Continuous treatment policy matching experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset described by the config.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train the full model and both learned baselines; write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score the test split with every model; write report and curves.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate [default: <run dir>/checkpoint.json].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Predict optimal intensities and scores for a match file.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Match file with ids and features; an intensity column is optional.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output file [default: <run dir>/predictions.csv].
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Data file to read instead of the one named in the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Parent of the run directory instead of `output.dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, conflicts_with = "quiet")]
    verbose: u8,
    /// Errors only.
    #[arg(short, long)]
    quiet: bool,
}

impl Common {
    fn init_logging(&self) {
        let mut builder = env_logger::Builder::new();
        builder.format_timestamp(None).format_target(false);
        let level = match (self.quiet, self.verbose) {
            (true, _) => Some(log::LevelFilter::Error),
            (false, 0) => None,
            (false, 1) => Some(log::LevelFilter::Info),
            (false, _) => Some(log::LevelFilter::Debug),
        };
        match level {
            Some(l) => {
                builder.filter_level(l);
            }
            None => match std::env::var("CTPM_LOG") {
                Ok(spec) => {
                    builder.parse_filters(&spec);
                }
                Err(_) => {
                    builder.filter_level(log::LevelFilter::Warn);
                }
            },
        }
        let _ = builder.try_init();
    }

    fn experiment(&self) -> ctpm::Result<Experiment> {
        Experiment::load(
            &self.config,
            Overrides {
                data: self.data.clone(),
                output_dir: self.output_dir.clone(),
            },
        )
    }
}

fn run(cli: Cli) -> ctpm::Result<()> {
    match cli.command {
        Command::Synth { common } => {
            common.init_logging();
            let exp = common.experiment()?;
            let m = exp.synth()?;
            println!(
                "wrote {} files to {}",
                m.files.len(),
                exp.run_dir().display()
            );
        }
        Command::Train { common } => {
            common.init_logging();
            let exp = common.experiment()?;
            let (ck, m) = exp.train()?;
            println!(
                "selected restart {} (validation loss {:.6}); wrote {} files to {}",
                ck.ctpm_training.selected_restart,
                ck.ctpm_training.validation_loss,
                m.files.len(),
                exp.run_dir().display()
            );
        }
        Command::Eval { common, checkpoint } => {
            common.init_logging();
            let exp = common.experiment()?;
            let (report, _) = exp.evaluate(checkpoint.as_deref())?;
            print!("{}", report.to_table());
        }
        Command::Predict {
            common,
            input,
            checkpoint,
            output,
        } => {
            common.init_logging();
            let exp = common.experiment()?;
            let m = exp.predict(checkpoint.as_deref(), &input, output.as_deref())?;
            for f in &m.files {
                println!("wrote {}", f.path);
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numeric => EXIT_NUMERIC,
        ErrorClass::Io => EXIT_IO,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
