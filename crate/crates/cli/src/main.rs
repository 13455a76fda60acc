use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use uda_core::io::{apply_overrides, run_command, Command, IoError, Overrides, RunConfig};
use uda_core::train::TrainMode;

#[derive(Parser)]
#[command(name = "uda-forge", version, about = "Synthesize artifact datasets, train and evaluate adapted classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Synthesize the source and target datasets.
    Synth(Common),
    /// Train one model and write its checkpoint and log.
    Train(Common),
    /// Score a checkpoint on a dataset.
    Eval(Common),
    /// Run the three-mode comparison over seeds and folds.
    Protocol(Common),
    /// Render tables and plot data from protocol results.
    Report(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Mode {
    Uda,
    SourceOnly,
    TargetSupervised,
}

impl From<Mode> for TrainMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Uda => TrainMode::Uda,
            Mode::SourceOnly => TrainMode::SourceOnly,
            Mode::TargetSupervised => TrainMode::TargetSupervised,
        }
    }
}

fn run(cmd: Command, args: &Common) -> Result<Vec<PathBuf>, IoError> {
    let mut cfg = RunConfig::load(&args.config)?;
    let ov = Overrides { mode: args.mode.map(Into::into), seed: args.seed, out: args.out.clone() };
    apply_overrides(&mut cfg, &ov);
    run_command(cmd, &cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", serde_json::json!({ "error": "usage", "message": first }));
            return ExitCode::from(2);
        }
    };
    let (cmd, args) = match &cli.command {
        Sub::Synth(a) => (Command::Synth, a),
        Sub::Train(a) => (Command::Train, a),
        Sub::Eval(a) => (Command::Eval, a),
        Sub::Protocol(a) => (Command::Protocol, a),
        Sub::Report(a) => (Command::Report, a),
    };
    match run(cmd, args) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let line = serde_json::json!({ "error": e.code(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
