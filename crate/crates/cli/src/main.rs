use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kerrlab::{run_experiment, Error, ExperimentConfig, ExperimentKind, RunOptions};

const EXIT_PASS: u8 = 0;
const EXIT_IO: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "kerrlab", version, about = "Small-dispersion Kerr channel experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the transmitted pulse train.
    Synth(RunArgs),
    /// Propagate one (optionally noisy) realization.
    Propagate(RunArgs),
    /// Noiseless forward then backward propagation residual.
    Roundtrip(RunArgs),
    /// Tabulate the response and recovery kernels.
    Kernels(RunArgs),
    /// Monte Carlo correlators against the closed forms.
    Correlators(RunArgs),
    /// Conditional density tables and their moment checks.
    PdfTable(RunArgs),
    /// Scale-hierarchy and grid checks only.
    Validate(RunArgs),
    /// Paired runs over a list of dispersion values.
    BetaSweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the Monte Carlo run count.
    #[arg(long)]
    runs: Option<usize>,
    /// Worker threads, 0 for all cores.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run even when the scale hierarchy fails.
    #[arg(long)]
    override_regime: bool,
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::Synth(a) => (ExperimentKind::Synth, a),
            Command::Propagate(a) => (ExperimentKind::Propagate, a),
            Command::Roundtrip(a) => (ExperimentKind::Roundtrip, a),
            Command::Kernels(a) => (ExperimentKind::Kernels, a),
            Command::Correlators(a) => (ExperimentKind::Correlators, a),
            Command::PdfTable(a) => (ExperimentKind::PdfTable, a),
            Command::Validate(a) => (ExperimentKind::Validate, a),
            Command::BetaSweep(a) => (ExperimentKind::BetaSweep, a),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Serialization(_) => EXIT_IO,
        Error::NanDetected { .. } => EXIT_NUMERIC,
        _ => EXIT_VALIDATION,
    }
}

fn load(kind: ExperimentKind, a: &RunArgs) -> kerrlab::Result<ExperimentConfig> {
    let mut c = ExperimentConfig::load(&a.config)?;
    if c.kind != kind {
        log::info!("config kind {} run as {}", c.kind.name(), kind.name());
        c.kind = kind;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    if let Some(r) = a.runs {
        c.runs = r;
    }
    if let Some(o) = &a.out {
        c.output_dir = o.clone();
    }
    c.override_regime |= a.override_regime;
    Ok(c)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (kind, args) = Cli::parse().command.split();
    let result = load(kind, &args).and_then(|c| run_experiment(&c, &RunOptions { workers: args.workers }));
    match result {
        Ok(o) => {
            let tag = if o.passed { "PASS" } else { "FAIL" };
            println!("{tag} {}: {} [{}]", kind.name(), o.summary, o.out_dir.display());
            ExitCode::from(match (o.passed, kind) {
                (true, _) => EXIT_PASS,
                (false, ExperimentKind::Validate) => EXIT_VALIDATION,
                (false, _) => EXIT_NUMERIC,
            })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
