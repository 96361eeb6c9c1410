//! `ticnn`: runs one seeded experiment and writes its report.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ticnn_core::harness::{self, Experiment, ExperimentConfig, ExperimentReport, RunOptions};

#[derive(Parser, Debug)]
#[command(name = "ticnn", version, about = "Transformation-identical CNN experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Random Dih4 networks against all eight exact transforms.
    Invariance(Common),
    /// Symmetries surviving non-dividing pools, and the padding remedy.
    Divisibility(Common),
    /// Translation-identical pipelines under shifts along each line.
    Tli(Common),
    /// The five-pipeline composed network: bank selectivity and training.
    Composed(Common),
    /// Train a Dih4 net and an augmented baseline; compare orbit spread.
    TrainDemo(Common),
    /// Wavelet compartment symmetries and front-end chains.
    WaveletCheck(Common),
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment config; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    /// Invariance only: perturb one kernel per net out of its group.
    #[arg(long)]
    desymmetrize_one_kernel: bool,
    /// Invariance only: let strides/pools truncate instead of rejecting.
    #[arg(long)]
    allow_nondivisible: bool,
    /// Invariance only: zero-pad so strides/pools divide.
    #[arg(long)]
    remedy_padding: bool,
}

impl Command {
    fn split(&self) -> (Experiment, &Common) {
        match self {
            Self::Invariance(c) => (Experiment::Invariance, c),
            Self::Divisibility(c) => (Experiment::Divisibility, c),
            Self::Tli(c) => (Experiment::Tli, c),
            Self::Composed(c) => (Experiment::Composed, c),
            Self::TrainDemo(c) => (Experiment::TrainDemo, c),
            Self::WaveletCheck(c) => (Experiment::WaveletCheck, c),
        }
    }
}

fn execute(experiment: Experiment, args: &Common) -> ticnn_core::Result<ExperimentReport> {
    let cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let opts = RunOptions {
        seed: args.seed,
        desymmetrize_one_kernel: args.desymmetrize_one_kernel,
        allow_nondivisible: args.allow_nondivisible,
        remedy_padding: args.remedy_padding,
    };
    if experiment != Experiment::Invariance && (opts.desymmetrize_one_kernel || opts.allow_nondivisible || opts.remedy_padding) {
        eprintln!("note: scan and desymmetrize flags only affect `invariance`; {} runs its fixed cases", experiment.name());
    }
    let report = harness::run(experiment, &cfg, &opts)?;
    let text = match args.format {
        Format::Json => report.to_json(),
        Format::Csv => report.to_csv(),
    };
    match &args.out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = cli.command.split();
    let start = Instant::now();
    match execute(experiment, args) {
        Ok(report) => {
            let s = &report.summary;
            eprintln!(
                "{}: {} ({}/{} trials as expected, max pass residual {:.3e}, seed {}, {:.2}s)",
                report.experiment,
                if s.pass { "PASS" } else { "FAIL" },
                s.matched,
                s.trials,
                s.max_pass_residual,
                report.seed,
                start.elapsed().as_secs_f64()
            );
            for t in report.failures().take(10) {
                eprintln!(
                    "  unexpected: case={} transform={} residual={:e} tol={:e} expected={:?} seed={} sizes={:?}",
                    t.case, t.transform, t.residual, t.tolerance, t.expected, t.seed, t.layer_sizes
                );
            }
            if s.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
