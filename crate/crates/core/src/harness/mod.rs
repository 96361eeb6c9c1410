//! Seeded experiments behind the `ticnn` subcommands. Each returns an
//! [`ExperimentReport`] whose summary passes iff every trial matched its
//! expectation; nothing here reads the clock.

pub mod composed;
pub mod config;
pub mod dataset;
pub mod divisibility;
pub mod invariance;
pub mod report;
pub mod tli;
pub mod train_demo;
pub mod wavelet_check;

use std::str::FromStr;

pub use config::ExperimentConfig;
pub use report::{Expectation, ExperimentReport, Trial};

use crate::error::{Error, Result};

pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Invariance,
    Divisibility,
    Tli,
    Composed,
    TrainDemo,
    WaveletCheck,
}

impl Experiment {
    pub const ALL: [Experiment; 6] =
        [Self::Invariance, Self::Divisibility, Self::Tli, Self::Composed, Self::TrainDemo, Self::WaveletCheck];

    pub fn name(self) -> &'static str {
        match self {
            Self::Invariance => "invariance",
            Self::Divisibility => "divisibility",
            Self::Tli => "tli",
            Self::Composed => "composed",
            Self::TrainDemo => "train-demo",
            Self::WaveletCheck => "wavelet-check",
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Overrides the config seed.
    pub seed: Option<u64>,
    /// Replace one kernel per network with a perturbed unconstrained copy.
    pub desymmetrize_one_kernel: bool,
    /// Truncate non-dividing strides/pools instead of rejecting them.
    pub allow_nondivisible: bool,
    /// Zero-pad symmetrically so strides/pools divide.
    pub remedy_padding: bool,
}

impl RunOptions {
    pub fn seed(&self, cfg: &ExperimentConfig) -> u64 {
        self.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED)
    }
}

pub fn run(experiment: Experiment, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentReport> {
    cfg.validate()?;
    let seed = opts.seed(cfg);
    match experiment {
        Experiment::Invariance => invariance::run(&cfg.invariance, opts, seed),
        Experiment::Divisibility => divisibility::run(&cfg.divisibility, seed),
        Experiment::Tli => tli::run(&cfg.tli, seed),
        Experiment::Composed => composed::run(&cfg.composed, seed),
        Experiment::TrainDemo => train_demo::run(&cfg.train_demo, seed),
        Experiment::WaveletCheck => wavelet_check::run(&cfg.wavelet, seed),
    }
}

/// Independent per-trial seed (splitmix64 of `seed`, `stream`, `index`).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
