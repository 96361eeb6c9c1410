//! TOML experiment configuration. Every section and field is optional; missing
//! values take the defaults below.
//!
//! ```toml
//! seed = 7
//!
//! [invariance]
//! nets = 100
//! max_input = 64
//!
//! [train_demo.train]
//! learning_rate = 0.05
//! epochs = 40
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentPlan;
use crate::error::{Error, Result};
use crate::training::{Schedule, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub invariance: InvarianceConfig,
    pub divisibility: DivisibilityConfig,
    pub tli: TliConfig,
    pub composed: ComposedConfig,
    pub train_demo: TrainDemoConfig,
    pub wavelet: WaveletConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let i = &self.invariance;
        if i.nets == 0 || i.inputs_per_net == 0 || i.min_input < 3 || i.min_input > i.max_input || i.min_kernel == 0 || i.min_kernel > i.max_kernel {
            return Err(Error::Config("invariance size ranges are empty or invalid".into()));
        }
        if i.min_layers == 0 || i.min_layers > i.max_layers || i.max_channels == 0 {
            return Err(Error::Config("invariance layer/channel ranges are invalid".into()));
        }
        if self.tli.content == 0 || self.tli.shifts.is_empty() {
            return Err(Error::Config("tli needs a positive content size and at least one shift".into()));
        }
        self.train_demo.train.validate()?;
        self.train_demo.augment.validate()?;
        self.composed.train.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvarianceConfig {
    pub nets: usize,
    /// Random inputs per network; each trial keeps the worst residual.
    pub inputs_per_net: usize,
    pub min_input: usize,
    pub max_input: usize,
    pub min_kernel: usize,
    pub max_kernel: usize,
    pub min_layers: usize,
    pub max_layers: usize,
    pub max_channels: usize,
    pub tolerance: f64,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        Self {
            nets: 100,
            inputs_per_net: 4,
            min_input: 10,
            max_input: 64,
            min_kernel: 3,
            max_kernel: 9,
            min_layers: 1,
            max_layers: 5,
            max_channels: 3,
            tolerance: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivisibilityConfig {
    pub input: usize,
    pub kernel: usize,
    pub channels: usize,
    pub tolerance: f64,
}

impl Default for DivisibilityConfig {
    fn default() -> Self {
        Self { input: 10, kernel: 3, channels: 2, tolerance: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TliConfig {
    /// Side of the random content block.
    pub content: usize,
    /// Zero frame around the content; bounds the largest lossless shift.
    pub frame: usize,
    /// Zero padding added by each pipeline along its direction.
    pub pipeline_pad: usize,
    pub shifts: Vec<i64>,
    pub tolerance: f64,
}

impl Default for TliConfig {
    fn default() -> Self {
        Self { content: 14, frame: 8, pipeline_pad: 10, shifts: vec![-8, -4, 0, 2, 4, 8], tolerance: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComposedConfig {
    pub input: usize,
    pub frame: usize,
    pub shift: i64,
    pub pipeline_pad: usize,
    pub per_class: usize,
    pub loss_bound: f64,
    pub tolerance: f64,
    pub train: TrainConfig,
}

impl Default for ComposedConfig {
    fn default() -> Self {
        Self {
            input: 16,
            frame: 2,
            shift: 2,
            pipeline_pad: 4,
            per_class: 24,
            loss_bound: 0.1,
            tolerance: 1e-9,
            train: TrainConfig { learning_rate: 0.1, epochs: 40, batch_size: 4, momentum: 0.9, schedule: Schedule::Joint, ..TrainConfig::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainDemoConfig {
    pub input: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub accuracy_bar: f64,
    pub tolerance: f64,
    pub train: TrainConfig,
    /// Interpolated augmentation applied to both nets' training sets.
    pub augment: AugmentPlan,
}

impl Default for TrainDemoConfig {
    fn default() -> Self {
        Self {
            input: 16,
            train_per_class: 40,
            test_per_class: 25,
            accuracy_bar: 0.9,
            tolerance: 1e-9,
            train: TrainConfig { learning_rate: 0.1, epochs: 30, batch_size: 4, momentum: 0.9, ..TrainConfig::default() },
            augment: AugmentPlan {
                angles: Vec::new(),
                include_reflection: false,
                include_original: true,
                group: crate::symmetry::SymmetryGroup::Dih4,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveletConfig {
    /// Input side for even-length (periodic) pairs.
    pub even_side: usize,
    /// Input side for odd-length (symmetric-extension) pairs.
    pub odd_side: usize,
    pub relation_tolerance: f64,
    pub tolerance: f64,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        Self { even_side: 16, odd_side: 17, relation_tolerance: 1e-10, tolerance: 1e-9 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn partial_sections_and_errors() {
        let c = ExperimentConfig::from_toml("seed = 3\n[invariance]\nnets = 5\n[train_demo.train]\nepochs = 2\n").unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.invariance.nets, 5);
        assert_eq!(c.invariance.max_input, 64);
        assert_eq!(c.train_demo.train.epochs, 2);
        assert!(ExperimentConfig::from_toml("[invariance]\nnets = 0\n").is_err());
        assert!(ExperimentConfig::from_toml("[invariance]\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("[train_demo.train]\nlearning_rate = -1.0\n").is_err());
    }
}
