//! Transformation-identical convolutional networks: symmetric kernels whose
//! outputs are exactly unchanged when the input is rotated, reflected or
//! translated, plus the tooling to build, train and verify them.

pub mod augment;
pub mod error;
pub mod harness;
pub mod network;
pub mod scan;
pub mod serialize;
pub mod symmetry;
pub mod tensor;
pub mod training;
pub mod transform;
pub mod wavelet;

pub use error::{Error, Result};
pub use scan::{Activation, PadDirection, PoolKind, PoolSize, ScanConfig, TiKernel};
pub use symmetry::{Sharing, SymmetrizeMode, SymmetryGroup, TranslationLine};
pub use tensor::Tensor2D;
pub use transform::TransformElement;
