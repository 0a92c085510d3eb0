//! Pixel-space image synthesis that keeps the convolutional features of a
//! content image while matching the per-layer channel covariances (CORAL
//! statistics) of a style image, plus tools to measure that covariance
//! discrepancy between image sets.

pub mod cli;
pub mod dataio;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod tensor;
pub mod weights;

mod linalg;
pub mod synth;

pub use error::{Error, Result, WeightError};
pub use losses::{CovMatrix, CovNormalizer, LayerWeight, LossConfig, Objective};
pub use net::{ActivationCache, FeatureTap, GradientMap, Network, NetworkSpec, PoolMode};
pub use tensor::{Element, Shape, Tensor};
