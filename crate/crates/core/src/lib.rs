//! Schrödinger-bridge Langevin sampling from training data.
//!
//! A [`BridgeModel`] couples the empirical measure of the training samples
//! with itself through a Gaussian reference kernel. Its conditional mean
//! `m(x; ε)` drives unadjusted Langevin samplers that stay stable for every
//! step size, and split-step variants that never leave the convex hull of
//! the data.

pub mod bridge;
pub mod conditional;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod kde;
pub mod kernel;
pub mod linalg;
pub mod model_file;
pub mod rng;
pub mod sampler;
pub mod training;

pub use bridge::{sinkhorn_fit, BridgeModel, Moments, ProbabilityVector, SinkhornOptions};
pub use conditional::{ClosureModel, ConditionalSpec, NoiseMode, PotentialSpec};
pub use error::{Error, Result};
pub use evaluation::{OtConfig, OtResult};
pub use experiment::{run_experiment, ExperimentOptions, Scale, PRESETS};
pub use kde::DensityEstimate;
pub use kernel::{bandwidth_profile, kernel_matrix, kernel_vector, KernelMode, KernelSpec};
pub use sampler::{run_chain, ChainOutput, Init, SamplerConfig, Scheme};
pub use training::TrainingSet;
