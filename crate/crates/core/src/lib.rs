//! Gradient-distribution statistics for small differentiable models and
//! Monte Carlo verification of the leading-order identities linking SGD and
//! GD updates to the generalization gap.
//!
//! The per-example gradient distribution enters only through its mean `G`
//! and covariance `Σ`. After one full-batch step of size `η` on `N`
//! examples the gap grows on average by `η tr Σ / N`; two half-batch SGD
//! steps differ from two GD steps by an effective gradient shift whose mean
//! is `−½ ∇(η tr Σ / N)`, so GD on `ℓ + ¼ η tr Σ / N` reproduces SGD to
//! leading order.
//!
//! Module map:
//!
//! - [`domain`]: parameter vectors, examples, id-tagged batches, overlap factor
//! - [`models`]: linear and one-hidden-layer tanh models with exact HVPs
//! - [`data`]: teacher-student sampling, partitioning, CSV loading
//! - [`gradstats`]: moments of the gradient distribution, eigenpairs, `∇ tr Σ`
//! - [`oracle`]: closed-form statistics for the linear-Gaussian model
//! - [`theory`]: loss-change, gap and two-step identities, ensembles, order fits
//! - [`optim`]: GD/SGD, regularized GD, covariance-preconditioned SGD
//! - [`cli`]: the `sgdgap` experiment runner

pub mod cli;
pub mod config;
pub mod data;
pub mod domain;
pub mod error;
pub mod gradstats;
pub mod linalg;
pub mod models;
pub mod optim;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod theory;

pub use config::ExperimentConfig;
pub use domain::{overlap_factor, Batch, DataRealization, Example, GeneratorSpec, ParamVector};
pub use error::{Error, Result};
pub use gradstats::{Covariance, GradientStats, SampleCount};
pub use models::ModelSpec;
pub use report::{TheoryReport, Verdict};
