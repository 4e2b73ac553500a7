//! Experiment configuration, read from a single JSON document.
//!
//! Unknown keys are rejected. [`ExperimentConfig::resolve`] fills every
//! default in place so the serialized form written into reports is fully
//! explicit.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{GeneratorSpec, ParamVector};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::optim::Algorithm;
use crate::theory::{GapMode, ShiftMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    LinearQuadratic,
    MlpTanh { hidden: usize, init_seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub d: usize,
    /// Defaults to the first basis vector.
    #[serde(default)]
    pub teacher: Option<Vec<f64>>,
    pub noise_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceGradientConfig {
    /// Oracle for the linear model, estimator otherwise.
    #[default]
    Auto,
    Oracle,
    Estimator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovScalingConfig {
    pub size_a: usize,
    pub size_b: usize,
    pub overlaps: Vec<usize>,
    pub trials: usize,
}

impl Default for CovScalingConfig {
    fn default() -> Self {
        Self {
            size_a: 2,
            size_b: 2,
            overlaps: vec![0, 1, 2],
            trials: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreconditionerConfig {
    pub k: usize,
    /// λ = lambda_scale · σ̂₁, re-estimated every step.
    pub lambda_scale: f64,
    /// Lower bound on λ for steps whose minibatch covariance vanishes.
    pub lambda_floor: f64,
}

impl Default for PreconditionerConfig {
    fn default() -> Self {
        Self {
            k: 8,
            lambda_scale: 0.1,
            lambda_floor: 1e-8,
        }
    }
}

fn default_minibatches() -> usize {
    2
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_order_etas() -> Vec<f64> {
    vec![1e-3, 2e-3, 4e-3]
}
fn default_emulation_etas() -> Vec<f64> {
    vec![0.25, 0.5, 1.0]
}
fn default_z_threshold() -> f64 {
    3.0
}
fn default_steps() -> usize {
    100
}
fn default_algorithms() -> Vec<Algorithm> {
    vec![
        Algorithm::Gd,
        Algorithm::Sgd,
        Algorithm::GdRegularized,
        Algorithm::SgdPreconditioned,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub generator: GeneratorConfig,
    /// Evaluation point for ensemble quantities and starting point for
    /// training. Defaults to `θ* + e₁` (linear) or the model's seeded
    /// initialization (mlp).
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    pub learning_rate: f64,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default = "default_minibatches")]
    pub minibatches: usize,
    pub ensemble_size: usize,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub gap_mode: GapMode,
    #[serde(default)]
    pub shift_mode: ShiftMode,
    #[serde(default)]
    pub trace_gradient: TraceGradientConfig,
    #[serde(default = "default_order_etas")]
    pub order_etas: Vec<f64>,
    #[serde(default = "default_emulation_etas")]
    pub emulation_etas: Vec<f64>,
    #[serde(default = "default_z_threshold")]
    pub z_threshold: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub cov_scaling: CovScalingConfig,
    #[serde(default)]
    pub preconditioner: PreconditionerConfig,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    /// Store θ in every trajectory record.
    #[serde(default)]
    pub record_theta: bool,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        cfg.resolve()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn model_spec(&self) -> ModelSpec {
        match self.model {
            ModelConfig::LinearQuadratic => ModelSpec::linear(self.generator.d),
            ModelConfig::MlpTanh { hidden, init_seed } => ModelSpec::mlp(self.generator.d, hidden, init_seed),
        }
    }

    pub fn generator_spec(&self) -> Result<GeneratorSpec> {
        let teacher = match &self.generator.teacher {
            Some(t) => ParamVector::new(t.clone())?,
            None => {
                if self.generator.d == 0 {
                    return Err(cfg_err("generator.d must be at least 1"));
                }
                ParamVector::basis(self.generator.d, 0)
            }
        };
        GeneratorSpec::new(self.generator.d, teacher, self.generator.noise_std).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn theta(&self) -> Result<ParamVector> {
        let theta = self.theta.as_ref().ok_or_else(|| cfg_err("theta is unresolved"))?;
        ParamVector::new(theta.clone())
    }

    /// Whether `∇ tr Σ` should come from the closed form.
    pub fn use_oracle_trace_gradient(&self) -> bool {
        match self.trace_gradient {
            TraceGradientConfig::Auto => self.model_spec().is_linear(),
            TraceGradientConfig::Oracle => true,
            TraceGradientConfig::Estimator => false,
        }
    }

    /// Validates and fills defaults.
    pub fn resolve(mut self) -> Result<Self> {
        let gen = self.generator_spec()?;
        self.generator.teacher = Some(gen.teacher.to_vec());
        let model = self.model_spec();
        model.validate().map_err(|e| cfg_err(e.to_string()))?;
        if self.theta.is_none() {
            self.theta = Some(if model.is_linear() {
                let mut t = gen.teacher.to_vec();
                t[0] += 1.0;
                t
            } else {
                model.init_params().into_vec()
            });
        }
        let theta = self.theta()?;
        if theta.len() != model.param_count() {
            return Err(cfg_err(format!(
                "theta has length {} but the model has {} parameters",
                theta.len(),
                model.param_count()
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(cfg_err("learning_rate must be positive"));
        }
        if self.n_train < 2 {
            return Err(cfg_err("n_train must be at least 2"));
        }
        if self.n_test < 1 {
            return Err(cfg_err("n_test must be at least 1"));
        }
        if self.minibatches == 0 || !self.n_train.is_multiple_of(self.minibatches) {
            return Err(cfg_err(format!(
                "minibatches ({}) must divide n_train ({})",
                self.minibatches, self.n_train
            )));
        }
        if self.ensemble_size < 1 {
            return Err(cfg_err("ensemble_size must be at least 1"));
        }
        if self.z_threshold.is_nan() || self.z_threshold <= 0.0 {
            return Err(cfg_err("z_threshold must be positive"));
        }
        for (name, etas) in [
            ("order_etas", &self.order_etas),
            ("emulation_etas", &self.emulation_etas),
        ] {
            if etas.len() < 3 || etas.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(cfg_err(format!("{name} needs at least 3 positive values")));
            }
        }
        let p = &self.preconditioner;
        if p.k == 0
            || p.lambda_scale.is_nan()
            || p.lambda_scale <= 0.0
            || p.lambda_floor.is_nan()
            || p.lambda_floor <= 0.0
        {
            return Err(cfg_err(
                "preconditioner needs k >= 1 and positive lambda_scale, lambda_floor",
            ));
        }
        if self.trace_gradient == TraceGradientConfig::Oracle && !model.is_linear() {
            return Err(cfg_err("trace_gradient = oracle requires the linear model"));
        }
        Ok(self)
    }
}
