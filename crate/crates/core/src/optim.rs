//! Gradient steppers: plain GD/SGD, GD on the loss with an explicit
//! `¼⟨δε⟩ = η tr Σ / 4n` penalty, and SGD preconditioned by a rank-k plus
//! `λI` surrogate of the gradient covariance.

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{partition_at, sample_realization};
use crate::domain::{Batch, GeneratorSpec, ParamVector};
use crate::error::{ensure, invalid, Error, Result};
use crate::gradstats::{grad_trace_cov, gram_deviation, stats_eigenpairs, trace_estimate, Eigenpair};
use crate::linalg::{axpy, dot, sub};
use crate::models::ModelSpec;
use crate::oracle::oracle_grad_trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Gd,
    Sgd,
    GdRegularized,
    SgdPreconditioned,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Gd => "gd",
            Algorithm::Sgd => "sgd",
            Algorithm::GdRegularized => "gd_regularized",
            Algorithm::SgdPreconditioned => "sgd_preconditioned",
        }
    }
}

/// Where `∇ tr Σ` comes from in [`regularized_gd_step`].
#[derive(Debug, Clone, Copy)]
pub enum TraceGradientSource<'a> {
    /// Closed form; linear model only.
    Oracle(&'a GeneratorSpec),
    /// Split-sample estimate on the step's own batch.
    Estimator,
}

fn apply_step(theta: &ParamVector, eta: f64, direction: &[f64]) -> Result<ParamVector> {
    let next: Vec<f64> = theta.iter().zip(direction).map(|(t, u)| t - eta * u).collect();
    ParamVector::new(next)
}

pub fn gd_step(model: &ModelSpec, theta: &ParamVector, train: &Batch, eta: f64) -> Result<ParamVector> {
    ensure(eta >= 0.0 && eta.is_finite(), || format!("invalid learning rate {eta}"))?;
    apply_step(theta, eta, &model.batch_grad(theta, train)?)
}

/// One pass of [`gd_step`] over `batches` in order.
pub fn sgd_epoch(model: &ModelSpec, theta: &ParamVector, batches: &[Batch], eta: f64) -> Result<ParamVector> {
    ensure(!batches.is_empty(), || "sgd epoch needs at least one batch".into())?;
    let mut current = theta.clone();
    for b in batches {
        current = gd_step(model, &current, b, eta)?;
    }
    Ok(current)
}

pub fn trace_gradient(
    model: &ModelSpec,
    theta: &ParamVector,
    batch: &Batch,
    source: TraceGradientSource<'_>,
) -> Result<ParamVector> {
    match source {
        TraceGradientSource::Oracle(gen) => {
            ensure(model.is_linear(), || {
                "the closed-form trace gradient exists only for the linear model".into()
            })?;
            oracle_grad_trace(theta, gen)
        }
        TraceGradientSource::Estimator => grad_trace_cov(model, theta, batch),
    }
}

/// `θ − η [g + (η / 4n) t]` for a given trace gradient `t`.
pub fn regularized_gd_step_with(
    model: &ModelSpec,
    theta: &ParamVector,
    train: &Batch,
    eta: f64,
    n: usize,
    trace_grad: &[f64],
) -> Result<ParamVector> {
    ensure(eta > 0.0 && eta.is_finite(), || format!("invalid learning rate {eta}"))?;
    ensure(n >= 1, || "n must be at least 1".into())?;
    ensure(trace_grad.len() == theta.len(), || {
        "trace gradient has the wrong length".into()
    })?;
    let mut effective = model.batch_grad(theta, train)?.into_vec();
    axpy(eta / (4.0 * n as f64), trace_grad, &mut effective);
    apply_step(theta, eta, &effective)
}

/// GD step on `ℓ + ¼⟨δε⟩` with `⟨δε⟩ = η tr Σ / n`, the step's own `η`.
pub fn regularized_gd_step(
    model: &ModelSpec,
    theta: &ParamVector,
    train: &Batch,
    eta: f64,
    n: usize,
    source: TraceGradientSource<'_>,
) -> Result<ParamVector> {
    let t = trace_gradient(model, theta, train, source)?;
    regularized_gd_step_with(model, theta, train, eta, n, &t)
}

/// Displacement of two regularized steps, summed step by step.
pub(crate) fn regularized_two_step_displacement(
    model: &ModelSpec,
    theta: &ParamVector,
    train: &Batch,
    eta: f64,
    n: usize,
    source: TraceGradientSource<'_>,
) -> Result<Vec<f64>> {
    let mut total = vec![0.0; theta.len()];
    let mut current = theta.clone();
    for _ in 0..2 {
        let t = trace_gradient(model, &current, train, source)?;
        let mut effective = model.batch_grad(&current, train)?.into_vec();
        axpy(eta / (4.0 * n as f64), &t, &mut effective);
        axpy(-eta, &effective, &mut total);
        current = ParamVector::new(theta.iter().zip(&total).map(|(a, b)| a + b).collect())?;
    }
    Ok(total)
}

/// `u = Σ_i v_i (v_i·g)/(σ_i + λ) + (g − Σ_i v_i (v_i·g))/λ`, the inverse of
/// `Σ_i σ_i v_i v_iᵀ + λI` applied to `g`.
pub fn preconditioned_direction(g: &[f64], eigenpairs: &[Eigenpair], lambda: f64) -> Result<Vec<f64>> {
    ensure(lambda > 0.0 && lambda.is_finite(), || {
        format!("λ must be positive, got {lambda}")
    })?;
    for p in eigenpairs {
        ensure(p.vector.len() == g.len(), || "eigenvector length mismatch".into())?;
        ensure(p.value >= 0.0 && p.value.is_finite(), || {
            format!("eigenvalue {} must be finite and nonnegative", p.value)
        })?;
    }
    ensure(eigenpairs.windows(2).all(|w| w[0].value >= w[1].value), || {
        "eigenpairs must be sorted by descending eigenvalue".into()
    })?;
    let dev = gram_deviation(eigenpairs);
    if dev > 1e-6 {
        return Err(invalid(format!(
            "eigenvectors are not orthonormal (Gram deviation {dev:e})"
        )));
    }
    let mut in_span = vec![0.0; g.len()];
    let mut u = vec![0.0; g.len()];
    for p in eigenpairs {
        let c = dot(&p.vector, g);
        axpy(c, &p.vector, &mut in_span);
        axpy(c / (p.value + lambda), &p.vector, &mut u);
    }
    let rest = sub(g, &in_span);
    axpy(1.0 / lambda, &rest, &mut u);
    Ok(u)
}

pub fn preconditioned_sgd_step(
    model: &ModelSpec,
    theta: &ParamVector,
    batch: &Batch,
    eta: f64,
    eigenpairs: &[Eigenpair],
    lambda: f64,
) -> Result<ParamVector> {
    let g = model.batch_grad(theta, batch)?;
    let u = preconditioned_direction(&g, eigenpairs, lambda)?;
    apply_step(theta, eta, &u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    pub train_loss: f64,
    pub test_loss: f64,
    pub gap: f64,
    pub trace_sigma: f64,
    /// λ used by the preconditioned step that produced this record.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigenpairs_used: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub algorithm: Algorithm,
    pub records: Vec<TrajectoryRecord>,
}

struct Monitor<'a> {
    model: &'a ModelSpec,
    train: &'a Batch,
    test: &'a Batch,
    keep_theta: bool,
}

impl Monitor<'_> {
    fn record(&self, step: usize, theta: &ParamVector) -> Result<TrajectoryRecord> {
        let train_loss = self.model.batch_loss(theta, self.train)?;
        let test_loss = self.model.batch_loss(theta, self.test)?;
        Ok(TrajectoryRecord {
            step,
            theta: self.keep_theta.then(|| theta.to_vec()),
            train_loss,
            test_loss,
            gap: test_loss - train_loss,
            trace_sigma: trace_estimate(self.model, theta, self.train)?,
            lambda: None,
            eigenpairs_used: None,
        })
    }
}

/// Leading minibatch eigenpairs for the preconditioner. When the power
/// iteration does not converge for `k` pairs, fewer pairs are used.
fn minibatch_eigenpairs(model: &ModelSpec, theta: &ParamVector, batch: &Batch, k: usize) -> Result<Vec<Eigenpair>> {
    let mut k = k.min(model.param_count());
    while k > 0 {
        match stats_eigenpairs(model, theta, batch, k) {
            Ok(sol) => return Ok(sol.pairs),
            Err(Error::Convergence { index, .. }) => k = index,
            Err(e) => return Err(e),
        }
    }
    Ok(Vec::new())
}

/// Runs `algorithm` for `config.steps` steps on realization 0 of the
/// configured ensemble, starting from the configured θ.
pub fn run_training(config: &ExperimentConfig, algorithm: Algorithm) -> Result<Trajectory> {
    ensure(config.steps >= 1, || "steps must be at least 1".into())?;
    let model = config.model_spec();
    let gen = config.generator_spec()?;
    let eta = config.learning_rate;
    let data = sample_realization(&gen, config.n_train, config.n_test, config.seed)?;
    let k = config.minibatches;
    if algorithm == Algorithm::SgdPreconditioned {
        ensure(config.n_train / k >= 2, || {
            "preconditioned SGD needs minibatches of at least 2 examples".into()
        })?;
    }
    let monitor = Monitor {
        model: &model,
        train: &data.train,
        test: &data.test,
        keep_theta: config.record_theta,
    };

    let mut theta = config.theta()?;
    let mut records = vec![monitor.record(0, &theta)?];
    let mut epoch_batches: Option<(usize, Vec<Batch>)> = None;

    for step in 1..=config.steps {
        let mut minibatch = || -> Result<Batch> {
            let epoch = (step - 1) / k;
            if epoch_batches.as_ref().map(|(e, _)| *e) != Some(epoch) {
                let parts = partition_at(&data.train, k, config.seed, epoch as u64)?;
                epoch_batches = Some((epoch, parts));
            }
            Ok(epoch_batches.as_ref().unwrap().1[(step - 1) % k].clone())
        };
        let mut lambda = None;
        let mut used = None;
        theta = match algorithm {
            Algorithm::Gd => gd_step(&model, &theta, &data.train, eta)?,
            Algorithm::Sgd => gd_step(&model, &theta, &minibatch()?, eta)?,
            Algorithm::GdRegularized => {
                let source = if config.use_oracle_trace_gradient() {
                    TraceGradientSource::Oracle(&gen)
                } else {
                    TraceGradientSource::Estimator
                };
                regularized_gd_step(&model, &theta, &data.train, eta, config.n_train, source)?
            }
            Algorithm::SgdPreconditioned => {
                let batch = minibatch()?;
                let pc = &config.preconditioner;
                let pairs = minibatch_eigenpairs(&model, &theta, &batch, pc.k)?;
                let top = pairs.first().map_or(0.0, |p| p.value);
                let l = (pc.lambda_scale * top).max(pc.lambda_floor);
                lambda = Some(l);
                used = Some(pairs.len());
                preconditioned_sgd_step(&model, &theta, &batch, eta, &pairs, l)?
            }
        };
        let mut rec = monitor.record(step, &theta)?;
        rec.lambda = lambda;
        rec.eigenpairs_used = used;
        records.push(rec);
    }
    Ok(Trajectory { algorithm, records })
}
