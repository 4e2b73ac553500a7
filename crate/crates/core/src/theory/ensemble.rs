//! Monte Carlo ensembles over data realizations at a fixed θ.
//!
//! Realization `r` is drawn from the keyed streams `(seed, r, ·)`, members
//! are evaluated in parallel, and the per-member rows are reduced in index
//! order, so a report depends only on `(config, quantity, m)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{delta_gap, gradient_shift, sequential_displacement};
use crate::config::ExperimentConfig;
use crate::data::{partition_at, sample_batch, sample_realization_at};
use crate::domain::{GeneratorSpec, ParamVector};
use crate::error::{ensure, Result};
use crate::gradstats::{grad_trace_cov_with_se, moments_from_grads, REFERENCE_SAMPLES};
use crate::linalg::{axpy, dot, norm, scale, sub};
use crate::models::ModelSpec;
use crate::optim::{regularized_two_step_displacement, TraceGradientSource};
use crate::oracle::{oracle_grad_trace, oracle_trace};
use crate::report::{ReportMetadata, TheoryReport};
use crate::rng::Purpose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// δε after one full-batch step; predicted `η tr Σ / N`.
    DeltaGap,
    /// δg for the two halves of the train set; predicted `−(η/2N) ∇tr Σ`.
    GradientShift,
    /// `g_train·(g_test − g_train)`; predicted `−tr Σ / N`.
    TrainTestDivergence,
    /// Two SGD half-batch steps minus two GD steps on the regularized loss;
    /// predicted zero (the mean difference is `O(η³)`).
    SgdVsModifiedGd,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::DeltaGap => "delta_gap",
            Quantity::GradientShift => "gradient_shift",
            Quantity::TrainTestDivergence => "train_test_divergence",
            Quantity::SgdVsModifiedGd => "sgd_vs_modified_gd",
        }
    }
}

/// `tr Σ` and `∇ tr Σ` at the configured θ, with their uncertainties.
struct Reference {
    trace: f64,
    trace_se: f64,
    grad_trace: Vec<f64>,
    grad_trace_se: Vec<f64>,
}

fn reference(
    model: &ModelSpec,
    theta: &ParamVector,
    gen: &GeneratorSpec,
    seed: u64,
    oracle: bool,
) -> Result<Reference> {
    if oracle {
        return Ok(Reference {
            trace: oracle_trace(theta, gen)?,
            trace_se: 0.0,
            grad_trace: oracle_grad_trace(theta, gen)?.into_vec(),
            grad_trace_se: vec![0.0; theta.len()],
        });
    }
    let batch = sample_batch(gen, REFERENCE_SAMPLES, seed, 0, Purpose::Reference, 0)?;
    let grads = model.per_example_grads(theta, &batch)?;
    let stats = moments_from_grads(&grads)?;
    // se of the trace from the spread of ‖g − ḡ‖²
    let sq: Vec<f64> = grads
        .iter()
        .map(|g| {
            let c = sub(g, &stats.mean);
            dot(&c, &c)
        })
        .collect();
    let n = sq.len() as f64;
    let mu = sq.iter().sum::<f64>() / n;
    let var = sq.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0);
    let gt = grad_trace_cov_with_se(model, theta, &batch, 32)?;
    Ok(Reference {
        trace: stats.trace(),
        trace_se: (var / n).sqrt(),
        grad_trace: gt.value.into_vec(),
        grad_trace_se: gt.se,
    })
}

fn member_row(
    config: &ExperimentConfig,
    model: &ModelSpec,
    theta: &ParamVector,
    gen: &GeneratorSpec,
    quantity: Quantity,
    index: u64,
) -> Result<Vec<f64>> {
    let eta = config.learning_rate;
    let data = sample_realization_at(gen, config.n_train, config.n_test, config.seed, index)?;
    Ok(match quantity {
        Quantity::DeltaGap => vec![delta_gap(model, theta, &data.train, &data.test, eta, config.gap_mode)?],
        Quantity::TrainTestDivergence => vec![crate::gradstats::train_test_divergence(
            model,
            theta,
            &data.train,
            &data.test,
        )?],
        Quantity::GradientShift => {
            let halves = partition_at(&data.train, 2, config.seed, index)?;
            gradient_shift(model, theta, &halves[0], &halves[1], eta, config.shift_mode)?.into_vec()
        }
        Quantity::SgdVsModifiedGd => {
            let halves = partition_at(&data.train, 2, config.seed, index)?;
            // Both minibatch orders, averaged: the exact expectation over the
            // order of the two halves.
            let mut sgd = sequential_displacement(model, theta, &[&halves[0], &halves[1]], eta)?;
            let reverse = sequential_displacement(model, theta, &[&halves[1], &halves[0]], eta)?;
            axpy(1.0, &reverse, &mut sgd);
            scale(0.5, &mut sgd);
            let source = if config.use_oracle_trace_gradient() {
                TraceGradientSource::Oracle(gen)
            } else {
                TraceGradientSource::Estimator
            };
            let gd = regularized_two_step_displacement(model, theta, &data.train, eta, config.n_train, source)?;
            sub(&sgd, &gd)
        }
    })
}

/// Ensemble mean ± SE of `quantity` over `m` realizations, against its
/// leading-order prediction.
pub fn ensemble_report(config: &ExperimentConfig, quantity: Quantity, m: usize) -> Result<TheoryReport> {
    ensure(m >= 2, || format!("ensemble needs at least 2 members, got {m}"))?;
    let model = config.model_spec();
    let gen = config.generator_spec()?;
    let theta = config.theta()?;
    let eta = config.learning_rate;
    let n = config.n_train as f64;

    let rows: Vec<Vec<f64>> = (0..m as u64)
        .into_par_iter()
        .map(|r| member_row(config, &model, &theta, &gen, quantity, r))
        .collect::<Result<_>>()?;

    let p = theta.len();
    let (predicted, predicted_se) = match quantity {
        Quantity::SgdVsModifiedGd => (vec![0.0; p], vec![0.0; p]),
        _ => {
            let oracle = model.is_linear() && config.use_oracle_trace_gradient();
            let r = reference(&model, &theta, &gen, config.seed, oracle)?;
            match quantity {
                Quantity::DeltaGap => (vec![eta * r.trace / n], vec![eta * r.trace_se / n]),
                Quantity::TrainTestDivergence => (vec![-r.trace / n], vec![r.trace_se / n]),
                Quantity::GradientShift => {
                    let c = -0.5 * eta / n;
                    (
                        r.grad_trace.iter().map(|v| c * v).collect(),
                        r.grad_trace_se.iter().map(|v| c.abs() * v).collect(),
                    )
                }
                Quantity::SgdVsModifiedGd => unreachable!(),
            }
        }
    };

    Ok(TheoryReport::from_rows(
        quantity.name(),
        rows,
        predicted,
        predicted_se,
        config.z_threshold,
        ReportMetadata {
            eta: Some(eta),
            n: Some(config.n_train),
            m: Some(m),
            seed: Some(config.seed),
            model: Some(model),
            generator: Some(gen),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulationFit {
    /// `(η, ‖⟨δθ_SGD⟩ − ⟨δθ_GD̃⟩‖)`
    pub points: Vec<(f64, f64)>,
    pub exponent: f64,
    #[serde(skip)]
    pub reports: Vec<TheoryReport>,
}

impl EmulationFit {
    pub fn within(&self, lo: f64, hi: f64) -> bool {
        self.exponent >= lo && self.exponent <= hi
    }
}

/// Norm of the ensemble-mean SGD versus regularized-GD displacement gap at
/// each `η`, with its log-log slope. The same realizations are reused at
/// every `η`.
pub fn emulation_fit(config: &ExperimentConfig, etas: &[f64], m: usize) -> Result<EmulationFit> {
    let mut points = Vec::with_capacity(etas.len());
    let mut reports = Vec::with_capacity(etas.len());
    for &eta in etas {
        let mut cfg = config.clone();
        cfg.learning_rate = eta;
        let report = ensemble_report(&cfg, Quantity::SgdVsModifiedGd, m)?;
        points.push((eta, norm(&report.measured)));
        reports.push(report);
    }
    let exponent = super::order_exponent(&points)?;
    Ok(EmulationFit {
        points,
        exponent,
        reports,
    })
}
