//! Estimation of the per-example gradient distribution: mean `G`, covariance
//! `Σ`, its trace and leading eigenpairs, the gradient of `tr Σ`, and a direct
//! Monte Carlo check of how batch-gradient cross-covariances scale with batch
//! overlap.

mod eigen;

pub use eigen::{
    gram_deviation, top_eigenpairs, EigenSolution, Eigenpair, SymmetricOperator, DEFAULT_MAX_ITER, DEFAULT_TOL,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::sample_batch;
use crate::domain::{Batch, GeneratorSpec, ParamVector};
use crate::error::{ensure, Result};
use crate::linalg::{axpy, dot, scale, sub, Matrix};
use crate::models::ModelSpec;
use crate::report::{ReportMetadata, TheoryReport};
use crate::rng::Purpose;

/// Largest parameter count for which the covariance is stored densely.
pub const P_MAX: usize = 512;

/// Sample size of the high-precision reference `Σ` used by
/// [`joint_covariance_check`].
pub const REFERENCE_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariance {
    Full(Matrix),
    Compressed { trace: f64, eigenpairs: Vec<Eigenpair> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleCount {
    Finite(usize),
    /// Closed-form statistics; no sampling error.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientStats {
    pub mean: ParamVector,
    pub covariance: Covariance,
    pub sample_count: SampleCount,
    pub se_mean: Vec<f64>,
}

impl GradientStats {
    pub fn trace(&self) -> f64 {
        match &self.covariance {
            Covariance::Full(m) => m.trace(),
            Covariance::Compressed { trace, .. } => *trace,
        }
    }

    pub fn full(&self) -> Option<&Matrix> {
        match &self.covariance {
            Covariance::Full(m) => Some(m),
            Covariance::Compressed { .. } => None,
        }
    }

    pub fn mean_norm_sq(&self) -> f64 {
        dot(&self.mean, &self.mean)
    }
}

/// Unbiased sample covariance kept as centered per-example gradients, for
/// matrix-free products `Σv = Σ_e c_e (c_e·v) / (n − 1)`.
#[derive(Debug, Clone)]
pub struct SampleCovariance {
    centered: Vec<Vec<f64>>,
    dim: usize,
}

impl SampleCovariance {
    pub fn new(grads: &[ParamVector]) -> Result<Self> {
        ensure(grads.len() >= 2, || "covariance needs at least two samples".into())?;
        let dim = grads[0].len();
        let mean = mean_vec(grads);
        let centered = grads.iter().map(|g| sub(g, &mean)).collect();
        Ok(Self { centered, dim })
    }
}

impl SymmetricOperator for SampleCovariance {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for c in &self.centered {
            axpy(dot(c, v), c, &mut out);
        }
        scale(1.0 / (self.centered.len() as f64 - 1.0), &mut out);
        out
    }

    fn trace(&self) -> f64 {
        let ss: f64 = self.centered.iter().map(|c| dot(c, c)).sum();
        ss / (self.centered.len() as f64 - 1.0)
    }
}

fn mean_vec(grads: &[ParamVector]) -> Vec<f64> {
    let mut acc = vec![0.0; grads[0].len()];
    for g in grads {
        axpy(1.0, g, &mut acc);
    }
    scale(1.0 / grads.len() as f64, &mut acc);
    acc
}

/// Moments of the given per-example gradients: mean and unbiased (n − 1)
/// covariance, dense when `P ≤ P_MAX`.
pub fn moments_from_grads(grads: &[ParamVector]) -> Result<GradientStats> {
    ensure(grads.len() >= 2, || {
        format!("need at least 2 samples for a covariance, got {}", grads.len())
    })?;
    let p = grads[0].len();
    ensure(grads.iter().all(|g| g.len() == p), || {
        "gradients differ in length".into()
    })?;
    let n = grads.len();
    let mean = mean_vec(grads);
    let denom = n as f64 - 1.0;

    let mut var = vec![0.0; p];
    for g in grads {
        for ((v, gi), mi) in var.iter_mut().zip(g.iter()).zip(&mean) {
            *v += (gi - mi) * (gi - mi);
        }
    }
    scale(1.0 / denom, &mut var);
    let se_mean = var.iter().map(|v| (v / n as f64).sqrt()).collect();

    let covariance = if p <= P_MAX {
        let mut m = Matrix::zeros(p);
        for g in grads {
            let c = sub(g, &mean);
            m.add_outer(1.0, &c, &c);
        }
        m.scale(1.0 / denom);
        Covariance::Full(m)
    } else {
        Covariance::Compressed {
            trace: var.iter().sum(),
            eigenpairs: Vec::new(),
        }
    };
    Ok(GradientStats {
        mean: ParamVector::from_vec_unchecked(mean),
        covariance,
        sample_count: SampleCount::Finite(n),
        se_mean,
    })
}

pub fn estimate_moments(model: &ModelSpec, theta: &ParamVector, batch: &Batch) -> Result<GradientStats> {
    ensure(batch.len() >= 2, || {
        format!("need at least 2 examples for a covariance, got {}", batch.len())
    })?;
    moments_from_grads(&model.per_example_grads(theta, batch)?)
}

/// Unbiased estimate of `tr Σ` over the batch without forming `Σ`.
pub fn trace_estimate(model: &ModelSpec, theta: &ParamVector, batch: &Batch) -> Result<f64> {
    ensure(batch.len() >= 2, || "need at least 2 examples for a covariance".into())?;
    let grads = model.per_example_grads(theta, batch)?;
    let mean = mean_vec(&grads);
    let ss: f64 = grads
        .iter()
        .map(|g| {
            let c = sub(g, &mean);
            dot(&c, &c)
        })
        .sum();
    Ok(ss / (grads.len() as f64 - 1.0))
}

/// Standard error of every entry of the unbiased sample covariance, from the
/// spread of the centered products `(g_i − ḡ_i)(g_j − ḡ_j)`.
pub fn covariance_entry_se(grads: &[ParamVector]) -> Result<Matrix> {
    ensure(grads.len() >= 2, || "need at least 2 samples".into())?;
    let p = grads[0].len();
    let n = grads.len() as f64;
    let mean = mean_vec(grads);
    let centered: Vec<Vec<f64>> = grads.iter().map(|g| sub(g, &mean)).collect();
    let mut se = Matrix::zeros(p);
    for i in 0..p {
        for j in i..p {
            let prods: Vec<f64> = centered.iter().map(|c| c[i] * c[j]).collect();
            let mu = prods.iter().sum::<f64>() / n;
            let var = prods.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0);
            let s = (var / n).sqrt();
            se.set(i, j, s);
            se.set(j, i, s);
        }
    }
    Ok(se)
}

/// Fills in the leading eigenpairs of a compressed or dense covariance.
pub fn stats_eigenpairs(model: &ModelSpec, theta: &ParamVector, batch: &Batch, k: usize) -> Result<EigenSolution> {
    let grads = model.per_example_grads(theta, batch)?;
    if grads[0].len() <= P_MAX {
        let stats = moments_from_grads(&grads)?;
        top_eigenpairs(
            stats.full().expect("dense below P_MAX"),
            k,
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
        )
    } else {
        top_eigenpairs(&SampleCovariance::new(&grads)?, k, DEFAULT_TOL, DEFAULT_MAX_ITER)
    }
}

/// Measures `Cov(g^(A), g^(B))` over `trials` independent batch pairs sharing
/// `overlap` examples and compares it with `|A∩B|/(|A||B|)·Σ`, where `Σ` is
/// estimated from [`REFERENCE_SAMPLES`] fresh examples. Entries are reported
/// row-major over the `P × P` cross-covariance.
#[allow(clippy::too_many_arguments)]
pub fn joint_covariance_check(
    model: &ModelSpec,
    theta: &ParamVector,
    gen: &GeneratorSpec,
    size_a: usize,
    size_b: usize,
    overlap: usize,
    trials: usize,
    seed: u64,
    threshold: f64,
) -> Result<TheoryReport> {
    ensure(size_a >= 1 && size_b >= 1, || "batch sizes must be positive".into())?;
    ensure(overlap <= size_a.min(size_b), || {
        format!("overlap {overlap} exceeds min(|A|, |B|) = {}", size_a.min(size_b))
    })?;
    ensure(trials >= 100, || format!("need at least 100 trials, got {trials}"))?;
    let total = size_a + size_b - overlap;
    let p = model.param_count();

    let pairs: Vec<(ParamVector, ParamVector)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let batch = sample_batch(gen, total, seed, t, Purpose::TrialBatch, 0)?;
            let a = batch.slice(0..size_a)?;
            let b = batch.slice(size_a - overlap..total)?;
            Ok((model.batch_grad(theta, &a)?, model.batch_grad(theta, &b)?))
        })
        .collect::<Result<_>>()?;

    let n = trials as f64;
    let mean_a = mean_vec(&pairs.iter().map(|(a, _)| a.clone()).collect::<Vec<_>>());
    let mean_b = mean_vec(&pairs.iter().map(|(_, b)| b.clone()).collect::<Vec<_>>());
    let mut measured = vec![0.0; p * p];
    let mut se = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            let prods: Vec<f64> = pairs
                .iter()
                .map(|(a, b)| (a[i] - mean_a[i]) * (b[j] - mean_b[j]))
                .collect();
            let cov = prods.iter().sum::<f64>() / (n - 1.0);
            let mu = prods.iter().sum::<f64>() / n;
            let var = prods.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0);
            measured[i * p + j] = cov;
            se[i * p + j] = (var / n).sqrt();
        }
    }

    let factor = overlap as f64 / (size_a as f64 * size_b as f64);
    let reference = sample_batch(gen, REFERENCE_SAMPLES, seed, 0, Purpose::Reference, 0)?;
    let grads = model.per_example_grads(theta, &reference)?;
    let sigma = moments_from_grads(&grads)?;
    let sigma = sigma.full().expect("joint check requires P <= P_MAX");
    let sigma_se = covariance_entry_se(&grads)?;
    let predicted = sigma.as_slice().iter().map(|s| factor * s).collect();
    let predicted_se = sigma_se.as_slice().iter().map(|s| factor * s).collect();

    let mut report = TheoryReport::new(
        format!("cross_covariance(|A|={size_a},|B|={size_b},overlap={overlap})"),
        measured,
        se,
        predicted,
        predicted_se,
        threshold,
        ReportMetadata {
            n: Some(trials),
            seed: Some(seed),
            model: Some(*model),
            generator: Some(gen.clone()),
            ..Default::default()
        },
    );
    report.rows = pairs
        .into_iter()
        .map(|(a, b)| a.into_vec().into_iter().chain(b.into_vec()).collect())
        .collect();
    Ok(report)
}

/// Split-sample estimate of `∂ tr Σ / ∂θ = 2(E[h g] − E[h] G)`.
///
/// `E[h g]` is the mean of per-example `hvp(x, grad(x))` over the whole
/// batch. The cross term applies the first half's Hessians to the second
/// half's mean gradient so the two factors are independent.
pub fn grad_trace_cov(model: &ModelSpec, theta: &ParamVector, batch: &Batch) -> Result<ParamVector> {
    let n = batch.len();
    ensure(n >= 4 && n.is_multiple_of(2), || {
        format!("trace-gradient estimator needs an even batch of at least 4, got {n}")
    })?;
    let first = batch.slice(0..n / 2)?;
    let second = batch.slice(n / 2..n)?;

    let self_terms: Vec<ParamVector> = if n >= 4096 {
        batch
            .examples()
            .par_iter()
            .map(|x| model.hvp(theta, x, &model.grad(theta, x)?))
            .collect::<Result<_>>()?
    } else {
        batch
            .examples()
            .iter()
            .map(|x| model.hvp(theta, x, &model.grad(theta, x)?))
            .collect::<Result<_>>()?
    };
    let hg = mean_vec(&self_terms);
    let g2 = model.batch_grad(theta, &second)?;
    let cross = model.batch_hvp(theta, &first, &g2)?;
    let mut out = sub(&hg, &cross);
    scale(2.0, &mut out);
    ParamVector::new(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorEstimate {
    pub value: ParamVector,
    pub se: Vec<f64>,
}

/// [`grad_trace_cov`] with batch-means standard errors: the batch is cut into
/// `groups` equal even-sized blocks, the estimator is evaluated on each, and
/// their spread is rescaled to the full batch size.
pub fn grad_trace_cov_with_se(
    model: &ModelSpec,
    theta: &ParamVector,
    batch: &Batch,
    groups: usize,
) -> Result<VectorEstimate> {
    let value = grad_trace_cov(model, theta, batch)?;
    ensure(groups >= 2, || "need at least two groups for a standard error".into())?;
    let mut size = batch.len() / groups;
    size -= size % 2;
    ensure(size >= 4, || {
        format!("{} examples are too few for {groups} groups", batch.len())
    })?;
    let rows: Vec<Vec<f64>> = (0..groups)
        .into_par_iter()
        .map(|g| {
            let block = batch.slice(g * size..(g + 1) * size)?;
            Ok(grad_trace_cov(model, theta, &block)?.into_vec())
        })
        .collect::<Result<_>>()?;
    let (_, se_block_mean) = crate::report::mean_and_se(&rows);
    // se of the block mean = sd/√groups; block variance scales as 1/size
    let rescale = (size as f64 * groups as f64 / batch.len() as f64).sqrt();
    let se = se_block_mean.iter().map(|s| s * rescale).collect();
    Ok(VectorEstimate { value, se })
}

/// `g^(train) · (g^(test) − g^(train))`, the train/test gradient-divergence
/// correction to the gap change.
pub fn train_test_divergence(model: &ModelSpec, theta: &ParamVector, train: &Batch, test: &Batch) -> Result<f64> {
    let g_train = model.batch_grad(theta, train)?;
    let g_test = model.batch_grad(theta, test)?;
    Ok(dot(&g_train, &sub(&g_test, &g_train)))
}
