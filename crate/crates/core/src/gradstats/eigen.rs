//! Leading eigenpairs of a symmetric PSD operator by power iteration with
//! deflation.
//!
//! Each pair starts from a seeded random vector and iterates `v ← P A v`,
//! where `P` projects out the pairs already found. Convergence is judged on
//! the residual of the undeflated operator, `‖A v − σ v‖`. Within a
//! degenerate eigenspace the returned vector is whichever direction the
//! seeded start vector picks out; only the subspace is meaningful there.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::ParamVector;
use crate::error::{ensure, Error, Result};
use crate::linalg::{axpy, dot, norm, Matrix};
use crate::rng::{stream, Purpose};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 10_000;
const START_SEED: u64 = 0x5eed_e16e;

/// Matrix-free symmetric operator.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Vec<f64>;
    fn trace(&self) -> f64;
}

impl SymmetricOperator for Matrix {
    fn dim(&self) -> usize {
        Matrix::dim(self)
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matvec(v)
    }

    fn trace(&self) -> f64 {
        Matrix::trace(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: ParamVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSolution {
    pub pairs: Vec<Eigenpair>,
    /// `true` at position `i` when `σ_i − σ_{i+1} < 1e−6·σ_1`; the last entry
    /// is always `false` since its successor was not computed.
    pub near_degenerate: Vec<bool>,
    pub residuals: Vec<f64>,
}

fn orthogonalize(v: &mut [f64], basis: &[Eigenpair]) {
    // two passes of classical Gram-Schmidt
    for _ in 0..2 {
        for q in basis {
            let c = dot(&q.vector, v);
            axpy(-c, &q.vector, v);
        }
    }
}

fn fix_sign(v: &mut [f64]) {
    let pivot = v
        .iter()
        .enumerate()
        .fold(
            (0, 0.0_f64),
            |(bi, bv), (i, x)| {
                if x.abs() > bv {
                    (i, x.abs())
                } else {
                    (bi, bv)
                }
            },
        )
        .0;
    if v[pivot] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

pub fn top_eigenpairs(op: &dyn SymmetricOperator, k: usize, tol: f64, max_iter: usize) -> Result<EigenSolution> {
    let dim = op.dim();
    ensure(k >= 1, || "need at least one eigenpair".into())?;
    ensure(k <= dim, || {
        format!("requested {k} eigenpairs of a {dim}-dimensional operator")
    })?;
    ensure(tol > 0.0 && max_iter >= 1, || {
        "tol must be positive and max_iter >= 1".into()
    })?;

    let trace_scale = op.trace().max(0.0) / dim as f64;
    let mut pairs: Vec<Eigenpair> = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);

    for index in 0..k {
        let mut rng = stream(START_SEED, index as u64, Purpose::EigenStart);
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        orthogonalize(&mut v, &pairs);
        let nv = norm(&v);
        ensure(nv > 0.0, || "degenerate start vector".into())?;
        v.iter_mut().for_each(|x| *x /= nv);

        let mut best = f64::INFINITY;
        let mut done = None;
        for _ in 0..max_iter {
            let av = op.apply(&v);
            let sigma = dot(&v, &av);
            let mut r = av.clone();
            axpy(-sigma, &v, &mut r);
            let resid = norm(&r);
            best = best.min(resid);
            let top = pairs.first().map_or(sigma.abs(), |p| p.value);
            if resid <= tol * top.max(trace_scale) {
                done = Some((sigma, resid));
                break;
            }
            let mut w = av;
            orthogonalize(&mut w, &pairs);
            let nw = norm(&w);
            if nw == 0.0 {
                // v lies in the null space of the deflated operator
                done = Some((sigma, resid));
                break;
            }
            v = w.into_iter().map(|x| x / nw).collect();
        }
        let Some((sigma, resid)) = done else {
            return Err(Error::Convergence {
                index,
                iterations: max_iter,
                best_residual: best,
            });
        };
        fix_sign(&mut v);
        pairs.push(Eigenpair {
            value: sigma,
            vector: ParamVector::new(v)?,
        });
        residuals.push(resid);
    }

    let top = pairs[0].value;
    let near_degenerate = (0..k)
        .map(|i| i + 1 < k && pairs[i].value - pairs[i + 1].value < 1e-6 * top)
        .collect();
    Ok(EigenSolution {
        pairs,
        near_degenerate,
        residuals,
    })
}

/// Largest `|⟨v_i, v_j⟩ − δ_ij|` over the pairs' vectors.
pub fn gram_deviation(pairs: &[Eigenpair]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in pairs.iter().enumerate() {
        for (j, b) in pairs.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot(&a.vector, &b.vector) - target).abs());
        }
    }
    worst
}
