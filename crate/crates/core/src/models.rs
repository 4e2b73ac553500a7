//! Differentiable models with per-example loss, gradient and exact
//! Hessian-vector products.
//!
//! `mlp_tanh` is `f(x) = Σ_k a_k tanh(W_k·x + b_k) + c` with parameters
//! flattened as `[W (row-major, hidden × input), b, a, c]`. Its HVP is a
//! forward-over-reverse sweep: the reverse pass gives `∇f`, and pushing the
//! tangent `v` through that pass gives `∇²f·v` without forming the Hessian.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Batch, Example, ParamVector};
use crate::error::{ensure, Result};
use crate::linalg::{axpy, dot, scale};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `½(θ·x − y)²`
    LinearQuadratic { input_dim: usize },
    /// One hidden tanh layer, scalar output, `½(f(x) − y)²`.
    MlpTanh {
        input_dim: usize,
        hidden: usize,
        init_seed: u64,
    },
}

impl ModelSpec {
    pub fn linear(input_dim: usize) -> Self {
        ModelSpec::LinearQuadratic { input_dim }
    }

    pub fn mlp(input_dim: usize, hidden: usize, init_seed: u64) -> Self {
        ModelSpec::MlpTanh {
            input_dim,
            hidden,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelSpec::LinearQuadratic { input_dim } => {
                ensure(input_dim >= 1, || "linear model needs input_dim >= 1".into())
            }
            ModelSpec::MlpTanh { input_dim, hidden, .. } => ensure(input_dim >= 1 && hidden >= 1, || {
                "mlp needs input_dim >= 1 and hidden >= 1".into()
            }),
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            ModelSpec::LinearQuadratic { input_dim } | ModelSpec::MlpTanh { input_dim, .. } => input_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            ModelSpec::LinearQuadratic { input_dim } => input_dim,
            ModelSpec::MlpTanh { input_dim, hidden, .. } => hidden * input_dim + 2 * hidden + 1,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, ModelSpec::LinearQuadratic { .. })
    }

    /// Linear: zeros. MLP: zero biases, weights ~ N(0, 1/fan_in) from `init_seed`.
    pub fn init_params(&self) -> ParamVector {
        match *self {
            ModelSpec::LinearQuadratic { input_dim } => ParamVector::zeros(input_dim),
            ModelSpec::MlpTanh {
                input_dim,
                hidden,
                init_seed,
            } => {
                let mut rng = stream(init_seed, 0, Purpose::ModelInit);
                let w_in = Normal::new(0.0, (1.0 / input_dim as f64).sqrt()).unwrap();
                let w_out = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).unwrap();
                let mut theta = vec![0.0; self.param_count()];
                let layout = MlpLayout::new(input_dim, hidden);
                for w in &mut theta[layout.w_range()] {
                    *w = w_in.sample(&mut rng);
                }
                for a in &mut theta[layout.a_range()] {
                    *a = w_out.sample(&mut rng);
                }
                ParamVector::from_vec_unchecked(theta)
            }
        }
    }

    fn check(&self, theta: &[f64], x: &Example) -> Result<()> {
        ensure(theta.len() == self.param_count(), || {
            format!(
                "parameter vector has length {} but model has {} parameters",
                theta.len(),
                self.param_count()
            )
        })?;
        ensure(x.dim() == self.input_dim(), || {
            format!(
                "example has input dimension {} but model expects {}",
                x.dim(),
                self.input_dim()
            )
        })
    }

    pub fn predict(&self, theta: &ParamVector, x: &Example) -> Result<f64> {
        self.check(theta, x)?;
        Ok(match *self {
            ModelSpec::LinearQuadratic { .. } => dot(theta, &x.input),
            ModelSpec::MlpTanh { input_dim, hidden, .. } => {
                MlpLayout::new(input_dim, hidden).forward(theta, &x.input).output
            }
        })
    }

    pub fn loss(&self, theta: &ParamVector, x: &Example) -> Result<f64> {
        let r = self.predict(theta, x)? - x.target;
        Ok(0.5 * r * r)
    }

    pub fn grad(&self, theta: &ParamVector, x: &Example) -> Result<ParamVector> {
        self.check(theta, x)?;
        let g = match *self {
            ModelSpec::LinearQuadratic { .. } => {
                let r = dot(theta, &x.input) - x.target;
                x.input.iter().map(|xi| r * xi).collect()
            }
            ModelSpec::MlpTanh { input_dim, hidden, .. } => {
                let layout = MlpLayout::new(input_dim, hidden);
                let fw = layout.forward(theta, &x.input);
                let mut g = layout.output_grad(theta, &x.input, &fw);
                scale(fw.output - x.target, &mut g);
                g
            }
        };
        Ok(ParamVector::from_vec_unchecked(g))
    }

    /// Per-example Hessian of the loss applied to `v`.
    pub fn hvp(&self, theta: &ParamVector, x: &Example, v: &[f64]) -> Result<ParamVector> {
        self.check(theta, x)?;
        ensure(v.len() == self.param_count(), || {
            format!(
                "direction has length {} but model has {} parameters",
                v.len(),
                self.param_count()
            )
        })?;
        let hv = match *self {
            ModelSpec::LinearQuadratic { .. } => {
                let xv = dot(&x.input, v);
                x.input.iter().map(|xi| xi * xv).collect()
            }
            ModelSpec::MlpTanh { input_dim, hidden, .. } => {
                let layout = MlpLayout::new(input_dim, hidden);
                let fw = layout.forward(theta, &x.input);
                let r = fw.output - x.target;
                // H v = ∇f (∇f·v) + r ∇²f v
                let gf = layout.output_grad(theta, &x.input, &fw);
                let mut hv = layout.output_hess_vec(theta, &x.input, &fw, v);
                scale(r, &mut hv);
                axpy(dot(&gf, v), &gf, &mut hv);
                hv
            }
        };
        Ok(ParamVector::from_vec_unchecked(hv))
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        ensure(!batch.is_empty(), || "batch must be nonempty".into())
    }

    /// Mean per-example loss, accumulated in batch order.
    pub fn batch_loss(&self, theta: &ParamVector, batch: &Batch) -> Result<f64> {
        self.check_batch(batch)?;
        let mut total = 0.0;
        for x in batch.examples() {
            total += self.loss(theta, x)?;
        }
        Ok(total / batch.len() as f64)
    }

    pub fn batch_grad(&self, theta: &ParamVector, batch: &Batch) -> Result<ParamVector> {
        self.check_batch(batch)?;
        let mut acc = vec![0.0; self.param_count()];
        for x in batch.examples() {
            axpy(1.0, &self.grad(theta, x)?, &mut acc);
        }
        scale(1.0 / batch.len() as f64, &mut acc);
        Ok(ParamVector::from_vec_unchecked(acc))
    }

    /// Batch Hessian estimator applied to `v`.
    pub fn batch_hvp(&self, theta: &ParamVector, batch: &Batch, v: &[f64]) -> Result<ParamVector> {
        self.check_batch(batch)?;
        let mut acc = vec![0.0; self.param_count()];
        for x in batch.examples() {
            axpy(1.0, &self.hvp(theta, x, v)?, &mut acc);
        }
        scale(1.0 / batch.len() as f64, &mut acc);
        Ok(ParamVector::from_vec_unchecked(acc))
    }

    /// Per-example gradients in batch order. Evaluated in parallel for large
    /// batches; the output order never depends on scheduling.
    pub fn per_example_grads(&self, theta: &ParamVector, batch: &Batch) -> Result<Vec<ParamVector>> {
        self.check_batch(batch)?;
        if batch.len() >= 4096 {
            batch.examples().par_iter().map(|x| self.grad(theta, x)).collect()
        } else {
            batch.examples().iter().map(|x| self.grad(theta, x)).collect()
        }
    }
}

struct MlpLayout {
    d: usize,
    h: usize,
}

struct Forward {
    /// tanh(z_k)
    act: Vec<f64>,
    output: f64,
}

impl MlpLayout {
    fn new(d: usize, h: usize) -> Self {
        Self { d, h }
    }

    fn w_range(&self) -> std::ops::Range<usize> {
        0..self.h * self.d
    }

    fn b_off(&self) -> usize {
        self.h * self.d
    }

    fn a_off(&self) -> usize {
        self.h * self.d + self.h
    }

    fn a_range(&self) -> std::ops::Range<usize> {
        self.a_off()..self.a_off() + self.h
    }

    fn c_off(&self) -> usize {
        self.h * self.d + 2 * self.h
    }

    fn w_row<'a>(&self, theta: &'a [f64], k: usize) -> &'a [f64] {
        &theta[k * self.d..(k + 1) * self.d]
    }

    fn forward(&self, theta: &[f64], x: &[f64]) -> Forward {
        let mut act = Vec::with_capacity(self.h);
        let mut output = theta[self.c_off()];
        for k in 0..self.h {
            let z = dot(self.w_row(theta, k), x) + theta[self.b_off() + k];
            let t = z.tanh();
            output += theta[self.a_off() + k] * t;
            act.push(t);
        }
        Forward { act, output }
    }

    /// ∇_θ f(x)
    fn output_grad(&self, theta: &[f64], x: &[f64], fw: &Forward) -> Vec<f64> {
        let mut g = vec![0.0; self.c_off() + 1];
        for k in 0..self.h {
            let t = fw.act[k];
            let dz = theta[self.a_off() + k] * (1.0 - t * t);
            for (j, xj) in x.iter().enumerate() {
                g[k * self.d + j] = dz * xj;
            }
            g[self.b_off() + k] = dz;
            g[self.a_off() + k] = t;
        }
        g[self.c_off()] = 1.0;
        g
    }

    /// ∇²_θ f(x) · v, the tangent of `output_grad` along `v`.
    fn output_hess_vec(&self, theta: &[f64], x: &[f64], fw: &Forward, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.c_off() + 1];
        for k in 0..self.h {
            let t = fw.act[k];
            let s1 = 1.0 - t * t;
            let s2 = -2.0 * t * s1;
            // tangent of z_k
            let z_dot = dot(&v[k * self.d..(k + 1) * self.d], x) + v[self.b_off() + k];
            let a = theta[self.a_off() + k];
            let a_dot = v[self.a_off() + k];
            let dz_dot = a_dot * s1 + a * s2 * z_dot;
            for (j, xj) in x.iter().enumerate() {
                out[k * self.d + j] = dz_dot * xj;
            }
            out[self.b_off() + k] = dz_dot;
            out[self.a_off() + k] = s1 * z_dot;
        }
        out
    }
}
