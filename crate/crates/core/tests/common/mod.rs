#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sgdgap::linalg::norm;
use sgdgap::{Batch, Example, ExperimentConfig, GeneratorSpec, ModelSpec, ParamVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn random_theta(rng: &mut ChaCha8Rng, model: &ModelSpec) -> ParamVector {
    ParamVector::new(normal_vec(rng, model.param_count(), 0.7)).unwrap()
}

pub fn random_batch(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Batch {
    let examples = (0..n)
        .map(|_| Example::new(normal_vec(rng, d, 1.0), rng.sample(StandardNormal)).unwrap())
        .collect();
    Batch::with_sequential_ids(examples, 0).unwrap()
}

/// Central differences with step `1e-5 (1 + ‖θ‖∞)`.
pub fn fd_grad(theta: &[f64], f: impl Fn(&ParamVector) -> f64) -> Vec<f64> {
    let h = 1e-5 * (1.0 + theta.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    (0..theta.len())
        .map(|i| {
            let mut up = theta.to_vec();
            let mut dn = theta.to_vec();
            up[i] += h;
            dn[i] -= h;
            let fu = f(&ParamVector::new(up).unwrap());
            let fd = f(&ParamVector::new(dn).unwrap());
            (fu - fd) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    sgdgap::linalg::dot(a, b) / (norm(a) * norm(b))
}

pub fn linear_gen(d: usize, s: f64) -> GeneratorSpec {
    GeneratorSpec::with_default_teacher(d, s).unwrap()
}

/// θ with `θ − θ* = w` for the default teacher.
pub fn theta_from_w(w: &[f64]) -> ParamVector {
    let mut t = w.to_vec();
    t[0] += 1.0;
    ParamVector::new(t).unwrap()
}

pub fn config(json: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(json).unwrap()
}

/// The linear-Gaussian ensemble setup: d = 5, w = e₁, s = 1, N = 50.
pub fn linear_ensemble_config(eta: f64, m: usize, seed: u64) -> ExperimentConfig {
    config(&format!(
        r#"{{
            "model": {{"kind": "linear_quadratic"}},
            "generator": {{"d": 5, "noise_std": 1.0}},
            "learning_rate": {eta},
            "n_train": 50,
            "n_test": 50,
            "ensemble_size": {m},
            "seed": {seed}
        }}"#
    ))
}

pub fn mlp_config(seed: u64) -> ExperimentConfig {
    config(&format!(
        r#"{{
            "model": {{"kind": "mlp_tanh", "hidden": 8, "init_seed": 3}},
            "generator": {{"d": 4, "noise_std": 0.5}},
            "learning_rate": 0.01,
            "n_train": 40,
            "n_test": 40,
            "ensemble_size": 2,
            "seed": {seed}
        }}"#
    ))
}
