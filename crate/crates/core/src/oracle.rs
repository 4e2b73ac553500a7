//! Closed-form gradient statistics for the linear model with squared loss
//! on Gaussian teacher-student data.
//!
//! With `w = θ − θ*`, input `x ~ N(0, I_d)` and target noise of scale `s`,
//! the per-example gradient `g = x (w·x − s ξ)` has
//!
//! ```text
//! G    = w
//! Σ    = (‖w‖² + s²) I + w wᵀ
//! tr Σ = (d + 1)‖w‖² + d s²
//! ∇tr Σ = 2 (d + 1) w
//! ```
//!
//! The fourth-moment step uses Isserlis' theorem. These forms are checked
//! against Monte Carlo moments in the test suite before anything relies on
//! them.

use crate::domain::{GeneratorSpec, ParamVector};
use crate::error::{ensure, Result};
use crate::gradstats::{Covariance, GradientStats, SampleCount};
use crate::linalg::{dot, sub, Matrix};

pub const MAX_ORACLE_DIM: usize = 64;

fn offset(theta: &ParamVector, gen: &GeneratorSpec) -> Result<Vec<f64>> {
    gen.validate()?;
    ensure(theta.len() == gen.d, || {
        format!("θ has length {} but generator dimension is {}", theta.len(), gen.d)
    })?;
    ensure(gen.d <= MAX_ORACLE_DIM, || {
        format!("oracle supports d <= {MAX_ORACLE_DIM}, got {}", gen.d)
    })?;
    Ok(sub(theta, &gen.teacher))
}

pub fn oracle_trace(theta: &ParamVector, gen: &GeneratorSpec) -> Result<f64> {
    let w = offset(theta, gen)?;
    let d = gen.d as f64;
    let s2 = gen.noise_std * gen.noise_std;
    Ok((d + 1.0) * dot(&w, &w) + d * s2)
}

pub fn oracle_stats(theta: &ParamVector, gen: &GeneratorSpec) -> Result<GradientStats> {
    let w = offset(theta, gen)?;
    let s2 = gen.noise_std * gen.noise_std;
    let mut sigma = Matrix::identity(gen.d);
    sigma.scale(dot(&w, &w) + s2);
    sigma.add_outer(1.0, &w, &w);
    Ok(GradientStats {
        mean: ParamVector::new(w)?,
        covariance: Covariance::Full(sigma),
        sample_count: SampleCount::Exact,
        se_mean: vec![0.0; gen.d],
    })
}

pub fn oracle_grad_trace(theta: &ParamVector, gen: &GeneratorSpec) -> Result<ParamVector> {
    let w = offset(theta, gen)?;
    let c = 2.0 * (gen.d as f64 + 1.0);
    ParamVector::new(w.iter().map(|wi| c * wi).collect())
}

/// `η tr Σ / n`
pub fn oracle_delta_gap(theta: &ParamVector, gen: &GeneratorSpec, eta: f64, n: usize) -> Result<f64> {
    ensure(eta > 0.0 && n >= 1, || "need η > 0 and n >= 1".into())?;
    Ok(eta * oracle_trace(theta, gen)? / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(teacher: &[f64], s: f64) -> GeneratorSpec {
        GeneratorSpec::new(teacher.len(), ParamVector::new(teacher.to_vec()).unwrap(), s).unwrap()
    }

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn symmetric_point() {
        let g = gen(&[1.0, 0.0, 0.0], 0.5);
        let s = oracle_stats(&pv(&[1.0, 0.0, 0.0]), &g).unwrap();
        assert!(s.mean.iter().all(|v| *v == 0.0));
        assert_eq!(s.full().unwrap(), &{
            let mut m = Matrix::identity(3);
            m.scale(0.25);
            m
        });
        assert_eq!(
            oracle_grad_trace(&pv(&[1.0, 0.0, 0.0]), &g).unwrap().as_slice(),
            &[0.0; 3]
        );
    }

    #[test]
    fn hand_values() {
        let g = gen(&[0.0], 1.0);
        let s = oracle_stats(&pv(&[1.0]), &g).unwrap();
        assert_eq!(s.mean.as_slice(), &[1.0]);
        assert_eq!(s.full().unwrap().as_slice(), &[3.0]);
        assert_eq!(s.trace(), 3.0);
        assert_eq!(oracle_grad_trace(&pv(&[1.0]), &g).unwrap().as_slice(), &[4.0]);
        assert!((oracle_delta_gap(&pv(&[1.0]), &g, 0.01, 10).unwrap() - 0.003).abs() < 1e-18);

        let g2 = gen(&[0.0, 0.0], 0.0);
        let s2 = oracle_stats(&pv(&[1.0, 0.0]), &g2).unwrap();
        assert_eq!(s2.full().unwrap(), &Matrix::diag(&[2.0, 1.0]));
        assert_eq!(s2.trace(), 3.0);

        let g5 = GeneratorSpec::with_default_teacher(5, 1.0).unwrap();
        let theta = pv(&[2.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((oracle_delta_gap(&theta, &g5, 1e-3, 50).unwrap() - 2.2e-4).abs() < 1e-18);
        assert_eq!(
            oracle_delta_gap(
                &pv(&[1.0, 0.0, 0.0, 0.0, 0.0]),
                &gen(&[1.0, 0.0, 0.0, 0.0, 0.0], 0.0),
                0.1,
                3
            )
            .unwrap(),
            0.0
        );
    }

    #[test]
    fn grad_trace_is_parallel_to_offset() {
        let g = gen(&[0.3, -0.2, 0.9], 0.4);
        let theta = pv(&[1.0, 2.0, -1.0]);
        let w = sub(&theta, &g.teacher);
        let gt = oracle_grad_trace(&theta, &g).unwrap();
        let cos = dot(&w, &gt) / (dot(&w, &w).sqrt() * dot(&gt, &gt).sqrt());
        assert!((cos - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mismatched_dimension() {
        let g = gen(&[0.0, 0.0], 1.0);
        assert!(oracle_stats(&pv(&[1.0]), &g).is_err());
        assert!(oracle_grad_trace(&pv(&[1.0, 2.0, 3.0]), &g).is_err());
        let big = GeneratorSpec::with_default_teacher(65, 1.0).unwrap();
        assert!(oracle_stats(&ParamVector::zeros(65), &big).is_err());
    }
}
