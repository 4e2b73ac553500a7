//! Log-log slope fits for the remainder terms of the expansions.

use serde::{Deserialize, Serialize};

use super::{delta_gap, gradient_shift, two_step_exact, two_step_taylor, GapMode, ShiftMode};
use crate::domain::{Batch, ParamVector};
use crate::error::{ensure, invalid, Result};
use crate::linalg::{norm, sub};
use crate::models::ModelSpec;

/// Least-squares slope of `ln(residual)` against `ln(η)`.
pub fn order_exponent(points: &[(f64, f64)]) -> Result<f64> {
    ensure(points.len() >= 3, || {
        format!("need at least 3 points for an order fit, got {}", points.len())
    })?;
    for (eta, r) in points {
        if !(*eta > 0.0 && eta.is_finite()) {
            return Err(invalid(format!("step size must be positive, got {eta}")));
        }
        if !(*r > 0.0 && r.is_finite()) {
            return Err(invalid(format!("residual must be positive, got {r} at η = {eta}")));
        }
    }
    for (i, (a, _)) in points.iter().enumerate() {
        ensure(points[i + 1..].iter().all(|(b, _)| b != a), || {
            format!("duplicate step size {a}")
        })?;
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(e, _)| e.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, r)| r.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    /// `(η, residual)` pairs.
    pub points: Vec<(f64, f64)>,
    pub exponent: f64,
}

impl OrderFit {
    fn from_points(points: Vec<(f64, f64)>) -> Result<Self> {
        let exponent = order_exponent(&points)?;
        Ok(Self { points, exponent })
    }

    pub fn within(&self, lo: f64, hi: f64) -> bool {
        self.exponent >= lo && self.exponent <= hi
    }
}

/// `‖two_step_exact − two_step_taylor‖` over `etas`; expected slope 3.
pub fn two_step_order_fit(
    model: &ModelSpec,
    theta: &ParamVector,
    b: &Batch,
    c: &Batch,
    etas: &[f64],
) -> Result<OrderFit> {
    let points = etas
        .iter()
        .map(|&eta| {
            let exact = two_step_exact(model, theta, b, c, eta)?;
            let taylor = two_step_taylor(model, theta, b, c, eta)?;
            Ok((eta, norm(&sub(&exact, &taylor))))
        })
        .collect::<Result<_>>()?;
    OrderFit::from_points(points)
}

/// `‖δg_definition − δg_closed_form‖` over `etas`; expected slope 2.
pub fn shift_mode_order_fit(
    model: &ModelSpec,
    theta: &ParamVector,
    b: &Batch,
    c: &Batch,
    etas: &[f64],
) -> Result<OrderFit> {
    let points = etas
        .iter()
        .map(|&eta| {
            let def = gradient_shift(model, theta, b, c, eta, ShiftMode::Definition)?;
            let cf = gradient_shift(model, theta, b, c, eta, ShiftMode::ClosedForm)?;
            Ok((eta, norm(&sub(&def, &cf))))
        })
        .collect::<Result<_>>()?;
    OrderFit::from_points(points)
}

/// `|δε_exact − δε_first_order|` over `etas`; expected slope 2.
pub fn delta_gap_order_fit(
    model: &ModelSpec,
    theta: &ParamVector,
    train: &Batch,
    test: &Batch,
    etas: &[f64],
) -> Result<OrderFit> {
    let points = etas
        .iter()
        .map(|&eta| {
            let exact = delta_gap(model, theta, train, test, eta, GapMode::Exact)?;
            let first = delta_gap(model, theta, train, test, eta, GapMode::FirstOrder)?;
            Ok((eta, (exact - first).abs()))
        })
        .collect::<Result<_>>()?;
    OrderFit::from_points(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
        [1e-3, 2e-3, 4e-3].iter().map(|&e| (e, f(e))).collect()
    }

    #[test]
    fn exact_power_laws() {
        assert!((order_exponent(&pts(|e| e.powi(3))).unwrap() - 3.0).abs() < 1e-12);
        assert!((order_exponent(&pts(|e| 7.5 * e * e)).unwrap() - 2.0).abs() < 1e-12);
        assert!((order_exponent(&pts(|e| e)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs() {
        assert!(order_exponent(&pts(|_| 0.0)).is_err());
        assert!(order_exponent(&pts(|e| -e)).is_err());
        assert!(order_exponent(&[(1e-3, 1.0), (2e-3, 2.0)]).is_err());
        assert!(order_exponent(&[(1e-3, 1.0), (1e-3, 2.0), (2e-3, 1.0)]).is_err());
    }
}
