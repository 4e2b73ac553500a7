//! Loss-change, generalization-gap and two-step update identities, each in
//! an exact form (direct evaluation) and a leading-order form (formula).
//!
//! Sign convention for the gradient shift: with `δθ_GD` the displacement of
//! two full-batch steps on `B ∪ C` and `δθ_SGD` that of a step on `B`
//! followed by a step on `C`,
//!
//! ```text
//! δθ_GD − δθ_SGD = −η δg      so      δθ_SGD = δθ_GD + η δg
//! ```
//!
//! and in ensemble mean `⟨δg⟩ = −½ ∇⟨δε⟩ = −(η / 2N) ∇tr Σ`. The quadratic
//! model, where the expansion terminates, pins this sign in the tests.

mod ensemble;
mod orders;

pub use ensemble::{emulation_fit, ensemble_report, EmulationFit, Quantity};
pub use orders::{delta_gap_order_fit, order_exponent, shift_mode_order_fit, two_step_order_fit, OrderFit};

use serde::{Deserialize, Serialize};

use crate::domain::{Batch, ParamVector};
use crate::error::{ensure, Result};
use crate::gradstats::GradientStats;
use crate::linalg::{add, axpy, dot, scale, sub};
use crate::models::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    Exact,
    #[default]
    FirstOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    #[default]
    Definition,
    ClosedForm,
}

fn check_eta(eta: f64) -> Result<()> {
    ensure(eta.is_finite() && eta >= 0.0, || {
        format!("learning rate must be finite and nonnegative, got {eta}")
    })
}

/// `−η g_a·g_b`
pub fn delta_loss_first_order(g_a: &[f64], g_b: &[f64], eta: f64) -> Result<f64> {
    ensure(g_a.len() == g_b.len(), || {
        format!("gradient lengths differ: {} vs {}", g_a.len(), g_b.len())
    })?;
    Ok(-eta * dot(g_a, g_b))
}

/// `ℓ^(a)(θ − η g^(b)(θ)) − ℓ^(a)(θ)`
pub fn delta_loss_exact(model: &ModelSpec, theta: &ParamVector, a: &Batch, b: &Batch, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    let step = step_displacement(model, theta, b, eta)?;
    let moved = ParamVector::new(add(theta, &step))?;
    Ok(model.batch_loss(&moved, a)? - model.batch_loss(theta, a)?)
}

/// `−η (‖G‖² + f tr Σ)` with `f` the batch overlap factor.
pub fn predicted_avg_delta_loss(stats: &GradientStats, overlap_f: f64, eta: f64) -> f64 {
    -eta * (stats.mean_norm_sq() + overlap_f * stats.trace())
}

/// Change of the gap `δℓ_test − δℓ_train` after one full-batch step on `train`.
pub fn delta_gap(
    model: &ModelSpec,
    theta: &ParamVector,
    train: &Batch,
    test: &Batch,
    eta: f64,
    mode: GapMode,
) -> Result<f64> {
    check_eta(eta)?;
    ensure(train.is_disjoint(test), || {
        "train and test batches share example ids".into()
    })?;
    match mode {
        GapMode::Exact => {
            Ok(delta_loss_exact(model, theta, test, train, eta)? - delta_loss_exact(model, theta, train, train, eta)?)
        }
        GapMode::FirstOrder => {
            let g_train = model.batch_grad(theta, train)?;
            let g_test = model.batch_grad(theta, test)?;
            Ok(eta * dot(&g_train, &sub(&g_train, &g_test)))
        }
    }
}

/// `η tr Σ / n`
pub fn predicted_avg_delta_gap(trace: f64, eta: f64, n: usize) -> Result<f64> {
    ensure(trace >= 0.0 && n >= 1, || {
        format!("need trace >= 0 and n >= 1, got trace {trace}, n {n}")
    })?;
    Ok(eta * trace / n as f64)
}

/// `−η g^(batch)(θ)`
fn step_displacement(model: &ModelSpec, theta: &ParamVector, batch: &Batch, eta: f64) -> Result<Vec<f64>> {
    let mut g = model.batch_grad(theta, batch)?.into_vec();
    scale(-eta, &mut g);
    Ok(g)
}

/// Total displacement of sequential steps on `batches`, accumulated step by
/// step rather than as `θ_end − θ_0` so small displacements keep their
/// precision.
pub(crate) fn sequential_displacement(
    model: &ModelSpec,
    theta: &ParamVector,
    batches: &[&Batch],
    eta: f64,
) -> Result<Vec<f64>> {
    check_eta(eta)?;
    let mut total = vec![0.0; theta.len()];
    let mut current = theta.clone();
    for (i, b) in batches.iter().enumerate() {
        let d = step_displacement(model, &current, b, eta)?;
        axpy(1.0, &d, &mut total);
        if i + 1 < batches.len() {
            current = ParamVector::new(add(theta, &total))?;
        }
    }
    Ok(total)
}

/// `θ₂ − θ₀` for a step on `b` followed by a step on `c`.
pub fn two_step_exact(model: &ModelSpec, theta: &ParamVector, b: &Batch, c: &Batch, eta: f64) -> Result<ParamVector> {
    ParamVector::new(sequential_displacement(model, theta, &[b, c], eta)?)
}

/// `−η (g^(b) + g^(c)) + η² h^(c) g^(b)`, everything at `θ₀`.
pub fn two_step_taylor(model: &ModelSpec, theta: &ParamVector, b: &Batch, c: &Batch, eta: f64) -> Result<ParamVector> {
    check_eta(eta)?;
    let gb = model.batch_grad(theta, b)?;
    let gc = model.batch_grad(theta, c)?;
    let hc_gb = model.batch_hvp(theta, c, &gb)?;
    let mut out = add(&gb, &gc);
    scale(-eta, &mut out);
    axpy(eta * eta, &hc_gb, &mut out);
    ParamVector::new(out)
}

fn check_shift_batches(batches: &[&Batch]) -> Result<()> {
    ensure(batches.len() >= 2, || "need at least two batches".into())?;
    let size = batches[0].len();
    ensure(batches.iter().all(|b| b.len() == size), || {
        "batches must have equal sizes".into()
    })?;
    for (i, a) in batches.iter().enumerate() {
        for b in &batches[i + 1..] {
            ensure(a.is_disjoint(b), || "batches share example ids".into())?;
        }
    }
    Ok(())
}

/// `(δθ_SGD − δθ_GD) / (η k / 2)` for `k` disjoint batches: SGD steps once on
/// each batch in order, GD takes `k` steps on their union. For `k = 2` this
/// is the definition-mode gradient shift.
pub fn epoch_gradient_shift(
    model: &ModelSpec,
    theta: &ParamVector,
    batches: &[Batch],
    eta: f64,
) -> Result<ParamVector> {
    let refs: Vec<&Batch> = batches.iter().collect();
    epoch_shift_refs(model, theta, &refs, eta)
}

fn epoch_shift_refs(model: &ModelSpec, theta: &ParamVector, batches: &[&Batch], eta: f64) -> Result<ParamVector> {
    check_shift_batches(batches)?;
    ensure(eta > 0.0 && eta.is_finite(), || {
        format!("learning rate must be positive, got {eta}")
    })?;
    let k = batches.len();
    let union = Batch::concat(batches)?;
    let sgd = sequential_displacement(model, theta, batches, eta)?;
    let gd = sequential_displacement(model, theta, &vec![&union; k], eta)?;
    let mut shift = sub(&sgd, &gd);
    scale(1.0 / (eta * k as f64 / 2.0), &mut shift);
    ParamVector::new(shift)
}

/// Gradient shift `δg` between two half-batch SGD steps (`b` then `c`) and
/// two full-batch GD steps on `b ∪ c`.
///
/// `ClosedForm` evaluates
/// `−(η/8)[∇‖g^(b) − g^(c)‖² + 4(h^(b) g^(c) − h^(c) g^(b))]`
/// with `∇‖g^(b) − g^(c)‖² = 2(h^(b) − h^(c))(g^(b) − g^(c))`.
pub fn gradient_shift(
    model: &ModelSpec,
    theta: &ParamVector,
    b: &Batch,
    c: &Batch,
    eta: f64,
    mode: ShiftMode,
) -> Result<ParamVector> {
    match mode {
        ShiftMode::Definition => epoch_shift_refs(model, theta, &[b, c], eta),
        ShiftMode::ClosedForm => {
            check_shift_batches(&[b, c])?;
            check_eta(eta)?;
            let gb = model.batch_grad(theta, b)?;
            let gc = model.batch_grad(theta, c)?;
            let diff = sub(&gb, &gc);
            let hb_d = model.batch_hvp(theta, b, &diff)?;
            let hc_d = model.batch_hvp(theta, c, &diff)?;
            let hb_gc = model.batch_hvp(theta, b, &gc)?;
            let hc_gb = model.batch_hvp(theta, c, &gb)?;
            let mut bracket = sub(&hb_d, &hc_d);
            scale(2.0, &mut bracket);
            axpy(4.0, &hb_gc, &mut bracket);
            axpy(-4.0, &hc_gb, &mut bracket);
            scale(-eta / 8.0, &mut bracket);
            ParamVector::new(bracket)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Example;
    use crate::gradstats::{Covariance, SampleCount};
    use crate::linalg::rel_diff;

    fn batch(rows: &[(&[f64], f64)], first_id: u64) -> Batch {
        let ex = rows
            .iter()
            .map(|(x, y)| Example::new(x.to_vec(), *y).unwrap())
            .collect();
        Batch::with_sequential_ids(ex, first_id).unwrap()
    }

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn stats(mean: &[f64], trace: f64) -> GradientStats {
        GradientStats {
            mean: pv(mean),
            covariance: Covariance::Compressed {
                trace,
                eigenpairs: vec![],
            },
            sample_count: SampleCount::Exact,
            se_mean: vec![0.0; mean.len()],
        }
    }

    #[test]
    fn first_order_loss_change() {
        assert_eq!(delta_loss_first_order(&[0.0, 0.0], &[3.0, 1.0], 0.1).unwrap(), 0.0);
        assert!((delta_loss_first_order(&[1.0, 1.0], &[1.0, 1.0], 0.1).unwrap() + 0.2).abs() < 1e-16);
        assert_eq!(delta_loss_first_order(&[1.0, 0.0], &[0.0, 1.0], 0.1).unwrap(), 0.0);
        assert!(delta_loss_first_order(&[1.0], &[1.0, 2.0], 0.1).is_err());
    }

    #[test]
    fn exact_loss_change_hand_value() {
        let model = ModelSpec::linear(1);
        let b = batch(&[(&[1.0], 0.0)], 0);
        let t = pv(&[1.0]);
        assert_eq!(delta_loss_exact(&model, &t, &b, &b, 0.0).unwrap(), 0.0);
        let v = delta_loss_exact(&model, &t, &b, &b, 0.1).unwrap();
        assert!((v + 0.095).abs() < 1e-15);
        // the O(η²) remainder quarters when η halves
        let r1 = v - delta_loss_first_order(&[1.0], &[1.0], 0.1).unwrap();
        let r2 =
            delta_loss_exact(&model, &t, &b, &b, 0.05).unwrap() - delta_loss_first_order(&[1.0], &[1.0], 0.05).unwrap();
        assert!((r1 / r2 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn predicted_loss_change() {
        assert_eq!(predicted_avg_delta_loss(&stats(&[0.0], 3.0), 0.0, 0.1), 0.0);
        let v = predicted_avg_delta_loss(&stats(&[1.0], 3.0), 0.1, 0.01);
        assert!((v + 0.013).abs() < 1e-15);
        let s = stats(&[1.0, 2.0], 3.0);
        assert_eq!(predicted_avg_delta_loss(&s, 0.0, 0.5), -0.5 * 5.0);
    }

    #[test]
    fn predicted_gap() {
        assert_eq!(predicted_avg_delta_gap(0.0, 0.1, 5).unwrap(), 0.0);
        assert!((predicted_avg_delta_gap(3.0, 0.01, 10).unwrap() - 0.003).abs() < 1e-18);
        let a = predicted_avg_delta_gap(3.0, 0.01, 10).unwrap();
        let b = predicted_avg_delta_gap(3.0, 0.01, 100).unwrap();
        assert!((a / b - 10.0).abs() < 1e-12);
        assert!(predicted_avg_delta_gap(-1.0, 0.01, 10).is_err());
    }

    #[test]
    fn gap_modes_and_disjointness() {
        let model = ModelSpec::linear(2);
        let t = pv(&[0.5, -0.5]);
        let train = batch(&[(&[1.0, 0.0], 1.0), (&[0.0, 1.0], 0.0)], 0);
        let test = batch(&[(&[1.0, 0.0], 1.0), (&[0.0, 1.0], 0.0)], 10);
        // identical gradient content
        assert_eq!(
            delta_gap(&model, &t, &train, &test, 0.1, GapMode::FirstOrder).unwrap(),
            0.0
        );
        assert_eq!(delta_gap(&model, &t, &train, &test, 0.0, GapMode::Exact).unwrap(), 0.0);
        assert!(delta_gap(&model, &t, &train, &train, 0.1, GapMode::Exact).is_err());
    }

    #[test]
    fn two_step_hand_values() {
        let model = ModelSpec::linear(1);
        let b = batch(&[(&[1.0], 0.0)], 0);
        let t = pv(&[1.0]);
        let d = two_step_exact(&model, &t, &b, &b, 0.1).unwrap();
        assert!((d[0] + 0.19).abs() < 1e-15);
        assert_eq!(two_step_exact(&model, &t, &b, &b, 0.0).unwrap().as_slice(), &[0.0]);
        assert_eq!(two_step_taylor(&model, &t, &b, &b, 0.0).unwrap().as_slice(), &[0.0]);
        let taylor = two_step_taylor(&model, &t, &b, &b, 0.1).unwrap();
        assert!(rel_diff(&d, &taylor) <= 1e-12);
    }

    #[test]
    fn shift_on_quadratic_matches_closed_form_and_sign() {
        let model = ModelSpec::linear(2);
        let t = pv(&[0.3, -1.2]);
        let b = batch(&[(&[1.0, 2.0], 0.5), (&[-0.3, 0.7], 1.0)], 0);
        let c = batch(&[(&[0.4, -1.1], -0.2), (&[2.0, 0.1], 0.3)], 2);
        let eta = 0.05;
        let def = gradient_shift(&model, &t, &b, &c, eta, ShiftMode::Definition).unwrap();
        let cf = gradient_shift(&model, &t, &b, &c, eta, ShiftMode::ClosedForm).unwrap();
        assert!(rel_diff(&def, &cf) <= 1e-10, "{def:?} vs {cf:?}");

        // δθ_SGD = δθ_GD + η δg
        let union = Batch::concat(&[&b, &c]).unwrap();
        let sgd = two_step_exact(&model, &t, &b, &c, eta).unwrap();
        let gd = two_step_exact(&model, &t, &union, &union, eta).unwrap();
        let mut rebuilt = gd.to_vec();
        axpy(eta, &def, &mut rebuilt);
        assert!(rel_diff(&rebuilt, &sgd) <= 1e-12);
    }

    #[test]
    fn shift_vanishes_for_identical_content() {
        let model = ModelSpec::linear(1);
        let t = pv(&[0.4]);
        let b = batch(&[(&[1.0], 0.5), (&[2.0], 1.0)], 0);
        let c = batch(&[(&[1.0], 0.5), (&[2.0], 1.0)], 2);
        for mode in [ShiftMode::Definition, ShiftMode::ClosedForm] {
            let s = gradient_shift(&model, &t, &b, &c, 0.1, mode).unwrap();
            assert!(s[0].abs() < 1e-14, "{mode:?}: {s:?}");
        }
        let d = batch(&[(&[1.0], 0.5), (&[2.0], 1.0)], 4);
        let e = epoch_gradient_shift(&model, &t, &[b, c, d], 0.1).unwrap();
        assert!(e[0].abs() < 1e-13);
    }

    #[test]
    fn shift_rejects_bad_batches() {
        let model = ModelSpec::linear(1);
        let t = pv(&[0.4]);
        let b = batch(&[(&[1.0], 0.5), (&[2.0], 1.0)], 0);
        let c = batch(&[(&[1.0], 0.5)], 5);
        assert!(gradient_shift(&model, &t, &b, &c, 0.1, ShiftMode::Definition).is_err());
        assert!(gradient_shift(&model, &t, &b, &b, 0.1, ShiftMode::ClosedForm).is_err());
        assert!(epoch_gradient_shift(&model, &t, std::slice::from_ref(&b), 0.1).is_err());
    }

    #[test]
    fn epoch_with_two_batches_is_gradient_shift() {
        let model = ModelSpec::mlp(2, 3, 5);
        let t = model.init_params();
        let b = batch(&[(&[1.0, 2.0], 0.5), (&[-0.3, 0.7], 1.0)], 0);
        let c = batch(&[(&[0.4, -1.1], -0.2), (&[2.0, 0.1], 0.3)], 2);
        let e = epoch_gradient_shift(&model, &t, &[b.clone(), c.clone()], 0.01).unwrap();
        let g = gradient_shift(&model, &t, &b, &c, 0.01, ShiftMode::Definition).unwrap();
        assert_eq!(e, g);
    }
}
