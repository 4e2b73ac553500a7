use std::ffi::{c_char, CStr};
use std::path::Path;
use std::process::Command;
use std::ptr;

use sgdgap_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    let n = unsafe { sgd_last_error_message(buf.as_mut_ptr(), buf.len()) };
    if n == 0 {
        return String::new();
    }
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

struct Handles {
    model: *mut SgdModel,
    train: *mut SgdBatch,
    test: *mut SgdBatch,
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            sgd_model_free(self.model);
            sgd_batch_free(self.train);
            sgd_batch_free(self.test);
        }
    }
}

fn linear_setup(d: usize) -> Handles {
    let mut h = Handles {
        model: ptr::null_mut(),
        train: ptr::null_mut(),
        test: ptr::null_mut(),
    };
    unsafe {
        assert_eq!(sgd_model_linear(d, &mut h.model), SgdStatus::Ok);
        assert_eq!(
            sgd_sample_realization(d, 0.5, 40, 20, 11, &mut h.train, &mut h.test),
            SgdStatus::Ok
        );
    }
    h
}

#[test]
fn hand_built_batch_matches_hand_values() {
    // θ = (1, 0), x = (1, 2), y = 3: residual −2, loss 2, grad (−2, −4)
    let mut model = ptr::null_mut();
    let mut batch = ptr::null_mut();
    let xs = [1.0, 2.0];
    let ys = [3.0];
    let theta = [1.0, 0.0];
    unsafe {
        assert_eq!(sgd_model_linear(2, &mut model), SgdStatus::Ok);
        assert_eq!(
            sgd_batch_new(xs.as_ptr(), ys.as_ptr(), 1, 2, 0, &mut batch),
            SgdStatus::Ok
        );
        assert_eq!(sgd_batch_len(batch), 1);
        let mut loss = 0.0;
        assert_eq!(
            sgd_batch_loss(model, theta.as_ptr(), 2, batch, &mut loss),
            SgdStatus::Ok
        );
        assert_eq!(loss, 2.0);
        let mut g = [0.0; 2];
        assert_eq!(
            sgd_batch_grad(model, theta.as_ptr(), 2, batch, g.as_mut_ptr()),
            SgdStatus::Ok
        );
        assert_eq!(g, [-2.0, -4.0]);
        // H = x xᵀ, so H e₁ = (1, 2)
        let v = [1.0, 0.0];
        let mut hv = [0.0; 2];
        assert_eq!(
            sgd_batch_hvp(model, theta.as_ptr(), v.as_ptr(), 2, batch, hv.as_mut_ptr()),
            SgdStatus::Ok
        );
        assert_eq!(hv, [1.0, 2.0]);
        let mut f = 0.0;
        assert_eq!(sgd_overlap_factor(batch, batch, &mut f), SgdStatus::Ok);
        assert_eq!(f, 1.0);
        sgd_batch_free(batch);
        sgd_model_free(model);
    }
}

#[test]
fn oracle_matches_closed_form() {
    // w = θ − e₁ = (1, 2), d = 2, s = 0.5: (d+1)‖w‖² + d s² = 15.5
    let theta = [2.0, 2.0];
    let mut tr = 0.0;
    let mut g = [0.0; 2];
    unsafe {
        assert_eq!(sgd_oracle_trace(theta.as_ptr(), 2, 0.5, &mut tr), SgdStatus::Ok);
        assert_eq!(
            sgd_oracle_grad_trace(theta.as_ptr(), 2, 0.5, g.as_mut_ptr()),
            SgdStatus::Ok
        );
    }
    assert_eq!(tr, 15.5);
    assert_eq!(g, [6.0, 12.0]);
}

#[test]
fn gap_and_shift_through_handles() {
    let h = linear_setup(3);
    let theta = [2.0, 0.5, -0.5];
    unsafe {
        let mut gap = f64::NAN;
        assert_eq!(
            sgd_delta_gap(
                h.model,
                theta.as_ptr(),
                3,
                h.train,
                h.test,
                1e-3,
                SgdGapMode::FirstOrder,
                &mut gap
            ),
            SgdStatus::Ok
        );
        assert!(gap.is_finite());

        let mut b = ptr::null_mut();
        let mut c = ptr::null_mut();
        assert_eq!(sgd_partition_halves(h.train, 5, &mut b, &mut c), SgdStatus::Ok);
        assert_eq!(sgd_batch_len(b), 20);
        let mut f = -1.0;
        assert_eq!(sgd_overlap_factor(b, c, &mut f), SgdStatus::Ok);
        assert_eq!(f, 0.0);

        let mut def = [0.0; 3];
        let mut closed = [0.0; 3];
        assert_eq!(
            sgd_gradient_shift(
                h.model,
                theta.as_ptr(),
                3,
                b,
                c,
                0.01,
                SgdShiftMode::Definition,
                def.as_mut_ptr()
            ),
            SgdStatus::Ok
        );
        assert_eq!(
            sgd_gradient_shift(
                h.model,
                theta.as_ptr(),
                3,
                b,
                c,
                0.01,
                SgdShiftMode::ClosedForm,
                closed.as_mut_ptr()
            ),
            SgdStatus::Ok
        );
        for (x, y) in def.iter().zip(&closed) {
            assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()), "{x} vs {y}");
        }
        sgd_batch_free(b);
        sgd_batch_free(c);
    }
}

#[test]
fn order_exponent_of_cubic() {
    let etas = [1e-3, 2e-3, 4e-3];
    let r: Vec<f64> = etas.iter().map(|e: &f64| 5.0 * e.powi(3)).collect();
    let mut k = 0.0;
    unsafe {
        assert_eq!(sgd_order_exponent(etas.as_ptr(), r.as_ptr(), 3, &mut k), SgdStatus::Ok);
    }
    assert!((k - 3.0).abs() < 1e-12);
}

#[test]
fn errors_set_codes_and_messages() {
    let h = linear_setup(2);
    let theta = [0.0; 3];
    let mut g = [0.0; 3];
    unsafe {
        let s = sgd_batch_grad(h.model, theta.as_ptr(), 3, h.train, g.as_mut_ptr());
        assert_eq!(s, SgdStatus::InvalidArgument);
        assert!(last_error().contains("parameters"), "{}", last_error());

        let s = sgd_batch_grad(ptr::null(), theta.as_ptr(), 2, h.train, g.as_mut_ptr());
        assert_eq!(s, SgdStatus::NullPointer);
        assert!(last_error().contains("model"));

        // overlapping train and test
        let mut gap = 0.0;
        let s = sgd_delta_gap(
            h.model,
            theta.as_ptr(),
            2,
            h.train,
            h.train,
            0.1,
            SgdGapMode::Exact,
            &mut gap,
        );
        assert_eq!(s, SgdStatus::InvalidArgument);

        let etas = [1e-3, 1e-3, 4e-3];
        let r = [1.0, 1.0, 2.0];
        let s = sgd_order_exponent(etas.as_ptr(), r.as_ptr(), 3, &mut gap);
        assert_eq!(s, SgdStatus::InvalidArgument);

        let mut m = ptr::null_mut();
        assert_eq!(sgd_model_linear(0, &mut m), SgdStatus::InvalidArgument);
        assert!(m.is_null());

        // success clears the message
        let mut tr = 0.0;
        assert_eq!(sgd_oracle_trace(theta.as_ptr(), 2, 0.5, &mut tr), SgdStatus::Ok);
        assert_eq!(sgd_last_error_message(ptr::null_mut(), 0), 0);

        sgd_model_free(ptr::null_mut());
        sgd_batch_free(ptr::null_mut());
        assert_eq!(sgd_model_param_count(ptr::null()), 0);
    }
}

#[test]
fn mlp_handle_reports_param_count_and_init() {
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(sgd_model_mlp(4, 8, 3, &mut m), SgdStatus::Ok);
        let p = sgd_model_param_count(m);
        assert_eq!(p, 8 * 4 + 2 * 8 + 1);
        let mut theta = vec![f64::NAN; p];
        assert_eq!(sgd_model_init_params(m, theta.as_mut_ptr(), p), SgdStatus::Ok);
        assert!(theta.iter().all(|v| v.is_finite()));
        sgd_model_free(m);
    }
}

#[test]
fn header_is_current_and_compiles() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/sgdgap.h")).unwrap();
    for name in [
        "sgd_last_error_message",
        "sgd_model_linear",
        "sgd_batch_new",
        "sgd_gradient_shift",
        "sgd_order_exponent",
        "SGD_STATUS_NULL_POINTER",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(dir.join("include/sgdgap.h"))
        .status()
    else {
        eprintln!("no C compiler found; skipping syntax check");
        return;
    };
    assert!(status.success());
}
