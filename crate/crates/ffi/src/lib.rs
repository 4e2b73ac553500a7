//! C interface to `sgdgap`.
//!
//! Models and batches are opaque handles created and freed through this API.
//! Every fallible call returns an [`SgdStatus`]; on failure the message is
//! available from [`sgd_last_error_message`] on the same thread. Output
//! vectors are written into caller-owned buffers whose length is passed
//! alongside and must equal the model's parameter count.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sgdgap::data::{partition, sample_realization};
use sgdgap::error::Error;
use sgdgap::oracle::{oracle_grad_trace, oracle_trace};
use sgdgap::theory::{delta_gap, gradient_shift, order_exponent, GapMode, ShiftMode};
use sgdgap::{overlap_factor, Batch, Example, GeneratorSpec, ModelSpec, ParamVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Convergence = 3,
    Io = 4,
    Parse = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub enum SgdGapMode {
    Exact = 0,
    FirstOrder = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub enum SgdShiftMode {
    Definition = 0,
    ClosedForm = 1,
}

/// Opaque model handle.
pub struct SgdModel(ModelSpec);

/// Opaque batch handle.
pub struct SgdBatch(Batch);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SgdStatus {
    match err {
        Error::InvalidArgument(_) | Error::Config(_) => SgdStatus::InvalidArgument,
        Error::Convergence { .. } => SgdStatus::Convergence,
        Error::Io { .. } => SgdStatus::Io,
        Error::Parse { .. } => SgdStatus::Parse,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SgdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SgdStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SgdStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            SgdStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn check_len(model: &ModelSpec, len: usize) -> Result<(), Fail> {
    let p = model.param_count();
    if len != p {
        return Err(Error::InvalidArgument(format!("buffer length {len} but model has {p} parameters")).into());
    }
    Ok(())
}

unsafe fn theta(model: &ModelSpec, p: *const f64, len: usize) -> Result<ParamVector, Fail> {
    check_len(model, len)?;
    Ok(ParamVector::new(slice(p, len, "theta")?.to_vec())?)
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the last error message on this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length, or 0 if none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sgd_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn sgd_model_linear(input_dim: usize, out: *mut *mut SgdModel) -> SgdStatus {
    guard(|| {
        let m = ModelSpec::linear(input_dim);
        m.validate()?;
        store(out, SgdModel(m))
    })
}

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn sgd_model_mlp(
    input_dim: usize,
    hidden: usize,
    init_seed: u64,
    out: *mut *mut SgdModel,
) -> SgdStatus {
    guard(|| {
        let m = ModelSpec::mlp(input_dim, hidden, init_seed);
        m.validate()?;
        store(out, SgdModel(m))
    })
}

/// # Safety
/// `model` must be null or a handle from this API not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sgd_model_free(model: *mut SgdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sgd_model_param_count(model: *const SgdModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.param_count())
}

/// Writes the default initial parameters into `out`.
///
/// # Safety
/// `model` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sgd_model_init_params(model: *const SgdModel, out: *mut f64, len: usize) -> SgdStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.0;
        check_len(m, len)?;
        slice_mut(out, len, "out")?.copy_from_slice(&m.init_params());
        Ok(())
    })
}

/// Builds a batch from row-major `inputs` (n × d) and `targets` (n), with ids
/// `first_id..first_id + n`.
///
/// # Safety
/// `inputs` must hold `n * d` doubles, `targets` `n` doubles, `out` a handle slot.
#[no_mangle]
pub unsafe extern "C" fn sgd_batch_new(
    inputs: *const f64,
    targets: *const f64,
    n: usize,
    d: usize,
    first_id: u64,
    out: *mut *mut SgdBatch,
) -> SgdStatus {
    guard(|| {
        let total = n
            .checked_mul(d)
            .ok_or_else(|| Error::InvalidArgument("n * d overflows".into()))?;
        let xs = slice(inputs, total, "inputs")?;
        let ys = slice(targets, n, "targets")?;
        let examples = (0..n)
            .map(|i| Example::new(xs[i * d..(i + 1) * d].to_vec(), ys[i]))
            .collect::<Result<Vec<_>, _>>()?;
        store(out, SgdBatch(Batch::with_sequential_ids(examples, first_id)?))
    })
}

/// # Safety
/// `batch` must be null or a handle from this API not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sgd_batch_free(batch: *mut SgdBatch) {
    if !batch.is_null() {
        drop(Box::from_raw(batch));
    }
}

/// # Safety
/// `batch` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sgd_batch_len(batch: *const SgdBatch) -> usize {
    batch.as_ref().map_or(0, |b| b.0.len())
}

/// # Safety
/// `a` and `b` must be live handles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_overlap_factor(a: *const SgdBatch, b: *const SgdBatch, out: *mut f64) -> SgdStatus {
    guard(|| {
        let v = overlap_factor(&as_ref(a, "a")?.0, &as_ref(b, "b")?.0)?;
        *out.as_mut().ok_or(Fail::Null("out"))? = v;
        Ok(())
    })
}

/// Samples disjoint train and test sets from the linear-Gaussian generator
/// with teacher e₁.
///
/// # Safety
/// `train` and `test` must be handle slots.
#[no_mangle]
pub unsafe extern "C" fn sgd_sample_realization(
    d: usize,
    noise_std: f64,
    n_train: usize,
    n_test: usize,
    seed: u64,
    train: *mut *mut SgdBatch,
    test: *mut *mut SgdBatch,
) -> SgdStatus {
    guard(|| {
        if train.is_null() || test.is_null() {
            return Err(Fail::Null("out"));
        }
        let gen = GeneratorSpec::with_default_teacher(d, noise_std)?;
        let r = sample_realization(&gen, n_train, n_test, seed)?;
        store(train, SgdBatch(r.train))?;
        store(test, SgdBatch(r.test))
    })
}

/// Splits `batch` into two disjoint halves by a seeded shuffle.
///
/// # Safety
/// `batch` must be a live handle; `first` and `second` handle slots.
#[no_mangle]
pub unsafe extern "C" fn sgd_partition_halves(
    batch: *const SgdBatch,
    seed: u64,
    first: *mut *mut SgdBatch,
    second: *mut *mut SgdBatch,
) -> SgdStatus {
    guard(|| {
        if first.is_null() || second.is_null() {
            return Err(Fail::Null("out"));
        }
        let mut parts = partition(&as_ref(batch, "batch")?.0, 2, seed)?;
        let c = parts.pop().expect("two parts");
        let b = parts.pop().expect("two parts");
        store(first, SgdBatch(b))?;
        store(second, SgdBatch(c))
    })
}

/// # Safety
/// Handles must be live; `theta` holds `len` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_batch_loss(
    model: *const SgdModel,
    theta_ptr: *const f64,
    len: usize,
    batch: *const SgdBatch,
    out: *mut f64,
) -> SgdStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.0;
        let th = theta(m, theta_ptr, len)?;
        let v = m.batch_loss(&th, &as_ref(batch, "batch")?.0)?;
        *out.as_mut().ok_or(Fail::Null("out"))? = v;
        Ok(())
    })
}

/// # Safety
/// Handles must be live; `theta` and `out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sgd_batch_grad(
    model: *const SgdModel,
    theta_ptr: *const f64,
    len: usize,
    batch: *const SgdBatch,
    out: *mut f64,
) -> SgdStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.0;
        let th = theta(m, theta_ptr, len)?;
        let g = m.batch_grad(&th, &as_ref(batch, "batch")?.0)?;
        slice_mut(out, len, "out")?.copy_from_slice(&g);
        Ok(())
    })
}

/// Batch Hessian applied to `v`.
///
/// # Safety
/// Handles must be live; `theta`, `v` and `out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sgd_batch_hvp(
    model: *const SgdModel,
    theta_ptr: *const f64,
    v: *const f64,
    len: usize,
    batch: *const SgdBatch,
    out: *mut f64,
) -> SgdStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.0;
        let th = theta(m, theta_ptr, len)?;
        let v = slice(v, len, "v")?;
        let h = m.batch_hvp(&th, &as_ref(batch, "batch")?.0, v)?;
        slice_mut(out, len, "out")?.copy_from_slice(&h);
        Ok(())
    })
}

/// Closed-form tr Σ for the linear model under the generator with teacher e₁.
///
/// # Safety
/// `theta` holds `d` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_oracle_trace(theta_ptr: *const f64, d: usize, noise_std: f64, out: *mut f64) -> SgdStatus {
    guard(|| {
        let gen = GeneratorSpec::with_default_teacher(d, noise_std)?;
        let th = theta(&ModelSpec::linear(d), theta_ptr, d)?;
        *out.as_mut().ok_or(Fail::Null("out"))? = oracle_trace(&th, &gen)?;
        Ok(())
    })
}

/// Closed-form ∇ tr Σ for the linear model under the generator with teacher e₁.
///
/// # Safety
/// `theta` and `out` hold `d` doubles.
#[no_mangle]
pub unsafe extern "C" fn sgd_oracle_grad_trace(
    theta_ptr: *const f64,
    d: usize,
    noise_std: f64,
    out: *mut f64,
) -> SgdStatus {
    guard(|| {
        let gen = GeneratorSpec::with_default_teacher(d, noise_std)?;
        let th = theta(&ModelSpec::linear(d), theta_ptr, d)?;
        let g = oracle_grad_trace(&th, &gen)?;
        slice_mut(out, d, "out")?.copy_from_slice(&g);
        Ok(())
    })
}

/// Change in test-minus-train loss after one GD step on `train`.
///
/// # Safety
/// Handles must be live; `theta` holds `len` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_delta_gap(
    model: *const SgdModel,
    theta_ptr: *const f64,
    len: usize,
    train: *const SgdBatch,
    test: *const SgdBatch,
    eta: f64,
    mode: SgdGapMode,
    out: *mut f64,
) -> SgdStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.0;
        let th = theta(m, theta_ptr, len)?;
        let mode = match mode {
            SgdGapMode::Exact => GapMode::Exact,
            SgdGapMode::FirstOrder => GapMode::FirstOrder,
        };
        let v = delta_gap(m, &th, &as_ref(train, "train")?.0, &as_ref(test, "test")?.0, eta, mode)?;
        *out.as_mut().ok_or(Fail::Null("out"))? = v;
        Ok(())
    })
}

/// Gradient shift of two SGD steps on `b` then `c` relative to one GD step
/// on their union.
///
/// # Safety
/// Handles must be live; `theta` and `out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sgd_gradient_shift(
    model: *const SgdModel,
    theta_ptr: *const f64,
    len: usize,
    b: *const SgdBatch,
    c: *const SgdBatch,
    eta: f64,
    mode: SgdShiftMode,
    out: *mut f64,
) -> SgdStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.0;
        let th = theta(m, theta_ptr, len)?;
        let mode = match mode {
            SgdShiftMode::Definition => ShiftMode::Definition,
            SgdShiftMode::ClosedForm => ShiftMode::ClosedForm,
        };
        let g = gradient_shift(m, &th, &as_ref(b, "b")?.0, &as_ref(c, "c")?.0, eta, mode)?;
        slice_mut(out, len, "out")?.copy_from_slice(&g);
        Ok(())
    })
}

/// Least-squares slope of log residual against log η.
///
/// # Safety
/// `etas` and `residuals` hold `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_order_exponent(
    etas: *const f64,
    residuals: *const f64,
    n: usize,
    out: *mut f64,
) -> SgdStatus {
    guard(|| {
        let e = slice(etas, n, "etas")?;
        let r = slice(residuals, n, "residuals")?;
        let points: Vec<(f64, f64)> = e.iter().copied().zip(r.iter().copied()).collect();
        *out.as_mut().ok_or(Fail::Null("out"))? = order_exponent(&points)?;
        Ok(())
    })
}
