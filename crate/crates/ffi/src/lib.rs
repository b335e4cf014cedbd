//! C ABI over trained latentflow models.
//!
//! Every function returns an [`LfStatus`]; on failure the message is kept
//! per thread and read with [`lf_last_error_message`]. Buffers are
//! row-major `double` arrays whose lengths are passed explicitly and
//! checked. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use latentflow::metrics::{fit_gaussian, frechet_distance};
use latentflow::model::{LatentModel, ModelBundle};
use latentflow::rng::Rng;
use latentflow::train::load_bundle;
use latentflow::{Error, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    Unsupported = 6,
    Numeric = 7,
    Panic = 8,
}

/// Opaque handle to a loaded model.
pub struct LfModel {
    bundle: ModelBundle,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LfStatus {
    match e {
        Error::Shape { .. } => LfStatus::Shape,
        Error::InvalidArgument(_) | Error::Config { .. } | Error::Domain { .. } => {
            LfStatus::InvalidArgument
        }
        Error::Io { .. } => LfStatus::Io,
        Error::Format(_) | Error::Checkpoint(_) | Error::Csv(_) => LfStatus::Format,
        Error::Unsupported(_) => LfStatus::Unsupported,
        Error::NonFinite(_) | Error::Graph(_) => LfStatus::Numeric,
    }
}

struct Failure(LfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: LfStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LfStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            LfStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(m: *const LfModel) -> Result<&'a LfModel, Failure> {
    m.as_ref()
        .map_or_else(|| fail(LfStatus::NullPointer, "model handle is null"), Ok)
}

fn checked_len(rows: usize, cols: usize) -> Result<usize, Failure> {
    rows.checked_mul(cols).map_or_else(
        || fail(LfStatus::InvalidArgument, "buffer size overflows"),
        Ok,
    )
}

unsafe fn input<'a>(
    p: *const f64,
    rows: usize,
    cols: usize,
    what: &str,
) -> Result<Tensor, Failure> {
    if p.is_null() {
        return fail(LfStatus::NullPointer, format!("{what} is null"));
    }
    if rows == 0 {
        return fail(LfStatus::InvalidArgument, format!("{what} has zero rows"));
    }
    let len = checked_len(rows, cols)?;
    let data = std::slice::from_raw_parts(p, len).to_vec();
    Ok(Tensor::matrix(rows, cols, data)?)
}

unsafe fn output<'a>(
    p: *mut f64,
    len: usize,
    need: usize,
    what: &str,
) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return fail(LfStatus::NullPointer, format!("{what} is null"));
    }
    if len < need {
        return fail(
            LfStatus::Shape,
            format!("{what} holds {len} values, {need} required"),
        );
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn lf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint written by the trainer. On success `*out` owns a new
/// handle that must be released with [`lf_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lf_model_load(path: *const c_char, out: *mut *mut LfModel) -> LfStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(LfStatus::NullPointer, "path or out is null");
        }
        *out = ptr::null_mut();
        let s = CStr::from_ptr(path)
            .to_str()
            .map_or_else(|_| fail(LfStatus::InvalidArgument, "path is not UTF-8"), Ok)?;
        let bundle = load_bundle(Path::new(s))?;
        *out = Box::into_raw(Box::new(LfModel { bundle }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`lf_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lf_model_free(model: *mut LfModel) {
    if !model.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(model))));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lf_model_dims(
    model: *const LfModel,
    data_dim: *mut usize,
    latent_dim: *mut usize,
) -> LfStatus {
    guard(|| {
        let m = model_ref(model)?;
        if data_dim.is_null() || latent_dim.is_null() {
            return fail(LfStatus::NullPointer, "output pointer is null");
        }
        *data_dim = m.bundle.data_dim();
        *latent_dim = m.bundle.latent_dim();
        Ok(())
    })
}

/// Writes 1 to `*out` when the prior is a normalizing flow, else 0.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lf_model_has_flow(model: *const LfModel, out: *mut i32) -> LfStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return fail(LfStatus::NullPointer, "out is null");
        }
        *out = i32::from(m.bundle.has_flow());
        Ok(())
    })
}

/// Decodes `n` prior samples drawn with `seed` into `out` (`n × data_dim`).
///
/// # Safety
/// `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lf_model_sample(
    model: *const LfModel,
    n: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> LfStatus {
    guard(|| {
        let m = model_ref(model)?;
        if n == 0 {
            return fail(LfStatus::InvalidArgument, "n must be at least 1");
        }
        let dst = output(out, out_len, checked_len(n, m.bundle.data_dim())?, "out")?;
        let x = m.bundle.sample(&mut Rng::seed_from_u64(seed), n)?;
        dst.copy_from_slice(x.data());
        Ok(())
    })
}

/// Posterior means of `n` rows of `x` (`n × data_dim`) into `out`
/// (`n × latent_dim`).
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn lf_model_encode(
    model: *const LfModel,
    x: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> LfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let xt = input(x, n, m.bundle.data_dim(), "x")?;
        let dst = output(out, out_len, checked_len(n, m.bundle.latent_dim())?, "out")?;
        dst.copy_from_slice(m.bundle.encode_mean(&xt)?.data());
        Ok(())
    })
}

/// Decodes `n` latents (`n × latent_dim`) into `out` (`n × data_dim`).
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn lf_model_decode(
    model: *const LfModel,
    z: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> LfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let zt = input(z, n, m.bundle.latent_dim(), "z")?;
        let dst = output(out, out_len, checked_len(n, m.bundle.data_dim())?, "out")?;
        dst.copy_from_slice(m.bundle.decode(&zt)?.data());
        Ok(())
    })
}

/// Prior log density of each of `n` latents into `out` (`n` values).
/// Fails with `UNSUPPORTED` for the adversarial prior.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn lf_model_log_prior(
    model: *const LfModel,
    z: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> LfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let zt = input(z, n, m.bundle.latent_dim(), "z")?;
        let dst = output(out, out_len, n, "out")?;
        dst.copy_from_slice(&m.bundle.prior.log_prob_values(&m.bundle.store, &zt)?);
        Ok(())
    })
}

/// Flow map `Z_T → Z_0` of `n` latents, with per-row log-determinants in
/// `logdet` when it is non-null.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn lf_flow_forward(
    model: *const LfModel,
    z: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
    logdet: *mut f64,
    logdet_len: usize,
) -> LfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let flow = match m.bundle.prior.flow() {
            Some(f) => f,
            None => return fail(LfStatus::Unsupported, "model prior is not a flow"),
        };
        let zt = input(z, n, m.bundle.latent_dim(), "z")?;
        let dst = output(out, out_len, checked_len(n, m.bundle.latent_dim())?, "out")?;
        let (z0, ld) = flow.forward_values(&m.bundle.store, &zt)?;
        if !logdet.is_null() {
            output(logdet, logdet_len, n, "logdet")?.copy_from_slice(&ld);
        }
        dst.copy_from_slice(z0.data());
        Ok(())
    })
}

/// Inverse flow map `Z_0 → Z_T` of `n` base points.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn lf_flow_inverse(
    model: *const LfModel,
    z0: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> LfStatus {
    guard(|| {
        let m = model_ref(model)?;
        if !m.bundle.has_flow() {
            return fail(LfStatus::Unsupported, "model prior is not a flow");
        }
        let zt = input(z0, n, m.bundle.latent_dim(), "z0")?;
        let dst = output(out, out_len, checked_len(n, m.bundle.latent_dim())?, "out")?;
        dst.copy_from_slice(m.bundle.from_base(&zt)?.data());
        Ok(())
    })
}

/// Fréchet distance between Gaussian fits of two feature sets
/// (`na × k` and `nb × k`).
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn lf_frechet_distance(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    k: usize,
    out: *mut f64,
) -> LfStatus {
    guard(|| {
        if out.is_null() {
            return fail(LfStatus::NullPointer, "out is null");
        }
        let ta = input(a, na, k, "a")?;
        let tb = input(b, nb, k, "b")?;
        *out = frechet_distance(&fit_gaussian(&ta)?, &fit_gaussian(&tb)?)?;
        Ok(())
    })
}
