//! C ABI over the strength law, the stage-1 reconstructor and the stage-2
//! predictors.
//!
//! Every function returns an [`LlhStatus`]. On failure the message is kept
//! per thread and read with [`llh_last_error`]. Handles are opaque and must
//! be released with their `_free` function; passing a freed handle is
//! undefined behaviour. Arrays are caller-owned and never retained.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use llh::dataio::{MaskedCurve, N_MINKOWSKI};
use llh::nnet::Matrix;
use llh::predictors::TrainedPredictor;
use llh::reconstructor::ReconstructorModel;
use llh::strength::StrengthLaw;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LlhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Runtime = 5,
    Panic = 6,
}

/// Fitted strength law.
pub struct LlhStrengthLaw(StrengthLaw);

/// Trained stage-1 reconstructor.
pub struct LlhReconstructor(ReconstructorModel);

/// Trained stage-2 predictor.
pub struct LlhPredictor(TrainedPredictor);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(LlhStatus, String);

impl Failure {
    fn null(name: &str) -> Self {
        Self(LlhStatus::NullPointer, format!("{name} is null"))
    }
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LlhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LlhStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            LlhStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or valid for `len` reads.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure::null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` is null or valid for `len` writes.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure::null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// # Safety
/// `p` is null or a NUL-terminated string.
unsafe fn read_file(p: *const c_char) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::null("path"));
    }
    let path = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(LlhStatus::InvalidArgument, "path is not UTF-8".into()))?;
    std::fs::read_to_string(path).map_err(|e| Failure(LlhStatus::Io, format!("{path}: {e}")))
}

fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::null("out"));
    }
    // SAFETY: checked non-null; the caller provides a writable slot.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// # Safety
/// `h` is null or a live handle.
unsafe fn handle<'a, T>(h: *const T) -> Result<&'a T, Failure> {
    h.as_ref().ok_or_else(|| Failure::null("handle"))
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure(LlhStatus::Runtime, e.to_string())
}

/// Message of the last failed call on this thread, or NULL after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn llh_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn llh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Fits `log sigma = alpha . M` on `n` rows. `minkowski` is row-major
/// `n x 4`; `strengths` has `n` positive entries.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `out` receives a handle.
#[no_mangle]
pub unsafe extern "C" fn llh_law_fit(
    minkowski: *const f64,
    strengths: *const f64,
    n: usize,
    out: *mut *mut LlhStrengthLaw,
) -> LlhStatus {
    guard(|| {
        let cells = n
            .checked_mul(N_MINKOWSKI)
            .ok_or_else(|| Failure(LlhStatus::InvalidArgument, "n is too large".into()))?;
        let m = slice(minkowski, cells, "minkowski")?;
        let s = slice(strengths, n, "strengths")?;
        let matrix = Matrix::from_vec(n, N_MINKOWSKI, m.to_vec()).map_err(runtime)?;
        let law = StrengthLaw::fit(&matrix, s, None).map_err(|e| Failure(LlhStatus::InvalidArgument, e.to_string()))?;
        store(out, LlhStrengthLaw(law))
    })
}

/// Loads a strength law from its JSON file.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` receives a handle.
#[no_mangle]
pub unsafe extern "C" fn llh_law_load(path: *const c_char, out: *mut *mut LlhStrengthLaw) -> LlhStatus {
    guard(|| {
        let text = read_file(path)?;
        let law: StrengthLaw = serde_json::from_str(&text).map_err(|e| Failure(LlhStatus::Parse, e.to_string()))?;
        store(out, LlhStrengthLaw(law))
    })
}

/// Copies the four fitted coefficients into `alpha`.
///
/// # Safety
/// `law` is a live handle; `alpha` holds 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn llh_law_alpha(law: *const LlhStrengthLaw, alpha: *mut f64) -> LlhStatus {
    guard(|| {
        let law = handle(law)?;
        slice_mut(alpha, N_MINKOWSKI, "alpha")?.copy_from_slice(&law.0.alpha);
        Ok(())
    })
}

/// Predicted strength for one 4-vector of functionals.
///
/// # Safety
/// `law` is a live handle; `m` holds 4 doubles; `sigma` is writable.
#[no_mangle]
pub unsafe extern "C" fn llh_law_predict(law: *const LlhStrengthLaw, m: *const f64, sigma: *mut f64) -> LlhStatus {
    guard(|| {
        let law = handle(law)?;
        let m: [f64; N_MINKOWSKI] = slice(m, N_MINKOWSKI, "m")?.try_into().expect("length is N_MINKOWSKI");
        let value = law.0.predict(&m).map_err(runtime)?;
        slice_mut(sigma, 1, "sigma")?[0] = value;
        Ok(())
    })
}

/// # Safety
/// `law` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn llh_law_free(law: *mut LlhStrengthLaw) {
    if !law.is_null() {
        drop(Box::from_raw(law));
    }
}

/// Loads a reconstructor checkpoint (plain or provenance-stamped JSON).
///
/// # Safety
/// `path` is a NUL-terminated string; `out` receives a handle.
#[no_mangle]
pub unsafe extern "C" fn llh_reconstructor_load(path: *const c_char, out: *mut *mut LlhReconstructor) -> LlhStatus {
    guard(|| {
        let text = read_file(path)?;
        let model = ReconstructorModel::from_json(&text).map_err(|e| Failure(LlhStatus::Parse, e.to_string()))?;
        store(out, LlhReconstructor(model))
    })
}

/// Number of grid points the reconstructor expects.
///
/// # Safety
/// `r` is a live handle; `width` is writable.
#[no_mangle]
pub unsafe extern "C" fn llh_reconstructor_width(r: *const LlhReconstructor, width: *mut usize) -> LlhStatus {
    guard(|| {
        let r = handle(r)?;
        slice_mut(width, 1, "width")?[0] = r.0.width();
        Ok(())
    })
}

/// Reconstructs one curve. `observed[i]` is nonzero where `values[i]` was
/// measured; other entries of `values` are ignored. Observed points are
/// copied to `out` unchanged.
///
/// # Safety
/// `r` is a live handle; the arrays hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn llh_reconstructor_reconstruct(
    r: *const LlhReconstructor,
    values: *const f64,
    observed: *const u8,
    len: usize,
    out: *mut f64,
) -> LlhStatus {
    guard(|| {
        let r = handle(r)?;
        let values = slice(values, len, "values")?;
        let mask: Vec<bool> = slice(observed, len, "observed")?.iter().map(|&b| b != 0).collect();
        let masked = MaskedCurve::new(values, mask).map_err(|e| Failure(LlhStatus::InvalidArgument, e.to_string()))?;
        let full = r.0.reconstruct(&masked).map_err(|e| Failure(LlhStatus::InvalidArgument, e.to_string()))?;
        slice_mut(out, len, "out")?.copy_from_slice(&full);
        Ok(())
    })
}

/// # Safety
/// `r` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn llh_reconstructor_free(r: *mut LlhReconstructor) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Loads a stage-2 predictor checkpoint.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` receives a handle.
#[no_mangle]
pub unsafe extern "C" fn llh_predictor_load(path: *const c_char, out: *mut *mut LlhPredictor) -> LlhStatus {
    guard(|| {
        let text = read_file(path)?;
        let model = TrainedPredictor::from_json(&text).map_err(|e| Failure(LlhStatus::Parse, e.to_string()))?;
        store(out, LlhPredictor(model))
    })
}

/// Curve length the predictor expects.
///
/// # Safety
/// `p` is a live handle; `len` is writable.
#[no_mangle]
pub unsafe extern "C" fn llh_predictor_curve_len(p: *const LlhPredictor, len: *mut usize) -> LlhStatus {
    guard(|| {
        let p = handle(p)?;
        slice_mut(len, 1, "len")?[0] = p.0.seq_len;
        Ok(())
    })
}

/// Predicts M0..M3 for one full curve. `aux` may be NULL (with `aux_len`
/// 0) unless the predictor was trained with auxiliary features.
///
/// # Safety
/// `p` is a live handle; `curve` holds `len` doubles, `aux` holds
/// `aux_len` doubles when non-null, `m` holds 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn llh_predictor_predict(
    p: *const LlhPredictor,
    curve: *const f64,
    len: usize,
    aux: *const f64,
    aux_len: usize,
    m: *mut f64,
) -> LlhStatus {
    guard(|| {
        let p = handle(p)?;
        let curve = slice(curve, len, "curve")?;
        let aux = if aux.is_null() { None } else { Some(slice(aux, aux_len, "aux")?) };
        let pred = p.0.predict(curve, aux).map_err(|e| Failure(LlhStatus::InvalidArgument, e.to_string()))?;
        slice_mut(m, N_MINKOWSKI, "m")?.copy_from_slice(&pred);
        Ok(())
    })
}

/// # Safety
/// `p` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn llh_predictor_free(p: *mut LlhPredictor) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}
