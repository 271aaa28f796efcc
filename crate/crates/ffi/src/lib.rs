//! C ABI for the sparse-view CT posterior-sampling benchmark library.
//!
//! Conventions:
//! - Every function returns an `SvctStatus` code; `Ok` is 0.
//! - Objects are opaque handles created/freed by paired functions.
//! - On failure a thread-local message is set; fetch it with
//!   [`svct_last_error_message`].
//! - Buffers are caller-allocated `f64` arrays in row-major layout.

use std::cell::RefCell;
use std::ffi::CStr;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use svct_bench::error::Error;
use svct_bench::gmm::{make_phantoms, make_prior_from_templates, GmmPrior};
use svct_bench::guidance::{
    batch_sample, make_schedule, GuidanceConfig, GuidanceEngine, GuidanceMethod,
    NoiseSchedule, Observation, SamplerOptions,
};
use svct_bench::image::ImageGrid;
use svct_bench::metrics::nmc;
use svct_bench::tomo::{
    default_detector_count, make_geometry, MeasurementOp, NoiseModel, RadonOperator,
};

use ndarray::Array1;

/// Status codes returned by every FFI entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvctStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NumericalFailure = 4,
    IoError = 5,
    Utf8Error = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> SvctStatus {
    match err {
        Error::InvalidArgument(_) | Error::Config(_) => SvctStatus::InvalidArgument,
        Error::DimensionMismatch(_) => SvctStatus::DimensionMismatch,
        Error::Io(_) | Error::Json(_) | Error::Format(_) => SvctStatus::IoError,
        _ => SvctStatus::NumericalFailure,
    }
}

fn fail(err: Error) -> SvctStatus {
    let code = status_of(&err);
    set_error(err.to_string());
    code
}

/// Run `body`, converting panics into `SvctStatus::Panic`.
fn guarded(body: impl FnOnce() -> SvctStatus) -> SvctStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic");
            SvctStatus::Panic
        }
    }
}

/// Copy the last error message into `buf` (NUL-terminated, truncated to
/// `cap`). Returns the full message length in bytes, or 0 when no error
/// is recorded. Safe to call with `buf = NULL, cap = 0` to query the
/// length.
///
/// # Safety
/// `buf` must be valid for `cap` writable bytes when non-NULL.
#[no_mangle]
pub unsafe extern "C" fn svct_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Opaque Gaussian-mixture prior.
pub struct SvctPrior {
    prior: GmmPrior,
}

/// Opaque Radon measurement operator on a square grid.
pub struct SvctOperator {
    op: RadonOperator,
}

/// Opaque geometric noise-scale schedule for the samplers.
pub struct SvctSchedule {
    schedule: NoiseSchedule,
}

unsafe fn slice_in<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

unsafe fn slice_out<'a>(ptr: *mut f64, len: usize) -> Option<&'a mut [f64]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts_mut(ptr, len))
    }
}

fn null_arg(name: &str) -> SvctStatus {
    set_error(format!("{name} is NULL"));
    SvctStatus::NullPointer
}

/// Build a prior from the mixture JSON schema.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn svct_prior_from_json(
    json: *const c_char,
    out: *mut *mut SvctPrior,
) -> SvctStatus {
    guarded(|| {
        if json.is_null() {
            return null_arg("json");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let text = match CStr::from_ptr(json).to_str() {
            Ok(t) => t,
            Err(_) => {
                set_error("json is not valid UTF-8");
                return SvctStatus::Utf8Error;
            }
        };
        match GmmPrior::from_json(text) {
            Ok(prior) => {
                *out = Box::into_raw(Box::new(SvctPrior { prior }));
                SvctStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Build the procedural phantom-template prior: `template_count`
/// components on a `side`x`side` grid with isotropic variance `jitter`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn svct_prior_templates(
    side: usize,
    template_count: usize,
    jitter: f64,
    phantom_seed: u64,
    out: *mut *mut SvctPrior,
) -> SvctStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let build = || -> Result<GmmPrior, Error> {
            let grid = ImageGrid::new(side)?;
            let templates = make_phantoms(grid, template_count, phantom_seed)?;
            make_prior_from_templates(&templates, jitter)
        };
        match build() {
            Ok(prior) => {
                *out = Box::into_raw(Box::new(SvctPrior { prior }));
                SvctStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `prior` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn svct_prior_dim(
    prior: *const SvctPrior,
    out: *mut usize,
) -> SvctStatus {
    guarded(|| {
        if prior.is_null() {
            return null_arg("prior");
        }
        if out.is_null() {
            return null_arg("out");
        }
        *out = (*prior).prior.dim();
        SvctStatus::Ok
    })
}

/// Draw `n` prior samples into `buf` (row-major, `n * dim` doubles).
///
/// # Safety
/// `prior` must be a live handle; `buf` must hold `buf_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn svct_prior_sample(
    prior: *const SvctPrior,
    n: usize,
    seed: u64,
    buf: *mut f64,
    buf_len: usize,
) -> SvctStatus {
    guarded(|| {
        let p = if prior.is_null() {
            return null_arg("prior");
        } else {
            &(*prior).prior
        };
        let out = match slice_out(buf, buf_len) {
            Some(s) => s,
            None => return null_arg("buf"),
        };
        if buf_len != n * p.dim() {
            set_error(format!(
                "buffer holds {buf_len} doubles, need {} (n * dim)",
                n * p.dim()
            ));
            return SvctStatus::DimensionMismatch;
        }
        match p.sample(n, seed) {
            Ok(samples) => {
                for (i, s) in samples.iter().enumerate() {
                    let row = &mut out[i * p.dim()..(i + 1) * p.dim()];
                    row.copy_from_slice(s.as_slice().expect("contiguous sample"));
                }
                SvctStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `prior` must be a handle returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn svct_prior_free(prior: *mut SvctPrior) {
    if !prior.is_null() {
        drop(Box::from_raw(prior));
    }
}

/// Exact time-dependent score of the prior at noise scale `sigma_t`.
///
/// # Safety
/// `x` and `out` must each hold `len` doubles; `prior` must be live.
#[no_mangle]
pub unsafe extern "C" fn svct_score_t(
    prior: *const SvctPrior,
    x: *const f64,
    len: usize,
    sigma_t: f64,
    out: *mut f64,
) -> SvctStatus {
    guarded(|| {
        if prior.is_null() {
            return null_arg("prior");
        }
        let xs = match slice_in(x, len) {
            Some(s) => s,
            None => return null_arg("x"),
        };
        let os = match slice_out(out, len) {
            Some(s) => s,
            None => return null_arg("out"),
        };
        match (*prior).prior.score_t(&Array1::from_vec(xs.to_vec()), sigma_t) {
            Ok(g) => {
                os.copy_from_slice(g.as_slice().expect("contiguous score"));
                SvctStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Posterior-mean denoiser `E[x0 | x_t]` at noise scale `sigma_t`.
///
/// # Safety
/// `x` and `out` must each hold `len` doubles; `prior` must be live.
#[no_mangle]
pub unsafe extern "C" fn svct_tweedie_denoise(
    prior: *const SvctPrior,
    x: *const f64,
    len: usize,
    sigma_t: f64,
    out: *mut f64,
) -> SvctStatus {
    guarded(|| {
        if prior.is_null() {
            return null_arg("prior");
        }
        let xs = match slice_in(x, len) {
            Some(s) => s,
            None => return null_arg("x"),
        };
        let os = match slice_out(out, len) {
            Some(s) => s,
            None => return null_arg("out"),
        };
        match (*prior)
            .prior
            .tweedie_denoise(&Array1::from_vec(xs.to_vec()), sigma_t)
        {
            Ok(d) => {
                os.copy_from_slice(d.as_slice().expect("contiguous denoise"));
                SvctStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Create a parallel-beam Radon operator for a `side`x`side` grid with
/// `p` projection angles and `d` detector bins (`d = 0` selects the
/// grid default `ceil(side * sqrt(2)) + 1`).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn svct_operator_create(
    side: usize,
    p: usize,
    d: usize,
    out: *mut *mut SvctOperator,
) -> SvctStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let build = || -> Result<RadonOperator, Error> {
            let grid = ImageGrid::new(side)?;
            let d = if d == 0 { default_detector_count(&grid) } else { d };
            Ok(RadonOperator::new(Arc::new(make_geometry(grid, p, d)?)))
        };
        match build() {
            Ok(op) => {
                *out = Box::into_raw(Box::new(SvctOperator { op }));
                SvctStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `op` must be live; `image_dim`/`meas_dim` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn svct_operator_dims(
    op: *const SvctOperator,
    image_dim: *mut usize,
    meas_dim: *mut usize,
) -> SvctStatus {
    guarded(|| {
        if op.is_null() {
            return null_arg("op");
        }
        if image_dim.is_null() || meas_dim.is_null() {
            return null_arg("image_dim/meas_dim");
        }
        *image_dim = (*op).op.dim_image();
        *meas_dim = (*op).op.dim_meas();
        SvctStatus::Ok
    })
}

unsafe fn apply_operator(
    op: *const SvctOperator,
    input: *const f64,
    input_len: usize,
    output: *mut f64,
    output_len: usize,
    f: impl Fn(&RadonOperator, &Array1<f64>) -> Result<Array1<f64>, Error>,
) -> SvctStatus {
    if op.is_null() {
        return null_arg("op");
    }
    let xi = match slice_in(input, input_len) {
        Some(s) => s,
        None => return null_arg("input"),
    };
    let xo = match slice_out(output, output_len) {
        Some(s) => s,
        None => return null_arg("output"),
    };
    match f(&(*op).op, &Array1::from_vec(xi.to_vec())) {
        Ok(res) => {
            if res.len() != xo.len() {
                set_error(format!(
                    "output buffer holds {} doubles, result has {}",
                    xo.len(),
                    res.len()
                ));
                return SvctStatus::DimensionMismatch;
            }
            xo.copy_from_slice(res.as_slice().expect("contiguous result"));
            SvctStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Forward projection: `x` has `dim_image` doubles, `y` gets `dim_meas`.
///
/// # Safety
/// Buffer lengths must match the declared sizes; `op` must be live.
#[no_mangle]
pub unsafe extern "C" fn svct_operator_forward(
    op: *const SvctOperator,
    x: *const f64,
    x_len: usize,
    y: *mut f64,
    y_len: usize,
) -> SvctStatus {
    guarded(|| apply_operator(op, x, x_len, y, y_len, |o, v| o.forward(v)))
}

/// Adjoint (back-projection): `y` has `dim_meas` doubles, `x` gets
/// `dim_image`.
///
/// # Safety
/// Buffer lengths must match the declared sizes; `op` must be live.
#[no_mangle]
pub unsafe extern "C" fn svct_operator_adjoint(
    op: *const SvctOperator,
    y: *const f64,
    y_len: usize,
    x: *mut f64,
    x_len: usize,
) -> SvctStatus {
    guarded(|| apply_operator(op, y, y_len, x, x_len, |o, v| o.adjoint(v)))
}

/// Ramp-filtered back-projection reconstruction.
///
/// # Safety
/// Buffer lengths must match the declared sizes; `op` must be live.
#[no_mangle]
pub unsafe extern "C" fn svct_operator_fbp(
    op: *const SvctOperator,
    y: *const f64,
    y_len: usize,
    x: *mut f64,
    x_len: usize,
) -> SvctStatus {
    guarded(|| apply_operator(op, y, y_len, x, x_len, |o, v| o.fbp(v)))
}

/// # Safety
/// `op` must be a handle returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn svct_operator_free(op: *mut SvctOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// Geometric noise-scale schedule with `k` scales in
/// `[sigma_min, sigma_max]`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn svct_schedule_create(
    sigma_min: f64,
    sigma_max: f64,
    k: usize,
    out: *mut *mut SvctSchedule,
) -> SvctStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        match make_schedule(sigma_min, sigma_max, k) {
            Ok(schedule) => {
                *out = Box::into_raw(Box::new(SvctSchedule { schedule }));
                SvctStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `schedule` must be a handle returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn svct_schedule_free(schedule: *mut SvctSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

fn parse_method(name: &str) -> Result<GuidanceMethod, Error> {
    match name {
        "none" => Ok(GuidanceMethod::None),
        "mcg" => Ok(GuidanceMethod::Mcg),
        "dps" => Ok(GuidanceMethod::Dps),
        "pig" => Ok(GuidanceMethod::Pig),
        "exact" => Ok(GuidanceMethod::Exact),
        other => Err(Error::InvalidArgument(format!(
            "unknown method '{other}' (expected none, mcg, dps, pig, exact)"
        ))),
    }
}

/// Draw `n` guided posterior chains conditioned on sinogram `y`, writing
/// row-major samples into `buf` (`n * dim_image` doubles). `method` is
/// one of "none", "mcg", "dps", "pig", "exact"; for "none" the sinogram
/// is ignored. `failures` receives the count of diverged chains (their
/// rows are filled with the successful chains in order; the batch fails
/// above a 1% divergence threshold).
///
/// # Safety
/// All pointers must be valid for their declared lengths; handles live.
#[no_mangle]
pub unsafe extern "C" fn svct_posterior_sample(
    prior: *const SvctPrior,
    op: *const SvctOperator,
    sigma_y: f64,
    y: *const f64,
    y_len: usize,
    schedule: *const SvctSchedule,
    method: *const c_char,
    alpha_scale: f64,
    n: usize,
    seed: u64,
    buf: *mut f64,
    buf_len: usize,
    failures: *mut usize,
) -> SvctStatus {
    guarded(|| {
        if prior.is_null() {
            return null_arg("prior");
        }
        if schedule.is_null() {
            return null_arg("schedule");
        }
        if method.is_null() {
            return null_arg("method");
        }
        let method_str = match CStr::from_ptr(method).to_str() {
            Ok(t) => t,
            Err(_) => {
                set_error("method is not valid UTF-8");
                return SvctStatus::Utf8Error;
            }
        };
        let m = match parse_method(method_str) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        let p = &(*prior).prior;
        let out = match slice_out(buf, buf_len) {
            Some(s) => s,
            None => return null_arg("buf"),
        };
        if buf_len != n * p.dim() {
            set_error(format!(
                "buffer holds {buf_len} doubles, need {} (n * dim)",
                n * p.dim()
            ));
            return SvctStatus::DimensionMismatch;
        }

        let noise = match NoiseModel::new(sigma_y) {
            Ok(nm) => nm,
            Err(e) => return fail(e),
        };
        let y_arr;
        let obs = if m == GuidanceMethod::None {
            None
        } else {
            if op.is_null() {
                return null_arg("op");
            }
            let ys = match slice_in(y, y_len) {
                Some(s) => s,
                None => return null_arg("y"),
            };
            y_arr = Array1::from_vec(ys.to_vec());
            Some(Observation { op: &(*op).op, noise: &noise, y: &y_arr })
        };

        let mut cfg = GuidanceConfig::new(m);
        cfg.alpha_scale = alpha_scale;
        let run = || -> Result<(Vec<Array1<f64>>, usize), Error> {
            let engine = GuidanceEngine::new(p, cfg, obs)?;
            let batch =
                batch_sample(&engine, &(*schedule).schedule, n, seed, &SamplerOptions::default())?;
            Ok((batch.samples, batch.failures))
        };
        match run() {
            Ok((samples, failed)) => {
                for (i, s) in samples.iter().enumerate() {
                    out[i * p.dim()..(i + 1) * p.dim()]
                        .copy_from_slice(s.as_slice().expect("contiguous sample"));
                }
                for row in samples.len()..n {
                    out[row * p.dim()..(row + 1) * p.dim()].fill(0.0);
                }
                if !failures.is_null() {
                    *failures = failed;
                }
                SvctStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Normalized measurement consistency over `n` matched (sample, sinogram)
/// pairs: samples are row-major `n * dim_image`, sinograms row-major
/// `n * dim_meas`.
///
/// # Safety
/// All pointers must be valid for their declared lengths; `op` live.
#[no_mangle]
pub unsafe extern "C" fn svct_nmc(
    op: *const SvctOperator,
    sigma_y: f64,
    samples: *const f64,
    sinograms: *const f64,
    n: usize,
    out: *mut f64,
) -> SvctStatus {
    guarded(|| {
        if op.is_null() {
            return null_arg("op");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let radon = &(*op).op;
        let (dim, m) = (radon.dim_image(), radon.dim_meas());
        let xs = match slice_in(samples, n * dim) {
            Some(s) => s,
            None => return null_arg("samples"),
        };
        let ys = match slice_in(sinograms, n * m) {
            Some(s) => s,
            None => return null_arg("sinograms"),
        };
        let noise = match NoiseModel::new(sigma_y) {
            Ok(nm) => nm,
            Err(e) => return fail(e),
        };
        let sample_vecs: Vec<Array1<f64>> = (0..n)
            .map(|i| Array1::from_vec(xs[i * dim..(i + 1) * dim].to_vec()))
            .collect();
        let sino_vecs: Vec<Array1<f64>> = (0..n)
            .map(|i| Array1::from_vec(ys[i * m..(i + 1) * m].to_vec()))
            .collect();
        match nmc(&sample_vecs, &sino_vecs, radon, &noise) {
            Ok(v) => {
                *out = v;
                SvctStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
