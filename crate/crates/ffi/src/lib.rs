//! C ABI over `becgrad`.
//!
//! Every fallible function returns a [`BecgradStatus`]; on failure the
//! message is kept per thread and can be copied out with
//! [`becgrad_last_error`]. Results that own memory are opaque handles that
//! must be released with their matching `*_free` function. Panics never
//! cross the boundary; they surface as `BECGRAD_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use becgrad::dynamics::TimeGrid;
use becgrad::experiments::{self, Overrides, Recipe};
use becgrad::metrology::{
    self, run_detection, uncertainty_at_quarter_period, DetectionSetup, EstimatorSeries, InitialState,
    LossRates,
};
use becgrad::statesynth::{self, Synthesized};
use becgrad::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BecgradStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidParams = 3,
    InvalidGrid = 4,
    InvalidState = 5,
    NoZeroCrossing = 6,
    IntegrationFailed = 7,
    Config = 8,
    Io = 9,
    OutOfRange = 10,
    Internal = 11,
    Panic = 99,
}

impl From<&Error> for BecgradStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidParams(_) => BecgradStatus::InvalidParams,
            Error::InvalidGrid(_) => BecgradStatus::InvalidGrid,
            Error::InvalidState(_) | Error::InvalidBasis(_) | Error::BasisMismatch => BecgradStatus::InvalidState,
            Error::NoZeroCrossing { .. } => BecgradStatus::NoZeroCrossing,
            Error::StepUnderflow { .. } | Error::InvariantViolated { .. } => BecgradStatus::IntegrationFailed,
            Error::Config { .. } => BecgradStatus::Config,
            Error::Io { .. } => BecgradStatus::Io,
            _ => BecgradStatus::Internal,
        }
    }
}

/// Which state enters the detection stage.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BecgradInitialState {
    Singlet = 0,
    Synthesized = 1,
    Product = 2,
}

/// Detection parameters, frequencies in units of the mean coupling.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct BecgradDetectionParams {
    pub n: usize,
    pub omega: f64,
    pub omega_d: f64,
    pub chi: f64,
    pub gamma_o: f64,
    pub gamma_t_ee: f64,
    pub gamma_t_eg: f64,
}

/// Summary of the entangled-state preparation.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct BecgradSynthesisReport {
    pub t_star: f64,
    pub t_phase: f64,
    pub fidelity_max: f64,
    pub well_weight: f64,
}

/// Opaque estimator time series.
pub struct BecgradSeries {
    inner: EstimatorSeries,
}

/// Opaque result of the preparation pipeline.
pub struct BecgradSynthesis {
    inner: Synthesized,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> Result<(), (BecgradStatus, String)>) -> BecgradStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            BecgradStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            BecgradStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (BecgradStatus, String) {
    (BecgradStatus::from(&e), e.to_string())
}

fn null_err(what: &str) -> (BecgradStatus, String) {
    (BecgradStatus::NullPointer, format!("{what} is null"))
}

fn arg_err(msg: impl Into<String>) -> (BecgradStatus, String) {
    (BecgradStatus::InvalidArgument, msg.into())
}

fn setup_from(p: &BecgradDetectionParams) -> DetectionSetup {
    DetectionSetup {
        n: p.n,
        omega: p.omega,
        omega_d: p.omega_d,
        chi: p.chi,
        rates: LossRates {
            gamma_o: p.gamma_o,
            gamma_t_ee: p.gamma_t_ee,
            gamma_t_eg: p.gamma_t_eg,
        },
    }
}

fn initial_from(kind: BecgradInitialState, u_over_ej: f64) -> InitialState {
    match kind {
        BecgradInitialState::Singlet => InitialState::Singlet,
        BecgradInitialState::Synthesized => InitialState::Synthesized { u_over_ej },
        BecgradInitialState::Product => InitialState::Product,
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (BecgradStatus, String)> {
    if p.is_null() {
        return Err(null_err(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| arg_err(format!("{what} is not valid UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn becgrad_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn becgrad_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Defaults: N = 4, Omega = 1, Omega_D = 0.05, no losses, chi = 0.
#[no_mangle]
pub extern "C" fn becgrad_detection_params_default() -> BecgradDetectionParams {
    let d = DetectionSetup::default();
    BecgradDetectionParams {
        n: d.n,
        omega: d.omega,
        omega_d: d.omega_d,
        chi: d.chi,
        gamma_o: d.rates.gamma_o,
        gamma_t_ee: d.rates.gamma_t_ee,
        gamma_t_eg: d.rates.gamma_t_eg,
    }
}

/// `N(N+4)/12 cos(phi_D)`.
#[no_mangle]
pub extern "C" fn becgrad_analytic_variance(n: usize, phi_d: f64) -> f64 {
    metrology::analytic_variance(n, phi_d)
}

/// Published closed-form uncertainty curve.
#[no_mangle]
pub extern "C" fn becgrad_analytic_uncertainty(n: usize, phi_d: f64) -> f64 {
    metrology::analytic_uncertainty(n, phi_d)
}

/// `sqrt(3 / (N(N+4)))`.
#[no_mangle]
pub extern "C" fn becgrad_heisenberg_uncertainty(n: usize) -> f64 {
    metrology::heisenberg_uncertainty(n)
}

/// `sqrt(12 / (N(N+4)))`, the quantum Cramer-Rao bound of the singlet.
#[no_mangle]
pub extern "C" fn becgrad_cramer_rao_bound(n: usize) -> f64 {
    metrology::cramer_rao_bound(n)
}

/// `1 / sqrt(N)`.
#[no_mangle]
pub extern "C" fn becgrad_sql_baseline(n: usize) -> f64 {
    metrology::sql_baseline(n)
}

/// Field in tesla for coupling `omega` in units of a reference frequency
/// given in Hz.
#[no_mangle]
pub extern "C" fn becgrad_field_from_coupling(omega: f64, omega_ref_hz: f64) -> f64 {
    metrology::field_from_coupling(omega, omega_ref_hz)
}

/// Runs the detection stage on `[0, t_end]` with `samples` points and
/// stores the estimator series in `*out`.
///
/// # Safety
/// `params` must point to a valid struct and `out` to writable storage for
/// one pointer.
#[no_mangle]
pub unsafe extern "C" fn becgrad_detection_run(
    params: *const BecgradDetectionParams,
    initial: BecgradInitialState,
    u_over_ej: f64,
    t_end: f64,
    samples: usize,
    out: *mut *mut BecgradSeries,
) -> BecgradStatus {
    guard(|| {
        let params = params.as_ref().ok_or_else(|| null_err("params"))?;
        if out.is_null() {
            return Err(null_err("out"));
        }
        *out = ptr::null_mut();
        let grid = TimeGrid::new(0.0, t_end, samples).map_err(lib_err)?;
        let run = run_detection(&setup_from(params), &initial_from(initial, u_over_ej), &grid).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(BecgradSeries { inner: run.series }));
        Ok(())
    })
}

/// Number of samples in `series` (0 for null).
///
/// # Safety
/// `series` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn becgrad_series_len(series: *const BecgradSeries) -> usize {
    series.as_ref().map_or(0, |s| s.inner.len())
}

/// Sample `k`: time, `<O>`, `<O^2>` and the phase uncertainty (`INFINITY`
/// at stationary points). Any output pointer may be null.
///
/// # Safety
/// `series` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn becgrad_series_get(
    series: *const BecgradSeries,
    k: usize,
    t: *mut f64,
    estimator: *mut f64,
    estimator_sq: *mut f64,
    uncertainty: *mut f64,
) -> BecgradStatus {
    guard(|| {
        let s = &series.as_ref().ok_or_else(|| null_err("series"))?.inner;
        if k >= s.len() {
            return Err((BecgradStatus::OutOfRange, format!("index {k} out of range for {} samples", s.len())));
        }
        for (p, v) in [
            (t, s.times[k]),
            (estimator, s.estimator[k]),
            (estimator_sq, s.estimator_sq[k]),
            (uncertainty, s.uncertainty[k].value()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Releases a series handle. Null is ignored.
///
/// # Safety
/// `series` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn becgrad_series_free(series: *mut BecgradSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Phase uncertainty at `t = pi / (2 Omega_D)` (`INFINITY` if unbounded).
///
/// # Safety
/// `params` must point to a valid struct and `out` to a writable double.
#[no_mangle]
pub unsafe extern "C" fn becgrad_uncertainty_at_quarter_period(
    params: *const BecgradDetectionParams,
    initial: BecgradInitialState,
    u_over_ej: f64,
    out: *mut f64,
) -> BecgradStatus {
    guard(|| {
        let params = params.as_ref().ok_or_else(|| null_err("params"))?;
        let out = out.as_mut().ok_or_else(|| null_err("out"))?;
        let (u, _) = uncertainty_at_quarter_period(&setup_from(params), &initial_from(initial, u_over_ej))
            .map_err(lib_err)?;
        *out = u.value();
        Ok(())
    })
}

/// Pair tunnelling, `t*` detection and phase correction for `n` atoms.
///
/// # Safety
/// `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn becgrad_synthesize(n: usize, u_over_ej: f64, out: *mut *mut BecgradSynthesis) -> BecgradStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_err("out"));
        }
        *out = ptr::null_mut();
        if !(u_over_ej.is_finite() && u_over_ej > 0.0) {
            return Err(arg_err(format!("u_over_ej must be positive, got {u_over_ej}")));
        }
        let s = statesynth::synthesize(n, u_over_ej).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(BecgradSynthesis { inner: s }));
        Ok(())
    })
}

/// # Safety
/// `synthesis` must be a live handle and `report` writable.
#[no_mangle]
pub unsafe extern "C" fn becgrad_synthesis_report(
    synthesis: *const BecgradSynthesis,
    report: *mut BecgradSynthesisReport,
) -> BecgradStatus {
    guard(|| {
        let s = &synthesis.as_ref().ok_or_else(|| null_err("synthesis"))?.inner;
        let report = report.as_mut().ok_or_else(|| null_err("report"))?;
        *report = BecgradSynthesisReport {
            t_star: s.report.t_star,
            t_phase: s.report.t_phase,
            fidelity_max: s.report.fidelity_max,
            well_weight: s.well_weight,
        };
        Ok(())
    })
}

/// Dimension of the detection-ready state (`(N/2+1)^2`), 0 for null.
///
/// # Safety
/// `synthesis` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn becgrad_synthesis_dim(synthesis: *const BecgradSynthesis) -> usize {
    synthesis.as_ref().map_or(0, |s| s.inner.well_state.dim())
}

/// Copies the detection-ready amplitudes as interleaved `re, im` pairs and
/// the occupations `e_L, g_L, e_R, g_R` of each basis state. `amplitudes`
/// needs `2 * dim` doubles and `occupations` (may be null) `4 * dim`
/// integers.
///
/// # Safety
/// Buffers must be writable for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn becgrad_synthesis_state(
    synthesis: *const BecgradSynthesis,
    amplitudes: *mut f64,
    occupations: *mut u32,
    dim: usize,
) -> BecgradStatus {
    guard(|| {
        let s = &synthesis.as_ref().ok_or_else(|| null_err("synthesis"))?.inner;
        let state = &s.well_state;
        if dim != state.dim() {
            return Err(arg_err(format!("buffer dimension {dim} does not match state dimension {}", state.dim())));
        }
        if amplitudes.is_null() {
            return Err(null_err("amplitudes"));
        }
        let amps = state.amplitudes().expect("prepared state is pure");
        for (i, z) in amps.iter().enumerate() {
            *amplitudes.add(2 * i) = z.re;
            *amplitudes.add(2 * i + 1) = z.im;
        }
        if !occupations.is_null() {
            for (i, occ) in state.basis().states().iter().enumerate() {
                for (m, &v) in occ.iter().enumerate() {
                    *occupations.add(4 * i + m) = v;
                }
            }
        }
        Ok(())
    })
}

/// # Safety
/// `synthesis` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn becgrad_synthesis_free(synthesis: *mut BecgradSynthesis) {
    if !synthesis.is_null() {
        drop(Box::from_raw(synthesis));
    }
}

/// Runs a named recipe with its preset, optionally overlaid by a TOML or
/// JSON file (`config_path` may be null), writing into `out_dir`.
///
/// # Safety
/// String arguments must be NUL-terminated or null where allowed.
#[no_mangle]
pub unsafe extern "C" fn becgrad_run_recipe(
    recipe: *const c_char,
    config_path: *const c_char,
    out_dir: *const c_char,
    verify: c_int,
) -> BecgradStatus {
    guard(|| {
        let recipe: Recipe = str_arg(recipe, "recipe")?.parse().map_err(lib_err)?;
        let out_dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        let config_path = if config_path.is_null() {
            None
        } else {
            Some(PathBuf::from(str_arg(config_path, "config_path")?))
        };
        let overrides = Overrides {
            output_dir: Some(out_dir),
            verify: verify != 0,
            ..Overrides::default()
        };
        let config = experiments::parse_config(Some(recipe), config_path.as_deref(), &overrides).map_err(lib_err)?;
        experiments::run(&config).map_err(lib_err)?;
        Ok(())
    })
}
