//! C ABI over the `hlattice` core.
//!
//! Every function returns an [`HlStatus`]; values come back through out
//! pointers. Handles are opaque and owned by the caller once created, and
//! must be released with the matching `*_free` function. The message of the
//! most recent failure on the calling thread is available from
//! [`hl_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use hlattice::config::ExperimentConfig;
use hlattice::control::{solve_reachability, verify_control, ControlProblem};
use hlattice::diagnostics::Setup;
use hlattice::geometry::SiteState;
use hlattice::models::SdeSystem;
use hlattice::runner::{run, RunOptions};
use hlattice::simulate::{NoisePlan, Stepper};
use hlattice::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    DimensionMismatch = 4,
    HypothesisViolated = 5,
    IncompatibleGeometry = 6,
    Singular = 7,
    CertificateRefused = 8,
    InsufficientSeparation = 9,
    MomentBlowUp = 10,
    Config = 11,
    Io = 12,
    BufferTooSmall = 13,
    BlowUp = 14,
    Panic = 15,
}

impl From<&Error> for HlStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_) => HlStatus::InvalidInput,
            Error::DimensionMismatch { .. } => HlStatus::DimensionMismatch,
            Error::SiteOutsideBox(_) => HlStatus::InvalidInput,
            Error::HypothesisViolated { .. } => HlStatus::HypothesisViolated,
            Error::IncompatibleGeometry(_) => HlStatus::IncompatibleGeometry,
            Error::Singular(_) => HlStatus::Singular,
            Error::CertificateRefused(_) => HlStatus::CertificateRefused,
            Error::InsufficientSeparation(_) => HlStatus::InsufficientSeparation,
            Error::MomentBlowUp(_) => HlStatus::MomentBlowUp,
            Error::Config(_) => HlStatus::Config,
            Error::Io(_) => HlStatus::Io,
        }
    }
}

/// Validated experiment configuration.
pub struct HlConfig {
    cfg: ExperimentConfig,
    setup: Setup,
}

/// Box system `Π_n` built from a configuration.
pub struct HlSystem {
    sys: Arc<SdeSystem>,
    uniform: Vec<f64>,
}

/// One Euler–Maruyama replica driven by counter-based noise.
pub struct HlStepper {
    st: Stepper<Arc<SdeSystem>>,
}

/// Aggregate outcome of [`hl_run`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HlOutcome {
    Pass = 0,
    Fail = 1,
    Inconclusive = 2,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), (HlStatus, String)>) -> HlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HlStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("panic inside hlattice".into());
            HlStatus::Panic
        }
    }
}

fn core(e: Error) -> (HlStatus, String) {
    (HlStatus::from(&e), e.to_string())
}

fn null(what: &str) -> (HlStatus, String) {
    (HlStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (HlStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (HlStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (HlStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, (HlStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

fn config_from(cfg: ExperimentConfig) -> Result<HlConfig, (HlStatus, String)> {
    let v = cfg.validate().map_err(core)?;
    Ok(HlConfig {
        cfg,
        setup: v.setup,
    })
}

/// Copies the last error message of this thread into `buf` (NUL terminated)
/// and stores the full message length, without the terminator, in `len`.
///
/// # Safety
/// `buf` must point to `cap` writable bytes or be null with `cap == 0`.
#[no_mangle]
pub unsafe extern "C" fn hl_last_error(buf: *mut c_char, cap: usize, len: *mut usize) -> HlStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone()).unwrap_or_default();
    let bytes = msg.as_bytes_with_nul();
    if let Some(l) = len.as_mut() {
        *l = bytes.len() - 1;
    }
    if cap == 0 {
        return if bytes.len() == 1 {
            HlStatus::Ok
        } else {
            HlStatus::BufferTooSmall
        };
    }
    if buf.is_null() {
        return HlStatus::NullPointer;
    }
    let n = bytes.len().min(cap);
    std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
    *buf.add(n - 1) = 0;
    if n < bytes.len() {
        HlStatus::BufferTooSmall
    } else {
        HlStatus::Ok
    }
}

/// Static, NUL-terminated version string.
#[no_mangle]
pub extern "C" fn hl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parses and validates a JSON configuration.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_config_from_json(
    json: *const c_char,
    out: *mut *mut HlConfig,
) -> HlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let cfg = ExperimentConfig::from_json(str_arg(json, "json")?).map_err(core)?;
        *out = Box::into_raw(Box::new(config_from(cfg)?));
        Ok(())
    })
}

/// Loads and validates a JSON configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_config_load(path: *const c_char, out: *mut *mut HlConfig) -> HlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let cfg = ExperimentConfig::load(&PathBuf::from(str_arg(path, "path")?)).map_err(core)?;
        *out = Box::into_raw(Box::new(config_from(cfg)?));
        Ok(())
    })
}

/// Writes the 64-character hex config hash plus a NUL into `buf`.
///
/// # Safety
/// `cfg` must come from this library; `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn hl_config_hash(
    cfg: *const HlConfig,
    buf: *mut c_char,
    cap: usize,
) -> HlStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let h = cfg.cfg.hash();
        if cap < h.len() + 1 {
            return Err((
                HlStatus::BufferTooSmall,
                format!("need {} bytes", h.len() + 1),
            ));
        }
        std::ptr::copy_nonoverlapping(h.as_ptr() as *const c_char, buf, h.len());
        *buf.add(h.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hl_config_free(cfg: *mut HlConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Builds the system on box `Π_n`.
///
/// # Safety
/// `cfg` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_system_new(
    cfg: *const HlConfig,
    n: usize,
    out: *mut *mut HlSystem,
) -> HlStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let sys = cfg.setup.system(n).map_err(core)?;
        let zero = vec![0.0; cfg.setup.model.dim()];
        let uniform = cfg.setup.uniform_config(n, &zero).map_err(core)?;
        *out = Box::into_raw(Box::new(HlSystem {
            sys: Arc::new(sys),
            uniform,
        }));
        Ok(())
    })
}

/// Stores the number of sites and the state length (sites × site dimension).
///
/// # Safety
/// `sys` must come from this library; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_system_shape(
    sys: *const HlSystem,
    sites: *mut usize,
    state_len: *mut usize,
) -> HlStatus {
    guard(|| {
        let s = ref_arg(sys, "sys")?;
        *out_arg(sites, "sites")? = s.sys.n_sites();
        *out_arg(state_len, "state_len")? = s.uniform.len();
        Ok(())
    })
}

/// # Safety
/// `sys` must come from this library and not be used afterwards. Steppers
/// created from it stay valid.
#[no_mangle]
pub unsafe extern "C" fn hl_system_free(sys: *mut HlSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Starts replica `replica` of the noise stream `seed` with step `h` from
/// `init` (`len` must equal the state length).
///
/// # Safety
/// `sys` must come from this library; `init` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hl_stepper_new(
    sys: *const HlSystem,
    init: *const f64,
    len: usize,
    seed: u64,
    replica: u64,
    h: f64,
    out: *mut *mut HlStepper,
) -> HlStatus {
    guard(|| {
        let s = ref_arg(sys, "sys")?;
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        if init.is_null() {
            return Err(null("init"));
        }
        let init = std::slice::from_raw_parts(init, len);
        let plan = NoisePlan::new(seed, h, h).map_err(core)?;
        let st = Stepper::new(Arc::clone(&s.sys), init, &plan, replica).map_err(core)?;
        *out = Box::into_raw(Box::new(HlStepper { st }));
        Ok(())
    })
}

/// Advances `steps` Euler–Maruyama steps. Returns `BlowUp` once the state
/// leaves the finite range; the stepper is then frozen.
///
/// # Safety
/// `st` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn hl_stepper_advance(st: *mut HlStepper, steps: u64) -> HlStatus {
    guard(|| {
        let st = out_arg(st, "stepper")?;
        if st.st.advance(steps) {
            Ok(())
        } else {
            let t = st.st.blown_up().unwrap_or(f64::NAN);
            Err((HlStatus::BlowUp, format!("blow-up at t = {t}")))
        }
    })
}

/// Copies the current state into `buf` (`cap` doubles) and the time into `time`.
///
/// # Safety
/// `st` must come from this library; `buf` must hold `cap` doubles; `time`
/// may be null.
#[no_mangle]
pub unsafe extern "C" fn hl_stepper_state(
    st: *const HlStepper,
    buf: *mut f64,
    cap: usize,
    time: *mut f64,
) -> HlStatus {
    guard(|| {
        let st = ref_arg(st, "stepper")?;
        let state = st.st.state();
        if buf.is_null() {
            return Err(null("buf"));
        }
        if cap < state.len() {
            return Err((
                HlStatus::BufferTooSmall,
                format!("need {} doubles", state.len()),
            ));
        }
        std::ptr::copy_nonoverlapping(state.as_ptr(), buf, state.len());
        if let Some(t) = time.as_mut() {
            *t = st.st.time();
        }
        Ok(())
    })
}

/// # Safety
/// `st` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hl_stepper_free(st: *mut HlStepper) {
    if !st.is_null() {
        drop(Box::from_raw(st));
    }
}

/// Solves the single-site Heisenberg reachability problem from `from` to
/// `to` in time `t` and stores the verified endpoint error.
///
/// # Safety
/// `from` and `to` must hold three doubles; `error` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_control_solve(
    from: *const f64,
    to: *const f64,
    t: f64,
    lambda: f64,
    error: *mut f64,
) -> HlStatus {
    guard(|| {
        if from.is_null() || to.is_null() {
            return Err(null("endpoint"));
        }
        let a = std::slice::from_raw_parts(from, 3);
        let b = std::slice::from_raw_parts(to, 3);
        let p = ControlProblem::new(
            SiteState::new(a[0], a[1], a[2]),
            SiteState::new(b[0], b[1], b[2]),
            t,
            lambda,
        )
        .map_err(core)?;
        let u = solve_reachability(&p).map_err(core)?;
        *out_arg(error, "error")? = verify_control(&p, &u);
        Ok(())
    })
}

/// Runs every configured suite. `seed` overrides the master seed when not
/// null; `out_dir` receives the artifacts when not null.
///
/// # Safety
/// `cfg` must come from this library; strings must be NUL terminated.
#[no_mangle]
pub unsafe extern "C" fn hl_run(
    cfg: *const HlConfig,
    seed: *const u64,
    workers: usize,
    out_dir: *const c_char,
    outcome: *mut HlOutcome,
) -> HlStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        let outcome = out_arg(outcome, "outcome")?;
        let out_dir = if out_dir.is_null() {
            None
        } else {
            Some(PathBuf::from(str_arg(out_dir, "out_dir")?))
        };
        let opts = RunOptions {
            seed: seed.as_ref().copied(),
            workers,
            out_dir,
            only: Vec::new(),
        };
        let s = run(&cfg.cfg, &opts).map_err(core)?;
        *outcome = if s.failed() {
            HlOutcome::Fail
        } else if s.inconclusive() {
            HlOutcome::Inconclusive
        } else {
            HlOutcome::Pass
        };
        Ok(())
    })
}
