//! C ABI for the pexprk integrators.
//!
//! Objects cross the boundary as opaque handles created by `*_new`
//! functions and released by the matching `*_free`. Every fallible
//! function returns a [`PexprkStatus`]; the message of the most recent
//! failure on the calling thread is available from
//! [`pexprk_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pexprk::harness::{format_csv, run_convergence_study, HarnessError, PartialConfig};
use pexprk::krylov::KrylovConfig;
use pexprk::phi::phi_scalar;
use pexprk::problems::{gs_default, gs_initial, gs_problem, oracle_semilinear, JacobianKind, Partitioning};
use pexprk::steppers::{integrate_fixed, EvalMode, SplitProblem, StepConfig, Stepper};
use pexprk::tableaux::{check_order_conditions, tableau, CONDITION_LABELS};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PexprkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Io = 4,
    Panic = 5,
}

pub const PEXPRK_PARTITION_NONE: i32 = 0;
pub const PEXPRK_PARTITION_SPECIES: i32 = 1;
pub const PEXPRK_PARTITION_SPACE: i32 = 2;
pub const PEXPRK_PARTITION_PHYSICS: i32 = 3;
pub const PEXPRK_PARTITION_IMEX: i32 = 4;

pub const PEXPRK_JACOBIAN_FULL: i32 = 0;
pub const PEXPRK_JACOBIAN_BLOCK: i32 = 1;

pub const PEXPRK_FORM_ORIG: i32 = 0;
pub const PEXPRK_FORM_TRAN: i32 = 1;
pub const PEXPRK_FORM_PART: i32 = 2;

/// Number of order-condition residuals written by
/// [`pexprk_check_order`].
pub const PEXPRK_NUM_CONDITIONS: usize = 9;

/// A right-hand side split into partitions, with its initial state.
pub struct PexprkProblem {
    problem: SplitProblem,
    initial: Vec<f64>,
}

/// A stepping method.
pub struct PexprkStepper {
    stepper: Stepper,
}

/// Work counters of an integration.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PexprkStats {
    pub steps: usize,
    pub matvecs: usize,
    pub krylov_dims: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: PexprkStatus, msg: impl Into<String>) -> PexprkStatus {
    set_error(msg);
    status
}

fn guarded(f: impl FnOnce() -> PexprkStatus) -> PexprkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(PexprkStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn harness_status(e: &HarnessError) -> PexprkStatus {
    match e.exit_code() {
        2 => PexprkStatus::InvalidArgument,
        3 => PexprkStatus::Numerical,
        _ => PexprkStatus::Io,
    }
}

fn partition_from(code: i32) -> Option<Partitioning> {
    Some(match code {
        PEXPRK_PARTITION_NONE => Partitioning::None,
        PEXPRK_PARTITION_SPECIES => Partitioning::Species,
        PEXPRK_PARTITION_SPACE => Partitioning::Space,
        PEXPRK_PARTITION_PHYSICS => Partitioning::Physics,
        PEXPRK_PARTITION_IMEX => Partitioning::Imex,
        _ => return None,
    })
}

unsafe fn out_handle<T>(out: *mut *mut T, value: T) -> PexprkStatus {
    *out = Box::into_raw(Box::new(value));
    PexprkStatus::Ok
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pexprk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// excluding the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pexprk_last_error_message(buf: *mut c_char, len: usize) -> usize {
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

/// φ_k(z) for 0 ≤ k ≤ 8.
///
/// # Safety
/// `out` must be null or point to writable memory for one double.
#[no_mangle]
pub unsafe extern "C" fn pexprk_phi_scalar(k: u32, z: f64, out: *mut f64) -> PexprkStatus {
    guarded(|| {
        if out.is_null() {
            return fail(PexprkStatus::NullPointer, "out is null");
        }
        match phi_scalar(k, z) {
            Ok(v) => {
                *out = v;
                PexprkStatus::Ok
            }
            Err(e) => fail(PexprkStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Gray–Scott problem on an n×n grid with the given partition code; the
/// jacobian code only matters for `PEXPRK_PARTITION_NONE`.
///
/// # Safety
/// `out` must be null or valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn pexprk_gray_scott_new(
    n: usize,
    partition: i32,
    jacobian: i32,
    out: *mut *mut PexprkProblem,
) -> PexprkStatus {
    guarded(|| {
        if out.is_null() {
            return fail(PexprkStatus::NullPointer, "out is null");
        }
        let Some(p) = partition_from(partition) else {
            return fail(PexprkStatus::InvalidArgument, format!("unknown partition code {partition}"));
        };
        let jac = match jacobian {
            PEXPRK_JACOBIAN_FULL => JacobianKind::Full,
            PEXPRK_JACOBIAN_BLOCK => JacobianKind::Block,
            _ => return fail(PexprkStatus::InvalidArgument, format!("unknown jacobian code {jacobian}")),
        };
        let m = gs_default(n);
        match gs_problem(&m, p, jac) {
            Ok(problem) => out_handle(
                out,
                PexprkProblem {
                    problem,
                    initial: gs_initial(&m),
                },
            ),
            Err(e) => fail(PexprkStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Random semilinear test problem u' = Lu + 0.1 sin(u). With `explicit`
/// nonzero the operator is zero.
///
/// # Safety
/// `out` must be null or valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn pexprk_oracle_new(
    dim: usize,
    seed: u64,
    explicit: i32,
    out: *mut *mut PexprkProblem,
) -> PexprkStatus {
    guarded(|| {
        if out.is_null() {
            return fail(PexprkStatus::NullPointer, "out is null");
        }
        if dim == 0 {
            return fail(PexprkStatus::InvalidArgument, "dimension must be positive");
        }
        let o = oracle_semilinear(dim, seed);
        let problem = if explicit != 0 {
            o.explicit_problem()
        } else {
            o.problem()
        };
        out_handle(
            out,
            PexprkProblem {
                problem,
                initial: o.u0,
            },
        )
    })
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pexprk_problem_dim(p: *const PexprkProblem) -> usize {
    p.as_ref().map_or(0, |p| p.problem.dim)
}

/// Number of partitions, or 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pexprk_problem_num_parts(p: *const PexprkProblem) -> usize {
    p.as_ref().map_or(0, |p| p.problem.num_parts())
}

/// Copies the initial state into `out` (length `len` must equal the
/// dimension).
///
/// # Safety
/// `p` must be null or a live handle; `out` null or valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pexprk_problem_initial_state(
    p: *const PexprkProblem,
    out: *mut f64,
    len: usize,
) -> PexprkStatus {
    guarded(|| {
        let Some(p) = p.as_ref() else {
            return fail(PexprkStatus::NullPointer, "problem is null");
        };
        if out.is_null() {
            return fail(PexprkStatus::NullPointer, "out is null");
        }
        if len != p.initial.len() {
            return fail(
                PexprkStatus::InvalidArgument,
                format!("buffer length {len}, dimension {}", p.initial.len()),
            );
        }
        ptr::copy_nonoverlapping(p.initial.as_ptr(), out, len);
        PexprkStatus::Ok
    })
}

/// Writes Σ_p f^p(u) into `out`.
///
/// # Safety
/// `p` must be null or a live handle; `u` and `out` null or valid for
/// `len` doubles and not overlapping.
#[no_mangle]
pub unsafe extern "C" fn pexprk_problem_rhs(
    p: *const PexprkProblem,
    u: *const f64,
    out: *mut f64,
    len: usize,
) -> PexprkStatus {
    guarded(|| {
        let Some(p) = p.as_ref() else {
            return fail(PexprkStatus::NullPointer, "problem is null");
        };
        if u.is_null() || out.is_null() {
            return fail(PexprkStatus::NullPointer, "state or output is null");
        }
        if len != p.problem.dim {
            return fail(
                PexprkStatus::InvalidArgument,
                format!("buffer length {len}, dimension {}", p.problem.dim),
            );
        }
        let f = p.problem.rhs_full(std::slice::from_raw_parts(u, len));
        ptr::copy_nonoverlapping(f.as_ptr(), out, len);
        PexprkStatus::Ok
    })
}

/// Releases a problem handle. Null is ignored.
///
/// # Safety
/// `p` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pexprk_problem_free(p: *mut PexprkProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Stepper for a catalog method of order 2, 3 or 4 in the given form.
///
/// # Safety
/// `out` must be null or valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn pexprk_stepper_new(
    order: u32,
    form: i32,
    out: *mut *mut PexprkStepper,
) -> PexprkStatus {
    guarded(|| {
        if out.is_null() {
            return fail(PexprkStatus::NullPointer, "out is null");
        }
        let t = match tableau(order) {
            Ok(t) => t,
            Err(e) => return fail(PexprkStatus::InvalidArgument, e.to_string()),
        };
        let stepper = match form {
            PEXPRK_FORM_ORIG => Ok(Stepper::original(t)),
            PEXPRK_FORM_TRAN => Stepper::transformed(&t),
            PEXPRK_FORM_PART => Stepper::partitioned(&t),
            _ => return fail(PexprkStatus::InvalidArgument, format!("unknown form code {form}")),
        };
        match stepper {
            Ok(stepper) => out_handle(out, PexprkStepper { stepper }),
            Err(e) => fail(PexprkStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Order-2 two-partition stepper in residual form.
///
/// # Safety
/// `out` must be null or valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn pexprk_stepper_residual2_new(out: *mut *mut PexprkStepper) -> PexprkStatus {
    guarded(|| {
        if out.is_null() {
            return fail(PexprkStatus::NullPointer, "out is null");
        }
        out_handle(
            out,
            PexprkStepper {
                stepper: Stepper::ResidualOrder2,
            },
        )
    })
}

/// Releases a stepper handle. Null is ignored.
///
/// # Safety
/// `s` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pexprk_stepper_free(s: *mut PexprkStepper) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Integrates from `u0` over [t0, tf] with `n_steps` equal steps and
/// writes the final state to `out`. `stats` may be null.
///
/// # Safety
/// Handles must be live; `u0` and `out` valid for `len` doubles; `stats`
/// null or writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn pexprk_integrate(
    stepper: *const PexprkStepper,
    problem: *const PexprkProblem,
    u0: *const f64,
    len: usize,
    t0: f64,
    tf: f64,
    n_steps: usize,
    krylov_tol: f64,
    m_max: usize,
    out: *mut f64,
    stats: *mut PexprkStats,
) -> PexprkStatus {
    guarded(|| {
        let (Some(s), Some(p)) = (stepper.as_ref(), problem.as_ref()) else {
            return fail(PexprkStatus::NullPointer, "stepper or problem is null");
        };
        if u0.is_null() || out.is_null() {
            return fail(PexprkStatus::NullPointer, "state or output is null");
        }
        if len != p.problem.dim {
            return fail(
                PexprkStatus::InvalidArgument,
                format!("buffer length {len}, dimension {}", p.problem.dim),
            );
        }
        if !(tf > t0) {
            return fail(PexprkStatus::InvalidArgument, "tf must exceed t0");
        }
        let krylov = match KrylovConfig::new(krylov_tol, m_max) {
            Ok(k) => k,
            Err(e) => return fail(PexprkStatus::InvalidArgument, e.to_string()),
        };
        let cfg = StepConfig {
            krylov,
            mode: EvalMode::Fused,
        };
        let u = std::slice::from_raw_parts(u0, len);
        match integrate_fixed(&s.stepper, &p.problem, u, t0, tf, n_steps, &cfg) {
            Ok(r) => {
                ptr::copy_nonoverlapping(r.state.as_ptr(), out, len);
                if let Some(st) = stats.as_mut() {
                    *st = PexprkStats {
                        steps: r.steps,
                        matvecs: r.matvecs,
                        krylov_dims: r.krylov_dims,
                    };
                }
                PexprkStatus::Ok
            }
            Err(pexprk::steppers::StepError::NoSteps) => {
                fail(PexprkStatus::InvalidArgument, "n_steps must be at least 1")
            }
            Err(e) => fail(PexprkStatus::Numerical, e.to_string()),
        }
    })
}

/// Residuals of the stiff order conditions 1, 2a, 2b, 3a, 3b, 4a, 4b, 4c,
/// 4d (in that order) for the catalog method of the given order, on random
/// size×size matrices. `out` receives `PEXPRK_NUM_CONDITIONS` values.
///
/// # Safety
/// `out` must be null or valid for `PEXPRK_NUM_CONDITIONS` doubles.
#[no_mangle]
pub unsafe extern "C" fn pexprk_check_order(
    order: u32,
    size: usize,
    seed: u64,
    out: *mut f64,
) -> PexprkStatus {
    guarded(|| {
        if out.is_null() {
            return fail(PexprkStatus::NullPointer, "out is null");
        }
        let rs = tableau(order).and_then(|t| check_order_conditions(&t, 4, size, seed));
        match rs {
            Ok(rs) => {
                debug_assert_eq!(rs.len(), CONDITION_LABELS.len());
                for (i, r) in rs.iter().enumerate() {
                    *out.add(i) = r.residual;
                }
                PexprkStatus::Ok
            }
            Err(e) => fail(PexprkStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Runs a convergence study described by a JSON object with the same keys
/// as the command-line flags and writes CSV to `out_path`.
///
/// # Safety
/// Both arguments must be null or NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn pexprk_run_study(
    config_json: *const c_char,
    out_path: *const c_char,
) -> PexprkStatus {
    guarded(|| {
        if config_json.is_null() || out_path.is_null() {
            return fail(PexprkStatus::NullPointer, "config or path is null");
        }
        let (Ok(json), Ok(path)) = (
            CStr::from_ptr(config_json).to_str(),
            CStr::from_ptr(out_path).to_str(),
        ) else {
            return fail(PexprkStatus::InvalidArgument, "arguments must be UTF-8");
        };
        let cfg = match serde_json_config(json) {
            Ok(c) => c,
            Err(e) => return fail(harness_status(&e), e.to_string()),
        };
        let study = match run_convergence_study(&cfg) {
            Ok(s) => s,
            Err(e) => return fail(harness_status(&e), e.to_string()),
        };
        match std::fs::write(Path::new(path), format_csv(&study.rows, &study.metadata())) {
            Ok(()) => PexprkStatus::Ok,
            Err(e) => fail(PexprkStatus::Io, e.to_string()),
        }
    })
}

fn serde_json_config(json: &str) -> Result<pexprk::harness::RunConfig, HarnessError> {
    PartialConfig::from_json_str(json)?.resolve()
}
