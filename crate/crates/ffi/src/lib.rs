//! C ABI over `aapi-core`.
//!
//! Every fallible call returns an [`AapiStatus`]; on anything other than
//! `AAPI_STATUS_OK` a message is available from [`aapi_last_error`] on the
//! same thread. Handles are opaque and owned by the caller, who releases them
//! with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use aapi_core::attack::{n_score, Policy};
use aapi_core::cli::checkpoint::Checkpoint;
use aapi_core::envs::make_hazard_gridworld;
use aapi_core::mdp::{policy_iteration, FiniteAAMdp, QTable, TabularPolicy};
use aapi_core::oapi::oa_policy_iteration;
use aapi_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AapiStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad string, index out of range or output buffer too small.
    InvalidArgument = 2,
    /// Malformed model, configuration or checkpoint.
    Config = 3,
    /// A numeric failure such as divergence or a degenerate baseline.
    Numeric = 4,
    NonConvergence = 5,
    Io = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AapiSolver {
    /// Adversary-aware policy iteration.
    Oapi = 0,
    /// Vanilla policy iteration.
    Pi = 1,
}

/// A finite action-adversarial MDP.
pub struct AapiMdp(FiniteAAMdp);

/// A solved tabular policy with its action-value table.
pub struct AapiSolution {
    policy: Vec<usize>,
    q: QTable,
    objective: f64,
    iterations: usize,
}

/// A policy restored from a checkpoint file.
pub struct AapiPolicy(Policy);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(AapiStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => AapiStatus::Io,
            Error::NonConvergence { .. } => AapiStatus::NonConvergence,
            e if e.exit_code() == 2 => AapiStatus::Config,
            _ => AapiStatus::Numeric,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AapiStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(AapiStatus::InvalidArgument, msg.into())
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> AapiStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => AapiStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside aapi".into());
            AapiStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(v);
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aapi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn aapi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Parse an MDP document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn aapi_mdp_from_json(json: *const c_char, out: *mut *mut AapiMdp) -> AapiStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let m = FiniteAAMdp::from_json(text)?;
        write_out(out, Box::into_raw(Box::new(AapiMdp(m))))
    })
}

/// The hazard gridworld of side `n`.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn aapi_mdp_hazard_gridworld(
    n: usize,
    hazard_penalty: f64,
    epsilon: f64,
    out: *mut *mut AapiMdp,
) -> AapiStatus {
    guard(|| {
        let m = make_hazard_gridworld(n, hazard_penalty, epsilon)?;
        write_out(out, Box::into_raw(Box::new(AapiMdp(m))))
    })
}

/// Copy of `mdp` with a different perturbation budget.
///
/// # Safety
/// `mdp` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn aapi_mdp_with_epsilon(mdp: *const AapiMdp, epsilon: f64, out: *mut *mut AapiMdp) -> AapiStatus {
    guard(|| {
        let m = handle(mdp, "mdp")?.0.with_epsilon(epsilon)?;
        write_out(out, Box::into_raw(Box::new(AapiMdp(m))))
    })
}

/// # Safety
/// `mdp` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn aapi_mdp_n_states(mdp: *const AapiMdp, out: *mut usize) -> AapiStatus {
    guard(|| write_out(out, handle(mdp, "mdp")?.0.n_states()))
}

/// # Safety
/// `mdp` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn aapi_mdp_n_actions(mdp: *const AapiMdp, out: *mut usize) -> AapiStatus {
    guard(|| write_out(out, handle(mdp, "mdp")?.0.n_actions()))
}

/// # Safety
/// `mdp` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aapi_mdp_free(mdp: *mut AapiMdp) {
    if !mdp.is_null() {
        drop(Box::from_raw(mdp));
    }
}

/// Solve `mdp` exactly. With `AAPI_SOLVER_OAPI` the objective is the value
/// under the optimal adversary, with `AAPI_SOLVER_PI` the nominal value.
///
/// # Safety
/// `mdp` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn aapi_solve(
    mdp: *const AapiMdp,
    solver: AapiSolver,
    tol: f64,
    max_iters: usize,
    out: *mut *mut AapiSolution,
) -> AapiStatus {
    guard(|| {
        let m = &handle(mdp, "mdp")?.0;
        let (policy, q, trace) = match solver {
            AapiSolver::Oapi => {
                let r = oa_policy_iteration(m, tol, max_iters)?;
                (r.policy, r.q_adv, r.trace)
            }
            AapiSolver::Pi => {
                let r = policy_iteration(m, tol, max_iters)?;
                (r.policy, r.q, r.trace)
            }
        };
        let policy = match policy {
            TabularPolicy::Deterministic(v) => v,
            TabularPolicy::Stochastic(_) => return Err(invalid("solver returned a stochastic policy")),
        };
        let solution = AapiSolution {
            policy,
            q,
            objective: trace.last().map_or(f64::NAN, |e| e.objective),
            iterations: trace.len(),
        };
        write_out(out, Box::into_raw(Box::new(solution)))
    })
}

/// Action chosen in state `s`.
///
/// # Safety
/// `solution` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn aapi_solution_action(solution: *const AapiSolution, s: usize, out: *mut usize) -> AapiStatus {
    guard(|| {
        let sol = handle(solution, "solution")?;
        let a = *sol.policy.get(s).ok_or_else(|| invalid(format!("state {s} out of range")))?;
        write_out(out, a)
    })
}

/// Entry `(s, a)` of the solution's Q table (`Q_adv` for OA-PI).
///
/// # Safety
/// `solution` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn aapi_solution_q(solution: *const AapiSolution, s: usize, a: usize, out: *mut f64) -> AapiStatus {
    guard(|| {
        let sol = handle(solution, "solution")?;
        if s >= sol.q.n_states() || a >= sol.q.n_actions() {
            return Err(invalid(format!("entry ({s}, {a}) out of range")));
        }
        write_out(out, sol.q.get(s, a))
    })
}

/// Start-distribution value of the final policy.
///
/// # Safety
/// `solution` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn aapi_solution_objective(solution: *const AapiSolution, out: *mut f64) -> AapiStatus {
    guard(|| write_out(out, handle(solution, "solution")?.objective))
}

/// Number of evaluated policies.
///
/// # Safety
/// `solution` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn aapi_solution_iterations(solution: *const AapiSolution, out: *mut usize) -> AapiStatus {
    guard(|| write_out(out, handle(solution, "solution")?.iterations))
}

/// # Safety
/// `solution` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aapi_solution_free(solution: *mut AapiSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Load the policy stored in a checkpoint file written by `aapi train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn aapi_policy_load(path: *const c_char, out: *mut *mut AapiPolicy) -> AapiStatus {
    guard(|| {
        let p = str_arg(path, "path")?;
        let policy = Checkpoint::load(Path::new(p))?.policy()?;
        write_out(out, Box::into_raw(Box::new(AapiPolicy(policy))))
    })
}

/// Action for observation `obs`. `seed` drives sampling of stochastic
/// tabular policies. The action length is stored in `written`; a buffer
/// shorter than the action is an error and leaves `action` untouched.
///
/// # Safety
/// `obs` must point to `obs_len` readable doubles, `action` to `action_len`
/// writable doubles, and `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aapi_policy_act(
    policy: *const AapiPolicy,
    obs: *const f64,
    obs_len: usize,
    seed: u64,
    action: *mut f64,
    action_len: usize,
    written: *mut usize,
) -> AapiStatus {
    guard(|| {
        let p = handle(policy, "policy")?;
        if obs.is_null() || action.is_null() {
            return Err(null("observation or action buffer"));
        }
        let o = std::slice::from_raw_parts(obs, obs_len);
        let a = p.0.act(o, &mut ChaCha8Rng::seed_from_u64(seed))?;
        if a.len() > action_len {
            return Err(invalid(format!("action needs {} slots, buffer has {action_len}", a.len())));
        }
        std::slice::from_raw_parts_mut(action, a.len()).copy_from_slice(&a);
        write_out(written, a.len())
    })
}

/// # Safety
/// `policy` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aapi_policy_free(policy: *mut AapiPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Normalized score `(z - z0) / (z1 - z0)`; `z0 == z1` is a numeric error.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn aapi_n_score(z: f64, z0: f64, z1: f64, out: *mut f64) -> AapiStatus {
    guard(|| write_out(out, n_score(z, z0, z1)?))
}
