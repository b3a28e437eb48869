//! C ABI for the gwloops simulator.
//!
//! Trees are opaque handles created and freed here; every fallible call
//! returns a `GwlStatus` and writes its results through out-pointers.
//! The generated header lives at `include/gwloops.h` (regenerated by the
//! build script via cbindgen).

use gwloops::bounds;
use gwloops::links::ModelParams;
use gwloops::measure::{
    estimate_partition_function, estimate_reach_profile, mcmc_reach_profile, McmcSchedule,
};
use gwloops::trees::{regular_tree, sample_gw_tree, OffspringDistribution, Tree};
use gwloops::Error;
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GwlStatus {
    GwlOk = 0,
    /// A parameter is out of its documented domain.
    GwlErrInvalidArgument = 1,
    /// The requested tree exceeds the supported size or budget.
    GwlErrTooLarge = 2,
    /// The computation failed (overflow, search cap, no sign change, ...).
    GwlErrRuntime = 3,
    /// A required pointer was null.
    GwlErrNullPointer = 4,
    /// An internal panic was caught at the boundary.
    GwlErrPanic = 5,
}

/// Opaque tree handle.
pub struct GwlTree {
    inner: Tree,
}

fn status_of(err: &Error) -> GwlStatus {
    match err {
        Error::InvalidParams(_)
        | Error::InvalidDistribution(_)
        | Error::InvalidSchedule(_)
        | Error::InvalidConfig(_)
        | Error::Parse(_) => GwlStatus::GwlErrInvalidArgument,
        Error::TreeTooLarge { .. } | Error::VertexBudgetExceeded { .. } => GwlStatus::GwlErrTooLarge,
        _ => GwlStatus::GwlErrRuntime,
    }
}

fn guarded(f: impl FnOnce() -> GwlStatus + std::panic::UnwindSafe) -> GwlStatus {
    match catch_unwind(f) {
        Ok(status) => status,
        Err(_) => GwlStatus::GwlErrPanic,
    }
}

unsafe fn write_out<T>(ptr: *mut T, value: T) -> GwlStatus {
    if ptr.is_null() {
        return GwlStatus::GwlErrNullPointer;
    }
    unsafe { ptr.write(value) };
    GwlStatus::GwlOk
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn gwl_status_message(status: GwlStatus) -> *const libc::c_char {
    let msg: &'static [u8] = match status {
        GwlStatus::GwlOk => b"ok\0",
        GwlStatus::GwlErrInvalidArgument => b"invalid argument\0",
        GwlStatus::GwlErrTooLarge => b"tree too large\0",
        GwlStatus::GwlErrRuntime => b"runtime failure\0",
        GwlStatus::GwlErrNullPointer => b"null pointer\0",
        GwlStatus::GwlErrPanic => b"internal panic\0",
    };
    msg.as_ptr() as *const libc::c_char
}

/// Build the regular tree with d children per vertex and n generations.
///
/// # Safety
/// `out` must be a valid pointer; the returned handle must be released
/// with `gwl_tree_free`.
#[no_mangle]
pub unsafe extern "C" fn gwl_tree_regular(d: u32, n: u32, out: *mut *mut GwlTree) -> GwlStatus {
    if out.is_null() {
        return GwlStatus::GwlErrNullPointer;
    }
    guarded(AssertUnwindSafe(|| match regular_tree(d, n) {
        Ok(tree) => {
            let handle = Box::into_raw(Box::new(GwlTree { inner: tree }));
            unsafe { write_out(out, handle) }
        }
        Err(e) => status_of(&e),
    }))
}

/// Sample a Galton-Watson tree with Poisson(mu) offspring, cut at level n.
///
/// # Safety
/// `out` must be a valid pointer; the returned handle must be released
/// with `gwl_tree_free`.
#[no_mangle]
pub unsafe extern "C" fn gwl_tree_gw_poisson(
    mu: f64,
    n: u32,
    seed: u64,
    out: *mut *mut GwlTree,
) -> GwlStatus {
    if out.is_null() {
        return GwlStatus::GwlErrNullPointer;
    }
    guarded(AssertUnwindSafe(|| {
        let dist = match OffspringDistribution::poisson(mu) {
            Ok(d) => d,
            Err(e) => return status_of(&e),
        };
        let mut rng = gwloops::rng::derive_stream(seed, 0);
        match sample_gw_tree(&dist, n, &mut rng) {
            Ok(tree) => {
                let handle = Box::into_raw(Box::new(GwlTree { inner: tree }));
                unsafe { write_out(out, handle) }
            }
            Err(e) => status_of(&e),
        }
    }))
}

/// Release a tree handle. Null is ignored.
///
/// # Safety
/// `tree` must have been returned by a gwl_tree_* constructor and not
/// freed before.
#[no_mangle]
pub unsafe extern "C" fn gwl_tree_free(tree: *mut GwlTree) {
    if !tree.is_null() {
        drop(unsafe { Box::from_raw(tree) });
    }
}

/// Number of vertices of the tree.
///
/// # Safety
/// `tree` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gwl_tree_vertex_count(tree: *const GwlTree) -> u64 {
    if tree.is_null() {
        return 0;
    }
    unsafe { &*tree }.inner.vertex_count() as u64
}

/// Deepest generation present in the tree.
///
/// # Safety
/// `tree` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gwl_tree_max_generation(tree: *const GwlTree) -> u32 {
    if tree.is_null() {
        return 0;
    }
    unsafe { &*tree }.inner.max_generation()
}

/// Importance-sampling estimate of the probability, under the
/// theta-weighted measure, that some loop through the root reaches
/// generation m. Deterministic for a fixed seed, independent of `workers`.
///
/// # Safety
/// `tree` must be a live handle; `out_value` must be valid;
/// `out_std_error` may be null.
#[no_mangle]
pub unsafe extern "C" fn gwl_estimate_reach(
    tree: *const GwlTree,
    theta: f64,
    beta: f64,
    u: f64,
    m: u32,
    n_samples: u64,
    seed: u64,
    workers: u32,
    out_value: *mut f64,
    out_std_error: *mut f64,
) -> GwlStatus {
    if tree.is_null() {
        return GwlStatus::GwlErrNullPointer;
    }
    let tree = unsafe { &(*tree).inner };
    guarded(AssertUnwindSafe(|| {
        let params = match ModelParams::new(theta, beta, u) {
            Ok(p) => p,
            Err(e) => return status_of(&e),
        };
        match estimate_reach_profile(tree, &params, &[m], n_samples, seed, workers.max(1) as usize) {
            Ok(ests) => {
                let est = &ests[0];
                if !out_std_error.is_null() {
                    unsafe { out_std_error.write(est.std_error) };
                }
                unsafe { write_out(out_value, est.value) }
            }
            Err(e) => status_of(&e),
        }
    }))
}

/// Metropolis estimate of the reach probability (single sequential chain).
///
/// # Safety
/// As for `gwl_estimate_reach`.
#[no_mangle]
pub unsafe extern "C" fn gwl_mcmc_reach(
    tree: *const GwlTree,
    theta: f64,
    beta: f64,
    u: f64,
    m: u32,
    n_steps: u64,
    burn_in: u64,
    thin: u64,
    seed: u64,
    out_value: *mut f64,
    out_std_error: *mut f64,
) -> GwlStatus {
    if tree.is_null() {
        return GwlStatus::GwlErrNullPointer;
    }
    let tree = unsafe { &(*tree).inner };
    guarded(AssertUnwindSafe(|| {
        let params = match ModelParams::new(theta, beta, u) {
            Ok(p) => p,
            Err(e) => return status_of(&e),
        };
        let schedule = match McmcSchedule::new(n_steps, burn_in, thin) {
            Ok(s) => s,
            Err(e) => return status_of(&e),
        };
        match mcmc_reach_profile(tree, &params, &schedule, seed, &[m]) {
            Ok((ests, _)) => {
                let est = &ests[0];
                if !out_std_error.is_null() {
                    unsafe { out_std_error.write(est.std_error) };
                }
                unsafe { write_out(out_value, est.value) }
            }
            Err(e) => status_of(&e),
        }
    }))
}

/// Monte Carlo estimate of the partition function E[theta^L] together with
/// its standard error and logarithm.
///
/// # Safety
/// As for `gwl_estimate_reach`; `out_log_value` may be null.
#[no_mangle]
pub unsafe extern "C" fn gwl_partition_function(
    tree: *const GwlTree,
    theta: f64,
    beta: f64,
    u: f64,
    n_samples: u64,
    seed: u64,
    workers: u32,
    out_value: *mut f64,
    out_std_error: *mut f64,
    out_log_value: *mut f64,
) -> GwlStatus {
    if tree.is_null() {
        return GwlStatus::GwlErrNullPointer;
    }
    let tree = unsafe { &(*tree).inner };
    guarded(AssertUnwindSafe(|| {
        let params = match ModelParams::new(theta, beta, u) {
            Ok(p) => p,
            Err(e) => return status_of(&e),
        };
        match estimate_partition_function(tree, &params, n_samples, seed, workers.max(1) as usize) {
            Ok(est) => {
                if !out_std_error.is_null() {
                    unsafe { out_std_error.write(est.std_error) };
                }
                if !out_log_value.is_null() {
                    unsafe { out_log_value.write(est.log_value) };
                }
                unsafe { write_out(out_value, est.value) }
            }
            Err(e) => status_of(&e),
        }
    }))
}

/// Long-loop decay constant for deterministic offspring d.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gwl_q_tilde_deterministic(
    d: u32,
    theta: f64,
    beta: f64,
    out: *mut f64,
) -> GwlStatus {
    if !theta.is_finite() || theta < 1.0 || !beta.is_finite() || beta < 0.0 {
        return GwlStatus::GwlErrInvalidArgument;
    }
    let dist = OffspringDistribution::deterministic(d);
    unsafe { write_out(out, bounds::q_tilde(&dist, theta, beta)) }
}

/// Long-loop decay constant for Poisson(mu) offspring.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gwl_q_tilde_poisson(
    mu: f64,
    theta: f64,
    beta: f64,
    out: *mut f64,
) -> GwlStatus {
    if !theta.is_finite() || theta < 1.0 || !beta.is_finite() || beta < 0.0 {
        return GwlStatus::GwlErrInvalidArgument;
    }
    match OffspringDistribution::poisson(mu) {
        Ok(dist) => unsafe { write_out(out, bounds::q_tilde(&dist, theta, beta)) },
        Err(e) => status_of(&e),
    }
}

/// Decay envelope c_d at offspring bound d for the window beta = q/d.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gwl_c_d(q: f64, theta: f64, d: u32, out: *mut f64) -> GwlStatus {
    if !theta.is_finite() || theta < 1.0 || !q.is_finite() || q <= 0.0 || d == 0 {
        return GwlStatus::GwlErrInvalidArgument;
    }
    unsafe { write_out(out, bounds::c_d(q, theta, d)) }
}

/// Least d whose decay envelope stays below 1 (with the guard window).
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gwl_d0(q: f64, theta: f64, out: *mut u32) -> GwlStatus {
    guarded(AssertUnwindSafe(|| match bounds::find_d0(q, theta) {
        Ok(res) => unsafe { write_out(out, res.d0) },
        Err(e) => status_of(&e),
    }))
}

/// Closed-form bounds for the root-edge pattern events on d children:
/// upper bound on P[all edges empty], lower bound on P[all carry <= 1].
///
/// # Safety
/// Out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gwl_prob_a_bounds(
    d: u32,
    theta: f64,
    beta: f64,
    out_empty_upper: *mut f64,
    out_at_most_one_lower: *mut f64,
) -> GwlStatus {
    if !theta.is_finite() || theta < 1.0 || !beta.is_finite() || beta < 0.0 {
        return GwlStatus::GwlErrInvalidArgument;
    }
    let (upper, lower) = bounds::prob_a_bounds(d, theta, beta);
    let s = unsafe { write_out(out_empty_upper, upper) };
    if s != GwlStatus::GwlOk {
        return s;
    }
    unsafe { write_out(out_at_most_one_lower, lower) }
}

/// Critical beta where the decay constant of Poisson(mu) offspring crosses
/// 1 (bisection to 1e-9).
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gwl_critical_beta_poisson(mu: f64, theta: f64, out: *mut f64) -> GwlStatus {
    guarded(AssertUnwindSafe(|| {
        let dist = match OffspringDistribution::poisson(mu) {
            Ok(d) => d,
            Err(e) => return status_of(&e),
        };
        match bounds::critical_beta_subcritical(&dist, theta) {
            Ok(beta) => unsafe { write_out(out, beta) },
            Err(e) => status_of(&e),
        }
    }))
}
