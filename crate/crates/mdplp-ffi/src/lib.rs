//! C ABI over the core library: opaque handles for models and bases, plain
//! structs for results, integer status codes, and a thread-local last-error
//! message. The matching header lives at `include/mdplp.h`.
//!
//! Ownership rules: every `*_new` has a `*_free`; strings returned by the
//! library are released with `mdplp_string_free`; callers never free the
//! error-message pointer.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mdplp::basis::BasisSet;
use mdplp::bounds::{self, Route};
use mdplp::model::{ControlModel, Criterion};
use mdplp::problems::{fisheries_instance, lqg_instance, FisheriesParams, LqgParams};
use mdplp::scenario;
use mdplp::smoothing::{run_algorithm1, RecordMode, SmoothingContext};

pub const MDPLP_OK: c_int = 0;
pub const MDPLP_ERR_NULL: c_int = 1;
pub const MDPLP_ERR_CONFIG: c_int = 2;
pub const MDPLP_ERR_NUMERICAL: c_int = 3;
pub const MDPLP_ERR_ENCODING: c_int = 4;
pub const MDPLP_ERR_PANIC: c_int = 5;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

/// Message for the most recent failure on this thread. Borrowed pointer,
/// valid until the next failing call; do not free.
#[no_mangle]
pub extern "C" fn mdplp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn mdplp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

pub struct MdplpModel {
    model: ControlModel,
}

pub struct MdplpBasis {
    basis: BasisSet,
}

fn criterion_from(tag: c_int, tau: c_double) -> Result<Criterion, String> {
    match tag {
        0 => Ok(Criterion::AverageCost),
        1 => {
            if tau > 0.0 && tau < 1.0 {
                Ok(Criterion::Discounted { tau })
            } else {
                Err(format!("tau must lie in (0,1), got {tau}"))
            }
        }
        _ => Err(format!("unknown criterion tag {tag}")),
    }
}

fn guarded<F: FnOnce() -> c_int>(f: F) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in library call".to_string());
            set_error(&msg);
            MDPLP_ERR_PANIC
        }
    }
}

unsafe fn optional_json<'a>(ptr: *const c_char) -> Result<Option<&'a str>, c_int> {
    if ptr.is_null() {
        return Ok(None);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Some(s)),
        Err(_) => {
            set_error("parameter string is not valid UTF-8");
            Err(MDPLP_ERR_ENCODING)
        }
    }
}

/// Truncated-LQG model handle. `params_json` may be NULL for the preset that
/// reproduces the reference plots, or a JSON object matching LqgParams.
/// criterion_tag: 0 = average cost, 1 = discounted (with tau).
#[no_mangle]
pub unsafe extern "C" fn mdplp_model_new_lqg(
    params_json: *const c_char,
    criterion_tag: c_int,
    tau: c_double,
    quad_nodes: usize,
    out: *mut *mut MdplpModel,
) -> c_int {
    guarded(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return MDPLP_ERR_NULL;
        }
        let params = match optional_json(params_json) {
            Ok(None) => LqgParams::figures(),
            Ok(Some(s)) => match serde_json::from_str(s) {
                Ok(p) => p,
                Err(e) => {
                    set_error(&format!("bad LqgParams JSON: {e}"));
                    return MDPLP_ERR_CONFIG;
                }
            },
            Err(code) => return code,
        };
        let criterion = match criterion_from(criterion_tag, tau) {
            Ok(c) => c,
            Err(e) => {
                set_error(&e);
                return MDPLP_ERR_CONFIG;
            }
        };
        match lqg_instance(&params, criterion, quad_nodes.max(2)) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(MdplpModel { model }));
                MDPLP_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                MDPLP_ERR_CONFIG
            }
        }
    })
}

/// Ricker fisheries model handle; NULL params selects the shipped preset.
#[no_mangle]
pub unsafe extern "C" fn mdplp_model_new_fisheries(
    params_json: *const c_char,
    criterion_tag: c_int,
    tau: c_double,
    quad_nodes: usize,
    out: *mut *mut MdplpModel,
) -> c_int {
    guarded(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return MDPLP_ERR_NULL;
        }
        let params = match optional_json(params_json) {
            Ok(None) => FisheriesParams::paper(),
            Ok(Some(s)) => match serde_json::from_str(s) {
                Ok(p) => p,
                Err(e) => {
                    set_error(&format!("bad FisheriesParams JSON: {e}"));
                    return MDPLP_ERR_CONFIG;
                }
            },
            Err(code) => return code,
        };
        let criterion = match criterion_from(criterion_tag, tau) {
            Ok(c) => c,
            Err(e) => {
                set_error(&e);
                return MDPLP_ERR_CONFIG;
            }
        };
        match fisheries_instance(&params, criterion, quad_nodes.max(2)) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(MdplpModel { model }));
                MDPLP_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                MDPLP_ERR_CONFIG
            }
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn mdplp_model_free(model: *mut MdplpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// theta_P for the paper-default mode max{L_Q,1} ||psi||_inf.
#[no_mangle]
pub unsafe extern "C" fn mdplp_theta_default(
    model: *const MdplpModel,
    out: *mut c_double,
) -> c_int {
    guarded(|| {
        if model.is_null() || out.is_null() {
            set_error("null pointer");
            return MDPLP_ERR_NULL;
        }
        *out = bounds::mdp_theta_p_default(&(*model).model);
        MDPLP_OK
    })
}

/// Normalized Fourier basis of size n on the model's state box.
#[no_mangle]
pub unsafe extern "C" fn mdplp_basis_new(
    model: *const MdplpModel,
    n: usize,
    out: *mut *mut MdplpBasis,
) -> c_int {
    guarded(|| {
        if model.is_null() || out.is_null() {
            set_error("null pointer");
            return MDPLP_ERR_NULL;
        }
        match mdplp::fourier_basis(&(*model).model, n) {
            Ok(basis) => {
                *out = Box::into_raw(Box::new(MdplpBasis { basis }));
                MDPLP_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                MDPLP_ERR_CONFIG
            }
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn mdplp_basis_free(basis: *mut MdplpBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

/// Minimal scenario count N(n_dims, eps, beta); returns the cap with status
/// MDPLP_ERR_NUMERICAL when the search exceeds it.
#[no_mangle]
pub unsafe extern "C" fn mdplp_sample_size(
    n_dims: u64,
    eps: c_double,
    beta: c_double,
    out: *mut u64,
) -> c_int {
    guarded(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return MDPLP_ERR_NULL;
        }
        if !(n_dims >= 1 && eps > 0.0 && eps <= 1.0 && beta > 0.0 && beta < 1.0) {
            set_error("need n_dims >= 1, eps in (0,1], beta in (0,1)");
            return MDPLP_ERR_CONFIG;
        }
        let count = bounds::sample_size(n_dims, eps, beta);
        *out = count.value;
        if count.capped {
            set_error("sample count exceeded the configured cap");
            MDPLP_ERR_NUMERICAL
        } else {
            MDPLP_OK
        }
    })
}

/// Dual optimizer bound: 1 for average cost, the explicit discounted ratio
/// otherwise.
#[no_mangle]
pub unsafe extern "C" fn mdplp_dual_bound(
    criterion_tag: c_int,
    tau: c_double,
    theta_p: c_double,
    cost_sup: c_double,
    cost_lip: c_double,
    out: *mut c_double,
) -> c_int {
    guarded(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return MDPLP_ERR_NULL;
        }
        let criterion = match criterion_from(criterion_tag, tau) {
            Ok(c) => c,
            Err(e) => {
                set_error(&e);
                return MDPLP_ERR_CONFIG;
            }
        };
        match bounds::dual_bound(criterion, theta_p, cost_sup, cost_lip) {
            Ok(v) => {
                *out = v;
                MDPLP_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                MDPLP_ERR_CONFIG
            }
        }
    })
}

/// Full certificate report as a JSON string (caller frees with
/// mdplp_string_free). route_tag: 0 = scenario, 1 = smoothing.
#[no_mangle]
pub unsafe extern "C" fn mdplp_bounds_report_json(
    model: *const MdplpModel,
    basis: *const MdplpBasis,
    theta_p: c_double,
    residual_d: c_double,
    residual_rate: c_double,
    eps: c_double,
    beta: c_double,
    route_tag: c_int,
    out: *mut *mut c_char,
) -> c_int {
    guarded(|| {
        if model.is_null() || basis.is_null() || out.is_null() {
            set_error("null pointer");
            return MDPLP_ERR_NULL;
        }
        let route = match route_tag {
            0 => Route::Scenario,
            1 => Route::Smoothing,
            _ => {
                set_error("route_tag must be 0 (scenario) or 1 (smoothing)");
                return MDPLP_ERR_CONFIG;
            }
        };
        let report = match bounds::composite_bound(
            &(*model).model,
            &(*basis).basis,
            theta_p,
            residual_d,
            residual_rate,
            eps,
            beta,
            route,
        ) {
            Ok(r) => r,
            Err(e) => {
                set_error(&e.to_string());
                return MDPLP_ERR_NUMERICAL;
            }
        };
        let json = serde_json::to_string_pretty(&report).unwrap();
        *out = CString::new(json).unwrap().into_raw();
        MDPLP_OK
    })
}

#[no_mangle]
pub unsafe extern "C" fn mdplp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// One scenario solve: N uniform samples from the seed, assembly, cone
/// solve, posterior certificate at (eps, beta).
#[repr(C)]
pub struct MdplpScenarioResult {
    pub objective: c_double,
    pub rho_star: c_double,
    pub alpha_norm: c_double,
    pub kkt_stationarity: c_double,
    pub kkt_primal: c_double,
    pub kkt_complementarity: c_double,
    pub certificate: c_double,
    pub samples_required: u64,
    /// 1 when the drawn sample count meets the a-priori requirement
    pub samples_sufficient: c_int,
    pub converged: c_int,
    pub ball_active: c_int,
}

#[no_mangle]
pub unsafe extern "C" fn mdplp_scenario_solve(
    model: *const MdplpModel,
    basis: *const MdplpBasis,
    theta_p: c_double,
    n_samples: usize,
    seed: u64,
    tolerance: c_double,
    eps: c_double,
    beta: c_double,
    out: *mut MdplpScenarioResult,
) -> c_int {
    guarded(|| {
        if model.is_null() || basis.is_null() || out.is_null() {
            set_error("null pointer");
            return MDPLP_ERR_NULL;
        }
        if n_samples == 0 || !(tolerance > 0.0) {
            set_error("need n_samples >= 1 and tolerance > 0");
            return MDPLP_ERR_CONFIG;
        }
        let m = &(*model).model;
        let b = &(*basis).basis;
        let samples = scenario::sample_uniform(m, n_samples, seed);
        let program = match scenario::assemble(m, b, &samples, theta_p) {
            Ok(p) => p,
            Err(e) => {
                set_error(&e.to_string());
                return MDPLP_ERR_NUMERICAL;
            }
        };
        let sol = match scenario::solve(&program, tolerance) {
            Ok(s) => s,
            Err(e) => {
                set_error(&e.to_string());
                return MDPLP_ERR_NUMERICAL;
            }
        };
        let cert = match scenario::posterior_certificate(&sol, &program, m, b, eps, beta) {
            Ok(c) => c,
            Err(e) => {
                set_error(&e.to_string());
                return MDPLP_ERR_NUMERICAL;
            }
        };
        *out = MdplpScenarioResult {
            objective: sol.objective,
            rho_star: sol.rho_star,
            alpha_norm: sol.alpha_norm(),
            kkt_stationarity: sol.kkt_residuals.stationarity,
            kkt_primal: sol.kkt_residuals.primal_feasibility,
            kkt_complementarity: sol.kkt_residuals.complementarity,
            certificate: cert.value,
            samples_required: cert.n_required.value,
            samples_sufficient: c_int::from(cert.n_satisfied),
            converged: c_int::from(sol.converged),
            ball_active: c_int::from(sol.ball_active),
        };
        MDPLP_OK
    })
}

/// One fast-gradient smoothing run with posterior value bounds.
#[repr(C)]
pub struct MdplpSmoothingResult {
    pub j_lb: c_double,
    pub j_ub: c_double,
    pub gap: c_double,
    pub eta: c_double,
    pub iterations: u64,
}

#[no_mangle]
pub unsafe extern "C" fn mdplp_smoothing_run(
    model: *const MdplpModel,
    basis: *const MdplpBasis,
    theta_p: c_double,
    eta: c_double,
    iterations: u64,
    grid_nodes: usize,
    out: *mut MdplpSmoothingResult,
) -> c_int {
    guarded(|| {
        if model.is_null() || basis.is_null() || out.is_null() {
            set_error("null pointer");
            return MDPLP_ERR_NULL;
        }
        if !(eta > 0.0) || iterations == 0 || grid_nodes < 2 {
            set_error("need eta > 0, iterations >= 1, grid_nodes >= 2");
            return MDPLP_ERR_CONFIG;
        }
        let m = &(*model).model;
        let b = &(*basis).basis;
        if !matches!(m.criterion, Criterion::AverageCost) {
            set_error("the smoothing route requires the average-cost criterion");
            return MDPLP_ERR_CONFIG;
        }
        let ctx = match SmoothingContext::new(m, b, grid_nodes) {
            Ok(c) => c,
            Err(e) => {
                set_error(&e.to_string());
                return MDPLP_ERR_NUMERICAL;
            }
        };
        let lip = ctx
            .certified_gradient_lipschitz()
            .min(4.0 * b.rho_n.powi(2));
        let run = match run_algorithm1(&ctx, theta_p, eta, iterations, RecordMode::None, Some(lip))
        {
            Ok(r) => r,
            Err(e) => {
                set_error(&e.to_string());
                return MDPLP_ERR_NUMERICAL;
            }
        };
        let pb = match mdplp::smoothing::posterior_bounds(&ctx, &run) {
            Ok(p) => p,
            Err(e) => {
                set_error(&e.to_string());
                return MDPLP_ERR_NUMERICAL;
            }
        };
        *out = MdplpSmoothingResult {
            j_lb: pb.j_lb,
            j_ub: pb.j_ub,
            gap: pb.j_ub - pb.j_lb,
            eta,
            iterations,
        };
        MDPLP_OK
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_is_nul_terminated() {
        let v = unsafe { CStr::from_ptr(mdplp_version()) };
        assert!(!v.to_str().unwrap().is_empty());
    }

    #[test]
    fn null_arguments_are_rejected() {
        let code = unsafe { mdplp_model_new_lqg(ptr::null(), 0, 0.0, 16, ptr::null_mut()) };
        assert_eq!(code, MDPLP_ERR_NULL);
        let msg = unsafe { CStr::from_ptr(mdplp_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("null"));
    }
}
