//! C ABI over `gkdv_control`.
//!
//! Every function returns a `GkdvStatus`; results travel through out
//! pointers. Objects are opaque handles created by `*_new` and released by the
//! matching `*_free`. After a non-OK status, `gkdv_last_error_message` copies
//! a description of the failure for the calling thread.

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use gkdv_control::control::{self, ControlSpec, ParameterTrajectory};
use gkdv_control::grid::GridFunction;
use gkdv_control::linearized;
use gkdv_control::pde::{self, ControlField, RunGeometry, SimulationState, Stepper};
use gkdv_control::soliton::{self, SolitonParams};
use gkdv_control::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GkdvStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Range = 3,
    Integration = 4,
    Solver = 5,
    BlowUp = 6,
    Fit = 7,
    Config = 8,
    Io = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> GkdvStatus {
    match e {
        Error::Domain(_) => GkdvStatus::Domain,
        Error::Range(_) => GkdvStatus::Range,
        Error::Integration(_) => GkdvStatus::Integration,
        Error::Solver(_) => GkdvStatus::Solver,
        Error::BlowUp { .. } => GkdvStatus::BlowUp,
        Error::Fit(_) => GkdvStatus::Fit,
        Error::Config(_) => GkdvStatus::Config,
        Error::Io(_) => GkdvStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
    Small(usize),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GkdvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GkdvStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            GkdvStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Small(need))) => {
            set_error(format!("buffer too small: {need} entries needed"));
            GkdvStatus::BufferTooSmall
        }
        Err(_) => {
            set_error("internal panic".into());
            GkdvStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn get<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

/// Copies the last error of this thread into `buf` (NUL-terminated, truncated
/// to `len`). Returns the full message length excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn gkdv_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Q(s) for p in {2, 3, 4}.
///
/// # Safety
/// `out_value` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gkdv_eval_q(p: u32, s: f64, out_value: *mut f64) -> GkdvStatus {
    guard(|| {
        *out(out_value, "out_value")? = soliton::eval_q(p, s)?;
        Ok(())
    })
}

/// Q_c(y).
///
/// # Safety
/// `out_value` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gkdv_eval_qc(p: u32, c: f64, y: f64, out_value: *mut f64) -> GkdvStatus {
    guard(|| {
        *out(out_value, "out_value")? = soliton::eval_qc(&SolitonParams::new(p, c, 0.0)?, y)?;
        Ok(())
    })
}

/// d/dc Q_c(y).
///
/// # Safety
/// `out_value` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gkdv_eval_lambda_qc(p: u32, c: f64, y: f64, out_value: *mut f64) -> GkdvStatus {
    guard(|| {
        *out(out_value, "out_value")? = soliton::eval_lambda_qc(&SolitonParams::new(p, c, 0.0)?, y)?;
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GkdvQuadratureConstants {
    pub int_q: f64,
    pub int_q2: f64,
    pub int_q3: f64,
    pub lambda_p: f64,
}

/// int Q, int Q^2, int Q^3 and lambda_p.
///
/// # Safety
/// `out_constants` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gkdv_quadrature_constants(p: u32, out_constants: *mut GkdvQuadratureConstants) -> GkdvStatus {
    guard(|| {
        let q = soliton::quadrature_constants(p)?;
        *out(out_constants, "out_constants")? =
            GkdvQuadratureConstants { int_q: q.int_q, int_q2: q.int_q2, int_q3: q.int_q3, lambda_p: q.lambda_p };
        Ok(())
    })
}

/// Profile amplitude a_inf reaching c_f.
///
/// # Safety
/// `out_value` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gkdv_a_infinity(p: u32, c_f: f64, lambda_p: f64, out_value: *mut f64) -> GkdvStatus {
    guard(|| {
        *out(out_value, "out_value")? = control::a_infinity(p, c_f, lambda_p)?;
        Ok(())
    })
}

/// Opaque control specification.
pub struct GkdvControlSpec(ControlSpec);

/// # Safety
/// `out_spec` must be a valid pointer; the handle it receives must be
/// released with `gkdv_control_spec_free`.
#[no_mangle]
pub unsafe extern "C" fn gkdv_control_spec_new(
    p: u32,
    c_f: f64,
    eps: f64,
    delta0: f64,
    gamma0: f64,
    out_spec: *mut *mut GkdvControlSpec,
) -> GkdvStatus {
    guard(|| {
        let slot = out(out_spec, "out_spec")?;
        let spec = ControlSpec::new(p, c_f, eps, delta0, gamma0)?;
        *slot = Box::into_raw(Box::new(GkdvControlSpec(spec)));
        Ok(())
    })
}

/// # Safety
/// `spec` must be null or a handle from `gkdv_control_spec_new`, freed once.
#[no_mangle]
pub unsafe extern "C" fn gkdv_control_spec_free(spec: *mut GkdvControlSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// a_inf of the specification.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gkdv_control_spec_a_inf(spec: *const GkdvControlSpec, out_value: *mut f64) -> GkdvStatus {
    guard(|| {
        *out(out_value, "out_value")? = get(spec, "spec")?.0.a_inf;
        Ok(())
    })
}

/// a0^{(k)}(x) for k <= 3.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gkdv_eval_a0_deriv(spec: *const GkdvControlSpec, x: f64, k: u32, out_value: *mut f64) -> GkdvStatus {
    guard(|| {
        *out(out_value, "out_value")? = control::eval_a0_deriv(&get(spec, "spec")?.0, x, k)?;
        Ok(())
    })
}

/// Opaque solution of the (c0, rho0) system.
pub struct GkdvTrajectory(Arc<ParameterTrajectory>);

/// # Safety
/// Pointers must be valid; release the handle with `gkdv_trajectory_free`.
#[no_mangle]
pub unsafe extern "C" fn gkdv_trajectory_new(
    spec: *const GkdvControlSpec,
    t_end: f64,
    out_traj: *mut *mut GkdvTrajectory,
) -> GkdvStatus {
    guard(|| {
        let slot = out(out_traj, "out_traj")?;
        let tr = control::integrate_parameter_ode(&get(spec, "spec")?.0, t_end)?;
        *slot = Box::into_raw(Box::new(GkdvTrajectory(Arc::new(tr))));
        Ok(())
    })
}

/// # Safety
/// `traj` must be null or a handle from `gkdv_trajectory_new`, freed once.
#[no_mangle]
pub unsafe extern "C" fn gkdv_trajectory_free(traj: *mut GkdvTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// (c0(t), rho0(t)) by cubic Hermite interpolation.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gkdv_trajectory_sample(
    traj: *const GkdvTrajectory,
    t: f64,
    out_c0: *mut f64,
    out_rho0: *mut f64,
) -> GkdvStatus {
    guard(|| {
        let (c, r) = get(traj, "traj")?.0.sample(t)?;
        *out(out_c0, "out_c0")? = c;
        *out(out_rho0, "out_rho0")? = r;
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GkdvCorrectorSummary {
    pub beta_c: f64,
    pub mu_c: f64,
    pub delta_c: f64,
    pub f2: f64,
    pub residual_pde: f64,
    pub residual_orth_1: f64,
    pub residual_orth_2: f64,
    /// A at the left end of the operator grid.
    pub a_left: f64,
}

/// Solves the corrector problem at (c, rho) with reference (c0, rho0).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gkdv_corrector_solve(
    spec: *const GkdvControlSpec,
    c: f64,
    rho: f64,
    c0: f64,
    rho0: f64,
    out_summary: *mut GkdvCorrectorSummary,
) -> GkdvStatus {
    guard(|| {
        let slot = out(out_summary, "out_summary")?;
        let spec = &get(spec, "spec")?.0;
        let st = SolitonParams::new(spec.p, c, rho)?;
        let consts = soliton::quadrature_constants(spec.p)?;
        let k = linearized::solve_corrector(&st, (c0, rho0), spec, &consts)?;
        *slot = GkdvCorrectorSummary {
            beta_c: k.beta_c,
            mu_c: k.mu_c,
            delta_c: k.delta_c,
            f2: k.f2,
            residual_pde: k.residual_pde,
            residual_orth_1: k.residual_orth.0,
            residual_orth_2: k.residual_orth.1,
            a_left: k.a.samples()[0],
        };
        Ok(())
    })
}

/// Opaque controlled simulation.
pub struct GkdvSimulation {
    state: SimulationState,
    geom: RunGeometry,
    stepper: Stepper,
}

/// Starts a controlled run from u0 = Q(x - rho0(0)) on [origin, origin + length)
/// with `n` points (a power of two) and step `dt`. `traj` must cover the
/// times the simulation will reach.
///
/// # Safety
/// Pointers must be valid; release the handle with `gkdv_simulation_free`.
#[no_mangle]
pub unsafe extern "C" fn gkdv_simulation_new(
    spec: *const GkdvControlSpec,
    traj: *const GkdvTrajectory,
    origin: f64,
    length: f64,
    n: usize,
    dt: f64,
    out_sim: *mut *mut GkdvSimulation,
) -> GkdvStatus {
    guard(|| {
        let slot = out(out_sim, "out_sim")?;
        let spec = get(spec, "spec")?.0;
        let traj = get(traj, "traj")?.0.clone();
        let r0 = spec.rho0_initial();
        let u = GridFunction::from_fn(origin, length, n, |x| soliton::q_unchecked(spec.p, x - r0))?;
        let state = SimulationState { t: 0.0, u, p: spec.p, control: Some(ControlField { spec, traj }) };
        let geom = RunGeometry { origin, length, n, dt, stride: dt, sponge: None, frame_speed: None };
        let stepper = Stepper::new(&state, dt, 1.0, None)?;
        *slot = Box::into_raw(Box::new(GkdvSimulation { state, geom, stepper }));
        Ok(())
    })
}

/// # Safety
/// `sim` must be null or a handle from `gkdv_simulation_new`, freed once.
#[no_mangle]
pub unsafe extern "C" fn gkdv_simulation_free(sim: *mut GkdvSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Advances to time `t_target` (not before the current time); the last step
/// is shortened to land on it.
///
/// # Safety
/// `sim` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn gkdv_simulation_advance(sim: *mut GkdvSimulation, t_target: f64) -> GkdvStatus {
    guard(|| {
        let sim = out(sim, "sim")?;
        let remaining = t_target - sim.state.t;
        if remaining < 0.0 || !remaining.is_finite() {
            return Err(Error::Domain(format!("cannot advance from t = {} to {t_target}", sim.state.t)).into());
        }
        if remaining == 0.0 {
            return Ok(());
        }
        let dt = sim.geom.dt;
        let m = (remaining / dt - 1e-9).ceil().max(1.0) as usize;
        let h = remaining / m as f64;
        let c0 = match &sim.state.control {
            Some(cf) => (cf.traj.sample(sim.state.t)?.0 * 64.0).round() / 64.0,
            None => 0.0,
        };
        sim.stepper.retune(h, c0)?;
        for _ in 0..m {
            sim.stepper.step(&mut sim.state)?;
        }
        sim.state.t = t_target;
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gkdv_simulation_time(sim: *const GkdvSimulation, out_t: *mut f64) -> GkdvStatus {
    guard(|| {
        *out(out_t, "out_t")? = get(sim, "sim")?.state.t;
        Ok(())
    })
}

/// Copies the samples into `buf`; `out_len` receives the number of points.
/// Pass a null `buf` to query the length.
///
/// # Safety
/// `buf` must be null or point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gkdv_simulation_samples(
    sim: *const GkdvSimulation,
    buf: *mut f64,
    len: usize,
    out_len: *mut usize,
) -> GkdvStatus {
    guard(|| {
        let s = get(sim, "sim")?.state.u.samples();
        *out(out_len, "out_len")? = s.len();
        if buf.is_null() {
            return Ok(());
        }
        if len < s.len() {
            return Err(Fail::Small(s.len()));
        }
        std::ptr::copy_nonoverlapping(s.as_ptr(), buf, s.len());
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GkdvInvariants {
    pub mass: f64,
    pub energy: f64,
    pub h1_norm: f64,
    /// int a u^2 at the current time.
    pub mass_rate: f64,
    pub energy_rate: f64,
}

/// Mass, energy, H1 norm and the balance right-hand sides.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gkdv_simulation_invariants(sim: *const GkdvSimulation, out_inv: *mut GkdvInvariants) -> GkdvStatus {
    guard(|| {
        let st = &get(sim, "sim")?.state;
        let b = pde::balance_terms(st)?;
        *out(out_inv, "out_inv")? = GkdvInvariants {
            mass: b.mass,
            energy: b.energy,
            h1_norm: soliton::h1_norm(&st.u),
            mass_rate: b.mass_rate,
            energy_rate: b.energy_rate,
        };
        Ok(())
    })
}
