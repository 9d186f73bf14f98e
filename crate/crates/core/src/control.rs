//! Control profile a0, target amplitude a_inf, the slow parameter ODE for
//! (c0, rho0) and the space-time control a(t, x).

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::ode::{self, Tolerances};
use crate::soliton::{check_p, quadrature_constants, sech, Profile};

pub const DEFAULT_DELTA0: f64 = 0.05;
pub const DEFAULT_GAMMA0: f64 = 6.0;
/// Output stride of the stored trajectory.
pub const TRAJECTORY_STRIDE: f64 = 0.02;

/// a_inf = -(1/lambda) ln c_f for p = 2, ((p-1)/(lambda (p-2)))(1 - c_f^{(p-2)/(p-1)}) otherwise.
pub fn a_infinity(p: u32, c_f: f64, lambda_p: f64) -> Result<f64> {
    check_p(p)?;
    if !(c_f > 0.0 && c_f.is_finite()) {
        return domain(format!("target velocity c_f = {c_f} must be positive"));
    }
    if p == 2 {
        return Ok(-c_f.ln() / lambda_p);
    }
    let pm1 = (p - 1) as f64;
    let pm2 = (p - 2) as f64;
    Ok(pm1 / (lambda_p * pm2) * (1.0 - c_f.powf(pm2 / pm1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSpec {
    pub p: u32,
    pub c_f: f64,
    pub eps: f64,
    pub delta0: f64,
    pub gamma0: f64,
    pub a_inf: f64,
    pub lambda_p: f64,
}

impl ControlSpec {
    pub fn new(p: u32, c_f: f64, eps: f64, delta0: f64, gamma0: f64) -> Result<Self> {
        check_p(p)?;
        if !(eps > 0.0 && eps < 1.0) {
            return domain(format!("eps = {eps} must lie in (0, 1)"));
        }
        if !(delta0 > 0.0 && delta0.is_finite()) {
            return domain(format!("delta0 = {delta0} must be positive"));
        }
        if !(gamma0 > 0.0 && gamma0.is_finite()) {
            return domain(format!("gamma0 = {gamma0} must be positive"));
        }
        let lambda_p = quadrature_constants(p)?.lambda_p;
        let a_inf = a_infinity(p, c_f, lambda_p)?;
        Ok(ControlSpec { p, c_f, eps, delta0, gamma0, a_inf, lambda_p })
    }

    pub fn with_defaults(p: u32, c_f: f64, eps: f64) -> Result<Self> {
        Self::new(p, c_f, eps, DEFAULT_DELTA0, DEFAULT_GAMMA0)
    }

    /// eps^{-1-delta0}.
    pub fn interaction_time(&self) -> f64 {
        self.eps.powf(-1.0 - self.delta0)
    }

    pub fn rho0_initial(&self) -> f64 {
        -self.interaction_time()
    }

    /// Box bounds c_m = min(c_f, 1)/2, c_M = 2 max(1, c_f).
    pub fn c_bounds(&self) -> (f64, f64) {
        (0.5 * self.c_f.min(1.0), 2.0 * self.c_f.max(1.0))
    }

    /// a0(x) = (a_inf/2)(1 + tanh(gamma0 x)).
    #[inline]
    pub fn a0(&self, x: f64) -> f64 {
        0.5 * self.a_inf * (1.0 + (self.gamma0 * x).tanh())
    }

    /// Derivatives of a0 up to order 3; order 0 is a0 itself.
    pub fn a0_deriv(&self, x: f64, k: u32) -> Result<f64> {
        if k > 3 {
            return domain(format!("derivative order {k} > 3"));
        }
        Ok(self.a0_deriv_unchecked(x, k))
    }

    #[inline]
    pub(crate) fn a0_deriv_unchecked(&self, x: f64, k: u32) -> f64 {
        let g = self.gamma0;
        let u = g * x;
        let s2 = sech(u).powi(2);
        let th = u.tanh();
        match k {
            0 => self.a0(x),
            1 => 0.5 * self.a_inf * g * s2,
            2 => -self.a_inf * g * g * s2 * th,
            _ => -self.a_inf * g * g * g * (s2 * s2 - 2.0 * s2 * th * th),
        }
    }

    /// f1^0(c, rho) = -lambda a0'(eps rho) c^{p/(p-1)}.
    #[inline]
    pub fn f1_zero(&self, c: f64, rho: f64) -> f64 {
        let e = self.p as f64 / (self.p - 1) as f64;
        -self.lambda_p * self.a0_deriv_unchecked(self.eps * rho, 1) * c.powf(e)
    }
}

pub fn eval_a0(spec: &ControlSpec, x: f64) -> f64 {
    spec.a0(x)
}

pub fn eval_a0_deriv(spec: &ControlSpec, x: f64, k: u32) -> Result<f64> {
    spec.a0_deriv(x, k)
}

/// Closed-form leading-order c0 as a function of rho0.
pub fn closed_form_c0(spec: &ControlSpec, rho0: f64) -> Result<f64> {
    let a = spec.a0(spec.eps * rho0);
    if spec.p == 2 {
        return Ok((-spec.lambda_p * a).exp());
    }
    let pm1 = (spec.p - 1) as f64;
    let pm2 = (spec.p - 2) as f64;
    let bracket = 1.0 - spec.lambda_p * pm2 / pm1 * a;
    if !(bracket > 0.0) {
        return domain(format!("power-law bracket {bracket} not positive"));
    }
    Ok(bracket.powf(pm1 / pm2))
}

/// (c0, rho0) sampled at a uniform stride; right-hand sides kept for Hermite interpolation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterTrajectory {
    pub times: Vec<f64>,
    pub c0: Vec<f64>,
    pub rho0: Vec<f64>,
    pub dc0: Vec<f64>,
}

impl ParameterTrajectory {
    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn locate(&self, t: f64) -> Result<usize> {
        let (t0, t1) = (self.times[0], self.t_end());
        let slack = 1e-9 * t1.abs().max(1.0);
        if !(t >= t0 - slack && t <= t1 + slack) {
            return Err(Error::Range(format!("t = {t} outside trajectory [{t0}, {t1}]")));
        }
        let n = self.times.len();
        let h = self.times[1] - self.times[0];
        let mut i = (((t - t0) / h).floor().max(0.0) as usize).min(n - 2);
        while i + 1 < n - 1 && self.times[i + 1] < t {
            i += 1;
        }
        while i > 0 && self.times[i] > t {
            i -= 1;
        }
        Ok(i)
    }

    /// (c0, rho0) at time t by cubic Hermite interpolation.
    pub fn sample(&self, t: f64) -> Result<(f64, f64)> {
        let s = self.sample_with_rates(t)?;
        Ok((s.0, s.1))
    }

    /// (c0, rho0, c0', rho0').
    pub fn sample_with_rates(&self, t: f64) -> Result<(f64, f64, f64, f64)> {
        let i = self.locate(t)?;
        let (ta, tb) = (self.times[i], self.times[i + 1]);
        let (c, dc) = ode::hermite(ta, tb, self.c0[i], self.c0[i + 1], self.dc0[i], self.dc0[i + 1], t);
        let (r, dr) = ode::hermite(ta, tb, self.rho0[i], self.rho0[i + 1], self.c0[i], self.c0[i + 1], t);
        Ok((c, r, dc, dr))
    }
}

/// Integrates c0' = eps f1^0(c0, rho0), rho0' = c0 from (1, -eps^{-1-delta0}).
pub fn integrate_parameter_ode(spec: &ControlSpec, t_end: f64) -> Result<ParameterTrajectory> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return domain(format!("t_end = {t_end} must be positive"));
    }
    let s = *spec;
    let (c_m, c_max) = spec.c_bounds();
    let rhs = move |_t: f64, y: &[f64; 2]| [s.eps * s.f1_zero(y[0], y[1]), y[0]];
    let sol = ode::integrate(
        rhs,
        0.0,
        [1.0, spec.rho0_initial()],
        t_end,
        TRAJECTORY_STRIDE,
        Tolerances::default(),
        |t, y| {
            if y[0] < c_m || y[0] > c_max {
                Err(Error::Integration(format!("c0 = {} left [{c_m}, {c_max}] at t = {t}", y[0])))
            } else {
                Ok(())
            }
        },
    )?;
    Ok(ParameterTrajectory {
        times: sol.t,
        c0: sol.y.iter().map(|y| y[0]).collect(),
        rho0: sol.y.iter().map(|y| y[1]).collect(),
        dc0: sol.dy.iter().map(|d| d[0]).collect(),
    })
}

/// a(t, x) = -eps a0'(eps x) Q_{c0(t)}(x - rho0(t)).
pub fn eval_control(spec: &ControlSpec, traj: &ParameterTrajectory, t: f64, x: f64) -> Result<f64> {
    let (c0, rho0) = traj.sample(t)?;
    Ok(control_value(spec, c0, rho0, x))
}

#[inline]
pub(crate) fn control_value(spec: &ControlSpec, c0: f64, rho0: f64, x: f64) -> f64 {
    let d = spec.a0_deriv_unchecked(spec.eps * x, 1);
    if d == 0.0 {
        return 0.0;
    }
    -spec.eps * d * Profile::unchecked(spec.p, c0).q(x - rho0)
}
