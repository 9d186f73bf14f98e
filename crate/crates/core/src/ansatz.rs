//! Localised ansatz u~ = eta_eps(y) (Q_c(y) + eps d A_c(y)) on a periodic grid
//! and direct evaluation of the residual S[u~].

use std::sync::OnceLock;

use crate::control::ControlSpec;
use crate::error::{domain, Result};
use crate::grid::{GridFunction, Spectral};
use crate::linearized::CorrectorFamily;
use crate::quadrature::Composite;
use crate::soliton::{Profile, SolitonParams};

#[inline]
fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

/// Twice the integral over [-1, 0], so eta(0) = 1/2 exactly.
fn bump_mass() -> f64 {
    static Z: OnceLock<f64> = OnceLock::new();
    *Z.get_or_init(|| 2.0 * Composite::new(-1.0, 0.0, 8, 20).integrate(bump))
}

/// Smooth step: 0 for s <= -1, 1 for s >= 1, integrated C-infinity bump in
/// between. Evaluated on the left half and reflected, which keeps it
/// monotone and continuous at s = 1 to round-off.
pub fn eta(s: f64) -> f64 {
    if s <= -1.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else if s > 0.0 {
        1.0 - eta(-s)
    } else {
        Composite::new(-1.0, s, 8, 20).integrate(bump) / bump_mass()
    }
}

pub fn eta_prime(s: f64) -> f64 {
    bump(s) / bump_mass()
}

/// eta_eps(y) = eta(eps y + 2).
pub fn eval_cutoff(eps: f64, y: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return domain(format!("eps = {eps} must be positive"));
    }
    Ok(eta(eps * y + 2.0))
}

/// u~ and the partial derivatives needed by the residual and the modulation fit,
/// all at fixed x.
#[derive(Debug, Clone)]
pub struct Ansatz {
    pub u_tilde: GridFunction,
    pub params: SolitonParams,
    /// Reference parameters (c0, rho0).
    pub reference: (f64, f64),
    pub eps: f64,
    /// d = a0'(eps rho).
    pub d: f64,
    /// f1 and f2 of the modulation laws at this state.
    pub f1: f64,
    pub f2: f64,
    pub with_corrector: bool,
    /// d u~/dc, d u~/dy, explicit d u~/drho (beyond the shift), d u~/dc0, d u~/drho0.
    pub du_dc: Vec<f64>,
    pub du_dy: Vec<f64>,
    pub du_drho_explicit: Vec<f64>,
    pub du_dc0: Vec<f64>,
    pub du_drho0: Vec<f64>,
}

impl Ansatz {
    /// d u~/drho at fixed x.
    pub fn du_drho(&self, j: usize) -> f64 {
        -self.du_dy[j] + self.du_drho_explicit[j]
    }

    /// y = x_j - rho.
    pub fn y(&self, j: usize) -> f64 {
        self.u_tilde.x(j) - self.params.rho
    }
}

/// Builds u~ for state `params` and reference (c0, rho0) on the geometry of `grid`.
pub fn build_ansatz(
    params: &SolitonParams,
    reference: (f64, f64),
    spec: &ControlSpec,
    family: &CorrectorFamily,
    grid: &GridFunction,
) -> Result<Ansatz> {
    build_ansatz_with(params, reference, spec, Some(family), grid)
}

/// `family = None` drops the corrector (A_c := 0); the modulation laws keep f1, f2.
pub fn build_ansatz_with(
    params: &SolitonParams,
    reference: (f64, f64),
    spec: &ControlSpec,
    family: Option<&CorrectorFamily>,
    grid: &GridFunction,
) -> Result<Ansatz> {
    if params.p != spec.p {
        return domain("ansatz exponent differs from control exponent");
    }
    if let Some(f) = family {
        if f.p != spec.p {
            return domain("corrector family built for a different exponent");
        }
    }
    let eps = spec.eps;
    let (c, rho) = (params.c, params.rho);
    let (dc, drho) = (reference.0 - c, reference.1 - rho);
    let prof = Profile::new(params.p, c)?;
    let d = spec.a0_deriv_unchecked(eps * rho, 1);
    let d2 = spec.a0_deriv_unchecked(eps * rho, 2);
    let shift = crate::linearized::ShiftConstants::for_p(params.p)?;
    let f1 = d * shift.f1_over_d(c, dc);
    let g = match family {
        Some(f) => f.g_eff(c, dc, drho),
        None => shift.f2_over_d(c, dc, drho),
    };
    let f2 = d * g;
    let n = grid.n_points();
    let mut u = vec![0.0; n];
    let mut du_dc = vec![0.0; n];
    let mut du_dy = vec![0.0; n];
    let mut du_drho_explicit = vec![0.0; n];
    let mut du_dc0 = vec![0.0; n];
    let mut du_drho0 = vec![0.0; n];
    let y_cut = -3.0 / eps;
    let use_a = family.is_some() && (d != 0.0 || d2 != 0.0);
    for j in 0..n {
        let y = grid.x(j) - rho;
        if y <= y_cut {
            continue;
        }
        let s = eps * y + 2.0;
        let e = eta(s);
        let ep = eps * eta_prime(s);
        let q = prof.q(y);
        let dq = prof.dq(y);
        let lq = prof.lambda_q(y);
        let fv = match (use_a, family) {
            (true, Some(f)) => f.eval(c, dc, drho, y),
            _ => Default::default(),
        };
        let w = eps * d * fv.a;
        u[j] = e * (q + w);
        du_dc[j] = e * (lq + eps * d * (fv.a_c - fv.a_dc));
        du_dy[j] = ep * (q + w) + e * (dq + eps * d * fv.a_y);
        du_drho_explicit[j] = e * eps * (eps * d2 * fv.a - d * fv.a_dr);
        du_dc0[j] = e * eps * d * fv.a_dc;
        du_drho0[j] = e * eps * d * fv.a_dr;
    }
    Ok(Ansatz {
        u_tilde: grid.with_samples(u)?,
        params: *params,
        reference,
        eps,
        d,
        f1,
        f2,
        with_corrector: family.is_some(),
        du_dc,
        du_dy,
        du_drho_explicit,
        du_dc0,
        du_drho0,
    })
}

/// Residual diagnostics of one ansatz.
#[derive(Debug, Clone)]
pub struct Residual {
    /// (c' - eps f1, rho' - c - eps f2).
    pub dynamical_part: (f64, f64),
    /// ||S~[u~]||_{H^1(y > -2/eps)}.
    pub tilde_s_norm: f64,
    /// |int Q_c S~| + |int y Q_c S~|.
    pub projection: f64,
    pub s_tilde: GridFunction,
}

/// Evaluates S[u~] = u~_t + (u~_xx + u~^p)_x - a u~ with u~_t from the chain rule.
/// `rates` overrides (c', rho'); by default the exact modulation laws are used,
/// so the dynamical part vanishes. The reference parameters follow the slow ODE.
pub fn residual_s(ans: &Ansatz, spec: &ControlSpec, rates: Option<(f64, f64)>) -> Result<Residual> {
    let g = &ans.u_tilde;
    let n = g.n_points();
    let eps = spec.eps;
    let (c, rho) = (ans.params.c, ans.params.rho);
    let (c0, rho0) = ans.reference;
    let (cp, rhop) = rates.unwrap_or((eps * ans.f1, c + eps * ans.f2));
    let dyn_part = (cp - eps * ans.f1, rhop - c - eps * ans.f2);
    let (c0p, rho0p) = (eps * spec.f1_zero(c0, rho0), c0);
    let u = g.samples();
    let sp = Spectral::for_grid(g);
    let u3 = sp.derivative(u, 3);
    let up: Vec<f64> = u.iter().map(|v| v.powi(spec.p as i32)).collect();
    let upx = sp.derivative(&up, 1);
    let mut s = vec![0.0; n];
    for j in 0..n {
        let x = g.x(j);
        let ut = cp * ans.du_dc[j]
            + rhop * ans.du_drho(j)
            + c0p * ans.du_dc0[j]
            + rho0p * ans.du_drho0[j];
        let a = crate::control::control_value(spec, c0, rho0, x);
        let full = ut + u3[j] + upx[j] - a * u[j];
        s[j] = full - dyn_part.0 * ans.du_dc[j] + dyn_part.1 * (ans.du_dy[j] - ans.du_drho_explicit[j]);
    }
    let sx = sp.derivative(&s, 1);
    let prof = Profile::new(spec.p, c)?;
    let dx = g.dx();
    let mut h1 = 0.0;
    let mut p0 = 0.0;
    let mut p1 = 0.0;
    for j in 0..n {
        let y = g.x(j) - rho;
        if y > -2.0 / eps {
            h1 += s[j] * s[j] + sx[j] * sx[j];
        }
        let q = prof.q(y);
        p0 += q * s[j];
        p1 += y * q * s[j];
    }
    Ok(Residual {
        dynamical_part: dyn_part,
        tilde_s_norm: (h1 * dx).sqrt(),
        projection: (p0 * dx).abs() + (p1 * dx).abs(),
        s_tilde: g.with_samples(s)?,
    })
}

/// Grid wide enough to hold the whole support of u~ around `rho`, dx <= `dx_max`.
pub fn residual_grid(eps: f64, c: f64, rho: f64, dx_max: f64) -> Result<GridFunction> {
    let left = rho - 3.0 / eps - 20.0;
    let right = rho + 60.0 / c.sqrt() + 20.0;
    let len = right - left;
    let n = ((len / dx_max).ceil() as usize).next_power_of_two().max(16);
    GridFunction::zeros(left, len, n)
}
