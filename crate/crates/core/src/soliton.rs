//! Soliton profiles Q and Q_c, the scaling generator, conserved functionals
//! and the integral constants of Q.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::grid::{GridFunction, Spectral};
use crate::quadrature;

/// Checks the nonlinearity exponent.
pub fn check_p(p: u32) -> Result<()> {
    if (2..=4).contains(&p) {
        Ok(())
    } else {
        domain(format!("exponent p = {p} not in {{2, 3, 4}}"))
    }
}

fn check_c(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        domain(format!("scaling c = {c} must be positive"))
    }
}

/// Modulation pair (c, rho) together with the exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolitonParams {
    pub p: u32,
    pub c: f64,
    pub rho: f64,
}

impl SolitonParams {
    pub fn new(p: u32, c: f64, rho: f64) -> Result<Self> {
        check_p(p)?;
        check_c(c)?;
        if !rho.is_finite() {
            return domain("rho must be finite");
        }
        Ok(SolitonParams { p, c, rho })
    }
}

/// sech(x) without overflow for large |x|.
#[inline]
pub(crate) fn sech(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    2.0 * e / (1.0 + e * e)
}

/// Q(s) for an exponent already known to be valid.
#[inline]
pub fn q_unchecked(p: u32, s: f64) -> f64 {
    let pm1 = (p - 1) as f64;
    let sh = sech(0.5 * pm1 * s);
    let base = 0.5 * (p + 1) as f64 * sh * sh;
    match p {
        2 => base,
        3 => base.sqrt(),
        _ => base.cbrt(),
    }
}

/// Q'(s) = -tanh((p-1)s/2) Q(s).
#[inline]
pub fn dq_unchecked(p: u32, s: f64) -> f64 {
    -(0.5 * (p - 1) as f64 * s).tanh() * q_unchecked(p, s)
}

pub fn eval_q(p: u32, s: f64) -> Result<f64> {
    check_p(p)?;
    Ok(q_unchecked(p, s))
}

/// Profile Q_c and its scaling generator for fixed (p, c).
#[derive(Debug, Clone, Copy)]
pub struct Profile {
    pub p: u32,
    pub c: f64,
    amp: f64,
    sqrt_c: f64,
}

impl Profile {
    pub fn new(p: u32, c: f64) -> Result<Self> {
        check_p(p)?;
        check_c(c)?;
        Ok(Self::unchecked(p, c))
    }

    pub(crate) fn unchecked(p: u32, c: f64) -> Self {
        let amp = c.powf(1.0 / (p - 1) as f64);
        Profile { p, c, amp, sqrt_c: c.sqrt() }
    }

    #[inline]
    pub fn q(&self, y: f64) -> f64 {
        self.amp * q_unchecked(self.p, self.sqrt_c * y)
    }

    #[inline]
    pub fn dq(&self, y: f64) -> f64 {
        self.amp * self.sqrt_c * dq_unchecked(self.p, self.sqrt_c * y)
    }

    /// Q_c'' from the profile equation Q_c'' = c Q_c - Q_c^p.
    #[inline]
    pub fn d2q(&self, y: f64) -> f64 {
        let q = self.q(y);
        self.c * q - q.powi(self.p as i32)
    }

    /// Lambda Q_c = d/dc Q_c.
    #[inline]
    pub fn lambda_q(&self, y: f64) -> f64 {
        (self.q(y) / (self.p - 1) as f64 + 0.5 * y * self.dq(y)) / self.c
    }

    /// phi_c = -Q_c'/Q_c = sqrt(c) tanh((p-1) sqrt(c) y / 2).
    #[inline]
    pub fn phi(&self, y: f64) -> f64 {
        self.sqrt_c * (0.5 * (self.p - 1) as f64 * self.sqrt_c * y).tanh()
    }

    /// ||Q_c||_{H1} by quadrature on [-60/sqrt(c), 60/sqrt(c)].
    pub fn h1_norm(&self) -> f64 {
        let r = 60.0 / self.sqrt_c;
        let s = quadrature::Composite::new(-r, r, 240, 20).integrate(|y| {
            let (q, dq) = (self.q(y), self.dq(y));
            q * q + dq * dq
        });
        s.sqrt()
    }
}

pub fn eval_qc(params: &SolitonParams, y: f64) -> Result<f64> {
    Ok(Profile::new(params.p, params.c)?.q(y))
}

pub fn eval_lambda_qc(params: &SolitonParams, y: f64) -> Result<f64> {
    Ok(Profile::new(params.p, params.c)?.lambda_q(y))
}

/// max |Q_c'' - c Q_c + Q_c^p| with Q_c sampled on `grid` (centred at y = 0)
/// and differentiated spectrally. The samples of `grid` are ignored.
pub fn soliton_ode_residual(params: &SolitonParams, grid: &GridFunction) -> Result<f64> {
    let prof = Profile::new(params.p, params.c)?;
    let q: Vec<f64> = grid.xs().iter().map(|&y| prof.q(y)).collect();
    let d2 = Spectral::for_grid(grid).derivative(&q, 2);
    Ok(q.iter()
        .zip(&d2)
        .map(|(&v, &dd)| (dd - prof.c * v + v.powi(params.p as i32)).abs())
        .fold(0.0, f64::max))
}

/// Integrals of Q and the constant lambda_p.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConstants {
    pub p: u32,
    pub int_q: f64,
    pub int_q2: f64,
    pub int_q3: f64,
    pub lambda_p: f64,
}

/// Composite 20-point Gauss rule on [-60, 60] (|Q| < 1e-20 at the ends for
/// every p since Q ~ e^{-|s|}).
pub fn quadrature_constants(p: u32) -> Result<QuadratureConstants> {
    check_p(p)?;
    let rule = quadrature::Composite::new(-60.0, 60.0, 240, 20);
    let int_q = rule.integrate(|s| q_unchecked(p, s));
    let int_q2 = rule.integrate(|s| q_unchecked(p, s).powi(2));
    let int_q3 = rule.integrate(|s| q_unchecked(p, s).powi(3));
    let lambda_p = 4.0 * (p - 1) as f64 / (5 - p) as f64 * int_q3 / int_q2;
    Ok(QuadratureConstants { p, int_q, int_q2, int_q3, lambda_p })
}

impl QuadratureConstants {
    /// int Lambda Q (c = 1) = (1/(p-1) - 1/2) int Q.
    pub fn int_lambda_q(&self) -> f64 {
        (1.0 / (self.p - 1) as f64 - 0.5) * self.int_q
    }

    /// int Q Lambda Q (c = 1) = (5-p)/(4(p-1)) int Q^2.
    pub fn int_q_lambda_q(&self) -> f64 {
        (5 - self.p) as f64 / (4.0 * (self.p - 1) as f64) * self.int_q2
    }
}

/// M = 1/2 int u^2.
pub fn mass(u: &GridFunction) -> f64 {
    0.5 * u.dx() * u.samples().iter().map(|v| v * v).sum::<f64>()
}

/// E = 1/2 int u_x^2 - 1/(p+1) int u^{p+1}.
pub fn energy(u: &GridFunction, p: u32) -> f64 {
    let ux = Spectral::for_grid(u).derivative(u.samples(), 1);
    energy_with_derivative(u.samples(), &ux, u.dx(), p)
}

pub(crate) fn energy_with_derivative(u: &[f64], ux: &[f64], dx: f64, p: u32) -> f64 {
    let kin: f64 = ux.iter().map(|v| v * v).sum();
    let pot: f64 = u.iter().map(|v| v.powi(p as i32 + 1)).sum();
    dx * (0.5 * kin - pot / (p + 1) as f64)
}

/// (int u^2 + int u_x^2)^{1/2}.
pub fn h1_norm(u: &GridFunction) -> f64 {
    let ux = Spectral::for_grid(u).derivative(u.samples(), 1);
    h1_from_parts(u.samples(), &ux, u.dx())
}

pub(crate) fn h1_from_parts(u: &[f64], ux: &[f64], dx: f64) -> f64 {
    let s: f64 = u.iter().zip(ux).map(|(a, b)| a * a + b * b).sum();
    (dx * s).sqrt()
}
