//! Modulation parameters (c, rho) from the orthogonality conditions
//! int z y Q_c(y) = int z Q_c(y) = 0, and the stability diagnostics built on
//! the remainder z = u - u~.

use std::io::Write;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::ansatz::{build_ansatz_with, Ansatz};
use crate::control::{ControlSpec, ParameterTrajectory};
use crate::error::{domain, Error, Result};
use crate::grid::{GridFunction, Spectral};
use crate::linearized::CorrectorFamily;
use crate::quadrature::Composite;
use crate::soliton::{h1_from_parts, Profile, SolitonParams};

pub const MAX_NEWTON: usize = 25;
pub const DEFAULT_A0: f64 = 20.0;
/// Convergence target for |J| relative to the L2 norm of u.
pub const ORTH_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationFit {
    pub c: f64,
    pub rho: f64,
    pub z_h1: f64,
    pub orth_residuals: (f64, f64),
    pub newton_iters: usize,
}

/// Everything the fit needs besides the state: control, reference
/// trajectory and the corrector family.
#[derive(Debug, Clone)]
pub struct Modulator {
    pub spec: ControlSpec,
    pub traj: Arc<ParameterTrajectory>,
    pub family: Option<Arc<CorrectorFamily>>,
    pub a0: f64,
}

/// Fit result together with the ansatz it was measured against.
#[derive(Debug, Clone)]
pub struct FitState {
    pub fit: ModulationFit,
    pub ansatz: Ansatz,
    pub z: Vec<f64>,
}

fn orth_functionals(u: &[f64], ans: &Ansatz, prof: &Profile, g: &GridFunction) -> ([f64; 2], [[f64; 2]; 2]) {
    let rho = ans.params.rho;
    let ut = ans.u_tilde.samples();
    let (mut j1, mut j2) = (0.0, 0.0);
    let mut m = [[0.0; 2]; 2];
    for j in 0..u.len() {
        let y = g.x(j) - rho;
        let q = prof.q(y);
        if q == 0.0 {
            continue;
        }
        let dq = prof.dq(y);
        let lq = prof.lambda_q(y);
        let z = u[j] - ut[j];
        let (w1, w2) = (y * q, q);
        let (w1c, w2c) = (y * lq, lq);
        let (w1y, w2y) = (q + y * dq, dq);
        let uc = ans.du_dc[j];
        let ur = ans.du_drho(j);
        j1 += z * w1;
        j2 += z * w2;
        m[0][0] += -uc * w1 + z * w1c;
        m[0][1] += -ur * w1 - z * w1y;
        m[1][0] += -uc * w2 + z * w2c;
        m[1][1] += -ur * w2 - z * w2y;
    }
    let h = g.dx();
    for row in m.iter_mut() {
        for v in row.iter_mut() {
            *v *= h;
        }
    }
    ([j1 * h, j2 * h], m)
}

impl Modulator {
    pub fn new(spec: ControlSpec, traj: Arc<ParameterTrajectory>, family: Option<Arc<CorrectorFamily>>) -> Self {
        Modulator { spec, traj, family, a0: DEFAULT_A0 }
    }

    pub fn ansatz(&self, u: &GridFunction, c: f64, rho: f64, t: f64) -> Result<Ansatz> {
        let reference = self.traj.sample(t)?;
        let params = SolitonParams::new(self.spec.p, c, rho)?;
        build_ansatz_with(&params, reference, &self.spec, self.family.as_deref(), u)
    }

    /// Newton iteration on (J1, J2)(c, rho) = 0 with an analytic Jacobian.
    pub fn fit(&self, u: &GridFunction, warm: &SolitonParams, t: f64) -> Result<FitState> {
        let (cm, cmx) = self.spec.c_bounds();
        let (lo, hi) = (0.5 * cm, 2.0 * cmx);
        let norm = (u.samples().iter().map(|v| v * v).sum::<f64>() * u.dx()).sqrt();
        let tol = ORTH_TOL * norm.max(f64::MIN_POSITIVE);
        let (mut c, mut rho) = (warm.c, warm.rho);
        for it in 0..=MAX_NEWTON {
            if !(c >= lo && c <= hi) || !rho.is_finite() {
                return Err(Error::Fit(format!("c = {c} left the window [{lo}, {hi}] at t = {t}")));
            }
            let ans = self.ansatz(u, c, rho, t)?;
            let prof = Profile::unchecked(self.spec.p, c);
            let (jv, m) = orth_functionals(u.samples(), &ans, &prof, u);
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let dc = (jv[0] * m[1][1] - jv[1] * m[0][1]) / det;
            let dr = (m[0][0] * jv[1] - m[1][0] * jv[0]) / det;
            let small_step = dc.abs() <= 1e-14 * c.max(1.0) && dr.abs() <= 1e-13 * rho.abs().max(1.0);
            if jv[0].abs() <= tol && jv[1].abs() <= tol && (small_step || it > 0) {
                let z: Vec<f64> = u.samples().iter().zip(ans.u_tilde.samples()).map(|(a, b)| a - b).collect();
                let zx = Spectral::for_grid(u).derivative(&z, 1);
                let fit = ModulationFit {
                    c,
                    rho,
                    z_h1: h1_from_parts(&z, &zx, u.dx()),
                    orth_residuals: (jv[0].abs(), jv[1].abs()),
                    newton_iters: it,
                };
                return Ok(FitState { fit, ansatz: ans, z });
            }
            if !det.is_finite() || det == 0.0 {
                return Err(Error::Fit(format!("singular Jacobian at t = {t}")));
            }
            c -= dc;
            rho -= dr;
        }
        Err(Error::Fit(format!("no convergence in {MAX_NEWTON} Newton steps at t = {t}")))
    }

    pub fn diagnostics(&self, u: &GridFunction, fs: &FitState, t: f64) -> DiagnosticsSample {
        let g = u;
        let dx = g.dx();
        let z = &fs.z;
        let zx = Spectral::for_grid(g).derivative(z, 1);
        let mut virial = 0.0;
        let mut wl2 = 0.0;
        for (j, zj) in z.iter().enumerate() {
            let y = g.x(j) - fs.fit.rho;
            virial += zj * zj * virial_weight(self.a0, y);
            wl2 += zj * zj * (-y.abs() / self.a0).exp();
        }
        DiagnosticsSample {
            t,
            virial: virial * dx,
            lyapunov: lyapunov_parts(fs.ansatz.u_tilde.samples(), z, &zx, fs.fit.c, self.spec.p, dx),
            weighted_l2: wl2 * dx,
            c1_proxy: f64::NAN,
            rho1_proxy: f64::NAN,
        }
    }
}

/// Free-function form of `Modulator::fit`.
pub fn fit_modulation(
    u: &GridFunction,
    warm_start: &SolitonParams,
    spec: &ControlSpec,
    traj: Arc<ParameterTrajectory>,
    family: Option<Arc<CorrectorFamily>>,
    t: f64,
) -> Result<ModulationFit> {
    Ok(Modulator::new(*spec, traj, family).fit(u, warm_start, t)?.fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSample {
    pub t: f64,
    /// int z^2 psi_A0(y); signed because psi is odd.
    pub virial: f64,
    pub lyapunov: f64,
    pub weighted_l2: f64,
    /// c' - eps f1 from differenced fits (NaN until rates are computed).
    pub c1_proxy: f64,
    /// rho' - c - eps f2 from differenced fits.
    pub rho1_proxy: f64,
}

#[inline]
fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    a / (a + b)
}

/// Even weight phi: 1 on [0, 1], e^{-|x|} for |x| >= 1.5, and
/// exp(-|x| S((|x|-1)/0.5)) in between with S a smooth step. Nonincreasing in |x|.
pub fn phi(x: f64) -> f64 {
    let a = x.abs();
    (-a * smooth_step((a - 1.0) / 0.5)).exp()
}

fn psi_at_three_halves() -> f64 {
    static V: OnceLock<f64> = OnceLock::new();
    *V.get_or_init(|| 1.0 + Composite::new(1.0, 1.5, 32, 20).integrate(phi))
}

/// psi(x) = int_0^x phi, odd.
pub fn psi(x: f64) -> f64 {
    let a = x.abs();
    let v = if a <= 1.0 {
        a
    } else if a < 1.5 {
        1.0 + Composite::new(1.0, a, 8, 20).integrate(phi)
    } else {
        psi_at_three_halves() + (-1.5f64).exp() - (-a).exp()
    };
    v.copysign(x)
}

/// psi(+infinity).
pub fn psi_infinity() -> f64 {
    psi_at_three_halves() + (-1.5f64).exp()
}

/// psi_A(y) = A psi(y / A).
pub fn virial_weight(a0: f64, y: f64) -> f64 {
    a0 * psi(y / a0)
}

/// psi_A'(y) = phi(y / A).
pub fn virial_weight_deriv(a0: f64, y: f64) -> f64 {
    phi(y / a0)
}

fn lyapunov_parts(ut: &[f64], z: &[f64], zx: &[f64], c: f64, p: u32, dx: f64) -> f64 {
    let pp = p as i32 + 1;
    let mut s = 0.0;
    for j in 0..z.len() {
        let (w, v) = (ut[j], z[j]);
        // (w+v)^{p+1} - w^{p+1} - (p+1) w^p v, expanded to avoid cancellation.
        let nl = nonlinear_remainder(w, v, p);
        s += 0.5 * (zx[j] * zx[j] + c * v * v) - nl / pp as f64;
    }
    s * dx
}

/// (w+v)^{p+1} - w^{p+1} - (p+1) w^p v as the exact binomial tail.
fn nonlinear_remainder(w: f64, v: f64, p: u32) -> f64 {
    let n = p + 1;
    let mut sum = 0.0;
    let mut binom = 1.0;
    for k in 1..=n {
        binom = binom * (n - k + 1) as f64 / k as f64;
        if k >= 2 {
            sum += binom * w.powi((n - k) as i32) * v.powi(k as i32);
        }
    }
    sum
}

/// F = 1/2 int (z_x^2 + c z^2) - 1/(p+1) int [(u~+z)^{p+1} - u~^{p+1} - (p+1) u~^p z].
pub fn lyapunov(u: &GridFunction, fit: &ModulationFit, ansatz: &Ansatz, p: u32) -> Result<f64> {
    if !u.same_geometry(&ansatz.u_tilde) {
        return domain("state and ansatz live on different grids");
    }
    let z: Vec<f64> = u.samples().iter().zip(ansatz.u_tilde.samples()).map(|(a, b)| a - b).collect();
    let zx = Spectral::for_grid(u).derivative(&z, 1);
    Ok(lyapunov_parts(ansatz.u_tilde.samples(), &z, &zx, fit.c, p, u.dx()))
}

/// One output row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub t: f64,
    pub c: f64,
    pub rho: f64,
    pub mass: f64,
    pub energy: f64,
    pub z_h1: f64,
    pub virial: f64,
    pub lyapunov: f64,
    pub c1_proxy: f64,
    pub rho1_proxy: f64,
    /// Not exported to CSV.
    #[serde(skip)]
    pub u_h1: f64,
    #[serde(skip)]
    pub weighted_l2: f64,
    /// eps f1 and c + eps f2 at the fitted parameters.
    #[serde(skip)]
    pub eps_f1: f64,
    #[serde(skip)]
    pub eps_f2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub c_t: f64,
    pub rho_t: f64,
    pub z_h1_t: f64,
    pub u_h1_t: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: serde_json::Value,
    pub rows: Vec<RecordRow>,
    pub summary: RunSummary,
}

pub const CSV_HEADER: &str = "t,c,rho,mass,energy,z_h1,virial,lyapunov,c1_proxy,rho1_proxy";

impl RunRecord {
    pub fn new(config: serde_json::Value, rows: Vec<RecordRow>, wall_time: f64) -> Result<Self> {
        let last = rows.last().ok_or_else(|| Error::Config("empty run record".into()))?;
        if rows.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return domain("record times must increase strictly");
        }
        let summary = RunSummary { c_t: last.c, rho_t: last.rho, z_h1_t: last.z_h1, u_h1_t: last.u_h1, wall_time };
        Ok(RunRecord { config, rows, summary })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.t, r.c, r.rho, r.mass, r.energy, r.z_h1, r.virial, r.lyapunov, r.c1_proxy, r.rho1_proxy
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// int_0^T |c1'| by the trapezoid rule over the rows.
    pub fn c1_integral(&self) -> f64 {
        self.rows
            .windows(2)
            .map(|w| 0.5 * (w[0].c1_proxy.abs() + w[1].c1_proxy.abs()) * (w[1].t - w[0].t))
            .filter(|v| v.is_finite())
            .sum()
    }
}

/// Fills c1_proxy = c' - eps f1 and rho1_proxy = rho' - c - eps f2, with
/// c', rho' from centred differences (one-sided at the ends).
pub fn modulation_rates(rows: &mut [RecordRow]) -> Result<()> {
    let n = rows.len();
    if n < 2 {
        return domain("need at least two fits to difference");
    }
    let rates: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                i if i == n - 1 => (n - 2, n - 1),
                i => (i - 1, i + 1),
            };
            let dt = rows[b].t - rows[a].t;
            ((rows[b].c - rows[a].c) / dt, (rows[b].rho - rows[a].rho) / dt)
        })
        .collect();
    for (r, (dc, dr)) in rows.iter_mut().zip(rates) {
        r.c1_proxy = dc - r.eps_f1;
        r.rho1_proxy = dr - r.c - r.eps_f2;
    }
    Ok(())
}

/// Observer that fits every output state and accumulates record rows.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub modulator: Modulator,
    pub warm: SolitonParams,
    pub rows: Vec<RecordRow>,
    pub samples: Vec<DiagnosticsSample>,
    /// Smallest F / ||z||_{H1}^2 seen so far.
    pub min_coercivity: f64,
}

impl Tracker {
    pub fn new(modulator: Modulator, warm: SolitonParams) -> Self {
        Tracker { modulator, warm, rows: Vec::new(), samples: Vec::new(), min_coercivity: f64::INFINITY }
    }

    pub fn observe(&mut self, t: f64, u: &GridFunction) -> Result<()> {
        let fs = self.modulator.fit(u, &self.warm, t)?;
        let diag = self.modulator.diagnostics(u, &fs, t);
        let p = self.modulator.spec.p;
        let ux = Spectral::for_grid(u).derivative(u.samples(), 1);
        let dx = u.dx();
        let z2 = fs.fit.z_h1 * fs.fit.z_h1;
        if z2 > 0.0 {
            self.min_coercivity = self.min_coercivity.min(diag.lyapunov / z2);
        }
        self.warm = SolitonParams::new(p, fs.fit.c, fs.fit.rho)?;
        self.rows.push(RecordRow {
            t,
            c: fs.fit.c,
            rho: fs.fit.rho,
            mass: 0.5 * dx * u.samples().iter().map(|v| v * v).sum::<f64>(),
            energy: crate::soliton::energy_with_derivative(u.samples(), &ux, dx, p),
            z_h1: fs.fit.z_h1,
            virial: diag.virial,
            lyapunov: diag.lyapunov,
            c1_proxy: f64::NAN,
            rho1_proxy: f64::NAN,
            u_h1: h1_from_parts(u.samples(), &ux, dx),
            weighted_l2: diag.weighted_l2,
            eps_f1: self.modulator.spec.eps * fs.ansatz.f1,
            eps_f2: self.modulator.spec.eps * fs.ansatz.f2,
        });
        self.samples.push(diag);
        Ok(())
    }

    /// Computes the rate proxies and copies them into the samples.
    pub fn finish(&mut self) -> Result<()> {
        modulation_rates(&mut self.rows)?;
        for (s, r) in self.samples.iter_mut().zip(&self.rows) {
            s.c1_proxy = r.c1_proxy;
            s.rho1_proxy = r.rho1_proxy;
        }
        Ok(())
    }
}
