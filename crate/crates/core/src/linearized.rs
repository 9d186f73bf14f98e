//! The linearised operator L = -d_yy + c - p Q_c^{p-1}, the corrector forcing
//! F1~ and the bounded corrector A_c solving (L A_c)_y = F1~.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::banded::{BandLu, BandMatrix};
use crate::control::ControlSpec;
use crate::error::{domain, Error, Result};
use crate::grid::GridFunction;
use crate::quadrature;
use crate::soliton::{check_p, Profile, QuadratureConstants, SolitonParams};

/// Default corrector grid size. At n = 4096 the 4th-order stencil misses the
/// L Q' = 0 identity by up to 2e-4 (p = 4, c = 2); 32768 brings it below 1e-7.
pub const DEFAULT_N: usize = 32768;
/// Half-width of the corrector interval in units of 1/sqrt(c).
pub const HALF_WIDTH: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorGrid {
    pub y_min: f64,
    pub y_max: f64,
    pub n: usize,
    pub c: f64,
    pub p: u32,
}

impl OperatorGrid {
    pub fn new(y_min: f64, y_max: f64, n: usize, c: f64, p: u32) -> Result<Self> {
        check_p(p)?;
        if !(c > 0.0) {
            return domain(format!("c = {c} must be positive"));
        }
        if n < 16 || !n.is_power_of_two() {
            return domain(format!("grid size {n} must be a power of two >= 16"));
        }
        let r = 10.0 / c.sqrt();
        if !(y_min < -r && y_max > r) {
            return domain(format!("interval [{y_min}, {y_max}] must contain [-{r}, {r}]"));
        }
        let g = OperatorGrid { y_min, y_max, n, c, p };
        if g.h() * c.sqrt() > 0.15 {
            return domain(format!("grid too coarse: dy*sqrt(c) = {}", g.h() * c.sqrt()));
        }
        Ok(g)
    }

    pub fn default_for(p: u32, c: f64) -> Result<Self> {
        Self::with_size(p, c, DEFAULT_N)
    }

    pub fn with_size(p: u32, c: f64, n: usize) -> Result<Self> {
        if !(c > 0.0) {
            return domain(format!("c = {c} must be positive"));
        }
        let w = HALF_WIDTH / c.sqrt();
        Self::new(-w, w, n, c, p)
    }

    pub fn h(&self) -> f64 {
        (self.y_max - self.y_min) / self.n as f64
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_min + j as f64 * self.h()
    }

    pub fn ys(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.y(j)).collect()
    }

    pub fn profile(&self) -> Profile {
        Profile::unchecked(self.p, self.c)
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.n).map(|j| f(self.y(j))).collect()
    }

    pub fn wrap(&self, samples: Vec<f64>) -> Result<GridFunction> {
        GridFunction::new(self.y_min, self.y_max - self.y_min, samples)
    }

    fn potential(&self) -> Vec<f64> {
        let prof = self.profile();
        let pf = self.p as f64;
        self.sample(|y| self.c - pf * prof.q(y).powi(self.p as i32 - 1))
    }
}

const D2: [(isize, f64); 5] = [(-2, -1.0), (-1, 16.0), (0, -30.0), (1, 16.0), (2, -1.0)];
const D1: [(isize, f64); 6] = [(-3, -1.0), (-2, 9.0), (-1, -45.0), (1, 45.0), (2, -9.0), (3, 1.0)];

/// Ghost rule: even reflection at the left end, zero beyond the right end.
#[inline]
fn ghost(i: usize, off: isize, n: usize) -> Option<usize> {
    let j = i as isize + off;
    if j < 0 {
        Some((-j) as usize)
    } else if (j as usize) >= n {
        None
    } else {
        Some(j as usize)
    }
}

fn stencil_apply(v: &[f64], coeffs: &[(isize, f64)], scale: f64) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            coeffs
                .iter()
                .filter_map(|&(off, w)| ghost(i, off, n).map(|j| w * v[j]))
                .sum::<f64>()
                * scale
        })
        .collect()
}

fn apply_l_samples(grid: &OperatorGrid, v: &[f64]) -> Vec<f64> {
    let h = grid.h();
    let d2 = stencil_apply(v, &D2, 1.0 / (12.0 * h * h));
    let pot = grid.potential();
    d2.iter().zip(&pot).zip(v).map(|((d, w), x)| -d + w * x).collect()
}

/// Sixth-order first derivative with the same ghost rule as `apply_L`.
pub(crate) fn d1_samples(v: &[f64], h: f64) -> Vec<f64> {
    stencil_apply(v, &D1, 1.0 / (60.0 * h))
}

/// -v'' + c v - p Q_c^{p-1} v with 4th-order centred differences.
pub fn apply_l(grid: &OperatorGrid, v: &GridFunction) -> Result<GridFunction> {
    if v.n_points() != grid.n {
        return domain(format!("size mismatch: {} samples on a grid of {}", v.n_points(), grid.n));
    }
    grid.wrap(apply_l_samples(grid, v.samples()))
}

fn assemble(grid: &OperatorGrid) -> BandMatrix {
    let n = grid.n;
    let h = grid.h();
    let pot = grid.potential();
    let mut m = BandMatrix::zeros(n, 2, 2);
    let s = -1.0 / (12.0 * h * h);
    for i in 0..n {
        m.add(i, i, pot[i]);
        for &(off, w) in &D2 {
            if let Some(j) = ghost(i, off, n) {
                m.add(i, j, s * w);
            }
        }
    }
    m
}

/// phi_c(y) = -Q_c'/Q_c.
pub fn eval_phi_c(c: f64, p: u32, y: f64) -> Result<f64> {
    Ok(Profile::new(p, c)?.phi(y))
}

/// Dimensionless constants of the modulation laws at c = 1.
///
/// With d = a0'(eps rho), dc = c0 - c, dr = rho0 - rho:
/// f1/d = -lambda c^{p/(p-1)} - kappa_f1 dc c^{1/(p-1)},
/// f2/d = mu_p c^{(3-p)/(2(p-1))} + nu_p dc c^{1/(p-1)-3/2} + kappa_rho dr c^{1/(p-1)}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftConstants {
    pub p: u32,
    pub lambda_p: f64,
    pub kappa_f1: f64,
    pub mu_p: f64,
    pub nu_p: f64,
    pub kappa_rho: f64,
}

impl ShiftConstants {
    pub fn new(consts: &QuadratureConstants) -> Self {
        let p = consts.p;
        let pf = p as f64;
        let (i1, i2, i3) = (consts.int_q, consts.int_q2, consts.int_q3);
        let lam = consts.lambda_p;
        // int Q^2(y) int_{-inf}^y Q and int Q LambdaQ(y) int_{-inf}^y LambdaQ.
        let prof = Profile::unchecked(p, 1.0);
        let w = 60.0;
        let n = 24000;
        let h = 2.0 * w / n as f64;
        let cum_q = quadrature::cumulative_from_right(|s| prof.q(-s), -w, h, n, 8);
        let cum_l = quadrature::cumulative_from_right(|s| prof.lambda_q(-s), -w, h, n, 8);
        // cum_*[j] = int_{-w + j h}^{w} f(-s) ds = int_{-w}^{w - j h} f; value at y_k = w - k h.
        let nodes: Vec<f64> = (0..n).map(|k| w - k as f64 * h).collect();
        let mut dbl_q = 0.0;
        let mut dbl_l = 0.0;
        for k in 0..n {
            let y = nodes[k];
            let wt = if k == 0 { 0.5 * h } else { h };
            dbl_q += wt * prof.q(y).powi(2) * cum_q[k];
            dbl_l += wt * prof.q(y) * prof.lambda_q(y) * cum_l[k];
        }
        let int_l = consts.int_lambda_q();
        let int_ql = consts.int_q_lambda_q();
        let kappa_f1 = 2.0 * (7.0 - pf) / (3.0 * (5.0 - pf)) * i3 / i2;
        let mu_p = 2.0 * (pf - 3.0) / (5.0 - pf)
            * (-0.25 * lam * (3.0 - pf) / (pf - 1.0) * i1 * i1 + dbl_q)
            / i2;
        let nu_p = -(dbl_l - 0.5 * kappa_f1 * int_l * int_l) / int_ql;
        let kappa_rho = (7.0 - pf) / (3.0 * (5.0 - pf)) * i3 / i2;
        ShiftConstants { p, lambda_p: lam, kappa_f1, mu_p, nu_p, kappa_rho }
    }

    pub fn for_p(p: u32) -> Result<Self> {
        Ok(Self::new(&crate::soliton::quadrature_constants(p)?))
    }

    fn inv(&self) -> f64 {
        1.0 / (self.p - 1) as f64
    }

    pub fn f1_over_d(&self, c: f64, dc: f64) -> f64 {
        let e = self.inv();
        -self.lambda_p * c.powf(1.0 + e) - self.kappa_f1 * dc * c.powf(e)
    }

    /// Exponents of c multiplying (mu_p, nu_p, kappa_rho).
    pub fn f2_exponents(&self) -> [f64; 3] {
        let e = self.inv();
        [e - 0.5, e - 1.5, e]
    }

    pub fn f2_over_d(&self, c: f64, dc: f64, drho: f64) -> f64 {
        let [e1, e2, e3] = self.f2_exponents();
        self.mu_p * c.powf(e1) + self.nu_p * dc * c.powf(e2) + self.kappa_rho * drho * c.powf(e3)
    }
}

/// f2 = a0'(eps rho) * (f2/d)(c, c0 - c, rho0 - rho).
pub fn compute_f2(
    state: &SolitonParams,
    ref_params: (f64, f64),
    spec: &ControlSpec,
    consts: &QuadratureConstants,
) -> f64 {
    let sc = ShiftConstants::new(consts);
    let d = spec.a0_deriv_unchecked(spec.eps * state.rho, 1);
    d * sc.f2_over_d(state.c, ref_params.0 - state.c, ref_params.1 - state.rho)
}

/// F1~(y) = (f1/d) LambdaQ_c + Q_c^2 + dc LambdaQ_c Q_c + dr Q_c' Q_c - g Q_c', g = f2/d.
#[derive(Debug, Clone, Copy)]
pub struct Forcing {
    pub prof: Profile,
    pub f1_over_d: f64,
    pub dc: f64,
    pub drho: f64,
    pub g: f64,
    /// Weight of the Q_c^2 term (1 for the physical forcing, 0 for pure components).
    pub source: f64,
}

impl Forcing {
    pub fn physical(sc: &ShiftConstants, c: f64, dc: f64, drho: f64, g: f64) -> Self {
        Forcing {
            prof: Profile::unchecked(sc.p, c),
            f1_over_d: sc.f1_over_d(c, dc),
            dc,
            drho,
            g,
            source: 1.0,
        }
    }

    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        let q = self.prof.q(y);
        let dq = self.prof.dq(y);
        let lq = self.prof.lambda_q(y);
        self.f1_over_d * lq + self.source * q * q + self.dc * lq * q + self.drho * dq * q
            - self.g * dq
    }
}

/// F1~ sampled on the default operator grid for the given state.
pub fn build_f1_tilde(
    state: &SolitonParams,
    ref_params: (f64, f64),
    spec: &ControlSpec,
    f2: f64,
) -> Result<GridFunction> {
    let grid = OperatorGrid::default_for(state.p, state.c)?;
    let sc = ShiftConstants::for_p(state.p)?;
    let d = spec.a0_deriv_unchecked(spec.eps * state.rho, 1);
    let g = if d == 0.0 { 0.0 } else { f2 / d };
    let f = Forcing::physical(&sc, state.c, ref_params.0 - state.c, ref_params.1 - state.rho, g);
    grid.wrap(grid.sample(|y| f.eval(y)))
}

/// Bordered solve of L A = G - tau Q_c + sigma Q_c' with int A Q_c = int A y Q_c = 0.
///
/// L is factored with row `i0` replaced by e_i0; the general solution of the
/// remaining rows is a particular solution plus t * k, k = L_pin^{-1} e_i0.
/// The unknowns (tau, sigma, t) follow from row i0 and the two orthogonality
/// conditions. sigma is the discrete Fredholm defect and stays at round-off
/// level for a consistent forcing.
#[derive(Debug, Clone)]
pub struct PinnedOperator {
    pub grid: OperatorGrid,
    lu: Arc<BandLu>,
    i0: usize,
    q: Vec<f64>,
    dq: Vec<f64>,
    yq: Vec<f64>,
    a_q: Vec<f64>,
    a_dq: Vec<f64>,
    k: Vec<f64>,
    m: [[f64; 3]; 3],
}

/// Solution of (L A)_y = F - tau Q_c' (+ sigma Q_c'') with both orthogonality conditions.
#[derive(Debug, Clone)]
pub struct ForcingSolution {
    pub a: Vec<f64>,
    /// Lambda Q slack absorbed by the solve (zero for a consistent f2).
    pub tau: f64,
    /// Discrete Fredholm defect.
    pub sigma: f64,
    /// Coefficient of the discrete kernel vector.
    pub kernel_coeff: f64,
    /// int F over the grid.
    pub int_f: f64,
}

fn dot(a: &[f64], b: &[f64], h: f64) -> f64 {
    h * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

fn solve3(m: &[[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    let det = |a: &[[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    let mut out = [0.0; 3];
    for (col, o) in out.iter_mut().enumerate() {
        let mut mc = *m;
        for r in 0..3 {
            mc[r][col] = b[r];
        }
        *o = det(&mc) / d;
    }
    out
}

impl PinnedOperator {
    pub fn new(grid: OperatorGrid) -> Result<Self> {
        let prof = grid.profile();
        let h = grid.h();
        let y_pin = 1.0 / grid.c.sqrt();
        let i0 = ((y_pin - grid.y_min) / h).round() as usize;
        let mut mat = assemble(&grid);
        mat.set_unit_row(i0);
        let lu = mat.factor()?;
        let q = grid.sample(|y| prof.q(y));
        let dq = grid.sample(|y| prof.dq(y));
        let yq: Vec<f64> = grid.ys().iter().zip(&q).map(|(y, v)| y * v).collect();
        let pinned = |v: &[f64]| {
            let mut r = v.to_vec();
            r[i0] = 0.0;
            lu.solve(&r)
        };
        let a_q = pinned(&q);
        let a_dq = pinned(&dq);
        let mut e = vec![0.0; grid.n];
        e[i0] = 1.0;
        let k = lu.solve(&e);
        let row = |v: &[f64]| row_l(&grid, v, i0);
        // Columns: tau, sigma, t.
        let m = [
            [q[i0] - row(&a_q), row(&a_dq) - dq[i0], row(&k)],
            [-dot(&a_q, &q, h), dot(&a_dq, &q, h), dot(&k, &q, h)],
            [-dot(&a_q, &yq, h), dot(&a_dq, &yq, h), dot(&k, &yq, h)],
        ];
        let probe = solve3(&m, [1.0, 1.0, 1.0]);
        if probe.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("bordered system singular".into()));
        }
        Ok(PinnedOperator { grid, lu: Arc::new(lu), i0, q, dq, yq, a_q, a_dq, k, m })
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn dq(&self) -> &[f64] {
        &self.dq
    }

    pub fn solve(&self, f: impl Fn(f64) -> f64) -> ForcingSolution {
        let grid = &self.grid;
        let h = grid.h();
        let n = grid.n;
        let cum = quadrature::cumulative_from_right(&f, grid.y_min, h, n, 4);
        let g: Vec<f64> = cum.iter().map(|v| -v).collect();
        let int_f = cum[0];
        let mut rhs = g.clone();
        rhs[self.i0] = 0.0;
        let a_g = self.lu.solve(&rhs);
        let b = [
            g[self.i0] - row_l(grid, &a_g, self.i0),
            -dot(&a_g, &self.q, h),
            -dot(&a_g, &self.yq, h),
        ];
        let [tau, sigma, t] = solve3(&self.m, b);
        let a: Vec<f64> = (0..n)
            .map(|j| a_g[j] - tau * self.a_q[j] + sigma * self.a_dq[j] + t * self.k[j])
            .collect();
        ForcingSolution { a, tau, sigma, kernel_coeff: t, int_f }
    }

    /// (|int A Q_c|, |int A y Q_c|).
    pub fn orthogonality(&self, a: &[f64]) -> (f64, f64) {
        let h = self.grid.h();
        (dot(a, &self.q, h).abs(), dot(a, &self.yq, h).abs())
    }

    /// max |(L A)_y - F_eff| with F_eff = F - tau Q_c'.
    pub fn pde_residual(&self, a: &[f64], f: impl Fn(f64) -> f64, tau: f64) -> f64 {
        let la = apply_l_samples(&self.grid, a);
        let d = d1_samples(&la, self.grid.h());
        (0..self.grid.n)
            .map(|j| (d[j] - (f(self.grid.y(j)) - tau * self.dq[j])).abs())
            .fold(0.0, f64::max)
    }
}

/// Row i of L applied to v.
fn row_l(grid: &OperatorGrid, v: &[f64], i: usize) -> f64 {
    let h = grid.h();
    let n = grid.n;
    let d2: f64 = D2.iter().filter_map(|&(off, w)| ghost(i, off, n).map(|j| w * v[j])).sum::<f64>()
        / (12.0 * h * h);
    let prof = grid.profile();
    let pot = grid.c - grid.p as f64 * prof.q(grid.y(i)).powi(grid.p as i32 - 1);
    -d2 + pot * v[i]
}

/// Solves (L A)_y = F with the orthogonality normalisation on `grid`.
pub fn solve_forcing(grid: &OperatorGrid, f: impl Fn(f64) -> f64) -> Result<ForcingSolution> {
    Ok(PinnedOperator::new(*grid)?.solve(f))
}

/// Bounded corrector and its decomposition coefficients.
#[derive(Debug, Clone)]
pub struct Corrector {
    pub grid: OperatorGrid,
    pub a: GridFunction,
    pub beta_c: f64,
    pub mu_c: f64,
    pub delta_c: f64,
    /// f2 actually realised by the solve: d * (formula + tau).
    pub f2: f64,
    pub tau: f64,
    pub residual_pde: f64,
    pub residual_orth: (f64, f64),
    /// Discrete Fredholm defect of the bordered solve.
    pub sigma: f64,
    /// F1~ with the realised f2.
    pub forcing: GridFunction,
}

/// Direct solve of the corrector at the state's c on the default grid.
pub fn solve_corrector(
    state: &SolitonParams,
    ref_params: (f64, f64),
    spec: &ControlSpec,
    consts: &QuadratureConstants,
) -> Result<Corrector> {
    let grid = OperatorGrid::default_for(state.p, state.c)?;
    solve_corrector_on(&grid, state, ref_params, spec, consts)
}

pub fn solve_corrector_on(
    grid: &OperatorGrid,
    state: &SolitonParams,
    ref_params: (f64, f64),
    spec: &ControlSpec,
    consts: &QuadratureConstants,
) -> Result<Corrector> {
    if grid.c != state.c || grid.p != state.p {
        return domain("operator grid built for a different (p, c)");
    }
    let (c_m, c_max) = spec.c_bounds();
    if state.c < 0.5 * c_m || state.c > 2.0 * c_max {
        return Err(Error::Solver(format!("c = {} outside [{}, {}]", state.c, 0.5 * c_m, 2.0 * c_max)));
    }
    let sc = ShiftConstants::new(consts);
    let (dc, drho) = (ref_params.0 - state.c, ref_params.1 - state.rho);
    let g = sc.f2_over_d(state.c, dc, drho);
    let forcing = Forcing::physical(&sc, state.c, dc, drho, g);
    let op = PinnedOperator::new(*grid)?;
    let sol = op.solve(|y| forcing.eval(y));
    let d = spec.a0_deriv_unchecked(spec.eps * state.rho, 1);
    finish(&op, sol, forcing, d)
}

fn finish(op: &PinnedOperator, sol: ForcingSolution, forcing: Forcing, d: f64) -> Result<Corrector> {
    let grid = op.grid;
    let prof = grid.profile();
    let h = grid.h();
    let residual_pde = op.pde_residual(&sol.a, |y| forcing.eval(y), sol.tau);
    let residual_orth = op.orthogonality(&sol.a);
    let c = grid.c;
    let beta_c = sol.int_f / (2.0 * c.powf(1.5));
    let delta_c = forcing.g + sol.tau;
    let sqc = c.sqrt();
    let rest: Vec<f64> = grid
        .ys()
        .iter()
        .zip(&sol.a)
        .map(|(&y, &a)| a - beta_c * (prof.phi(y) - sqc) - delta_c * prof.lambda_q(y))
        .collect();
    let mu_c = dot(&rest, op.dq(), h) / dot(op.dq(), op.dq(), h);
    let realised = Forcing { g: delta_c, ..forcing };
    Ok(Corrector {
        grid,
        a: grid.wrap(sol.a)?,
        beta_c,
        mu_c,
        delta_c,
        f2: d * delta_c,
        tau: sol.tau,
        residual_pde,
        residual_orth,
        sigma: sol.sigma,
        forcing: grid.wrap(grid.sample(|y| realised.eval(y)))?,
    })
}

/// Exponent k in A_c(y) = c^k A_1(sqrt(c) y) for the pure-scaling forcing.
pub fn scaling_exponent(p: u32) -> f64 {
    (7.0 - 3.0 * p as f64) / (2.0 * (p - 1) as f64)
}

/// max |A_c(y_j) - c^k A_1(sqrt(c) y_j)| between two independent solves with
/// c0 = c, rho0 = rho. Both use the default grid size, so sqrt(c) y_j is a node
/// of the c = 1 grid.
pub fn corrector_scaling_check(c: f64, p: u32) -> Result<f64> {
    let sc = ShiftConstants::for_p(p)?;
    let solve_at = |cc: f64| -> Result<Vec<f64>> {
        let grid = OperatorGrid::default_for(p, cc)?;
        let f = Forcing::physical(&sc, cc, 0.0, 0.0, sc.f2_over_d(cc, 0.0, 0.0));
        Ok(PinnedOperator::new(grid)?.solve(|y| f.eval(y)).a)
    };
    let a_c = solve_at(c)?;
    let a_1 = if c == 1.0 { a_c.clone() } else { solve_at(1.0)? };
    let k = c.powf(scaling_exponent(p));
    Ok(a_c.iter().zip(&a_1).map(|(x, y)| (x - k * y).abs()).fold(0.0, f64::max))
}

/// Writes (y, A, Q_c, F1~) rows.
pub fn dump_corrector_csv(corr: &Corrector, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "y,A,Q_c,F1_tilde")?;
    let prof = corr.grid.profile();
    for j in 0..corr.grid.n {
        let y = corr.grid.y(j);
        writeln!(w, "{},{},{},{}", y, corr.a.samples()[j], prof.q(y), corr.forcing.samples()[j])?;
    }
    Ok(())
}

/// Corrector components at c = 1, rescaled to any c. Used by the ansatz:
/// A_c = A_base + dc A_dc + dr A_dr with A_k,c(y) = c^{s_k} A_k,1(sqrt(c) y).
#[derive(Debug, Clone)]
pub struct CorrectorFamily {
    pub p: u32,
    pub shift: ShiftConstants,
    grid: OperatorGrid,
    comps: [Vec<f64>; 3],
    dcomps: [Vec<f64>; 3],
    taus: [f64; 3],
    exps: [f64; 3],
}

/// Values of the corrector family at one point.
#[derive(Debug, Clone, Copy, Default)]
pub struct FamilyValue {
    /// A_c(y) for the given (dc, dr).
    pub a: f64,
    /// d/dc at fixed (dc, dr, y).
    pub a_c: f64,
    /// d/dy.
    pub a_y: f64,
    /// d/d(dc) and d/d(dr).
    pub a_dc: f64,
    pub a_dr: f64,
}

impl CorrectorFamily {
    pub fn new(p: u32) -> Result<Self> {
        Self::with_size(p, DEFAULT_N)
    }

    pub fn with_size(p: u32, n: usize) -> Result<Self> {
        let shift = ShiftConstants::for_p(p)?;
        let grid = OperatorGrid::with_size(p, 1.0, n)?;
        let op = PinnedOperator::new(grid)?;
        let prof = grid.profile();
        let sc = shift;
        let base = Forcing::physical(&sc, 1.0, 0.0, 0.0, sc.mu_p);
        let f_dc = move |y: f64| {
            let q = prof.q(y);
            let lq = prof.lambda_q(y);
            -sc.kappa_f1 * lq + lq * q - sc.nu_p * prof.dq(y)
        };
        let f_dr = move |y: f64| prof.dq(y) * (prof.q(y) - sc.kappa_rho);
        let s0 = op.solve(|y| base.eval(y));
        let s1 = op.solve(f_dc);
        let s2 = op.solve(f_dr);
        let h = grid.h();
        let k = scaling_exponent(p);
        let taus = [s0.tau, s1.tau, s2.tau];
        let comps = [s0.a, s1.a, s2.a];
        let dcomps = [d1_samples(&comps[0], h), d1_samples(&comps[1], h), d1_samples(&comps[2], h)];
        Ok(CorrectorFamily { p, shift, grid, comps, dcomps, taus, exps: [k, k - 1.0, k + 0.5] })
    }

    /// Realised f2/d including the solver slack of each component.
    pub fn g_eff(&self, c: f64, dc: f64, drho: f64) -> f64 {
        let [e1, e2, e3] = self.shift.f2_exponents();
        self.shift.f2_over_d(c, dc, drho)
            + self.taus[0] * c.powf(e1)
            + dc * self.taus[1] * c.powf(e2)
            + drho * self.taus[2] * c.powf(e3)
    }

    pub fn taus(&self) -> [f64; 3] {
        self.taus
    }

    pub fn eval(&self, c: f64, dc: f64, drho: f64, y: f64) -> FamilyValue {
        let sqc = c.sqrt();
        let s = sqc * y;
        let mut out = FamilyValue::default();
        let w = [1.0, dc, drho];
        for k in 0..3 {
            let (v, dv) = self.interp(k, s);
            let ck = c.powf(self.exps[k]);
            let val = ck * v;
            let dval = self.exps[k] * val / c + ck * dv * y / (2.0 * sqc);
            out.a += w[k] * val;
            out.a_c += w[k] * dval;
            out.a_y += w[k] * ck * dv * sqc;
            match k {
                1 => out.a_dc = val,
                2 => out.a_dr = val,
                _ => {}
            }
        }
        out
    }

    /// Six-point Lagrange interpolation of component k and its derivative at s;
    /// constant continuation on the left, zero on the right.
    fn interp(&self, k: usize, s: f64) -> (f64, f64) {
        let g = &self.grid;
        let n = g.n;
        let h = g.h();
        let comp = &self.comps[k];
        let dcomp = &self.dcomps[k];
        let u = (s - g.y_min) / h;
        if u <= 0.0 {
            return (comp[0], 0.0);
        }
        if u >= (n - 1) as f64 {
            return (0.0, 0.0);
        }
        let j = u.floor() as isize;
        let start = (j - 2).clamp(0, n as isize - 6) as usize;
        let x = u - start as f64;
        let mut v = 0.0;
        let mut dv = 0.0;
        for a in 0..6 {
            let mut l = 1.0;
            for b in 0..6 {
                if a != b {
                    l *= (x - b as f64) / (a as f64 - b as f64);
                }
            }
            v += l * comp[start + a];
            dv += l * dcomp[start + a];
        }
        (v, dv)
    }
}
