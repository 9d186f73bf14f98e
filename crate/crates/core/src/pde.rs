//! ETDRK4 pseudospectral solver for u_t + (u_xx + u^p)_x = a(t, x) u on a
//! periodic interval.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::control::{ControlSpec, ParameterTrajectory};
use crate::error::{domain, Error, Result};
use crate::grid::{GridFunction, Spectral};
use crate::soliton::{energy_with_derivative, h1_from_parts, Profile};

/// Contour points for the phi-function quadrature.
const CONTOUR_POINTS: usize = 32;
/// Default time step as a fraction of dx.
pub const DT_OVER_DX: f64 = 0.25;

/// Control acting on the solution: the slow trajectory and its profile.
#[derive(Debug, Clone)]
pub struct ControlField {
    pub spec: ControlSpec,
    pub traj: Arc<ParameterTrajectory>,
}

#[derive(Debug, Clone)]
pub struct SimulationState {
    pub t: f64,
    pub u: GridFunction,
    pub p: u32,
    pub control: Option<ControlField>,
}

/// Optional damping layer next to the periodic seam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sponge {
    pub width: f64,
    pub strength: f64,
}

/// Exponential time differencing RK4 with Kassam-Trefethen contour
/// coefficients, integrated in a frame moving with speed `frame_speed` so
/// that a travelling soliton is nearly stationary for the explicit part.
pub struct Stepper {
    spectral: Spectral,
    dt: f64,
    frame_speed: f64,
    p: u32,
    origin: f64,
    dx: f64,
    coef: Coefficients,
    mask: Vec<f64>,
    /// a0'(eps x_j), fixed in time.
    profile_slope: Vec<f64>,
    damping: Vec<f64>,
    control: Option<ControlField>,
}

struct Coefficients {
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    q: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
    /// Shift back to the lab frame after a step.
    back: Vec<Complex64>,
}

impl Coefficients {
    fn new(k: &[f64], dt: f64, s: f64) -> Self {
        let n = k.len();
        let mut c = Coefficients {
            e: Vec::with_capacity(n),
            e2: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            f1: Vec::with_capacity(n),
            f2: Vec::with_capacity(n),
            f3: Vec::with_capacity(n),
            back: Vec::with_capacity(n),
        };
        let roots: Vec<Complex64> = (0..CONTOUR_POINTS)
            .map(|j| {
                let th = std::f64::consts::PI * (j as f64 + 0.5) / CONTOUR_POINTS as f64;
                Complex64::new(0.0, th).exp()
            })
            .collect();
        let m = 2.0 * CONTOUR_POINTS as f64;
        for &kk in k {
            // -d_xxx + s d_x has symbol i(k^3 + s k).
            let hl = Complex64::new(0.0, (kk * kk * kk + s * kk) * dt);
            c.e.push(hl.exp());
            c.e2.push((hl * 0.5).exp());
            c.back.push(Complex64::new(0.0, -kk * s * dt).exp());
            let zero = Complex64::default();
            let (mut sq, mut s1, mut s2, mut s3) = (zero, zero, zero, zero);
            for r in &roots {
                for z in [hl + r, hl - r] {
                    let ez = z.exp();
                    let z3 = z * z * z;
                    sq += ((z * 0.5).exp() - 1.0) / z;
                    s1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
                    s2 += (2.0 + z + ez * (z - 2.0)) / z3;
                    s3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
                }
            }
            c.q.push(sq * (dt / m));
            c.f1.push(s1 * (dt / m));
            c.f2.push(s2 * (dt / m));
            c.f3.push(s3 * (dt / m));
        }
        c
    }
}

impl std::fmt::Debug for Stepper {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Stepper {{ n: {}, dt: {}, frame_speed: {}, p: {} }}",
            self.spectral.n(),
            self.dt,
            self.frame_speed,
            self.p
        )
    }
}

impl Stepper {
    pub fn new(state: &SimulationState, dt: f64, frame_speed: f64, sponge: Option<Sponge>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return domain(format!("time step {dt} must be positive"));
        }
        if !frame_speed.is_finite() {
            return domain("frame speed must be finite");
        }
        let g = &state.u;
        let n = g.n_points();
        let spectral = Spectral::for_grid(g);
        let k = spectral.k().to_vec();
        let kmax = k.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mask = k.iter().map(|kk| if kk.abs() < 2.0 / 3.0 * kmax { 1.0 } else { 0.0 }).collect();
        let profile_slope = match &state.control {
            Some(cf) => (0..n).map(|j| cf.spec.a0_deriv_unchecked(cf.spec.eps * g.x(j), 1)).collect(),
            None => vec![0.0; n],
        };
        let damping = match sponge {
            Some(s) => sponge_profile(g, s),
            None => vec![0.0; n],
        };
        Ok(Stepper {
            coef: Coefficients::new(&k, dt, frame_speed),
            spectral,
            dt,
            frame_speed,
            p: state.p,
            origin: g.origin(),
            dx: g.dx(),
            mask,
            profile_slope,
            damping,
            control: state.control.clone(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn frame_speed(&self) -> f64 {
        self.frame_speed
    }

    /// Rebuilds the exponential coefficients for a new step or frame speed.
    pub fn retune(&mut self, dt: f64, frame_speed: f64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite() && frame_speed.is_finite()) {
            return domain("invalid step or frame speed");
        }
        if dt != self.dt || frame_speed != self.frame_speed {
            self.coef = Coefficients::new(self.spectral.k(), dt, frame_speed);
            self.dt = dt;
            self.frame_speed = frame_speed;
        }
        Ok(())
    }

    /// a(t, x_j + offset) on the grid; `offset` is the frame displacement.
    pub fn control_samples(&self, t: f64, offset: f64) -> Result<Vec<f64>> {
        let n = self.spectral.n();
        let mut a = vec![0.0; n];
        if let Some(cf) = &self.control {
            let (c0, rho0) = cf.traj.sample(t)?;
            let prof = Profile::unchecked(cf.spec.p, c0);
            let reach = 46.0 / c0.sqrt();
            let eps = cf.spec.eps;
            for (j, aj) in a.iter_mut().enumerate() {
                let x = self.origin + j as f64 * self.dx + offset;
                let y = x - rho0;
                if y.abs() >= reach {
                    continue;
                }
                let d = if offset == 0.0 {
                    self.profile_slope[j]
                } else {
                    cf.spec.a0_deriv_unchecked(eps * x, 1)
                };
                *aj = -eps * d * prof.q(y);
            }
        }
        Ok(a)
    }

    /// Fourier transform of the dealiased N(u) = -(u^p)_x + (a - sponge) u,
    /// with the control taken at frame offset `offset`.
    fn nonlinear(&self, v_hat: &[Complex64], t: f64, offset: f64) -> Result<Vec<Complex64>> {
        let n = v_hat.len();
        let mut buf = v_hat.to_vec();
        self.spectral.inverse_in_place(&mut buf);
        let a = self.control_samples(t, offset)?;
        let mut pw = vec![Complex64::default(); n];
        let mut lin = vec![Complex64::default(); n];
        for j in 0..n {
            let u = buf[j].re;
            pw[j] = Complex64::new(u.powi(self.p as i32), 0.0);
            lin[j] = Complex64::new((a[j] - self.damping[j]) * u, 0.0);
        }
        self.spectral.forward_in_place(&mut pw);
        self.spectral.forward_in_place(&mut lin);
        let k = self.spectral.k();
        let nyq = n / 2;
        Ok((0..n)
            .map(|j| {
                if j == nyq {
                    return Complex64::default();
                }
                let ik = Complex64::new(0.0, k[j]);
                (-ik * pw[j] + lin[j]) * self.mask[j]
            })
            .collect())
    }

    /// Advances `state` by one step.
    pub fn step(&self, state: &mut SimulationState) -> Result<()> {
        let h = self.dt;
        let s = self.frame_speed;
        let t = state.t;
        let cf = &self.coef;
        let v = self.spectral.forward(state.u.samples());
        let n = v.len();
        let nv = self.nonlinear(&v, t, 0.0)?;
        let a: Vec<Complex64> = (0..n).map(|j| cf.e2[j] * v[j] + cf.q[j] * nv[j]).collect();
        let na = self.nonlinear(&a, t + 0.5 * h, 0.5 * s * h)?;
        let b: Vec<Complex64> = (0..n).map(|j| cf.e2[j] * v[j] + cf.q[j] * na[j]).collect();
        let nb = self.nonlinear(&b, t + 0.5 * h, 0.5 * s * h)?;
        let c: Vec<Complex64> = (0..n).map(|j| cf.e2[j] * a[j] + cf.q[j] * (2.0 * nb[j] - nv[j])).collect();
        let nc = self.nonlinear(&c, t + h, s * h)?;
        let new: Vec<Complex64> = (0..n)
            .map(|j| {
                let w = cf.e[j] * v[j] + nv[j] * cf.f1[j] + 2.0 * (na[j] + nb[j]) * cf.f2[j] + nc[j] * cf.f3[j];
                w * cf.back[j]
            })
            .collect();
        let u = self.spectral.inverse_real(new);
        let t_new = t + h;
        if u.iter().any(|x| !x.is_finite() || x.abs() > 1e6) {
            return Err(Error::BlowUp { t: t_new, msg: "non-finite or exploding samples".into() });
        }
        state.u = state.u.with_samples(u)?;
        state.t = t_new;
        Ok(())
    }
}

fn sponge_profile(g: &GridFunction, s: Sponge) -> Vec<f64> {
    let l = g.domain_length();
    (0..g.n_points())
        .map(|j| {
            let dist = (j as f64 * g.dx()).min(l - j as f64 * g.dx());
            if dist >= s.width {
                0.0
            } else {
                let r = 1.0 - dist / s.width;
                s.strength * r * r
            }
        })
        .collect()
}

/// One step of the default scheme (builds a fresh stepper; prefer `Stepper` in loops).
pub fn step(state: &SimulationState, dt: f64) -> Result<SimulationState> {
    let st = Stepper::new(state, dt, 0.0, None)?;
    let mut s = state.clone();
    st.step(&mut s)?;
    Ok(s)
}

/// Mass, energy and the right-hand sides of their balance laws.
#[derive(Debug, Clone, Copy)]
pub struct Balance {
    pub mass: f64,
    pub energy: f64,
    /// int a u^2.
    pub mass_rate: f64,
    /// -1/2 int a_xx u^2 - int a u^{p+1} + int a u_x^2.
    pub energy_rate: f64,
}

pub fn balance_terms(state: &SimulationState) -> Result<Balance> {
    let g = &state.u;
    let sp = Spectral::for_grid(g);
    let u = g.samples();
    let ux = sp.derivative(u, 1);
    let dx = g.dx();
    let mass = 0.5 * dx * u.iter().map(|v| v * v).sum::<f64>();
    let energy = energy_with_derivative(u, &ux, dx, state.p);
    let a = control_on_grid(state)?;
    let axx = sp.derivative(&a, 2);
    let mut mr = 0.0;
    let mut er = 0.0;
    for j in 0..u.len() {
        let v = u[j];
        mr += a[j] * v * v;
        er += -0.5 * axx[j] * v * v - a[j] * v.powi(state.p as i32 + 1) + a[j] * ux[j] * ux[j];
    }
    Ok(Balance { mass, energy, mass_rate: mr * dx, energy_rate: er * dx })
}

pub fn control_on_grid(state: &SimulationState) -> Result<Vec<f64>> {
    let g = &state.u;
    match &state.control {
        None => Ok(vec![0.0; g.n_points()]),
        Some(cf) => {
            let (c0, rho0) = cf.traj.sample(state.t)?;
            Ok((0..g.n_points()).map(|j| crate::control::control_value(&cf.spec, c0, rho0, g.x(j))).collect())
        }
    }
}

/// Defects of the mass and energy balance at the centre of five equally
/// spaced states: 4th-order centred differences of M and E against the
/// quadrature of their right-hand sides.
pub fn balance_check(window: &[SimulationState]) -> Result<(f64, f64)> {
    if window.len() != 5 {
        return domain("balance_check needs five consecutive states");
    }
    let h = window[1].t - window[0].t;
    for w in window.windows(2) {
        if ((w[1].t - w[0].t) - h).abs() > 1e-9 * h.abs().max(1.0) {
            return domain("balance_check states must be equally spaced");
        }
    }
    let b: Vec<Balance> = window.iter().map(balance_terms).collect::<Result<_>>()?;
    let d = |f: &dyn Fn(&Balance) -> f64| (-f(&b[4]) + 8.0 * f(&b[3]) - 8.0 * f(&b[1]) + f(&b[0])) / (12.0 * h);
    let dm = d(&|x| x.mass);
    let de = d(&|x| x.energy);
    Ok(((dm - b[2].mass_rate).abs(), (de - b[2].energy_rate).abs()))
}

/// Geometry and step of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunGeometry {
    pub origin: f64,
    pub length: f64,
    pub n: usize,
    pub dt: f64,
    pub stride: f64,
    pub sponge: Option<Sponge>,
    /// Speed of the computational frame; `None` follows c0(t) of the
    /// control trajectory (rounded to 1/64), or 0 without control.
    pub frame_speed: Option<f64>,
}

impl RunGeometry {
    /// Domain covering [x_left, x_right] plus `padding`, dx <= 0.1, dt = 0.25 dx.
    pub fn covering(x_left: f64, x_right: f64, padding: f64) -> Self {
        let length = x_right - x_left + padding;
        let n = ((length / 0.1).ceil() as usize).next_power_of_two().max(16);
        let dx = length / n as f64;
        RunGeometry {
            origin: x_left - 0.5 * padding,
            length,
            n,
            dt: DT_OVER_DX * dx,
            stride: 0.5,
            sponge: None,
            frame_speed: None,
        }
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }
}

/// Result of `run`: final state and plumbing counters.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: SimulationState,
    pub steps: usize,
    pub observer_calls: usize,
}

/// Evolves `state` to `t_end`, calling `observer` after every output stride
/// (ceil(t_end/stride) calls, the last one at t_end). Steps are shortened to
/// land exactly on output times.
pub fn run(
    mut state: SimulationState,
    geom: &RunGeometry,
    t_end: f64,
    observer: &mut dyn FnMut(&SimulationState) -> Result<()>,
) -> Result<RunOutcome> {
    if let Some(cf) = &state.control {
        let guard = 5.0 * cf.spec.interaction_time();
        if t_end > guard + 1e-9 {
            return domain(format!("t_end = {t_end} exceeds the resource guard 5 eps^(-1-delta0) = {guard}"));
        }
    }
    let t0 = state.t;
    let n_out = ((t_end - t0) / geom.stride - 1e-9).ceil().max(0.0) as usize;
    let frame = |st: &SimulationState| -> Result<f64> {
        Ok(match (geom.frame_speed, &st.control) {
            (Some(s), _) => s,
            (None, Some(cf)) => (cf.traj.sample(st.t)?.0 * 64.0).round() / 64.0,
            (None, None) => 0.0,
        })
    };
    let mut stepper = Stepper::new(&state, geom.dt, frame(&state)?, geom.sponge)?;
    let mut steps = 0;
    let mut calls = 0;
    for k in 1..=n_out {
        let target = if k == n_out { t_end } else { t0 + k as f64 * geom.stride };
        let remaining = target - state.t;
        let m = (remaining / geom.dt - 1e-9).ceil().max(1.0) as usize;
        let h = remaining / m as f64;
        // Keep the nominal step when the stride is a whole number of steps.
        let h = if (h - geom.dt).abs() <= 1e-12 * geom.dt { geom.dt } else { h };
        stepper.retune(h, frame(&state)?)?;
        for _ in 0..m {
            stepper.step(&mut state)?;
            steps += 1;
        }
        state.t = target;
        observer(&state)?;
        calls += 1;
    }
    Ok(RunOutcome { state, steps, observer_calls: calls })
}

/// H1 norm of the state.
pub fn h1(u: &GridFunction) -> f64 {
    let ux = Spectral::for_grid(u).derivative(u.samples(), 1);
    h1_from_parts(u.samples(), &ux, u.dx())
}

/// Header of a checkpoint file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub length: f64,
    pub n: usize,
    pub origin: f64,
    pub p: u32,
    pub eps: f64,
    pub c_f: f64,
    pub delta0: f64,
    pub gamma0: f64,
    pub t: f64,
}

/// CSV checkpoint: one `# key=value` header line, then `x,u` rows.
pub fn write_checkpoint(path: &Path, state: &SimulationState) -> Result<()> {
    let g = &state.u;
    let (eps, c_f, delta0, gamma0) = match &state.control {
        Some(cf) => (cf.spec.eps, cf.spec.c_f, cf.spec.delta0, cf.spec.gamma0),
        None => (0.0, 1.0, 0.0, 0.0),
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "# L={:e} N={} origin={:e} p={} eps={:e} c_f={:e} delta0={:e} gamma0={:e} t={:e}",
        g.domain_length(),
        g.n_points(),
        g.origin(),
        state.p,
        eps,
        c_f,
        delta0,
        gamma0,
        state.t
    )?;
    writeln!(w, "x,u")?;
    for j in 0..g.n_points() {
        writeln!(w, "{:e},{:e}", g.x(j), g.samples()[j])?;
    }
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, GridFunction)> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = f.lines();
    let head = lines.next().ok_or_else(|| Error::Config("empty checkpoint".into()))??;
    let mut kv = std::collections::HashMap::new();
    for tok in head.trim_start_matches('#').split_whitespace() {
        if let Some((k, v)) = tok.split_once('=') {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| -> Result<f64> {
        kv.get(k)
            .ok_or_else(|| Error::Config(format!("checkpoint header lacks {k}")))?
            .parse::<f64>()
            .map_err(|e| Error::Config(format!("bad {k}: {e}")))
    };
    let header = CheckpointHeader {
        length: get("L")?,
        n: get("N")? as usize,
        origin: get("origin")?,
        p: get("p")? as u32,
        eps: get("eps")?,
        c_f: get("c_f")?,
        delta0: get("delta0")?,
        gamma0: get("gamma0")?,
        t: get("t")?,
    };
    lines.next();
    let mut samples = Vec::with_capacity(header.n);
    for line in lines {
        let line = line?;
        let (_, u) = line.split_once(',').ok_or_else(|| Error::Config("bad checkpoint row".into()))?;
        samples.push(u.parse::<f64>().map_err(|e| Error::Config(format!("bad sample: {e}")))?);
    }
    let g = GridFunction::new(header.origin, header.length, samples)?;
    Ok((header, g))
}
