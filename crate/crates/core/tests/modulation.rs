use std::sync::{Arc, OnceLock};

use gkdv_control::ansatz::residual_grid;
use gkdv_control::control::*;
use gkdv_control::grid::{GridFunction, Spectral};
use gkdv_control::linearized::CorrectorFamily;
use gkdv_control::modulation::*;
use gkdv_control::pde::{run, ControlField, RunGeometry, SimulationState};
use gkdv_control::soliton::*;
use gkdv_control::Error;
use proptest::prelude::*;

fn family() -> Arc<CorrectorFamily> {
    static F: OnceLock<Arc<CorrectorFamily>> = OnceLock::new();
    F.get_or_init(|| Arc::new(CorrectorFamily::new(2).unwrap())).clone()
}

/// Controlled setting at the transit time, on a grid holding the whole ansatz.
fn transit() -> (Modulator, f64, GridFunction) {
    let spec = ControlSpec::with_defaults(2, 2.0, 0.05).unwrap();
    let t = spec.interaction_time();
    let traj = Arc::new(integrate_parameter_ode(&spec, t + 1.0).unwrap());
    let (c0, r0) = traj.sample(t).unwrap();
    let g = residual_grid(spec.eps, c0, r0, 0.08).unwrap();
    (Modulator::new(spec, traj, Some(family())), t, g)
}

fn h1(v: &[f64], g: &GridFunction) -> f64 {
    h1_norm(&g.with_samples(v.to_vec()).unwrap())
}

#[test]
fn exact_ansatz_is_recovered() {
    let (m, t, g) = transit();
    let (c0, r0) = m.traj.sample(t).unwrap();
    let (cs, rs) = (c0 + 0.01, r0 + 0.2);
    let u = m.ansatz(&g, cs, rs, t).unwrap().u_tilde;
    let warm = SolitonParams::new(2, cs + 0.03, rs - 0.15).unwrap();
    let fit = fit_modulation(&u, &warm, &m.spec, m.traj.clone(), m.family.clone(), t).unwrap();
    assert!((fit.c - cs).abs() < 1e-12, "{}", fit.c - cs);
    assert!((fit.rho - rs).abs() < 1e-12, "{}", fit.rho - rs);
    assert!(fit.z_h1 <= 1e-12);
    assert!(fit.newton_iters <= 8);
}

#[test]
fn shifted_soliton_without_control() {
    let spec = ControlSpec::with_defaults(2, 1.0, 0.05).unwrap();
    let traj = Arc::new(integrate_parameter_ode(&spec, 1.0).unwrap());
    let g = residual_grid(0.05, 1.0, 0.0, 0.05).unwrap();
    let u = g.with_samples((0..g.n_points()).map(|j| q_unchecked(2, g.x(j) - 0.3)).collect()).unwrap();
    let fit = fit_modulation(&u, &SolitonParams::new(2, 1.0, 0.0).unwrap(), &spec, traj, None, 0.0).unwrap();
    assert!((fit.rho - 0.3).abs() < 1e-10);
    assert!((fit.c - 1.0).abs() < 1e-10);
    let norm = (2.0 * mass(&u)).sqrt();
    assert!(fit.orth_residuals.0 <= ORTH_TOL * norm && fit.orth_residuals.1 <= ORTH_TOL * norm);
}

#[test]
fn orthogonal_perturbation_does_not_move_the_fit() {
    let (m, t, g) = transit();
    let (c0, r0) = m.traj.sample(t).unwrap();
    let base = m.ansatz(&g, c0, r0, t).unwrap().u_tilde;
    let pr = Profile::new(2, c0).unwrap();
    // Bump made orthogonal to Q_c(y) and y Q_c(y) (which are orthogonal to each other).
    let y: Vec<f64> = (0..g.n_points()).map(|j| g.x(j) - r0).collect();
    let mut b: Vec<f64> = y.iter().map(|&y| (-(y - 1.3) * (y - 1.3) / 3.0).exp()).collect();
    for w in [y.iter().map(|&y| pr.q(y)).collect::<Vec<_>>(), y.iter().map(|&y| y * pr.q(y)).collect()] {
        let k = b.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() / w.iter().map(|c| c * c).sum::<f64>();
        b.iter_mut().zip(&w).for_each(|(a, c)| *a -= k * c);
    }
    let n = h1(&b, &g);
    let u: Vec<f64> = base.samples().iter().zip(&b).map(|(u, b)| u + 1e-3 * b / n).collect();
    let u = g.with_samples(u).unwrap();
    let warm = SolitonParams::new(2, c0, r0).unwrap();
    let f0 = m.fit(&base, &warm, t).unwrap().fit;
    let f1 = m.fit(&u, &warm, t).unwrap().fit;
    assert!((f1.c - f0.c).abs() <= 1e-6 && (f1.rho - f0.rho).abs() <= 1e-6, "{:?} {:?}", f0, f1);
    assert!((f1.z_h1 - 1e-3).abs() < 1e-6);
}

#[test]
fn lipschitz_under_generic_perturbation() {
    let (m, t, g) = transit();
    let (c0, r0) = m.traj.sample(t).unwrap();
    let base = m.ansatz(&g, c0, r0, t).unwrap().u_tilde;
    let warm = SolitonParams::new(2, c0, r0).unwrap();
    let shift = |s: f64| {
        let u: Vec<f64> =
            (0..g.n_points()).map(|j| base.samples()[j] + s * (-(g.x(j) - r0 - 0.5).powi(2)).exp()).collect();
        let f = m.fit(&g.with_samples(u).unwrap(), &warm, t).unwrap().fit;
        ((f.c - c0).powi(2) + (f.rho - r0).powi(2)).sqrt()
    };
    let (a, b) = (shift(1e-3), shift(2e-3));
    assert!(a > 0.0 && (b / a - 2.0).abs() < 0.05, "{a:e} {b:e}");
}

#[test]
fn far_from_solitons_fails_cleanly() {
    let (m, t, g) = transit();
    let u = g.with_samples(vec![0.0; g.n_points()]).unwrap();
    let warm = SolitonParams::new(2, 1.5, m.traj.sample(t).unwrap().1).unwrap();
    assert!(matches!(m.fit(&u, &warm, t), Err(Error::Fit(_))));
}

#[test]
fn weight_shape() {
    assert_eq!(psi(0.0), 0.0);
    assert_eq!(virial_weight(DEFAULT_A0, 0.0), 0.0);
    for k in 0..=100 {
        let x = 0.01 * k as f64;
        assert_eq!(phi(x), 1.0);
    }
    for k in 0..=200 {
        let x = 2.0 + 0.1 * k as f64;
        assert!((psi_infinity() - psi(x) - (-x).exp()).abs() < 1e-14);
        assert!((psi_infinity() - psi(-x).abs() - (-x).exp()).abs() < 1e-14);
        assert!((phi(x) - (-x).exp()).abs() < 1e-16);
    }
}

#[test]
fn weight_envelope() {
    let a = DEFAULT_A0;
    for k in 0..10_000 {
        let y = -200.0 + 400.0 * k as f64 / 9_999.0;
        let d = virial_weight_deriv(a, y);
        let e = (-y.abs() / a).exp();
        assert!(d >= e * (1.0 - 1e-15) && d <= 3.0 * e, "y={y}: {d} vs {e}");
    }
}

#[test]
fn weight_derivative_matches_difference() {
    let h = 1e-4;
    for k in -300..=300 {
        let y = 0.2 * k as f64 + 0.013;
        let fd = (virial_weight(20.0, y + h) - virial_weight(20.0, y - h)) / (2.0 * h);
        assert!((fd - virial_weight_deriv(20.0, y)).abs() < 1e-8, "y={y}");
    }
}

#[test]
fn lyapunov_vanishes_at_zero_remainder() {
    let (m, t, g) = transit();
    let (c0, r0) = m.traj.sample(t).unwrap();
    let u = m.ansatz(&g, c0, r0, t).unwrap().u_tilde;
    let fs = m.fit(&u, &SolitonParams::new(2, c0, r0).unwrap(), t).unwrap();
    let f = lyapunov(&u, &fs.fit, &fs.ansatz, 2).unwrap();
    assert!(f.abs() < 1e-20, "{f}");
    let d = m.diagnostics(&u, &fs, t);
    assert!(d.virial.abs() < 1e-20 && d.weighted_l2 < 1e-20);
    assert!(lyapunov(&GridFunction::zeros(0.0, 10.0, 64).unwrap(), &fs.fit, &fs.ansatz, 2).is_err());
}

#[test]
fn lyapunov_taylor_expansion() {
    for p in [2u32, 3, 4] {
        let spec = ControlSpec::with_defaults(p, 1.0, 0.05).unwrap();
        let traj = Arc::new(integrate_parameter_ode(&spec, 1.0).unwrap());
        let m = Modulator::new(spec, traj, None);
        let g = residual_grid(0.05, 1.0, 0.0, 0.05).unwrap();
        let ans = m.ansatz(&g, 1.0, 0.0, 0.0).unwrap();
        let ut = ans.u_tilde.samples().to_vec();
        let bump: Vec<f64> = (0..g.n_points()).map(|j| (-(g.x(j) - 0.7).powi(2) / 2.0).exp()).collect();
        let bx = Spectral::for_grid(&g).derivative(&bump, 1);
        let gap = |s: f64| {
            let u = g.with_samples(ut.iter().zip(&bump).map(|(a, b)| a + s * b).collect()).unwrap();
            let fit = ModulationFit { c: 1.0, rho: 0.0, z_h1: 0.0, orth_residuals: (0.0, 0.0), newton_iters: 0 };
            let f = lyapunov(&u, &fit, &ans, p).unwrap();
            let quad: f64 = (0..g.n_points())
                .map(|j| {
                    let (z, zx) = (s * bump[j], s * bx[j]);
                    0.5 * (zx * zx + z * z) - 0.5 * p as f64 * ut[j].powi(p as i32 - 1) * z * z
                })
                .sum::<f64>()
                * g.dx();
            (f - quad).abs()
        };
        let (a, b) = (gap(1e-2), gap(5e-3));
        assert!(a < 1e-5, "p={p}: {a}");
        let order = (a / b).log2();
        assert!((order - 3.0).abs() < 0.1, "p={p}: order {order}");
    }
}

fn row(t: f64, c: f64, rho: f64, eps_f1: f64, eps_f2: f64) -> RecordRow {
    RecordRow {
        t,
        c,
        rho,
        mass: 1.0,
        energy: -1.0,
        z_h1: 0.0,
        virial: 0.0,
        lyapunov: 0.0,
        c1_proxy: f64::NAN,
        rho1_proxy: f64::NAN,
        u_h1: 1.0,
        weighted_l2: 0.0,
        eps_f1,
        eps_f2,
    }
}

#[test]
fn rates_from_linear_series() {
    // c = 1 + 0.1 t, rho = 3 t: c' = 0.1, rho' - c = 2 - 0.1 t.
    let mut rows: Vec<RecordRow> =
        (0..6).map(|k| k as f64 * 0.5).map(|t| row(t, 1.0 + 0.1 * t, 3.0 * t, 0.1, 2.0 - 0.1 * t)).collect();
    modulation_rates(&mut rows).unwrap();
    for r in &rows {
        assert!(r.c1_proxy.abs() < 1e-14 && r.rho1_proxy.abs() < 1e-13, "{r:?}");
    }
    assert!(modulation_rates(&mut rows[..1]).is_err());
}

#[test]
fn record_contract() {
    let mut rows: Vec<RecordRow> = (0..5).map(|k| row(k as f64, 1.0, 0.0, 0.0, 0.0)).collect();
    for (k, r) in rows.iter_mut().enumerate() {
        r.c1_proxy = k as f64;
    }
    let rec = RunRecord::new(serde_json::json!({"x": 1}), rows.clone(), 0.5).unwrap();
    let last = rows.last().unwrap();
    assert_eq!((rec.summary.c_t, rec.summary.rho_t, rec.summary.z_h1_t, rec.summary.u_h1_t), (last.c, last.rho, last.z_h1, last.u_h1));
    // Trapezoid of |k| over unit steps: 0.5 + 1.5 + 2.5 + 3.5.
    assert_eq!(rec.c1_integral(), 8.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    rec.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    assert_eq!(text.lines().count(), 6);
    let mut bad = rows.clone();
    bad[3].t = bad[2].t;
    assert!(RunRecord::new(serde_json::Value::Null, bad, 0.0).is_err());
    assert!(RunRecord::new(serde_json::Value::Null, vec![], 0.0).is_err());
}

#[test]
fn tracker_on_free_soliton() {
    let spec = ControlSpec::with_defaults(2, 1.0, 0.05).unwrap();
    let traj = Arc::new(integrate_parameter_ode(&spec, 4.0).unwrap());
    let r0 = spec.rho0_initial();
    let geom = RunGeometry::covering(r0 - 3.0 / spec.eps - 20.0, r0 + 40.0, 40.0);
    let u = GridFunction::from_fn(geom.origin, geom.length, geom.n, |x| q_unchecked(2, x - r0)).unwrap();
    let st = SimulationState { t: 0.0, u, p: 2, control: Some(ControlField { spec, traj: traj.clone() }) };
    let mut tr = Tracker::new(Modulator::new(spec, traj, Some(family())), SolitonParams::new(2, 1.0, r0).unwrap());
    tr.observe(0.0, &st.u).unwrap();
    run(st, &geom, 4.0, &mut |s| tr.observe(s.t, &s.u)).unwrap();
    tr.finish().unwrap();
    assert_eq!(tr.rows.len(), 9);
    for r in &tr.rows {
        assert!(r.c1_proxy.abs() < 1e-9 && r.rho1_proxy.abs() < 1e-9, "{r:?}");
        assert!((r.rho - (r0 + r.t)).abs() < 1e-9);
        assert!(r.virial.is_finite() && r.weighted_l2 >= 0.0);
    }
    assert_eq!(tr.samples.len(), tr.rows.len());
    assert_eq!(tr.samples[3].c1_proxy, tr.rows[3].c1_proxy);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fit_inverts_ansatz(dc in -0.2f64..0.2, dr in -1.0f64..1.0) {
        let (m, t, g) = transit();
        let (c0, r0) = m.traj.sample(t).unwrap();
        let (cs, rs) = (c0 + dc, r0 + dr);
        let u = m.ansatz(&g, cs, rs, t).unwrap().u_tilde;
        let f = m.fit(&u, &SolitonParams::new(2, c0, r0).unwrap(), t).unwrap().fit;
        prop_assert!((f.c - cs).abs() < 1e-10 && (f.rho - rs).abs() < 1e-10, "{:?}", f);
    }

    #[test]
    fn psi_is_odd_and_increasing(x in -50.0f64..50.0, h in 1e-3f64..1.0) {
        prop_assert_eq!(psi(-x), -psi(x));
        prop_assert!(psi(x + h) >= psi(x));
        // e^{-|x|} is lost against psi(inf) in double precision past |x| ~ 36.
        if x.abs() < 20.0 && (x + h).abs() < 20.0 {
            prop_assert!(psi(x + h) > psi(x));
        }
        prop_assert!(psi(x).abs() <= psi_infinity());
    }
}
