use gkdv_control::control::ControlSpec;
use gkdv_control::grid::GridFunction;
use gkdv_control::linearized::*;
use gkdv_control::soliton::{quadrature_constants, Profile, SolitonParams};
use proptest::prelude::*;

const PS: [u32; 3] = [2, 3, 4];
const CS: [f64; 3] = [0.5, 1.0, 2.0];

fn spec(p: u32) -> ControlSpec {
    ControlSpec::with_defaults(p, 2.0, 0.05).unwrap()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn trapz(v: &[f64], h: f64) -> f64 {
    h * v.iter().sum::<f64>()
}

#[test]
fn kernel_and_scaling_identities() {
    for p in PS {
        for c in CS {
            let g = OperatorGrid::default_for(p, c).unwrap();
            let pr = g.profile();
            let lq = apply_l(&g, &g.wrap(g.sample(|y| pr.dq(y))).unwrap()).unwrap();
            assert!(max_abs(lq.samples()) < 1e-7, "p={p} c={c}: {}", max_abs(lq.samples()));
            let ll = apply_l(&g, &g.wrap(g.sample(|y| pr.lambda_q(y))).unwrap()).unwrap();
            let q = g.sample(|y| pr.q(y));
            let d: Vec<f64> = ll.samples().iter().zip(&q).map(|(a, b)| a + b).collect();
            assert!(max_abs(&d) < 1e-7, "p={p} c={c}: {}", max_abs(&d));
        }
    }
}

#[test]
fn constant_input() {
    let g = OperatorGrid::with_size(3, 1.0, 4096).unwrap();
    let pr = g.profile();
    let out = apply_l(&g, &g.wrap(vec![1.0; g.n]).unwrap()).unwrap();
    // Exact except at the two rightmost nodes, where the stencil leaves the interval.
    for j in 0..g.n - 2 {
        let expect = 1.0 - 3.0 * pr.q(g.y(j)).powi(2);
        assert!((out.samples()[j] - expect).abs() < 1e-9, "j={j}");
    }
    assert!(apply_l(&g, &GridFunction::zeros(0.0, 1.0, 1024).unwrap()).is_err());
}

#[test]
fn grid_invariants() {
    assert!(OperatorGrid::new(-5.0, 50.0, 4096, 1.0, 2).is_err());
    assert!(OperatorGrid::new(-50.0, 50.0, 256, 1.0, 2).is_err());
    assert!(OperatorGrid::new(-50.0, 50.0, 1000, 1.0, 2).is_err());
    assert!(OperatorGrid::new(-50.0, 50.0, 1024, 1.0, 2).is_ok());
}

#[test]
fn phi_c_values() {
    assert_eq!(eval_phi_c(1.0, 2, 0.0).unwrap(), 0.0);
    assert!((eval_phi_c(1.0, 2, 40.0).unwrap() - 1.0).abs() < 1e-10);
    assert!((eval_phi_c(1.0, 2, -40.0).unwrap() + 1.0).abs() < 1e-10);
    for p in PS {
        for k in -50..=50 {
            let y = 0.1 * k as f64;
            let lhs = eval_phi_c(4.0, p, y).unwrap();
            let rhs = 2.0 * eval_phi_c(1.0, p, 2.0 * y).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
            // phi_c = -Q_c'/Q_c.
            let pr = Profile::new(p, 4.0).unwrap();
            if pr.q(y) > 1e-200 {
                assert!((lhs + pr.dq(y) / pr.q(y)).abs() < 1e-12);
            }
        }
    }
}

/// Closed form of mu_p using int Q^2(y) int_{-inf}^y Q = (1/2) int Q int Q^2,
/// which follows from F(y) + F(-y) = int Q for the even profile.
fn mu_oracle(p: u32) -> f64 {
    let k = quadrature_constants(p).unwrap();
    let pf = p as f64;
    let bracket = -0.25 * k.lambda_p * (3.0 - pf) / (pf - 1.0) * k.int_q * k.int_q + 0.5 * k.int_q * k.int_q2;
    2.0 * (pf - 3.0) / (5.0 - pf) * bracket / k.int_q2
}

#[test]
fn shift_constants_match_closed_form() {
    assert!((mu_oracle(2) + 0.4).abs() < 1e-12);
    for p in PS {
        let sc = ShiftConstants::for_p(p).unwrap();
        assert!((sc.mu_p - mu_oracle(p)).abs() < 1e-8, "p={p}: {} vs {}", sc.mu_p, mu_oracle(p));
    }
    assert!(ShiftConstants::for_p(3).unwrap().mu_p.abs() < 1e-12);
}

#[test]
fn f2_values() {
    let rho = 3.0;
    for p in PS {
        let s = spec(p);
        let k = quadrature_constants(p).unwrap();
        let st = SolitonParams::new(p, 1.3, rho).unwrap();
        let d = s.a0_deriv(s.eps * rho, 1).unwrap();
        let expect = d * mu_oracle(p) * 1.3f64.powf((3.0 - p as f64) / (2.0 * (p - 1) as f64));
        let f2 = compute_f2(&st, (1.3, rho), &s, &k);
        assert!((f2 - expect).abs() < 1e-8 * d.abs().max(1.0), "p={p}: {f2} vs {expect}");
        if p == 3 {
            assert!(f2.abs() < 1e-12);
        }
        // Flat profile region: a0' = 0 to working precision.
        let flat = ControlSpec::with_defaults(p, 1.0, 0.05).unwrap();
        assert_eq!(compute_f2(&st, (1.0, 0.0), &flat, &k), 0.0);
    }
}

#[test]
fn forcing_orthogonal_and_integral() {
    let s = spec(2);
    let k = quadrature_constants(2).unwrap();
    let st = SolitonParams::new(2, 1.0, 0.0).unwrap();
    let f2 = compute_f2(&st, (1.0, 0.0), &s, &k);
    let f = build_f1_tilde(&st, (1.0, 0.0), &s, f2).unwrap();
    let g = OperatorGrid::default_for(2, 1.0).unwrap();
    let pr = g.profile();
    let q = g.sample(|y| pr.q(y));
    let fq: Vec<f64> = f.samples().iter().zip(&q).map(|(a, b)| a * b).collect();
    assert!(trapz(&fq, g.h()).abs() < 1e-9);
    // (int Q^2)^2 - (2/3) int Q int Q^3 over int Q^2 = (36 - 28.8)/6.
    assert!((trapz(f.samples(), g.h()) - 1.2).abs() < 1e-9, "{}", trapz(f.samples(), g.h()));
    // Reduction at (c0, rho0) = (c, rho): -lambda c^{p/(p-1)} LambdaQ_c + Q_c^2 - g Q_c'.
    let gcoef = f2 / s.a0_deriv(0.0, 1).unwrap();
    for j in (0..g.n).step_by(97) {
        let y = g.y(j);
        let e = -k.lambda_p * pr.lambda_q(y) + pr.q(y).powi(2) - gcoef * pr.dq(y);
        assert!((f.samples()[j] - e).abs() < 1e-12);
    }
}

#[test]
fn forcing_orthogonal_off_reference() {
    for p in PS {
        let s = spec(p);
        let k = quadrature_constants(p).unwrap();
        let st = SolitonParams::new(p, 1.4, 2.0).unwrap();
        let rf = (1.37, 2.05);
        let f2 = compute_f2(&st, rf, &s, &k);
        let f = build_f1_tilde(&st, rf, &s, f2).unwrap();
        let g = OperatorGrid::default_for(p, 1.4).unwrap();
        let pr = g.profile();
        let fq: Vec<f64> = f.samples().iter().enumerate().map(|(j, v)| v * pr.q(g.y(j))).collect();
        assert!(trapz(&fq, g.h()).abs() < 1e-9, "p={p}: {}", trapz(&fq, g.h()));
        // Fredholm condition for G = -int_y^inf F: int G Q_c' = 0.
        // Cell integrals by the 4-point rule h/24 (-f_{j-1} + 13 f_j + 13 f_{j+1} - f_{j+2}).
        let fs = f.samples();
        let at = |j: isize| if j < 0 || j >= g.n as isize { 0.0 } else { fs[j as usize] };
        let mut gv = vec![0.0; g.n];
        let mut acc = 0.0;
        for j in (0..g.n).rev() {
            let i = j as isize;
            acc += g.h() / 24.0 * (-at(i - 1) + 13.0 * at(i) + 13.0 * at(i + 1) - at(i + 2));
            gv[j] = -acc;
        }
        let gdq: Vec<f64> = gv.iter().enumerate().map(|(j, v)| v * pr.dq(g.y(j))).collect();
        assert!(trapz(&gdq, g.h()).abs() < 1e-9, "p={p}: {}", trapz(&gdq, g.h()));
    }
}

#[test]
fn zero_forcing_gives_zero_corrector() {
    let g = OperatorGrid::with_size(2, 1.0, 8192).unwrap();
    let sol = solve_forcing(&g, |_| 0.0).unwrap();
    assert!(max_abs(&sol.a) == 0.0);
    assert_eq!(sol.tau, 0.0);
    assert_eq!(sol.int_f, 0.0);
}

#[test]
fn corrector_matrix() {
    for p in PS {
        for c in CS {
            let s = spec(p);
            let k = quadrature_constants(p).unwrap();
            let st = SolitonParams::new(p, c, 0.0).unwrap();
            let corr = solve_corrector(&st, (c, 0.0), &s, &k).unwrap();
            assert!(corr.residual_pde <= 1e-6, "p={p} c={c}: pde {}", corr.residual_pde);
            assert!(corr.residual_orth.0 <= 1e-8 && corr.residual_orth.1 <= 1e-8, "p={p} c={c}: {:?}", corr.residual_orth);
            let a = corr.a.samples();
            assert!(a[a.len() - 1].abs() <= 1e-8);
            assert!((a[0] + 2.0 * c.sqrt() * corr.beta_c).abs() <= 1e-6, "p={p} c={c}: {} {}", a[0], corr.beta_c);
            // beta_c = int F1~ / (2 c^{3/2}) from the sampled forcing.
            let int_f = trapz(corr.forcing.samples(), corr.grid.h());
            assert!((corr.beta_c - int_f / (2.0 * c.powf(1.5))).abs() < 1e-8);
        }
    }
}

#[test]
fn corrector_beta_p2() {
    let s = spec(2);
    let k = quadrature_constants(2).unwrap();
    let corr = solve_corrector(&SolitonParams::new(2, 1.0, 0.0).unwrap(), (1.0, 0.0), &s, &k).unwrap();
    assert!((corr.beta_c - 0.6).abs() < 1e-6, "{}", corr.beta_c);
}

#[test]
fn beta_bounded_away_from_zero() {
    for p in PS {
        let s = spec(p);
        let k = quadrature_constants(p).unwrap();
        let (cm, cmx) = s.c_bounds();
        for c in [cm, 1.0, 2.0, cmx] {
            let corr = solve_corrector(&SolitonParams::new(p, c, 0.0).unwrap(), (c, 0.0), &s, &k).unwrap();
            assert!(corr.beta_c.abs() >= 0.1, "p={p} c={c}: {}", corr.beta_c);
        }
    }
}

#[test]
fn corrector_rejects_far_c() {
    let s = spec(2);
    let k = quadrature_constants(2).unwrap();
    assert!(solve_corrector(&SolitonParams::new(2, 20.0, 0.0).unwrap(), (20.0, 0.0), &s, &k).is_err());
}

#[test]
fn scaling_law() {
    assert_eq!(corrector_scaling_check(1.0, 2).unwrap(), 0.0);
    assert!(corrector_scaling_check(2.0, 2).unwrap() <= 1e-4);
    assert!(corrector_scaling_check(0.5, 4).unwrap() <= 1e-4);
}

#[test]
fn family_matches_direct_solve() {
    for p in PS {
        let s = spec(p);
        let k = quadrature_constants(p).unwrap();
        let fam = CorrectorFamily::new(p).unwrap();
        let (c, dc, dr) = (1.6, -0.03, 0.2);
        let corr = solve_corrector(&SolitonParams::new(p, c, 0.0).unwrap(), (c + dc, dr), &s, &k).unwrap();
        let mut worst: f64 = 0.0;
        for j in (0..corr.grid.n).step_by(61) {
            let y = corr.grid.y(j);
            worst = worst.max((fam.eval(c, dc, dr, y).a - corr.a.samples()[j]).abs());
        }
        assert!(worst < 1e-6, "p={p}: {worst}");
        assert!((fam.g_eff(c, dc, dr) - corr.delta_c).abs() < 1e-6);
    }
}

#[test]
fn csv_dump() {
    let s = spec(2);
    let k = quadrature_constants(2).unwrap();
    let g = OperatorGrid::with_size(2, 1.0, 4096).unwrap();
    let corr = solve_corrector_on(&g, &SolitonParams::new(2, 1.0, 0.0).unwrap(), (1.0, 0.0), &s, &k).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv");
    dump_corrector_csv(&corr, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("y,A,Q_c,F1_tilde"));
    assert_eq!(lines.count(), 4096);
}

fn bumps(seed: &[(f64, f64, f64)], y: f64) -> f64 {
    seed.iter().map(|&(a, b, w)| a * (-(y - b) * (y - b) / w).exp()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn operator_is_symmetric(
        u in prop::collection::vec((-1.0f64..1.0, -8.0f64..8.0, 0.5f64..6.0), 1..4),
        v in prop::collection::vec((-1.0f64..1.0, -8.0f64..8.0, 0.5f64..6.0), 1..4),
        pi in 0usize..3,
    ) {
        let g = OperatorGrid::with_size(PS[pi], 1.0, 4096).unwrap();
        let us = g.wrap(g.sample(|y| bumps(&u, y))).unwrap();
        let vs = g.wrap(g.sample(|y| bumps(&v, y))).unwrap();
        let lu = apply_l(&g, &us).unwrap();
        let lv = apply_l(&g, &vs).unwrap();
        let a: f64 = lu.samples().iter().zip(vs.samples()).map(|(x, y)| x * y).sum();
        let b: f64 = us.samples().iter().zip(lv.samples()).map(|(x, y)| x * y).sum();
        let scale: f64 = lu.samples().iter().zip(vs.samples()).map(|(x, y)| (x * y).abs()).sum::<f64>().max(1e-300);
        prop_assert!((a - b).abs() <= 1e-8 * scale, "{} vs {}", a, b);
    }

    #[test]
    fn phi_is_odd_and_bounded(p in 2u32..=4, c in 0.1f64..4.0, y in -50.0f64..50.0) {
        let v = eval_phi_c(c, p, y).unwrap();
        prop_assert_eq!(v, -eval_phi_c(c, p, -y).unwrap());
        prop_assert!(v.abs() <= c.sqrt());
    }
}
