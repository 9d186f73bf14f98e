use std::path::Path;
use std::process::Command;

use gkdv_control::harness::*;
use gkdv_control::Error;

fn cfg_with(f: impl FnOnce(&mut ConfigOverrides)) -> gkdv_control::Result<ExperimentConfig> {
    let mut o = ConfigOverrides { experiment: Some(Experiment::Accelerate), ..Default::default() };
    f(&mut o);
    o.resolve()
}

#[test]
fn defaults_per_experiment() {
    let a = ExperimentConfig::new(Experiment::Accelerate).unwrap();
    assert_eq!((a.p, a.cf, a.eps.clone(), a.gamma0, a.horizon), (2, 2.0, vec![0.05, 0.025], 6.0, 2.0));
    let f = ExperimentConfig::new(Experiment::FreeSoliton).unwrap();
    assert_eq!((f.cf, f.eps.clone()), (1.0, vec![0.05]));
    let n = ExperimentConfig::new(Experiment::NullControl).unwrap();
    assert!(n.eps.is_empty() && n.delta == 0.5 && n.gamma0 == 1.0);
    assert_eq!(ExperimentConfig::new(Experiment::ResidualScaling).unwrap().eps.len(), 3);
    for e in Experiment::ALL {
        assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
    }
    assert!(matches!("warp".parse::<Experiment>(), Err(Error::Config(_))));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad: Vec<Box<dyn Fn(&mut ConfigOverrides)>> = vec![
        Box::new(|o| o.p = Some(5)),
        Box::new(|o| o.cf = Some(-1.0)),
        Box::new(|o| o.eps = Some(vec![0.2])),
        Box::new(|o| o.eps = Some(vec![0.025, 0.05])),
        Box::new(|o| o.eps = Some(vec![])),
        Box::new(|o| o.delta = Some(1.0)),
        Box::new(|o| o.horizon = Some(6.0)),
        Box::new(|o| o.grid_n = Some(1000)),
        Box::new(|o| o.grid_l = Some(0.0)),
        Box::new(|o| o.dt = Some(-0.1)),
        Box::new(|o| o.t_end = Some(0.0)),
        Box::new(|o| o.budget_seconds = Some(0.0)),
        Box::new(|o| o.gamma0 = Some(f64::NAN)),
    ];
    for (k, f) in bad.iter().enumerate() {
        assert!(matches!(cfg_with(f), Err(Error::Config(_))), "case {k}");
    }
    assert!(ConfigOverrides::default().resolve().is_err());
}

#[test]
fn toml_and_merge() {
    let file = ConfigOverrides::from_toml("experiment = \"stabilize\"\np = 3\ndelta = 0.4\neps = [0.1, 0.05]\n").unwrap();
    let flags = ConfigOverrides { p: Some(2), ..Default::default() };
    let cfg = file.merge(flags).resolve().unwrap();
    assert_eq!((cfg.experiment, cfg.p, cfg.delta, cfg.eps.clone()), (Experiment::Stabilize, 2, 0.4, vec![0.1, 0.05]));
    assert!(ConfigOverrides::from_toml("speed = 3").is_err());
    assert!(ConfigOverrides::from_toml("experiment = \"warp\"").is_err());
}

#[test]
fn claim_semantics() {
    assert!(ClaimResult::at_most("a", 1.0, 1.0, "").pass);
    assert!(!ClaimResult::at_most("a", f64::NAN, 1.0, "").pass);
    assert!(ClaimResult::at_least("a", 2.0, 1.0, "").pass);
    assert!(!ClaimResult::at_least("a", f64::NAN, 1.0, "").pass);
    let w = ClaimResult::within("w", 0.8, 0.7, 0.1 + 1e-12, "x");
    assert!(w.pass && w.bound == 0.7 && w.detail.contains("tolerance"));
    assert!(!ClaimResult::within("w", 0.81, 0.7, 0.1, "").pass);
    assert!(!ClaimResult::failed("f", "boom").pass);
    let r = ExperimentReport {
        experiment: Experiment::Accelerate,
        claims: vec![ClaimResult::at_most("a", 0.0, 1.0, ""), ClaimResult::failed("b", "")],
        records: vec![],
        skipped: vec![],
    };
    assert!(!r.passed());
}

#[test]
fn envelope_recovers_a_clean_decay() {
    let (delta, q) = (0.5, 2.0);
    let t: Vec<f64> = (0..200).map(|k| k as f64).collect();
    let u: Vec<f64> = t.iter().map(|&t| 0.8 * (delta + (-0.3 * delta * delta * t).exp()) * q).collect();
    let f = fit_envelope(&t, &u, delta, q).unwrap();
    assert!((f.mu0 / 0.3 - 1.0).abs() < 0.02, "{f:?}");
    assert!((f.c / 0.8 - 1.0).abs() < 0.02, "{f:?}");
    assert!(f.max_excess <= 1e-15);
    assert!(fit_envelope(&t[..2], &u[..2], delta, q).is_err());
    assert!(fit_envelope(&t, &u[..5], delta, q).is_err());
}

#[test]
fn null_control_parameters() {
    let mut cfg = ExperimentConfig::new(Experiment::NullControl).unwrap();
    let s = null_control_spec(&cfg).unwrap();
    assert!((s.c_f - 0.5f64.powf(4.0 / 3.0) / 100.0).abs() < 1e-15);
    assert!((s.c_f - 0.003_968_502_629_920_499).abs() < 1e-15);
    assert_eq!(s.eps, 0.125);
    assert!(s.a_inf > 0.0);
    cfg.p = 3;
    cfg.delta = 0.2;
    let s = null_control_spec(&cfg).unwrap();
    assert!((s.c_f / 1.6e-5 - 1.0).abs() < 1e-13);
    assert!((s.eps - 0.02).abs() < 1e-16);
}

#[test]
fn power_law_exponent() {
    let x = [0.1, 0.05, 0.025];
    let y: Vec<f64> = x.iter().map(|v| 0.3 * v * v).collect();
    assert!((fitted_exponent(&x, &y) - 2.0).abs() < 1e-12);
}

#[test]
fn golden_constants_are_sane() {
    let g = Calibration::golden();
    assert!(g.k_final > 0.0 && g.k_remainder > 0.0 && g.c_c1 > 0.0 && g.c_virial > 0.0);
    assert!(g.kappa > 0.0 && g.kappa < 1.0);
}

#[test]
fn plan_geometry_and_cost() {
    let cfg = ExperimentConfig::new(Experiment::FreeSoliton).unwrap();
    let spec = gkdv_control::control::ControlSpec::new(2, 1.0, 0.05, cfg.delta0, cfg.gamma0).unwrap();
    let plan = RunPlan::new(&cfg, spec, "x".into(), None).unwrap();
    let r0 = spec.rho0_initial();
    assert!(plan.geom.origin < r0 - 40.0 && plan.geom.origin + plan.geom.length > r0 + plan.t_end + 40.0);
    assert!(plan.geom.n.is_power_of_two());
    assert!((plan.t_end - spec.interaction_time()).abs() < 1e-12);
    let mut small = cfg.clone();
    small.grid_l = Some(204.8);
    let p2 = RunPlan::new(&small, spec, "y".into(), None).unwrap();
    assert_eq!((p2.geom.length, p2.geom.n), (204.8, 2048));
    assert!(projected_seconds(&plan, 1e-9) > projected_seconds(&p2, 1e-9));
    let u0 = plan.initial_state().unwrap();
    assert!((gkdv_control::soliton::mass(&u0.u) - 3.0).abs() < 1e-12);
    assert!(measure_step_cost().unwrap() > 0.0);
}

#[test]
fn free_soliton_library_run_writes_outputs() {
    let mut cfg = ExperimentConfig::new(Experiment::FreeSoliton).unwrap();
    cfg.t_end = Some(3.0);
    let r = run_experiment(&cfg).unwrap();
    assert!(r.passed(), "{:?}", r.claims);
    assert_eq!(r.claims.len(), 3);
    let dir = tempfile::tempdir().unwrap();
    r.write(dir.path()).unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("free_soliton_summary.json")).unwrap()).unwrap();
    assert_eq!(json["experiment"], "free_soliton");
    assert_eq!(json["claims"].as_array().unwrap().len(), 3);
    assert!(dir.path().join("free_soliton_p2_eps0.05.csv").exists());
}

#[test]
fn residual_scaling_needs_a_sweep() {
    let mut cfg = ExperimentConfig::new(Experiment::ResidualScaling).unwrap();
    cfg.eps = vec![0.05];
    assert!(run_experiment(&cfg).is_err());
}

fn lab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gkdv-lab")).args(args).output().unwrap()
}

fn run_free(out: &Path, extra: &[&str]) -> std::process::Output {
    let mut a = vec!["--experiment", "free_soliton", "--t-end", "2", "--out", out.to_str().unwrap()];
    a.extend_from_slice(extra);
    lab(&a)
}

#[test]
fn cli_runs_and_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    let o = run_free(&a, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 3);
    assert_eq!(run_free(&b, &[]).status.code(), Some(0));
    let name = "free_soliton_p2_eps0.05.csv";
    let ca = std::fs::read(a.join(name)).unwrap();
    assert_eq!(ca, std::fs::read(b.join(name)).unwrap());
    assert!(a.join("free_soliton_summary.json").exists());
}

#[test]
fn cli_config_file_and_flags() {
    let d = tempfile::tempdir().unwrap();
    let conf = d.path().join("c.toml");
    std::fs::write(&conf, "experiment = \"free_soliton\"\np = 3\nt_end = 1.0\n").unwrap();
    let out = d.path().join("o");
    let o = lab(&["--config", conf.to_str().unwrap(), "--p", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("free_soliton_p4_eps0.05.csv").exists());

    std::fs::write(&conf, "experiment = \"free_soliton\"\nspeed = 1\n").unwrap();
    assert_eq!(lab(&["--config", conf.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(lab(&["--config", d.path().join("missing.toml").to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn cli_usage_errors() {
    assert_eq!(lab(&["--experiment", "free_soliton", "--p", "7"]).status.code(), Some(2));
    assert_eq!(lab(&["--bogus"]).status.code(), Some(2));
    assert_eq!(lab(&["--experiment", "warp"]).status.code(), Some(2));
    assert_eq!(lab(&[]).status.code(), Some(2));
    assert_eq!(lab(&["--experiment", "accelerate", "--eps", "0.3"]).status.code(), Some(2));
    let h = lab(&["--help"]);
    assert_eq!(h.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&h.stdout).contains("--experiment"));
}
