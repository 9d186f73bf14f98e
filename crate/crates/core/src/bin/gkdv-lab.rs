use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use gkdv_control::harness::{self, ConfigOverrides, Experiment};

/// Controlled gKdV soliton experiments.
#[derive(Debug, Parser)]
#[command(name = "gkdv-lab", version)]
struct Cli {
    /// accelerate, null_control, stabilize, residual_scaling or free_soliton.
    #[arg(long)]
    experiment: Option<String>,
    /// TOML file with the same keys as the flags (flags win).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    p: Option<u32>,
    #[arg(long)]
    cf: Option<f64>,
    /// Repeat for a sweep, largest first.
    #[arg(long)]
    eps: Vec<f64>,
    #[arg(long)]
    delta0: Option<f64>,
    #[arg(long)]
    gamma0: Option<f64>,
    /// Target H1 size for null_control and stabilize.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    grid_n: Option<usize>,
    #[arg(long)]
    grid_l: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Measure the sweep constants on the acceleration sweep and write calibration.json.
    #[arg(long)]
    calibrate: bool,
    #[arg(long)]
    budget_seconds: Option<f64>,
}

impl Cli {
    fn overrides(&self) -> Result<ConfigOverrides, String> {
        let experiment = match &self.experiment {
            Some(s) => Some(s.parse::<Experiment>().map_err(|e| e.to_string())?),
            None if self.calibrate => Some(Experiment::Accelerate),
            None => None,
        };
        Ok(ConfigOverrides {
            experiment,
            p: self.p,
            cf: self.cf,
            eps: (!self.eps.is_empty()).then(|| self.eps.clone()),
            delta0: self.delta0,
            gamma0: self.gamma0,
            delta: self.delta,
            horizon: None,
            grid_n: self.grid_n,
            grid_l: self.grid_l,
            dt: self.dt,
            t_end: self.t_end,
            out: self.out.clone(),
            budget_seconds: self.budget_seconds,
        })
    }
}

fn usage(msg: &str) -> ExitCode {
    eprintln!("error: {msg}\n\nRun with --help for usage.");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let flags = match cli.overrides() {
        Ok(f) => f,
        Err(e) => return usage(&e),
    };
    let base = match &cli.config {
        Some(path) => match std::fs::read_to_string(path).map_err(|e| e.to_string()).and_then(|t| {
            ConfigOverrides::from_toml(&t).map_err(|e| e.to_string())
        }) {
            Ok(b) => b,
            Err(e) => return usage(&format!("{}: {e}", path.display())),
        },
        None => ConfigOverrides::default(),
    };
    let cfg = match base.merge(flags).resolve() {
        Ok(c) => c,
        Err(e) => return usage(&e.to_string()),
    };

    if cli.calibrate {
        return match harness::calibrate(&cfg) {
            Ok((cal, measures)) => {
                let text = serde_json::to_string_pretty(&serde_json::json!({
                    "calibration": cal,
                    "measures": measures,
                }))
                .expect("serialisable");
                println!("{text}");
                let golden = serde_json::to_string_pretty(&cal).expect("serialisable");
                if let Err(e) = std::fs::create_dir_all(&cfg.out)
                    .and_then(|_| std::fs::write(cfg.out.join("calibration.json"), golden + "\n"))
                {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        };
    }

    let report = match harness::run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {} failed: {e}", cfg.experiment);
            return ExitCode::from(1);
        }
    };
    if let Err(e) = report.write(&cfg.out) {
        eprintln!("error: writing results: {e}");
        return ExitCode::from(1);
    }
    for c in &report.claims {
        println!(
            "{} {}: measured {:.6e} bound {:.6e}{}",
            if c.pass { "PASS" } else { "FAIL" },
            c.claim_tag,
            c.measured,
            c.bound,
            if c.detail.is_empty() { String::new() } else { format!(" ({})", c.detail) }
        );
    }
    for s in &report.skipped {
        println!("SKIP {s}");
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
