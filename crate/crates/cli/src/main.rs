//! `gpc-calib`: run the propagation, Monte Carlo, convergence and calibration
//! studies and write their artifacts under the output directory.
//!
//! Exit status: 0 on success, 1 for usage and configuration errors, 2 when a
//! run fails.

use std::error::Error as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gpc_calib::harness::{
    gpc_propagate, mc_propagate, run_convergence_study, run_experiment, write_convergence,
    write_experiment, write_monte_carlo, write_propagation, write_summary, RunConfig, Scenario,
};
use gpc_calib::Error;

#[derive(Debug, Parser)]
#[command(
    name = "gpc-calib",
    version,
    about = "Chaos-based Bayesian calibration of a quasi-1D nozzle flow"
)]
struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `GPC_CALIB_OUT_DIR` and the configured output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for Monte Carlo samples and convergence cells.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// 10⁵ retained MCMC draws after 10⁴ burn-in and 10⁴ Monte Carlo samples.
    #[arg(long, global = true)]
    full_scale: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stochastic Galerkin propagation of the prior area.
    Propagate,
    /// Monte Carlo propagation of the prior area.
    McBaseline,
    /// Galerkin error and cost over the configured mode counts and orders.
    Convergence,
    /// One calibration scenario: baseline, prior-sensitivity, model-error or data-error.
    Calibrate { scenario: String },
    /// Cross-scenario summary of the calibration reports in the output directory.
    Report,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Usage(chain(&e))
        } else {
            Failure::Run(e)
        }
    }
}

fn chain(e: &Error) -> String {
    let mut msg = e.to_string();
    let mut src = e.source();
    while let Some(s) = src {
        let s_msg = s.to_string();
        if !msg.contains(&s_msg) {
            msg.push_str(": ");
            msg.push_str(&s_msg);
        }
        src = s.source();
    }
    msg
}

fn load(cli: &Cli) -> Result<(RunConfig, PathBuf), Failure> {
    // An unreadable or malformed config file is a usage error.
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Usage(chain(&e)))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.full_scale {
        cfg = cfg.full_scale();
    }
    cfg.validate()?;
    let out = cli
        .out_dir
        .clone()
        .unwrap_or_else(|| cfg.resolved_out_dir());
    Ok((cfg, out))
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot size the thread pool: {e}")))?;
    }
    let scenario = match &cli.command {
        Command::Calibrate { scenario } => Some(scenario.parse::<Scenario>()?),
        _ => None,
    };
    let (cfg, out) = load(cli)?;
    let hash = cfg.hash();
    let paths = match &cli.command {
        Command::Propagate => {
            let prop = gpc_propagate(&cfg, cfg.kl.n_modes, cfg.order)?;
            write_propagation(&out.join("propagate"), &prop, &hash)?
        }
        Command::McBaseline => {
            let mc = mc_propagate(&cfg, cfg.mc_samples, cfg.kl.n_modes)?;
            if mc.failures > 0 {
                eprintln!(
                    "warning: {} of {} flow solves failed",
                    mc.failures, mc.requested
                );
            }
            write_monte_carlo(&out.join("mc"), &mc, &hash)?
        }
        Command::Convergence => {
            let c = &cfg.convergence;
            let (rows, reference) =
                run_convergence_study(&cfg, &c.n_modes, &c.orders, c.mc_samples)?;
            write_convergence(&out.join("convergence"), &rows, &reference, &hash)?
        }
        Command::Calibrate { .. } => {
            let scenario = scenario.expect("parsed above");
            let outcome = run_experiment(&cfg, scenario)?;
            for run in &outcome.report.runs {
                if run.stalled_windows > 0 {
                    eprintln!(
                        "warning: {}: {} burn-in windows without an accepted proposal",
                        run.label, run.stalled_windows
                    );
                }
            }
            write_experiment(&calibrate_dir(&out, scenario), &outcome)?
        }
        Command::Report => write_summary(&out, &hash)?,
    };
    report(&paths);
    Ok(())
}

fn calibrate_dir(out: &Path, scenario: Scenario) -> PathBuf {
    out.join("calibrate").join(scenario.name())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {}", chain(&e));
            ExitCode::from(2)
        }
    }
}
