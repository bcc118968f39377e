//! Command-line entry points.
//!
//! Exit codes: 0 success, 1 internal failure or violated verification check,
//! 2 invalid configuration or input, 3 non-positive density, 4 moment solve
//! not converged, 5 density floor breached during evolution.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::equilibrium::convergence_experiment;
use crate::error::Error;
use crate::evolution::evolve;
use crate::io::{
    density_csv, potential_csv, read_density_csv, trajectory_csv, write_json, write_state, write_text,
    IoError, IoResult, RunConfig,
};
use crate::moment::{estimate_report, MomentSolver};
use crate::spectral::SpectralSpace;
use crate::verification::{failed_assertions, run_suite};

#[derive(Debug, Parser)]
#[command(name = "qlbgk", version, about = "Quantum Liouville-BGK spectral simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Recover the Maxwellian potential from a local density.
    SolveMoment {
        #[arg(long)]
        config: PathBuf,
        /// Two-column `x,n` CSV; overrides `density_file` in the config.
        #[arg(long)]
        density: Option<PathBuf>,
    },
    /// Integrate the BGK equation and write the trajectory.
    Evolve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run toward the Gibbs state and classify the outcome.
    Equilibrium {
        #[arg(long)]
        config: PathBuf,
    },
    /// Randomized inequality checks, written as JSON lines.
    Verify {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value_t = 6)]
        modes: usize,
        #[arg(long, default_value_t = 10.0)]
        temperature: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Debug, Serialize)]
struct ErrorReport {
    error: &'static str,
    message: String,
    exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
}

fn classify(err: &IoError) -> ErrorReport {
    let (error, exit_code, t) = match err {
        IoError::Config(_) => ("invalid_config", 2, None),
        IoError::File { .. } | IoError::Format { .. } => ("invalid_input", 2, None),
        IoError::NonPositiveDensity { .. } => ("non_positive_density", 3, None),
        IoError::Core(e) => match e {
            Error::DensityNotBoundedBelow(_) | Error::SingularDensity(_) => ("non_positive_density", 3, None),
            Error::NotConverged { .. } => ("not_converged", 4, None),
            Error::DensityFloor { t, .. } => ("density_floor", 5, Some(*t)),
            Error::InvalidSpace(_)
            | Error::InvalidParameter(_)
            | Error::InitialState(_)
            | Error::SizeMismatch { .. }
            | Error::NotHermitian(_)
            | Error::NotReal(_)
            | Error::NonFinite
            | Error::NotPositive(_) => ("invalid_input", 2, None),
            Error::EigenFailure | Error::RelativeEntropyUndefined(_) | Error::TraceMismatch(..) => {
                ("numerical_failure", 1, None)
            }
        },
    };
    ErrorReport {
        error,
        message: err.to_string(),
        exit_code,
        t,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut out_dir = None;
    match dispatch(cli.command, &mut out_dir) {
        Ok(code) => code,
        Err(err) => {
            let report = classify(&err);
            let json = serde_json::to_string(&report).expect("plain data serializes");
            eprintln!("{json}");
            if let Some(dir) = out_dir {
                let _ = write_json(&dir.join("error.json"), &report);
            }
            report.exit_code
        }
    }
}

fn dispatch(cmd: Command, out_dir: &mut Option<PathBuf>) -> IoResult<i32> {
    match cmd {
        Command::SolveMoment { config, density } => {
            let cfg = RunConfig::load(&config)?;
            *out_dir = Some(cfg.output_path());
            solve_moment_cmd(&cfg, density.as_deref())
        }
        Command::Evolve { config } => {
            let cfg = RunConfig::load(&config)?;
            *out_dir = Some(cfg.output_path());
            evolve_cmd(&cfg)
        }
        Command::Equilibrium { config } => {
            let cfg = RunConfig::load(&config)?;
            *out_dir = Some(cfg.output_path());
            equilibrium_cmd(&cfg)
        }
        Command::Verify {
            seed,
            samples,
            modes,
            temperature,
            out,
        } => {
            *out_dir = Some(out.clone());
            verify_cmd(seed, samples, modes, temperature, &out)
        }
    }
}

fn solve_moment_cmd(cfg: &RunConfig, density: Option<&Path>) -> IoResult<i32> {
    let space = cfg.space()?;
    let path = match (density, &cfg.density_file) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => cfg.resolve(p),
        (None, None) => {
            return Err(IoError::Config("no density given: pass --density or set density_file".into()))
        }
    };
    let n = read_density_csv(&path, space)?;
    let sol = MomentSolver::new(space, cfg.solve_options()).solve(&n)?;
    let report = estimate_report(&n, &sol)?;
    let out = cfg.output_path();
    write_text(&out.join("potential.csv"), &potential_csv(&sol.potential))?;
    write_state(&out.join("maxwellian.json"), sol.maxwellian.op())?;
    write_json(&out.join("estimate_report.json"), &report)?;
    if !sol.converged {
        return Err(Error::NotConverged {
            residual: sol.residual,
            iterations: sol.iterations,
        }
        .into());
    }
    println!(
        "solve-moment: converged in {} iterations, residual {:.3e}",
        sol.iterations, sol.residual
    );
    Ok(0)
}

fn evolve_cmd(cfg: &RunConfig) -> IoResult<i32> {
    let rho0 = cfg.initial_state()?;
    let ecfg = cfg.evolution()?;
    let steps = ecfg.validate()?;
    println!("evolve: {steps} steps of dt = {} with {:?}", ecfg.dt, ecfg.scheme);
    let traj = evolve(&rho0, &ecfg)?;
    let out = cfg.output_path();
    write_text(&out.join("trajectory.csv"), &trajectory_csv(&traj.rows))?;
    if !traj.snapshots.is_empty() {
        let mut index = String::from("index,t,file\n");
        for (i, (t, rho)) in traj.snapshots.iter().enumerate() {
            let name = format!("snapshot_{i:06}.json");
            write_state(&out.join("snapshots").join(&name), rho.op())?;
            index.push_str(&format!("{i},{},{name}\n", crate::io::fmt_f64(*t)));
        }
        write_text(&out.join("snapshots").join("index.csv"), &index)?;
    }
    write_state(&out.join("final_state.json"), traj.final_state.op())?;
    write_text(&out.join("final_density.csv"), &density_csv(&traj.final_state.local_density()))?;
    let last = traj.rows.last().expect("trajectory has a first row");
    println!(
        "evolve: t = {}, free energy {:.10e}, dist_J1 to Gibbs {:.3e}",
        last.t, last.free_energy, last.dist_j1_gibbs
    );
    Ok(0)
}

fn equilibrium_cmd(cfg: &RunConfig) -> IoResult<i32> {
    let rho0 = cfg.initial_state()?;
    let ecfg = cfg.evolution()?;
    let (traj, mut verdict) = convergence_experiment(&rho0, &ecfg, cfg.convergence_target)?;
    if !cfg.record_runtime {
        verdict.runtime_s = None;
    }
    let out = cfg.output_path();
    write_json(&out.join("verdict.json"), &verdict)?;
    write_text(&out.join("trajectory.csv"), &trajectory_csv(&traj.rows))?;
    println!(
        "equilibrium: {} (dist_J1 {:.3e}, target {:.1e}, monotone tail {})",
        if verdict.pass { "PASS" } else { "FAIL" },
        verdict.dist_j1_final,
        verdict.target,
        verdict.monotone_tail
    );
    Ok(0)
}

fn verify_cmd(seed: u64, samples: usize, modes: usize, temperature: f64, out: &Path) -> IoResult<i32> {
    let space = SpectralSpace::new(modes, temperature).map_err(|e| IoError::Config(e.to_string()))?;
    let results = run_suite(seed, samples, space)?;
    let mut lines = String::new();
    for r in &results {
        lines.push_str(&serde_json::to_string(r).expect("plain data serializes"));
        lines.push('\n');
        let status = match (r.asserted, r.violations) {
            (true, 0) => "ok",
            (true, _) => "VIOLATED",
            (false, _) => "reported",
        };
        println!("{:<22} {status:<9} samples {:>4}  violations {}", r.name, r.samples, r.violations);
    }
    write_text(&out.join("report.jsonl"), &lines)?;
    let failed = failed_assertions(&results);
    println!("verify: {} checks, {failed} with violations", results.len());
    Ok(if failed == 0 { 0 } else { 1 })
}
