//! Command-line harness: sweeps, fits, certification, lower-bound probes and compression audits.
//!
//! Exit codes: 0 success, 1 failed check, 2 configuration error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adom_core::experiment::{
    cheb_check, fit_directory, lyapunov_certify, run_experiment, ChebCheckConfig, CertifyConfig, ExperimentConfig,
    Verdict,
};
use adom_core::lowerbounds::{build_static_instance, build_tv_instance, probe_adom, span_progress, Budget};
use adom_core::problems::OracleMode;
use adom_core::Error;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "adom", version, about = "Dual accelerated decentralized optimization with affine constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl From<Toggle> for bool {
    fn from(t: Toggle) -> bool {
        t == Toggle::On
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InstanceKind {
    Static,
    Tv,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep L_F per the config and fit the rate exponent.
    Run {
        /// JSON config; missing fields take the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated L_F values.
        #[arg(long, value_delimiter = ',')]
        lf_grid: Option<Vec<f64>>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// `exact`, `inexact` or `inexact:<T>`.
        #[arg(long)]
        oracle: Option<String>,
        #[arg(long, value_enum)]
        chebyshev: Option<Toggle>,
        #[arg(long, value_enum)]
        multi_consensus: Option<Toggle>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-fit the traces of a sweep directory.
    Fit {
        dir: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        mu_f: f64,
    },
    /// Run the Lyapunov lemma suite on a small instance with the exact oracle.
    Certify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        theta_scale: Option<f64>,
        #[arg(long)]
        tau_scale: Option<f64>,
    },
    /// Build a worst-case instance, probe the method on it and optionally search span progress.
    Lowerbound {
        #[arg(long, value_enum, default_value = "static")]
        kind: InstanceKind,
        #[arg(long, default_value_t = 37.0)]
        lf: f64,
        #[arg(long, default_value_t = 1.0)]
        mu_f: f64,
        #[arg(long, default_value_t = 3.0)]
        chi_w: f64,
        #[arg(long, default_value_t = 3.0)]
        chi_a: f64,
        #[arg(long, default_value_t = 12)]
        dim: usize,
        /// Iterations of the method probe; 0 skips it.
        #[arg(long, default_value_t = 40)]
        iters: usize,
        /// Span search budget as `computes,comms,mults`.
        #[arg(long, value_delimiter = ',')]
        budget: Option<Vec<usize>>,
        /// Also write the instance JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit Chebyshev and multi-consensus condition compression.
    ChebCheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Comma-separated chi_A values.
        #[arg(long, value_delimiter = ',')]
        chi_a: Option<Vec<f64>>,
    },
}

enum Failure {
    Check(String),
    Config(String),
}

impl Failure {
    fn from_run(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Json(_) | Error::TooLarge(_) | Error::Disconnected => {
                Failure::Config(e.to_string())
            }
            other => Failure::Check(other.to_string()),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))
        }
        None => Ok(T::default()),
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<(), Failure> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Failure::Check(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { config, lf_grid, iters, seed, oracle, chebyshev, multi_consensus, out } => {
            let mut cfg: ExperimentConfig = read_json(config.as_deref())?;
            if let Some(g) = lf_grid {
                cfg.lf_grid = g;
            }
            if let Some(n) = iters {
                cfg.iters = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = oracle {
                cfg.oracle = o.parse::<OracleMode>().map_err(config_err)?;
            }
            if let Some(t) = chebyshev {
                cfg.chebyshev = t.into();
            }
            if let Some(t) = multi_consensus {
                cfg.multi_consensus = t.into();
            }
            if out.is_some() {
                cfg.out = out;
            }
            cfg.validate().map_err(config_err)?;
            let report = run_experiment(&cfg).map_err(Failure::from_run)?;
            print_json(&report)?;
            let failed: Vec<f64> = report.runs.iter().filter(|r| r.error.is_some()).map(|r| r.l_f).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Failure::Check(format!("runs failed for L_F {failed:?}")))
            }
        }
        Command::Fit { dir, mu_f } => {
            if !(mu_f > 0.0) {
                return Err(config_err(format!("mu_F must be positive, got {mu_f}")));
            }
            let report = fit_directory(&dir, mu_f).map_err(Failure::from_run)?;
            print_json(&report)?;
            match report.runs.iter().find(|r| r.error.is_some()) {
                Some(r) => Err(Failure::Check(format!("fit failed for L_F {}: {:?}", r.l_f, r.error))),
                None => Ok(()),
            }
        }
        Command::Certify { config, iters, seed, theta_scale, tau_scale } => {
            let mut cfg: CertifyConfig = read_json(config.as_deref())?;
            if let Some(n) = iters {
                cfg.iters = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = theta_scale {
                cfg.theta_scale = t;
            }
            if let Some(t) = tau_scale {
                cfg.tau_scale = t;
            }
            let report = lyapunov_certify(&cfg).map_err(|e| match e {
                Error::Invariant(_) | Error::InvalidArgument(_) => config_err(e),
                other => Failure::Check(other.to_string()),
            })?;
            print_json(&report)?;
            match report.verdict {
                Verdict::Fail => Err(Failure::Check(format!("lemma check failed: {:?}", report.first_failure))),
                Verdict::OutsideTheoremHypotheses => {
                    eprintln!("checks failed outside the theorem hypotheses: {:?}", report.first_failure);
                    Ok(())
                }
                Verdict::Pass => Ok(()),
            }
        }
        Command::Lowerbound { kind, lf, mu_f, chi_w, chi_a, dim, iters, budget, out } => {
            let inst = match kind {
                InstanceKind::Static => build_static_instance(lf, mu_f, chi_w, chi_a, dim),
                InstanceKind::Tv => build_tv_instance(lf, mu_f, chi_w, chi_a, dim),
            }
            .map_err(config_err)?;
            if let Some(path) = out {
                let doc = inst.to_json().map_err(|e| Failure::Check(e.to_string()))?;
                fs::write(&path, doc).map_err(|e| Failure::Check(format!("{}: {e}", path.display())))?;
            }
            let span = match budget {
                Some(b) => {
                    if b.len() != 3 {
                        return Err(config_err(format!("budget needs computes,comms,mults; got {} values", b.len())));
                    }
                    let budget = Budget { computes: b[0], comms: b[1], mults: b[2] };
                    Some(span_progress(&inst, budget).map_err(Failure::from_run)?)
                }
                None => None,
            };
            let probe = if iters > 0 { Some(probe_adom(&inst, iters).map_err(Failure::from_run)?) } else { None };
            print_json(&json!({
                "n": inst.n(),
                "m": inst.m(),
                "dim": inst.dim,
                "kappa_g": inst.kappa_g,
                "delta_a": inst.delta_a,
                "delta_w": inst.delta_w,
                "span": span,
                "probe": probe,
            }))?;
            match probe {
                Some(p) if p.violations > 0 => {
                    Err(Failure::Check(format!("{} iterations below the span lower bound", p.violations)))
                }
                _ => Ok(()),
            }
        }
        Command::ChebCheck { seeds, chi_a } => {
            let mut cfg = ChebCheckConfig { seeds, ..ChebCheckConfig::default() };
            if let Some(c) = chi_a {
                cfg.chi_a = c;
            }
            let report = cheb_check(&cfg).map_err(Failure::from_run)?;
            print_json(&report)?;
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Check("condition bound exceeded".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
    }
}
