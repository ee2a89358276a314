//! Experiment orchestration: the `L_F` sweep, rate and exponent regression,
//! Lyapunov certification and the compression audits.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accel::{self, ChebyshevOperator, MultiConsensus};
use crate::adom::{self, contraction_rate, lemma_excess, step, AdomParams, AdomState, Lyapunov, RunOptions, Trace};
use crate::error::{invalid, Error, Result};
use crate::graphs::{GossipSequence, GossipSource};
use crate::linalg;
use crate::problems::{
    generate_constraints, ConstraintOperator, DualGradOracle, DualProblem, OracleMode, ProblemConfig, QuadraticProblem,
};

/// Errors below this multiple of the solution norm are treated as floating-point floor.
pub const FIT_FLOOR_REL: f64 = 1e-12;
/// Slack on the Chebyshev and multi-consensus condition bounds.
pub const COMPRESSION_SLACK: f64 = 1e-9;

/// Outer communication graphs of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphFamily {
    RandomRing,
    StarCycle,
}

mod oracle_str {
    use super::OracleMode;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &OracleMode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&m.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<OracleMode, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// One sweep, as a JSON document. Missing fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub p: usize,
    pub n: usize,
    #[serde(rename = "chi_A")]
    pub chi_a: f64,
    #[serde(rename = "mu_F")]
    pub mu_f: f64,
    #[serde(rename = "L_F_grid")]
    pub lf_grid: Vec<f64>,
    #[serde(rename = "N")]
    pub iters: usize,
    pub seed: u64,
    #[serde(with = "oracle_str")]
    pub oracle: OracleMode,
    pub graph: GraphFamily,
    pub chebyshev: bool,
    pub multi_consensus: bool,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            d: 20,
            p: 10,
            n: 10,
            chi_a: 20.0,
            mu_f: 1.0,
            lf_grid: vec![2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0],
            iters: 2500,
            seed: 0,
            oracle: OracleMode::Inexact { inner_steps: 10 },
            graph: GraphFamily::RandomRing,
            chebyshev: false,
            multi_consensus: false,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters < 4 {
            return Err(invalid(format!("N must be at least 4, got {}", self.iters)));
        }
        if self.lf_grid.is_empty() {
            return Err(invalid("L_F grid is empty"));
        }
        if !(self.mu_f > 0.0) || !self.mu_f.is_finite() {
            return Err(invalid(format!("mu_F must be positive, got {}", self.mu_f)));
        }
        for &l in &self.lf_grid {
            if !(l >= self.mu_f) || !l.is_finite() {
                return Err(invalid(format!("L_F = {l} must be finite and >= mu_F = {}", self.mu_f)));
            }
        }
        if self.p > 0 && !(self.chi_a >= 1.0) {
            return Err(invalid(format!("chi_A must be >= 1, got {}", self.chi_a)));
        }
        if self.p > self.d {
            return Err(invalid(format!("p = {} exceeds d = {}", self.p, self.d)));
        }
        Ok(())
    }

    pub fn problem_config(&self, l_f: f64) -> ProblemConfig {
        ProblemConfig { n: self.n, d: self.d, p: self.p, chi_a: self.chi_a, mu_f: self.mu_f, l_f, seed: self.seed }
    }
}

/// Ordinary least-squares line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub stderr_slope: f64,
    pub r_squared: f64,
}

/// OLS of `y` on `x`; at least two points with distinct abscissae.
pub fn ols(x: &[f64], y: &[f64]) -> Result<FitResult> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    let n = x.len();
    if n < 2 {
        return Err(invalid(format!("regression needs at least 2 points, got {n}")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("all abscissae coincide".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum::<f64>().max(0.0);
    let stderr_slope = if n > 2 { (ssr / (nf - 2.0) / sxx).sqrt() } else { 0.0 };
    let r_squared = if syy > 0.0 { (1.0 - ssr / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(FitResult { slope, intercept, stderr_slope, r_squared })
}

/// Indices of the last `⌈N/2⌉` records, cut at the first error that is not above `floor`.
fn fit_window(errors: &[f64], floor: f64) -> std::ops::Range<usize> {
    let n = errors.len();
    let start = n - n.div_ceil(2);
    let end = (start..n).find(|&i| !(errors[i] > floor) || !errors[i].is_finite()).unwrap_or(n);
    start..end
}

/// Log-linear fit of `err` against `k` over the last half; the rate is `κ = -slope`.
pub fn fit_rate(trace: &Trace) -> Result<FitResult> {
    fit_rate_above(trace, 0.0)
}

/// As [`fit_rate`], with the window also cut where `err ≤ floor`.
pub fn fit_rate_above(trace: &Trace, floor: f64) -> Result<FitResult> {
    if trace.records.len() < 4 {
        return Err(invalid(format!("rate fit needs at least 4 records, got {}", trace.records.len())));
    }
    let errors = trace.errors();
    let w = fit_window(&errors, floor);
    if w.len() < 2 {
        return Err(Error::BelowFloor(format!(
            "only {} records above the precision floor {floor:.3e} in the last half",
            w.len()
        )));
    }
    let ks: Vec<f64> = trace.records[w.clone()].iter().map(|r| r.k as f64).collect();
    let ln: Vec<f64> = errors[w].iter().map(|e| e.ln()).collect();
    ols(&ks, &ln)
}

/// Precision floor of a trace whose errors are measured against a solution of norm `scale`.
pub fn precision_floor(scale: f64) -> f64 {
    FIT_FLOOR_REL * scale
}

/// Power-law fit `κ ∝ (L_F/μ_F)^{-ν}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub nu: f64,
    pub nu_stderr: f64,
    pub fit: FitResult,
    pub dropped: usize,
}

/// OLS of `ln κ` on `ln(L_F/μ_F)` over pairs `(L_F/μ_F, κ)`; `ν = |slope|`.
pub fn fit_exponent(pairs: &[(f64, f64)]) -> Result<ExponentFit> {
    let kept: Vec<(f64, f64)> = pairs.iter().copied().filter(|&(r, k)| r > 0.0 && k > 0.0).collect();
    let dropped = pairs.len() - kept.len();
    if dropped > 0 {
        warn!("dropping {dropped} pair(s) with non-positive entries from the exponent fit");
    }
    if kept.len() < 3 {
        return Err(invalid(format!("exponent fit needs at least 3 positive pairs, got {}", kept.len())));
    }
    let x: Vec<f64> = kept.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = kept.iter().map(|p| p.1.ln()).collect();
    let fit = ols(&x, &y)?;
    Ok(ExponentFit { nu: fit.slope.abs(), nu_stderr: fit.stderr_slope, fit, dropped })
}

/// Outcome of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(rename = "L_F")]
    pub l_f: f64,
    pub seed: u64,
    pub csv: Option<String>,
    pub kappa: Option<f64>,
    pub fit: Option<FitResult>,
    pub final_error: Option<f64>,
    pub comms: u64,
    pub mults: u64,
    pub error: Option<String>,
}

/// Summary of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub runs: Vec<RunReport>,
    pub nu: Option<f64>,
    pub nu_stderr: Option<f64>,
    pub nu_fit: Option<FitResult>,
    pub nu_unavailable: Option<String>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn run_file_name(l_f: f64, seed: u64) -> String {
    format!("run_LF{l_f}_seed{seed}.csv")
}

/// Parses `run_LF<value>_seed<value>.csv`.
pub fn parse_run_file_name(name: &str) -> Option<(f64, u64)> {
    let rest = name.strip_prefix("run_LF")?.strip_suffix(".csv")?;
    let (lf, seed) = rest.split_once("_seed")?;
    Some((lf.parse().ok()?, seed.parse().ok()?))
}

fn gossip_for(cfg: &ExperimentConfig) -> Result<Arc<dyn GossipSequence>> {
    let source = match cfg.graph {
        GraphFamily::RandomRing => GossipSource::random_ring(cfg.n, cfg.seed)?,
        GraphFamily::StarCycle => GossipSource::star_cycle(cfg.n)?,
    };
    Ok(if cfg.multi_consensus {
        Arc::new(MultiConsensus::new(Arc::new(source.normalized()))?)
    } else {
        Arc::new(source)
    })
}

/// Dual problem of one sweep point with the acceleration toggles applied.
pub fn build_dual(cfg: &ExperimentConfig, l_f: f64) -> Result<DualProblem> {
    let prob = QuadraticProblem::generate(&cfg.problem_config(l_f))?;
    let gossip = gossip_for(cfg)?;
    if cfg.chebyshev && prob.p() > 0 {
        let tc = accel::transform_constraints(&prob.a, &prob.b, None)?;
        let op: Arc<dyn ConstraintOperator> = Arc::new(tc.operator);
        DualProblem::with_constraint(prob, gossip, op, tc.rhs)
    } else {
        DualProblem::new(prob, gossip)
    }
}

/// Runs the method on one sweep point; also returns the precision floor of its errors.
pub fn run_point(cfg: &ExperimentConfig, l_f: f64) -> Result<(Trace, f64)> {
    let dp = build_dual(cfg, l_f)?;
    let params = AdomParams::for_problem(&dp)?;
    let trace = adom::run(&dp, &params, cfg.oracle, cfg.iters, RunOptions::default())?;
    Ok((trace, precision_floor(dp.x_star_lifted().norm())))
}

fn report_for(cfg: &ExperimentConfig, l_f: f64, out: Option<&Path>) -> RunReport {
    let mut rep = RunReport {
        l_f,
        seed: cfg.seed,
        csv: None,
        kappa: None,
        fit: None,
        final_error: None,
        comms: 0,
        mults: 0,
        error: None,
    };
    let (trace, floor) = match run_point(cfg, l_f) {
        Ok(t) => t,
        Err(e) => {
            warn!("run L_F = {l_f} failed: {e}");
            rep.error = Some(e.to_string());
            return rep;
        }
    };
    if let Some(last) = trace.records.last() {
        rep.final_error = Some(last.err);
        rep.comms = last.comms;
        rep.mults = last.mults;
    }
    if let Some(dir) = out {
        let name = run_file_name(l_f, cfg.seed);
        match fs::write(dir.join(&name), trace.to_csv()) {
            Ok(()) => rep.csv = Some(name),
            Err(e) => rep.error = Some(format!("writing {name}: {e}")),
        }
    }
    match fit_rate_above(&trace, floor) {
        Ok(fit) => {
            rep.kappa = Some(-fit.slope);
            rep.fit = Some(fit);
        }
        Err(e) => rep.error = rep.error.take().or(Some(e.to_string())),
    }
    rep
}

fn summarize(config: ExperimentConfig, runs: Vec<RunReport>) -> ExperimentReport {
    let pairs: Vec<(f64, f64)> = runs.iter().filter_map(|r| r.kappa.map(|k| (r.l_f / config.mu_f, k))).collect();
    let (nu, nu_stderr, nu_fit, nu_unavailable) = match fit_exponent(&pairs) {
        Ok(e) => (Some(e.nu), Some(e.nu_stderr), Some(e.fit), None),
        Err(e) => (None, None, None, Some(e.to_string())),
    };
    ExperimentReport { config, runs, nu, nu_stderr, nu_fit, nu_unavailable }
}

/// Sweeps the `L_F` grid in parallel; per-run failures are recorded, not fatal.
///
/// With an output directory, writes one trace CSV per run and `summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
    }
    let out = cfg.out.as_deref();
    let runs: Vec<RunReport> = cfg.lf_grid.par_iter().map(|&l_f| report_for(cfg, l_f, out)).collect();
    for r in &runs {
        info!("L_F = {}: kappa = {:?}, final error = {:?}", r.l_f, r.kappa, r.final_error);
    }
    let report = summarize(cfg.clone(), runs);
    if let Some(dir) = out {
        fs::write(dir.join("summary.json"), report.to_json()?)?;
    }
    Ok(report)
}

/// Re-fits every `run_LF*_seed*.csv` trace in `dir`.
pub fn fit_directory(dir: &Path, mu_f: f64) -> Result<ExperimentReport> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some((l_f, seed)) = parse_run_file_name(&name) {
            found.push((l_f, seed, name, entry.path()));
        }
    }
    if found.is_empty() {
        return Err(invalid(format!("no run_LF*_seed*.csv traces in {}", dir.display())));
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut runs = Vec::with_capacity(found.len());
    for (l_f, seed, name, path) in found {
        let trace = Trace::from_csv(&fs::read_to_string(&path)?)?;
        let last = trace.records.last();
        // the first error is within a step of ‖x*‖ since runs start from zero
        let floor = precision_floor(trace.records.first().map_or(0.0, |r| r.err));
        let (kappa, fit, error) = match fit_rate_above(&trace, floor) {
            Ok(f) => (Some(-f.slope), Some(f), None),
            Err(e) => (None, None, Some(e.to_string())),
        };
        runs.push(RunReport {
            l_f,
            seed,
            csv: Some(name),
            kappa,
            fit,
            final_error: last.map(|r| r.err),
            comms: last.map_or(0, |r| r.comms),
            mults: last.map_or(0, |r| r.mults),
            error,
        });
    }
    let config = ExperimentConfig {
        mu_f,
        lf_grid: runs.iter().map(|r| r.l_f).collect(),
        out: Some(dir.to_path_buf()),
        ..ExperimentConfig::default()
    };
    Ok(summarize(config, runs))
}

/// Small instance for the lemma suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyConfig {
    pub n: usize,
    pub d: usize,
    pub p: usize,
    #[serde(rename = "chi_A")]
    pub chi_a: f64,
    #[serde(rename = "mu_F")]
    pub mu_f: f64,
    #[serde(rename = "L_F")]
    pub l_f: f64,
    pub seed: u64,
    pub iters: usize,
    /// Multiplier applied to the scheduled `θ`.
    pub theta_scale: f64,
    /// Multiplier applied to the scheduled `τ`.
    pub tau_scale: f64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self { n: 5, d: 4, p: 2, chi_a: 4.0, mu_f: 1.0, l_f: 10.0, seed: 0, iters: 500, theta_scale: 1.0, tau_scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Checks failed but the parameters are outside the theorem's hypotheses.
    OutsideTheoremHypotheses,
}

/// First failing check of a certification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaFailure {
    pub iteration: u64,
    pub lemma: String,
    pub excess: f64,
}

/// Result of the lemma suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub config: CertifyConfig,
    pub params: AdomParams,
    pub rho: f64,
    pub within_hypotheses: bool,
    pub iterations: usize,
    /// Largest excess of each check, relative to its own slack; non-positive means it held.
    pub max_descent_excess: f64,
    pub max_error_feedback_excess: f64,
    pub max_contraction_excess: f64,
    pub worst_psi_ratio: Option<f64>,
    pub violations: usize,
    pub first_failure: Option<LemmaFailure>,
    pub verdict: Verdict,
}

/// Runs the exact-oracle method on a small instance and checks the descent,
/// error-feedback and contraction inequalities every iteration.
///
/// A scaled `θ` or `σ` outside the step-size conditions is rejected before the run.
pub fn lyapunov_certify(cfg: &CertifyConfig) -> Result<CertifyReport> {
    if cfg.iters == 0 {
        return Err(invalid("iteration count must be at least 1"));
    }
    let prob = QuadraticProblem::generate(&ProblemConfig {
        n: cfg.n,
        d: cfg.d,
        p: cfg.p,
        chi_a: cfg.chi_a,
        mu_f: cfg.mu_f,
        l_f: cfg.l_f,
        seed: cfg.seed,
    })?;
    let dp = DualProblem::new(prob, Arc::new(GossipSource::random_ring(cfg.n, cfg.seed)?))?;
    let base = AdomParams::for_problem(&dp)?;
    let params = AdomParams::new(base.alpha, base.eta, base.theta * cfg.theta_scale, base.sigma, base.tau * cfg.tau_scale)?;
    params.check_hypotheses(dp.l_h(), dp.lam_max())?;
    let within_hypotheses = params == base;
    let rho = contraction_rate(dp.mu_h(), dp.l_h(), dp.lam_min_plus(), dp.lam_max())?;

    let tracker = Lyapunov::new(&dp, &params, dp.dual_optimum()?);
    let mut state = AdomState::zeros(&dp);
    let mut oracle = DualGradOracle::new(OracleMode::Exact, dp.primal_dim());
    let mut before = tracker.terms(&dp, &state);
    let mut max = [f64::NEG_INFINITY; 3];
    let mut worst_psi_ratio: Option<f64> = None;
    let mut violations = 0;
    let mut first_failure = None;
    for _ in 0..cfg.iters {
        let m_before = state.m.clone();
        let info = step(&mut state, &params, &dp, &mut oracle)?;
        let after = tracker.terms(&dp, &state);
        let ex = lemma_excess(&dp, &params, rho, &info, &m_before, &state, &before, &after);
        let named = [("descent", ex.descent), ("error_feedback", ex.error_feedback), ("contraction", ex.contraction)];
        for (slot, (_, v)) in max.iter_mut().zip(named) {
            *slot = slot.max(v);
        }
        if ex.violated() {
            violations += 1;
            if first_failure.is_none() {
                let (lemma, excess) = named.into_iter().find(|(_, v)| *v > 0.0).unwrap_or(("contraction", ex.contraction));
                first_failure = Some(LemmaFailure { iteration: state.k, lemma: lemma.into(), excess });
            }
        }
        if before.value > before.floor && after.value > after.floor {
            let r = after.value / before.value;
            worst_psi_ratio = Some(worst_psi_ratio.map_or(r, |w| w.max(r)));
        }
        before = after;
    }
    let verdict = match (violations, within_hypotheses) {
        (0, _) => Verdict::Pass,
        (_, true) => Verdict::Fail,
        (_, false) => Verdict::OutsideTheoremHypotheses,
    };
    Ok(CertifyReport {
        config: *cfg,
        params,
        rho,
        within_hypotheses,
        iterations: cfg.iters,
        max_descent_excess: max[0],
        max_error_feedback_excess: max[1],
        max_contraction_excess: max[2],
        worst_psi_ratio,
        violations,
        first_failure,
        verdict,
    })
}

/// One row of the Chebyshev audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevAudit {
    pub chi_a: f64,
    pub seed: u64,
    pub degree: usize,
    pub condition_before: f64,
    pub condition_after: f64,
    pub pass: bool,
}

/// One row of the multi-consensus audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusAudit {
    pub chi: f64,
    pub seed: u64,
    pub rounds: usize,
    pub lambda_min_plus: f64,
    pub lambda_max: f64,
    pub pass: bool,
}

/// Audit of both compression schemes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub chebyshev: Vec<ChebyshevAudit>,
    pub multi_consensus: Vec<ConsensusAudit>,
}

impl CompressionReport {
    pub fn passed(&self) -> bool {
        self.chebyshev.iter().all(|r| r.pass) && self.multi_consensus.iter().all(|r| r.pass)
    }
}

/// Settings of the compression audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChebCheckConfig {
    pub p: usize,
    pub d: usize,
    #[serde(rename = "chi_A")]
    pub chi_a: Vec<f64>,
    pub seeds: u64,
    /// Node count of the synthetic gossip matrices.
    pub n: usize,
    pub chi_w_range: (f64, f64),
}

impl Default for ChebCheckConfig {
    fn default() -> Self {
        Self { p: 10, d: 20, chi_a: vec![4.0, 20.0, 100.0, 1000.0], seeds: 20, n: 10, chi_w_range: (2.0, 50.0) }
    }
}

/// `condition_of(P(AᵀA))` for one seeded constraint matrix.
pub fn chebyshev_audit(p: usize, d: usize, chi_a: f64, seed: u64) -> Result<ChebyshevAudit> {
    let a = generate_constraints(p, d, chi_a, seed)?.a;
    let gram = a.transpose() * &a;
    let op = ChebyshevOperator::for_matrix(&a)?;
    let pm = ConstraintOperator::to_dense(&op);
    let pm = (&pm + pm.transpose()) * 0.5;
    let condition_before = accel::condition_of(&((&gram + gram.transpose()) * 0.5))?;
    let condition_after = accel::condition_of(&pm)?;
    Ok(ChebyshevAudit {
        chi_a,
        seed,
        degree: op.degree(),
        condition_before,
        condition_after,
        pass: condition_after <= 4.0 + COMPRESSION_SLACK,
    })
}

/// Normalized gossip matrix on `n` nodes with kernel `span(1)` and positive spectrum in `[1/χ, 1]`,
/// both endpoints attained.
pub fn synthetic_gossip<R: Rng + ?Sized>(n: usize, chi: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    if n < 3 || !(chi >= 1.0) {
        return Err(invalid(format!("need n >= 3 and chi >= 1, got {n} and {chi}")));
    }
    let mut basis = linalg::random_orthogonal(n, rng);
    let ones = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    basis.set_column(0, &ones);
    let q = basis.qr().q();
    let mut values = vec![0.0; n];
    values[1] = 1.0 / chi;
    values[2] = 1.0;
    for v in values.iter_mut().skip(3) {
        *v = (rng.random_range(0.0..1.0) * chi.ln()).exp() / chi;
    }
    let w = &q * DMatrix::from_diagonal(&DVector::from_vec(values)) * q.transpose();
    Ok((&w + w.transpose()) * 0.5)
}

/// Non-consensus spectrum of `D(W)` for one seeded gossip matrix.
pub fn consensus_audit(n: usize, chi_range: (f64, f64), seed: u64) -> Result<ConsensusAudit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chi = rng.random_range(chi_range.0..=chi_range.1);
    let w = synthetic_gossip(n, chi, &mut rng)?;
    let s = linalg::spectrum(&w)?;
    let measured = s.lambda_max / s.lambda_min_plus.ok_or(Error::RankZero)?;
    let rounds = accel::multi_consensus_rounds(measured)?;
    let d = accel::multi_consensus_matrix(&w, rounds);
    let ds = linalg::spectrum(&((&d + d.transpose()) * 0.5))?;
    let lo = ds.lambda_min_plus.ok_or(Error::RankZero)?;
    let pass = ds.kernel_dim() == 1 && lo >= 0.5 - COMPRESSION_SLACK && ds.lambda_max <= 1.0 + COMPRESSION_SLACK;
    Ok(ConsensusAudit { chi, seed, rounds, lambda_min_plus: lo, lambda_max: ds.lambda_max, pass })
}

pub fn cheb_check(cfg: &ChebCheckConfig) -> Result<CompressionReport> {
    let mut chebyshev = Vec::new();
    for &chi in &cfg.chi_a {
        for seed in 0..cfg.seeds {
            chebyshev.push(chebyshev_audit(cfg.p, cfg.d, chi, seed)?);
        }
    }
    let multi_consensus = (0..cfg.seeds).map(|s| consensus_audit(cfg.n, cfg.chi_w_range, s)).collect::<Result<_>>()?;
    Ok(CompressionReport { chebyshev, multi_consensus })
}
