//! The accelerated dual method over a time-varying gossip sequence.
//!
//! One iteration with gossip operator `W = W(k)` and dual gradient `∇H(z_g)`:
//!
//! ```text
//! z_g  = τ z + (1 - τ) z_f
//! Δ    = σ W (m - η ∇H(z_g))
//! m⁺   = m - η ∇H(z_g) - Δ
//! z⁺   = z + ηα (z_g - z) + Δ
//! z_f⁺ = z_g - θ W ∇H(z_g)
//! ```

use std::fmt::Write as _;
use std::time::Instant;

use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::fmt_f64;
use crate::problems::{DualGradOracle, DualProblem, OracleMode};

/// Primal error above which a run is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;
/// Relative slack on the lemma checks.
pub const LEMMA_SLACK: f64 = 1e-9;
/// Relative slack on subspace membership of the iterates.
pub const SUBSPACE_TOL: f64 = 1e-7;

/// Step sizes and momentum of the method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdomParams {
    pub alpha: f64,
    pub eta: f64,
    pub theta: f64,
    pub sigma: f64,
    pub tau: f64,
}

impl AdomParams {
    /// Validated explicit parameters.
    pub fn new(alpha: f64, eta: f64, theta: f64, sigma: f64, tau: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("eta", eta), ("theta", theta), ("sigma", sigma)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(invalid(format!("tau must lie in (0, 1], got {tau}")));
        }
        Ok(Self { alpha, eta, theta, sigma, tau })
    }

    /// The schedule
    /// `α = μ_H/2`, `η = 2λmin⁺/(7λmax√(μ_H L_H))`, `θ = 1/(L_H λmax)`,
    /// `σ = 1/λmax`, `τ = λmin⁺/(7λmax) √(μ_H/L_H)`.
    pub fn default_params(mu_h: f64, l_h: f64, lam_min_plus: f64, lam_max: f64) -> Result<Self> {
        check_constants(mu_h, l_h, lam_min_plus, lam_max)?;
        let ratio = lam_min_plus / lam_max;
        Self::new(
            mu_h / 2.0,
            2.0 * ratio / (7.0 * (mu_h * l_h).sqrt()),
            1.0 / (l_h * lam_max),
            1.0 / lam_max,
            ratio / 7.0 * (mu_h / l_h).sqrt(),
        )
    }

    /// Schedule for a dual problem using its nominal `μ_H`.
    pub fn for_problem(dp: &DualProblem) -> Result<Self> {
        Self::default_params(dp.mu_h(), dp.l_h(), dp.lam_min_plus(), dp.lam_max())
    }

    /// Checks `θ ≤ 1/(L_H λmax)`, `σ ≤ 1/λmax` and `τ < 1`.
    pub fn check_hypotheses(&self, l_h: f64, lam_max: f64) -> Result<()> {
        let tol = 1.0 + 1e-12;
        if self.theta > tol / (l_h * lam_max) {
            return Err(Error::Invariant(format!("theta = {} exceeds 1/(L_H lam_max)", self.theta)));
        }
        if self.sigma > tol / lam_max {
            return Err(Error::Invariant(format!("sigma = {} exceeds 1/lam_max", self.sigma)));
        }
        if !(self.tau < 1.0) {
            return Err(Error::Invariant(format!("tau = {} is not below 1", self.tau)));
        }
        Ok(())
    }
}

fn check_constants(mu_h: f64, l_h: f64, lam_min_plus: f64, lam_max: f64) -> Result<()> {
    if !(mu_h > 0.0 && mu_h <= l_h && l_h.is_finite()) {
        return Err(invalid(format!("need 0 < mu_H <= L_H, got {mu_h} and {l_h}")));
    }
    if !(lam_min_plus > 0.0 && lam_min_plus <= lam_max && lam_max.is_finite()) {
        return Err(invalid(format!("need 0 < lam_min_plus <= lam_max, got {lam_min_plus} and {lam_max}")));
    }
    Ok(())
}

/// `ρ = λmin⁺/(7λmax) √(μ_H/L_H)`.
pub fn contraction_rate(mu_h: f64, l_h: f64, lam_min_plus: f64, lam_max: f64) -> Result<f64> {
    check_constants(mu_h, l_h, lam_min_plus, lam_max)?;
    Ok(lam_min_plus / (7.0 * lam_max) * (mu_h / l_h).sqrt())
}

/// Iterates of the method.
#[derive(Debug, Clone)]
pub struct AdomState {
    pub k: u64,
    pub z: DVector<f64>,
    pub z_f: DVector<f64>,
    pub m: DVector<f64>,
    /// Primal estimate produced at the last extrapolated point.
    pub g: DVector<f64>,
}

impl AdomState {
    /// `z = z_f = m = 0`, `g = 0`.
    pub fn zeros(dp: &DualProblem) -> Self {
        let dim = dp.dim();
        Self {
            k: 0,
            z: DVector::zeros(dim),
            z_f: DVector::zeros(dim),
            m: DVector::zeros(dim),
            g: DVector::zeros(dp.primal_dim()),
        }
    }

    /// `‖g - 1 ⊗ x*‖`.
    pub fn error(&self, dp: &DualProblem) -> f64 {
        (&self.g - dp.x_star_lifted()).norm()
    }
}

/// Quantities produced by one step, kept for the lemma checks.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub z_g: DVector<f64>,
    pub grad: DVector<f64>,
    pub comms: u64,
    pub mults: u64,
}

/// Advances the state by one iteration with gossip index `state.k`.
pub fn step(state: &mut AdomState, p: &AdomParams, dp: &DualProblem, oracle: &mut DualGradOracle) -> Result<StepInfo> {
    let k = state.k;
    let z_g = &state.z * p.tau + &state.z_f * (1.0 - p.tau);
    let (grad, g) = oracle.grad(dp, &z_g)?;
    let mut v = &state.m - &grad * p.eta;
    let (wv, comms) = dp.apply_w(k, &v)?;
    // W m and W ∇H travel in the same exchange
    let (wgrad, _) = dp.apply_w(k, &grad)?;
    let delta = wv * p.sigma;
    v -= &delta;
    state.m = v;
    let z_new = &state.z + (&z_g - &state.z) * (p.eta * p.alpha) + &delta;
    state.z = z_new;
    state.z_f = &z_g - wgrad * p.theta;
    state.g = g;
    state.k += 1;

    let finite = |x: &DVector<f64>| x.iter().all(|v| v.is_finite());
    if !(finite(&state.z) && finite(&state.z_f) && finite(&state.m) && finite(&state.g)) {
        return Err(Error::Divergence { iteration: k as usize, reason: "non-finite iterate".into() });
    }
    let mults = 2 * dp.constraint().mults_per_apply();
    Ok(StepInfo { z_g, grad, comms, mults })
}

/// Projection residuals of the iterates, each relative to `1 + ‖v‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceResiduals {
    pub z_image_p: f64,
    pub z_f_image_p: f64,
    pub z_g_image_p: f64,
    pub z_image_pb: f64,
    pub z_f_image_pb: f64,
    pub m_image_p: f64,
}

impl SubspaceResiduals {
    /// Largest residual among the `image P` memberships that the method preserves.
    pub fn max_image_p(&self) -> f64 {
        self.z_image_p.max(self.z_f_image_p).max(self.z_g_image_p)
    }
}

pub fn subspace_residuals(dp: &DualProblem, state: &AdomState, z_g: &DVector<f64>) -> SubspaceResiduals {
    let rel_p = |v: &DVector<f64>| (v - dp.project_p(v)).norm() / (1.0 + v.norm());
    let rel_pb = |v: &DVector<f64>| (v - dp.project_image_pb(v)).norm() / (1.0 + v.norm());
    SubspaceResiduals {
        z_image_p: rel_p(&state.z),
        z_f_image_p: rel_p(&state.z_f),
        z_g_image_p: rel_p(z_g),
        z_image_pb: rel_pb(&state.z),
        z_f_image_pb: rel_pb(&state.z_f),
        m_image_p: rel_p(&state.m),
    }
}

/// Evaluates the Lyapunov function against a fixed dual optimum.
#[derive(Debug, Clone)]
pub struct Lyapunov {
    z_star: DVector<f64>,
    h_star: f64,
    coef: f64,
}

/// Terms of one Lyapunov evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiTerms {
    pub distance: f64,
    pub gap: f64,
    pub memory: f64,
    pub value: f64,
    /// Floating-point resolution of `value`.
    pub floor: f64,
}

impl Lyapunov {
    pub fn new(dp: &DualProblem, p: &AdomParams, z_star: DVector<f64>) -> Self {
        let h_star = dp.h(&z_star);
        let coef = 2.0 * p.eta * (1.0 - p.eta * p.alpha) / p.tau;
        Self { z_star, h_star, coef }
    }

    pub fn z_star(&self) -> &DVector<f64> {
        &self.z_star
    }

    pub fn h_star(&self) -> f64 {
        self.h_star
    }

    /// `Ψ = ‖Π(ẑ - z*)‖² + (2η(1-ηα)/τ)(H(z_f) - H(z*)) + 6‖m‖²_P` with `ẑ = z + Pm`
    /// and `Π` the projection onto `image PB`.
    pub fn terms(&self, dp: &DualProblem, state: &AdomState) -> PsiTerms {
        let z_hat = &state.z + dp.project_p(&state.m);
        let diff = dp.project_image_pb(&(z_hat - &self.z_star));
        let distance = diff.norm_squared();
        let h_f = dp.h(&state.z_f);
        let gap = self.coef * (h_f - self.h_star);
        let memory = 6.0 * dp.p_norm_sq(&state.m);
        let floor = 64.0 * f64::EPSILON * (self.coef * (h_f.abs() + self.h_star.abs()) + distance + memory + self.z_star.norm_squared());
        PsiTerms { distance, gap, memory, value: distance + gap + memory, floor }
    }

    pub fn psi(&self, dp: &DualProblem, state: &AdomState) -> f64 {
        self.terms(dp, state).value
    }
}

/// Per-step outcome of the three lemma checks; positive excess means a violation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LemmaExcess {
    pub descent: f64,
    pub error_feedback: f64,
    pub contraction: f64,
}

impl LemmaExcess {
    pub fn violated(&self) -> bool {
        self.descent > 0.0 || self.error_feedback > 0.0 || self.contraction > 0.0
    }
}

/// Descent, error-feedback and contraction checks for one transition.
#[allow(clippy::too_many_arguments)]
pub fn lemma_excess(
    dp: &DualProblem,
    p: &AdomParams,
    rho: f64,
    info: &StepInfo,
    m_before: &DVector<f64>,
    after: &AdomState,
    psi_before: &PsiTerms,
    psi_after: &PsiTerms,
) -> LemmaExcess {
    let lam = dp.lam_min_plus();
    let grad_p = dp.p_norm_sq(&info.grad);

    let h_g = dp.h(&info.z_g);
    let h_f = dp.h(&after.z_f);
    let rhs = h_g - p.theta * lam / 2.0 * grad_p;
    let descent = h_f - rhs - LEMMA_SLACK * (1.0 + h_g.abs() + h_f.abs());

    let m_old = dp.p_norm_sq(m_before);
    let m_new = dp.p_norm_sq(&after.m);
    let bound = (1.0 - p.sigma * lam / 2.0) * m_old + 2.0 * p.eta * p.eta / (p.sigma * lam) * grad_p;
    let error_feedback = m_new - bound - LEMMA_SLACK * (1.0 + m_old + m_new);

    let contraction = psi_after.value - (1.0 - rho) * psi_before.value * (1.0 + LEMMA_SLACK) - psi_before.floor.max(psi_after.floor);
    LemmaExcess { descent, error_feedback, contraction }
}

/// One row of a run trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: u64,
    pub err: f64,
    pub psi: Option<f64>,
    pub wall_ns: u64,
    pub comms: u64,
    pub mults: u64,
}

/// Per-iteration error history of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    /// Largest `Ψᵏ⁺¹/Ψᵏ` seen while Ψ stayed above its floating-point floor.
    pub worst_psi_ratio: Option<f64>,
    /// Number of iterations with a lemma violation.
    pub lemma_violations: u64,
    /// Largest `image P` residual of `z`, `z_f`, `z_g` across the run.
    pub max_subspace_residual: f64,
}

impl Trace {
    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.err).collect()
    }

    pub fn final_error(&self) -> Option<f64> {
        self.records.last().map(|r| r.err)
    }

    /// CSV with header `k,err,psi,wall_ns,comms,mults`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,err,psi,wall_ns,comms,mults\n");
        for r in &self.records {
            let psi = r.psi.map(fmt_f64).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{},{}", r.k, fmt_f64(r.err), psi, r.wall_ns, r.comms, r.mults);
        }
        out
    }

    pub fn from_csv(s: &str) -> Result<Self> {
        let mut lines = s.lines();
        let header = lines.next().ok_or_else(|| invalid("empty trace CSV"))?;
        if !header.starts_with("k,err,psi,wall_ns") {
            return Err(invalid(format!("unexpected trace header '{header}'")));
        }
        let mut records = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = || invalid(format!("malformed trace row {}", ln + 2));
            if f.len() < 4 {
                return Err(bad());
            }
            let num = |i: usize| -> Result<u64> { f.get(i).map_or(Ok(0), |s| s.parse().map_err(|_| bad())) };
            records.push(TraceRecord {
                k: f[0].parse().map_err(|_| bad())?,
                err: f[1].parse().map_err(|_| bad())?,
                psi: if f[2].is_empty() { None } else { Some(f[2].parse().map_err(|_| bad())?) },
                wall_ns: num(3)?,
                comms: num(4)?,
                mults: num(5)?,
            });
        }
        Ok(Self { records, ..Self::default() })
    }
}

/// Switches of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    /// Record Ψ and check the lemmas every iteration.
    pub track_lyapunov: bool,
    /// Record wall-clock time; otherwise `wall_ns` is zero so traces are reproducible.
    pub timing: bool,
    /// Also check membership of the iterates in `image P` every iteration.
    pub check_subspaces: bool,
}

/// Runs `iterations` steps from zero.
///
/// With Lyapunov tracking and the exact oracle, any lemma violation aborts the
/// run; with the inexact oracle violations are only logged and counted.
pub fn run(dp: &DualProblem, p: &AdomParams, mode: OracleMode, iterations: usize, opts: RunOptions) -> Result<Trace> {
    if iterations == 0 {
        return Err(invalid("iteration count must be at least 1"));
    }
    let mut state = AdomState::zeros(dp);
    let mut oracle = DualGradOracle::new(mode, dp.primal_dim());
    let tracker = if opts.track_lyapunov { Some(Lyapunov::new(dp, p, dp.dual_optimum()?)) } else { None };
    let rho = contraction_rate(dp.mu_h(), dp.l_h(), dp.lam_min_plus(), dp.lam_max())?;
    let strict = mode == OracleMode::Exact;

    let mut trace = Trace { records: Vec::with_capacity(iterations), ..Trace::default() };
    let mut psi_prev = tracker.as_ref().map(|t| t.terms(dp, &state));
    let (mut comms, mut mults) = (0u64, 0u64);
    let x_star = dp.x_star_lifted();
    let start = Instant::now();

    for _ in 0..iterations {
        let m_before = state.m.clone();
        let info = step(&mut state, p, dp, &mut oracle)?;
        comms += info.comms;
        mults += info.mults;
        let err = (&state.g - &x_star).norm();
        if !err.is_finite() || err > DIVERGENCE_THRESHOLD {
            return Err(Error::Divergence { iteration: state.k as usize, reason: format!("primal error {err:.3e}") });
        }

        let mut psi = None;
        if let (Some(t), Some(before)) = (&tracker, psi_prev.as_ref()) {
            let after = t.terms(dp, &state);
            let ex = lemma_excess(dp, p, rho, &info, &m_before, &state, before, &after);
            if ex.violated() {
                trace.lemma_violations += 1;
                let msg = format!("lemma check failed at iteration {}: {ex:?}", state.k);
                if strict {
                    return Err(Error::Invariant(msg));
                }
                warn!("{msg}");
            }
            if before.value > before.floor && after.value > after.floor {
                let r = after.value / before.value;
                trace.worst_psi_ratio = Some(trace.worst_psi_ratio.map_or(r, |w: f64| w.max(r)));
            }
            psi = Some(after.value);
            psi_prev = Some(after);
        }

        if opts.check_subspaces {
            let res = subspace_residuals(dp, &state, &info.z_g).max_image_p();
            trace.max_subspace_residual = trace.max_subspace_residual.max(res);
            if res > SUBSPACE_TOL {
                return Err(Error::Invariant(format!("iterate left image P at iteration {}: {res:.3e}", state.k)));
            }
        }

        let wall_ns = if opts.timing { start.elapsed().as_nanos() as u64 } else { 0 };
        trace.records.push(TraceRecord { k: state.k, err, psi, wall_ns, comms, mults });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::GossipSource;
    use crate::problems::{ProblemConfig, QuadraticProblem};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn dual(cfg: &ProblemConfig) -> DualProblem {
        let prob = QuadraticProblem::generate(cfg).unwrap();
        DualProblem::new(prob, Arc::new(GossipSource::random_ring(cfg.n, cfg.seed).unwrap())).unwrap()
    }

    fn cfg(seed: u64) -> ProblemConfig {
        ProblemConfig { n: 4, d: 4, p: 2, chi_a: 3.0, mu_f: 1.0, l_f: 3.0, seed }
    }

    #[test]
    fn schedule_substitution() {
        let p = AdomParams::default_params(1.0, 4.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(p.alpha, 0.5);
        assert_relative_eq!(p.eta, 1.0 / 7.0);
        assert_relative_eq!(p.theta, 0.25);
        assert_relative_eq!(p.sigma, 1.0);
        assert_relative_eq!(p.tau, 1.0 / 14.0);
        p.check_hypotheses(4.0, 1.0).unwrap();
    }

    #[test]
    fn tau_is_maximal_for_unit_condition() {
        let p = AdomParams::default_params(3.0, 3.0, 0.5, 2.0).unwrap();
        assert_relative_eq!(p.tau, 0.5 / 14.0, epsilon = 1e-15);
    }

    #[test]
    fn schedule_rejects_bad_ordering() {
        assert!(AdomParams::default_params(2.0, 1.0, 1.0, 1.0).is_err());
        assert!(AdomParams::default_params(1.0, 2.0, 2.0, 1.0).is_err());
        assert!(AdomParams::default_params(0.0, 2.0, 1.0, 1.0).is_err());
        assert!(AdomParams::new(1.0, 1.0, 1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn contraction_rate_examples() {
        assert_relative_eq!(contraction_rate(2.0, 2.0, 1.0, 1.0).unwrap(), 1.0 / 7.0);
        assert_relative_eq!(contraction_rate(1.0, 49.0, 1.0, 1.0).unwrap(), 1.0 / 49.0);
    }

    #[test]
    fn zero_iterations_rejected_and_one_gives_one_record() {
        let dp = dual(&cfg(0));
        let p = AdomParams::for_problem(&dp).unwrap();
        assert!(run(&dp, &p, OracleMode::Exact, 0, RunOptions::default()).is_err());
        let t = run(&dp, &p, OracleMode::Exact, 1, RunOptions::default()).unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.records[0].k, 1);
    }

    #[test]
    fn tau_one_ignores_z_f() {
        let dp = dual(&cfg(1));
        let mut p = AdomParams::for_problem(&dp).unwrap();
        p.tau = 1.0;
        let mut s = AdomState::zeros(&dp);
        s.z = dp.project_p(&DVector::from_fn(dp.dim(), |i, _| (i as f64).sin()));
        s.z_f = DVector::from_element(dp.dim(), 1e3);
        let mut o = DualGradOracle::new(OracleMode::Exact, dp.primal_dim());
        let z = s.z.clone();
        let info = step(&mut s, &p, &dp, &mut o).unwrap();
        assert_eq!(info.z_g, z);
    }

    #[test]
    fn optimum_is_a_fixed_point() {
        let dp = dual(&cfg(2));
        let p = AdomParams::for_problem(&dp).unwrap();
        let z_star = dp.dual_optimum().unwrap();
        let lyap = Lyapunov::new(&dp, &p, z_star.clone());
        let mut s = AdomState::zeros(&dp);
        s.z = z_star.clone();
        s.z_f = z_star.clone();
        assert!(lyap.psi(&dp, &s).abs() < 1e-10);
        let mut o = DualGradOracle::new(OracleMode::Exact, dp.primal_dim());
        for _ in 0..5 {
            step(&mut s, &p, &dp, &mut o).unwrap();
            let z_hat = &s.z + dp.project_p(&s.m);
            assert!((dp.project_image_pb(&z_hat) - &z_star).norm() < 1e-9);
            assert!(s.error(&dp) < 1e-8);
        }
    }

    #[test]
    fn memory_seminorm_ignores_kernel_of_p() {
        let dp = dual(&cfg(3));
        let p = AdomParams::for_problem(&dp).unwrap();
        let lyap = Lyapunov::new(&dp, &p, dp.dual_optimum().unwrap());
        let mut s = AdomState::zeros(&dp);
        let base = lyap.terms(&dp, &s);
        let lay = dp.layout();
        // consensual s-block vector lies in ker P
        for i in 0..lay.n {
            for r in 0..lay.d {
                s.m[lay.p_len() + i * lay.d + r] = (r + 1) as f64;
            }
        }
        let t = lyap.terms(&dp, &s);
        assert!(t.memory.abs() < 1e-20);
        assert_relative_eq!(t.value, base.value, max_relative = 1e-12);
    }

    #[test]
    fn lyapunov_contracts_under_exact_oracle() {
        for seed in 0..3 {
            let dp = dual(&cfg(seed));
            let p = AdomParams::for_problem(&dp).unwrap();
            let opts = RunOptions { track_lyapunov: true, check_subspaces: true, ..RunOptions::default() };
            let t = run(&dp, &p, OracleMode::Exact, 400, opts).unwrap();
            let rho = contraction_rate(dp.mu_h(), dp.l_h(), dp.lam_min_plus(), dp.lam_max()).unwrap();
            assert_eq!(t.lemma_violations, 0);
            assert!(t.worst_psi_ratio.unwrap() <= 1.0 - rho + 1e-9);
            assert!(t.max_subspace_residual <= SUBSPACE_TOL);
        }
    }

    #[test]
    fn trace_csv_roundtrip() {
        let dp = dual(&cfg(4));
        let p = AdomParams::for_problem(&dp).unwrap();
        let opts = RunOptions { track_lyapunov: true, ..RunOptions::default() };
        let t = run(&dp, &p, OracleMode::Exact, 5, opts).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("k,err,psi,wall_ns,comms,mults\n"));
        let back = Trace::from_csv(&csv).unwrap();
        assert_eq!(back.records, t.records);

        let plain = run(&dp, &p, OracleMode::Exact, 2, RunOptions::default()).unwrap();
        let line = plain.to_csv().lines().nth(1).unwrap().to_string();
        assert!(line.contains(",,0,"), "{line}");
    }

    #[test]
    fn cost_counters_accumulate() {
        let dp = dual(&cfg(5));
        let p = AdomParams::for_problem(&dp).unwrap();
        let t = run(&dp, &p, OracleMode::Exact, 7, RunOptions::default()).unwrap();
        let last = t.records.last().unwrap();
        assert_eq!(last.comms, 7);
        assert_eq!(last.mults, 14);
    }

    #[test]
    fn divergence_detected() {
        let dp = dual(&cfg(6));
        let mut p = AdomParams::for_problem(&dp).unwrap();
        p.theta *= 1e4;
        p.tau = 0.01;
        let r = run(&dp, &p, OracleMode::Exact, 5000, RunOptions::default());
        assert!(matches!(r, Err(Error::Divergence { .. })), "{r:?}");
    }
}
