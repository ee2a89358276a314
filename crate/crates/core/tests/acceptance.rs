//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use adom_core::accel::transformed_problem;
use adom_core::accel::transform_constraints;
use adom_core::adom::{run, AdomParams, RunOptions};
use adom_core::experiment::{
    chebyshev_audit, consensus_audit, lyapunov_certify, run_experiment, CertifyConfig, ExperimentConfig, Verdict,
};
use adom_core::graphs::GossipSource;
use adom_core::lowerbounds::{build_static_instance, nesterov_residual, probe_adom, span_progress, Budget};
use adom_core::problems::{kkt_solve, DualProblem, OracleMode, ProblemConfig, QuadraticProblem};
use adom_core::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn sweep() -> Result<adom_core::experiment::ExperimentReport> {
    run_experiment(&ExperimentConfig::default())
}

fn exponent(report: &adom_core::experiment::ExperimentReport) -> Result<Outcome> {
    let (Some(nu), Some(fit)) = (report.nu, report.nu_fit) else {
        return outcome(false, format!("exponent unavailable: {:?}", report.nu_unavailable));
    };
    let pass = (0.40..=0.70).contains(&nu) && fit.r_squared >= 0.9;
    outcome(pass, format!("nu = {nu:.4} (stderr {:.4}), r2 = {:.4}", fit.stderr_slope, fit.r_squared))
}

fn linear_convergence(report: &adom_core::experiment::ExperimentReport) -> Result<Outcome> {
    let mut worst = f64::INFINITY;
    let mut failed = Vec::new();
    for r in &report.runs {
        match r.fit {
            Some(f) => {
                worst = worst.min(f.r_squared);
                if f.r_squared < 0.95 || -f.slope <= 0.0 {
                    failed.push(r.l_f);
                }
            }
            None => failed.push(r.l_f),
        }
    }
    outcome(failed.is_empty(), format!("min r2 = {worst:.5} over {} runs, failing L_F {failed:?}", report.runs.len()))
}

fn lyapunov() -> Result<(Outcome, Outcome)> {
    let r = lyapunov_certify(&CertifyConfig::default())?;
    let c3 = Outcome {
        pass: r.verdict == Verdict::Pass && r.max_contraction_excess <= 0.0 && r.iterations == 500,
        detail: format!(
            "{} iterations, rho = {:.3e}, max contraction excess = {:.3e}, worst psi ratio = {:?}",
            r.iterations, r.rho, r.max_contraction_excess, r.worst_psi_ratio
        ),
    };
    let c4 = Outcome {
        pass: r.max_descent_excess <= 0.0 && r.max_error_feedback_excess <= 0.0,
        detail: format!(
            "max descent excess = {:.3e}, max error-feedback excess = {:.3e}",
            r.max_descent_excess, r.max_error_feedback_excess
        ),
    };
    Ok((c3, c4))
}

fn chebyshev() -> Result<Outcome> {
    let mut worst = 0.0f64;
    let mut count = 0;
    let mut fails = 0;
    for chi in [4.0, 20.0, 100.0, 1000.0] {
        for seed in 0..20 {
            let a = chebyshev_audit(10, 20, chi, seed)?;
            worst = worst.max(a.condition_after);
            count += 1;
            fails += usize::from(!a.pass);
        }
    }
    outcome(fails == 0, format!("{count} matrices, worst condition of P(AᵀA) = {worst:.12}"))
}

fn multi_consensus() -> Result<Outcome> {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    let mut fails = 0;
    for seed in 0..20 {
        let a = consensus_audit(10, (2.0, 50.0), seed)?;
        lo = lo.min(a.lambda_min_plus);
        hi = hi.max(a.lambda_max);
        fails += usize::from(!a.pass);
    }
    outcome(fails == 0, format!("20 matrices, spectrum of D(W) within [{lo:.6}, {hi:.12}]"))
}

fn lower_bound_consistency() -> Result<Outcome> {
    let inst = build_static_instance(37.0, 1.0, 3.0, 3.0, 12)?;
    let probe = probe_adom(&inst, 60)?;
    let mut checked = 0;
    let mut below = 0;
    for r in &probe.records {
        if r.prefix < inst.dim {
            checked += 1;
            let floor = nesterov_residual(inst.kappa_g, r.prefix)?;
            if r.err2_min < floor * (1.0 - 1e-9) {
                below += 1;
            }
        }
    }
    let pass = (inst.kappa_g - 9.0).abs() < 1e-9 && checked > 0 && below == 0 && probe.violations == 0;
    outcome(
        pass,
        format!(
            "kappa_g = {:.6}, {checked} iterations below full span checked, {below} under the residual bound, {} under the span tail",
            inst.kappa_g, probe.violations
        ),
    )
}

fn span_rule() -> Result<Outcome> {
    let inst = build_static_instance(37.0, 1.0, 3.0, 3.0, 9)?;
    let (da, dw) = (inst.delta_a, inst.delta_w);
    let mut ok = true;
    let mut notes = Vec::new();
    for t in 1..=3usize {
        // information has to travel S1 -> S2 -> S3 and back for every later block of three
        let rounds = 2 * t - 1;
        let full = Budget { computes: 3 * t, comms: rounds * dw, mults: rounds * da };
        let reached = span_progress(&inst, full)?.prefix;
        let mut reduced_max = 0;
        for b in [
            Budget { computes: full.computes - 1, ..full },
            Budget { comms: full.comms - 1, ..full },
            Budget { mults: full.mults - 1, ..full },
        ] {
            reduced_max = reduced_max.max(span_progress(&inst, b)?.prefix);
        }
        ok &= reached == 3 * t && reduced_max < 3 * t;
        let literal = span_progress(&inst, Budget { computes: 3 * t, comms: t * dw, mults: t * da })?.prefix;
        notes.push(format!("t={t}: {reached} (reduced {reduced_max}, t-multiple budget {literal})"));
    }
    outcome(ok, format!("delta_A = {da}, delta_W = {dw}; {}", notes.join("; ")))
}

fn oracle_equivalence() -> Result<Outcome> {
    let prob = QuadraticProblem::generate(&ProblemConfig { n: 10, d: 20, p: 10, chi_a: 20.0, mu_f: 1.0, l_f: 10.0, seed: 3 })?;
    let dp = DualProblem::new(prob, Arc::new(GossipSource::random_ring(10, 3)?))?;
    let params = AdomParams::for_problem(&dp)?;
    let exact = run(&dp, &params, OracleMode::Exact, 1000, RunOptions::default())?.final_error().unwrap_or(f64::NAN);
    let inexact = run(&dp, &params, OracleMode::Inexact { inner_steps: 200 }, 1000, RunOptions::default())?
        .final_error()
        .unwrap_or(f64::NAN);
    let rel = (exact - inexact).abs() / exact;
    outcome(rel <= 0.10, format!("exact {exact:.6e}, inexact {inexact:.6e}, relative gap {rel:.3e}"))
}

fn transform_equivalence() -> Result<Outcome> {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let prob = QuadraticProblem::generate(&ProblemConfig { n: 5, d: 20, p: 10, chi_a: 100.0, mu_f: 1.0, l_f: 20.0, seed })?;
        let tc = transform_constraints(&prob.a, &prob.b, None)?;
        let tp = transformed_problem(&prob, &tc)?;
        let x0 = kkt_solve(&prob)?.x;
        let x1 = kkt_solve(&tp)?.x;
        worst = worst.max((x0 - x1).amax());
    }
    outcome(worst <= 1e-6, format!("10 instances, max |x - x_transformed| = {worst:.3e}"))
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |id: usize, name: &str, start: Instant, r: Result<Outcome>| {
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(o) => {
                all &= o.pass;
                println!("criterion {id} ({name}): {} [{secs:.1}s] {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            }
            Err(e) => {
                all = false;
                println!("criterion {id} ({name}): FAIL [{secs:.1}s] error: {e}");
            }
        }
    };

    let t = Instant::now();
    let sweep = sweep();
    let sweep_time = t;
    match &sweep {
        Ok(rep) => {
            report(1, "exponent reproduction", sweep_time, exponent(rep));
            report(2, "linear convergence", sweep_time, linear_convergence(rep));
        }
        Err(e) => {
            report(1, "exponent reproduction", sweep_time, Err(adom_core::Error::Invariant(e.to_string())));
            report(2, "linear convergence", sweep_time, Err(adom_core::Error::Invariant(e.to_string())));
        }
    }
    let t = Instant::now();
    match lyapunov() {
        Ok((c3, c4)) => {
            report(3, "Lyapunov contraction", t, Ok(c3));
            report(4, "descent and error-feedback lemmas", t, Ok(c4));
        }
        Err(e) => {
            report(3, "Lyapunov contraction", t, Err(adom_core::Error::Invariant(e.to_string())));
            report(4, "descent and error-feedback lemmas", t, Err(e));
        }
    }
    let t = Instant::now();
    report(5, "Chebyshev compression", t, chebyshev());
    let t = Instant::now();
    report(6, "multi-consensus compression", t, multi_consensus());
    let t = Instant::now();
    report(7, "lower-bound consistency", t, lower_bound_consistency());
    let t = Instant::now();
    report(8, "span-progress rule", t, span_rule());
    let t = Instant::now();
    report(9, "oracle equivalence", t, oracle_equivalence());
    let t = Instant::now();
    report(10, "constraint-transform equivalence", t, transform_equivalence());

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
