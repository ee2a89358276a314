use std::sync::Arc;

use adom_core::accel::{self, ChebyshevOperator};
use adom_core::adom::{run, AdomParams, RunOptions, Trace, TraceRecord};
use adom_core::experiment::{consensus_audit, fit_rate, ols};
use adom_core::graphs::{laplacian, GossipSource, WeightedGraph};
use adom_core::linalg;
use adom_core::lowerbounds::{build_static_instance, nesterov_residual, span_progress, tail_beyond, Budget};
use adom_core::problems::{
    generate_constraints, ConstraintOperator, DualProblem, OracleMode, ProblemConfig, QuadraticProblem,
};
use nalgebra::DVector;
use proptest::prelude::*;

fn connected_graph(n: usize, extra: Vec<(usize, usize, f64)>) -> WeightedGraph {
    let mut edges: Vec<(usize, usize, f64)> = (1..n).map(|i| (i - 1, i, 1.0)).collect();
    for (i, j, w) in extra {
        let (i, j) = (i % n, j % n);
        if i != j && !edges.iter().any(|e| (e.0 == i && e.1 == j) || (e.0 == j && e.1 == i)) {
            edges.push((i, j, w));
        }
    }
    WeightedGraph::new(n, edges).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn laplacian_is_a_gossip_matrix(n in 2usize..9, extra in prop::collection::vec((0usize..9, 0usize..9, 0.1f64..3.0), 0..6)) {
        let g = connected_graph(n, extra);
        let w = laplacian(&g);
        let m = w.matrix();
        prop_assert!((m - m.transpose()).amax() < 1e-14);
        prop_assert!((m * DVector::from_element(n, 1.0)).amax() < 1e-12);
        prop_assert_eq!(w.kernel_dim(), 1);
        let s = linalg::spectrum(m).unwrap();
        prop_assert!(s.eigenvalues[0] > -1e-10);
        prop_assert!(s.lambda_max <= 2.0 * g.degrees().iter().max().copied().unwrap_or(0) as f64 * 3.0 + 1e-9);
    }

    #[test]
    fn random_ring_steps_share_spectrum(n in 3usize..12, seed in any::<u64>(), k in 0u64..1000) {
        let src = GossipSource::random_ring(n, seed).unwrap();
        let w = src.matrix_at(k);
        prop_assert_eq!(w.clone(), src.matrix_at(k));
        let s = linalg::spectrum(&w).unwrap();
        prop_assert!((s.lambda_min_plus.unwrap() - src.lambda_min_plus()).abs() < 1e-9);
        prop_assert!((s.lambda_max - src.lambda_max()).abs() < 1e-9);
    }

    #[test]
    fn chebyshev_compresses_to_four(chi in 1.0f64..3000.0, seed in 0u64..1000) {
        let a = generate_constraints(4, 8, chi, seed).unwrap().a;
        let op = ChebyshevOperator::for_matrix(&a).unwrap();
        let pm = ConstraintOperator::to_dense(&op);
        let cond = accel::condition_of(&((&pm + pm.transpose()) * 0.5)).unwrap();
        prop_assert!(cond <= 4.0 + 1e-9, "chi {} -> {}", chi, cond);
        prop_assert!(op.eval(0.0).abs() < 1e-12);
    }

    #[test]
    fn multi_consensus_bounds(seed in any::<u64>(), n in 3usize..10) {
        let a = consensus_audit(n, (2.0, 50.0), seed).unwrap();
        prop_assert!(a.pass, "{:?}", a);
    }

    #[test]
    fn rate_fit_recovers_exponentials(rate in 0.001f64..0.5, amp in 0.01f64..100.0, len in 4usize..300) {
        let records = (1..=len as u64)
            .map(|k| TraceRecord { k, err: amp * (-rate * k as f64).exp(), psi: None, wall_ns: 0, comms: k, mults: 2 * k })
            .collect();
        let f = fit_rate(&Trace { records, ..Trace::default() }).unwrap();
        prop_assert!((-f.slope - rate).abs() < 1e-9 * (1.0 + rate));
        prop_assert!(f.stderr_slope >= 0.0 && (0.0..=1.0).contains(&f.r_squared));
    }

    #[test]
    fn ols_r_squared_in_unit_interval(ys in prop::collection::vec(-10.0f64..10.0, 3..40)) {
        let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
        let f = ols(&xs, &ys).unwrap();
        prop_assert!((0.0..=1.0).contains(&f.r_squared));
        prop_assert!(f.stderr_slope >= 0.0);
    }

    #[test]
    fn residual_bounds_are_monotone(kappa in 1.01f64..1e4, n in 0usize..200) {
        let a = nesterov_residual(kappa, n).unwrap();
        let b = nesterov_residual(kappa, n + 1).unwrap();
        prop_assert!(b < a && b > 0.0 || a == 0.0);
        prop_assert!((tail_beyond(kappa, n + 1).unwrap() - a).abs() <= 1e-15 * a.max(1e-300));
    }

    #[test]
    fn problem_json_round_trips(seed in any::<u64>(), n in 1usize..4, d in 2usize..6) {
        let p = d / 2;
        let chi_a = if p == 1 { 1.0 } else { 5.0 };
        let prob = QuadraticProblem::generate(&ProblemConfig { n, d, p, chi_a, mu_f: 1.0, l_f: 9.0, seed }).unwrap();
        let back = QuadraticProblem::from_json(&prob.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.a, prob.a);
        prop_assert_eq!(back.b, prob.b);
        prop_assert_eq!(back.c, prob.c);
        prop_assert_eq!(back.lin, prob.lin);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn span_progress_is_monotone_in_budget(c in 0usize..5, w in 0usize..5, m in 0usize..5) {
        let inst = build_static_instance(37.0, 1.0, 3.0, 3.0, 6).unwrap();
        let base = span_progress(&inst, Budget { computes: c, comms: w, mults: m }).unwrap().prefix;
        for more in [
            Budget { computes: c + 1, comms: w, mults: m },
            Budget { computes: c, comms: w + 1, mults: m },
            Budget { computes: c, comms: w, mults: m + 1 },
        ] {
            prop_assert!(span_progress(&inst, more).unwrap().prefix >= base);
        }
        prop_assert!(base <= c);
    }

    #[test]
    fn iterates_stay_in_image_p(seed in 0u64..500, lf in 2.0f64..40.0) {
        let prob = QuadraticProblem::generate(&ProblemConfig { n: 4, d: 4, p: 2, chi_a: 6.0, mu_f: 1.0, l_f: lf, seed }).unwrap();
        let dp = DualProblem::new(prob, Arc::new(GossipSource::random_ring(4, seed).unwrap())).unwrap();
        let params = AdomParams::for_problem(&dp).unwrap();
        let opts = RunOptions { check_subspaces: true, ..RunOptions::default() };
        let trace = run(&dp, &params, OracleMode::Inexact { inner_steps: 3 }, 40, opts).unwrap();
        prop_assert!(trace.max_subspace_residual <= 1e-7);
        prop_assert_eq!(trace.records.last().unwrap().comms, 40);
    }

    #[test]
    fn exact_runs_satisfy_lemmas(seed in 0u64..500) {
        let prob = QuadraticProblem::generate(&ProblemConfig { n: 4, d: 3, p: 2, chi_a: 4.0, mu_f: 1.0, l_f: 6.0, seed }).unwrap();
        let dp = DualProblem::new(prob, Arc::new(GossipSource::random_ring(4, seed).unwrap())).unwrap();
        let params = AdomParams::for_problem(&dp).unwrap();
        let opts = RunOptions { track_lyapunov: true, ..RunOptions::default() };
        let trace = run(&dp, &params, OracleMode::Exact, 60, opts).unwrap();
        prop_assert_eq!(trace.lemma_violations, 0);
        let psi: Vec<f64> = trace.records.iter().filter_map(|r| r.psi).collect();
        prop_assert!(psi.last().unwrap() < &psi[0]);
    }
}
