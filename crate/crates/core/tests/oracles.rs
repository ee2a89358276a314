//! Independent dense oracles for the method, the KKT solve, the Lyapunov function
//! and the cost accounting.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use adom_core::accel::{ChebyshevOperator, GramOperator, LinearOperator};
use adom_core::adom::{step, AdomParams, AdomState, Lyapunov};
use adom_core::graphs::{laplacian, GossipSource, WeightedGraph};
use adom_core::linalg;
use adom_core::problems::{
    kkt_solve, ConstraintOperator, DualGradOracle, DualProblem, OracleMode, ProblemConfig, QuadraticProblem,
};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Dense {
    b: DMatrix<f64>,
    w: DMatrix<f64>,
    p: DMatrix<f64>,
    q: DVector<f64>,
    c_inv: DMatrix<f64>,
    lin: DVector<f64>,
}

fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, at), (b.nrows(), b.ncols())).copy_from(b);
        at += b.nrows();
    }
    out
}

fn dense(prob: &QuadraticProblem, w: &DMatrix<f64>) -> Dense {
    let (n, d, p) = (prob.n, prob.d, prob.p());
    let id_n = DMatrix::<f64>::identity(n, n);
    let mut b = DMatrix::zeros(n * p + n * d, n * d);
    b.view_mut((0, 0), (n * p, n * d)).copy_from(&id_n.kronecker(&prob.a));
    b.view_mut((n * p, 0), (n * d, n * d)).copy_from(&DMatrix::identity(n * d, n * d));
    let wl = w.kronecker(&DMatrix::<f64>::identity(d, d));
    let wd = block_diag(&[DMatrix::identity(n * p, n * p), wl]);
    let centering = &id_n - DMatrix::from_element(n, n, 1.0 / n as f64);
    let pd = block_diag(&[DMatrix::identity(n * p, n * p), centering.kronecker(&DMatrix::<f64>::identity(d, d))]);
    let mut q = DVector::zeros(n * p + n * d);
    for i in 0..n {
        q.rows_mut(i * p, p).copy_from(&prob.b);
    }
    let c_inv = block_diag(&prob.c.iter().map(|c| c.clone().try_inverse().unwrap()).collect::<Vec<_>>());
    let mut lin = DVector::zeros(n * d);
    for i in 0..n {
        lin.rows_mut(i * d, d).copy_from(&prob.lin[i]);
    }
    Dense { b, w: wd, p: pd, q, c_inv, lin }
}

impl Dense {
    fn grad(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let g = &self.c_inv * (self.b.transpose() * z - &self.lin);
        (&self.b * &g - &self.q, g)
    }

    fn h(&self, z: &DVector<f64>) -> f64 {
        let y = self.b.transpose() * z - &self.lin;
        0.5 * y.dot(&(&self.c_inv * &y)) - z.dot(&self.q)
    }

    /// Orthogonal projection onto `image(PB)` through the pseudo-inverse.
    fn proj_pb(&self, v: &DVector<f64>) -> DVector<f64> {
        let pb = &self.p * &self.b;
        let pinv = pb.clone().pseudo_inverse(1e-10).unwrap();
        &pb * (pinv * v)
    }
}

fn two_node_problem(seed: u64) -> (QuadraticProblem, DMatrix<f64>) {
    let prob = QuadraticProblem::generate(&ProblemConfig { n: 2, d: 3, p: 2, chi_a: 4.0, mu_f: 1.0, l_f: 5.0, seed }).unwrap();
    let w = laplacian(&WeightedGraph::path(2).unwrap()).matrix().clone();
    (prob, w)
}

#[test]
fn step_matches_dense_transcription() {
    for seed in 0..3 {
        let (prob, w) = two_node_problem(seed);
        let dn = dense(&prob, &w);
        let gossip = GossipSource::fixed(&laplacian(&WeightedGraph::path(2).unwrap())).unwrap();
        let dp = DualProblem::new(prob, Arc::new(gossip)).unwrap();
        let p = AdomParams::for_problem(&dp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let mut state = AdomState::zeros(&dp);
        state.z = dp.project_p(&linalg::gaussian_vector(dp.dim(), &mut rng));
        state.z_f = dp.project_p(&linalg::gaussian_vector(dp.dim(), &mut rng));
        state.m = linalg::gaussian_vector(dp.dim(), &mut rng);
        let (mut z, mut zf, mut m) = (state.z.clone(), state.z_f.clone(), state.m.clone());
        let mut oracle = DualGradOracle::new(OracleMode::Exact, dp.primal_dim());
        for _ in 0..5 {
            let info = step(&mut state, &p, &dp, &mut oracle).unwrap();
            assert_eq!(info.comms, 1);
            assert_eq!(info.mults, 2);

            let zg = &z * p.tau + &zf * (1.0 - p.tau);
            let (grad, g) = dn.grad(&zg);
            let v = &m - &grad * p.eta;
            let delta = &dn.w * &v * p.sigma;
            m = &v - &delta;
            z = &z + (&zg - &z) * (p.eta * p.alpha) + &delta;
            zf = &zg - &dn.w * &grad * p.theta;

            let scale = 1.0 + z.norm() + zf.norm() + m.norm();
            assert!((&state.z - &z).norm() < 1e-12 * scale);
            assert!((&state.z_f - &zf).norm() < 1e-12 * scale);
            assert!((&state.m - &m).norm() < 1e-12 * scale);
            assert!((&state.g - &g).norm() < 1e-12 * (1.0 + g.norm()));
        }
    }
}

#[test]
fn dual_value_and_gradient_match_dense() {
    let (prob, w) = two_node_problem(7);
    let dn = dense(&prob, &w);
    let dp = DualProblem::new(prob, Arc::new(GossipSource::fixed(&laplacian(&WeightedGraph::path(2).unwrap())).unwrap()))
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let z = linalg::gaussian_vector(dp.dim(), &mut rng);
        let (g1, x1) = dp.grad_h_exact(&z);
        let (g2, x2) = dn.grad(&z);
        assert!((g1 - g2).norm() < 1e-11);
        assert!((x1 - x2).norm() < 1e-11);
        assert!((dp.h(&z) - dn.h(&z)).abs() < 1e-10 * (1.0 + dn.h(&z).abs()));
    }
}

#[test]
fn lyapunov_matches_dense_evaluation() {
    let prob = QuadraticProblem::generate(&ProblemConfig { n: 4, d: 3, p: 2, chi_a: 4.0, mu_f: 1.0, l_f: 6.0, seed: 4 }).unwrap();
    let source = GossipSource::random_ring(4, 4).unwrap();
    let dn = dense(&prob, &source.matrix_at(0));
    let dp = DualProblem::new(prob, Arc::new(source)).unwrap();
    let p = AdomParams::for_problem(&dp).unwrap();
    let z_star = dp.dual_optimum().unwrap();

    // optimality and membership in image(PB), checked densely
    let (grad, _) = dn.grad(&z_star);
    assert!((&dn.p * grad).norm() < 1e-8);
    assert!((dn.proj_pb(&z_star) - &z_star).norm() < 1e-8 * (1.0 + z_star.norm()));

    let lyap = Lyapunov::new(&dp, &p, z_star.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut state = AdomState::zeros(&dp);
    let mut oracle = DualGradOracle::new(OracleMode::Exact, dp.primal_dim());
    for _ in 0..4 {
        step(&mut state, &p, &dp, &mut oracle).unwrap();
    }
    state.m += dp.project_p(&linalg::gaussian_vector(dp.dim(), &mut rng)) * 0.1;

    let coef = 2.0 * p.eta * (1.0 - p.eta * p.alpha) / p.tau;
    let z_hat = &state.z + &dn.p * &state.m;
    let distance = dn.proj_pb(&(z_hat - &z_star)).norm_squared();
    let gap = coef * (dn.h(&state.z_f) - dn.h(&z_star));
    let memory = 6.0 * (&dn.p * &state.m).norm_squared();
    let t = lyap.terms(&dp, &state);
    assert!((t.distance - distance).abs() < 1e-9 * (1.0 + distance));
    assert!((t.gap - gap).abs() < 1e-9 * (1.0 + gap.abs()));
    assert!((t.memory - memory).abs() < 1e-9 * (1.0 + memory));
    assert!((t.value - (distance + gap + memory)).abs() < 1e-9 * (1.0 + t.value));
}

/// Quadratic penalty `Σ f_i(x) + ρ/2 ‖Ax - b‖²` with Richardson extrapolation in `1/ρ`.
fn penalty_solution(prob: &QuadraticProblem, rho: f64) -> DVector<f64> {
    let solve = |r: f64| {
        let mut h = prob.c.iter().fold(DMatrix::zeros(prob.d, prob.d), |acc, c| acc + c);
        h += prob.a.transpose() * &prob.a * r;
        let rhs = -prob.lin.iter().fold(DVector::zeros(prob.d), |acc, l| acc + l) + prob.a.transpose() * &prob.b * r;
        h.lu().solve(&rhs).unwrap()
    };
    solve(2.0 * rho) * 2.0 - solve(rho)
}

#[test]
fn kkt_matches_penalty_method() {
    for seed in 0..5 {
        let prob = QuadraticProblem::generate(&ProblemConfig { n: 3, d: 6, p: 3, chi_a: 10.0, mu_f: 1.0, l_f: 8.0, seed }).unwrap();
        let x = kkt_solve(&prob).unwrap().x;
        let xp = penalty_solution(&prob, 1e5);
        assert!((&x - &xp).amax() < 1e-6 * (1.0 + x.amax()), "seed {seed}: {}", (&x - &xp).amax());
        assert!((&prob.a * &x - &prob.b).amax() < 1e-9);
    }
}

#[derive(Debug)]
struct Counting {
    inner: GramOperator,
    calls: AtomicUsize,
}

impl LinearOperator for Counting {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.apply(x, out)
    }
}

#[test]
fn chebyshev_cost_is_counted_per_application() {
    let prob = QuadraticProblem::generate(&ProblemConfig { n: 3, d: 8, p: 4, chi_a: 50.0, mu_f: 1.0, l_f: 4.0, seed: 2 }).unwrap();
    let counter = Arc::new(Counting { inner: GramOperator::new(prob.a.clone()), calls: AtomicUsize::new(0) });
    let gram = prob.a.transpose() * &prob.a;
    let s = linalg::spectrum(&gram).unwrap();
    let op = Arc::new(ChebyshevOperator::new(counter.clone(), s.lambda_min_plus.unwrap(), s.lambda_max).unwrap());
    let k = op.degree();
    assert_eq!(k, 7);

    counter.calls.store(0, Ordering::SeqCst);
    let x = vec![1.0; 8];
    let mut out = vec![0.0; 8];
    op.apply_poly(&x, &mut out);
    assert_eq!(counter.calls.load(Ordering::SeqCst), k);
    assert_eq!(op.mults_per_apply() as usize, k);

    let atb = prob.a.transpose() * &prob.b;
    let mut rhs = DVector::zeros(8);
    op.apply_quotient(atb.as_slice(), rhs.as_mut_slice());
    let dp = DualProblem::with_constraint(
        prob,
        Arc::new(GossipSource::random_ring(3, 0).unwrap()),
        op.clone() as Arc<dyn ConstraintOperator>,
        rhs,
    )
    .unwrap();
    let p = AdomParams::for_problem(&dp).unwrap();
    let mut state = AdomState::zeros(&dp);
    let mut oracle = DualGradOracle::new(OracleMode::Exact, dp.primal_dim());
    counter.calls.store(0, Ordering::SeqCst);
    let info = step(&mut state, &p, &dp, &mut oracle).unwrap();
    // every node applies P(AᵀA) once for Bᵀz and once for B g
    assert_eq!(counter.calls.load(Ordering::SeqCst), 2 * 3 * k);
    assert_eq!(info.mults as usize, 2 * k);
}
