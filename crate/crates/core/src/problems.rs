//! Quadratic test problems with affine constraints and their dual reformulation.
//!
//! Each node holds `f_i(x) = ½ xᵀ C_i x + d_iᵀ x` and the shared constraint
//! `A x = b`. The lifted constraint is `I ⊗ A` with right-hand side `1 ⊗ b`.
//!
//! Dual vectors `z = (p, s)` are laid out as the constraint block `p`
//! (`n` blocks of `rows` entries) followed by the consensus block `s`
//! (`n` blocks of `d` entries), both node-major.
//!
//! With `B = [I ⊗ A; I]`, `q = (1 ⊗ b, 0)` and
//! `H(z) = F*(Bᵀz) - ⟨z, q⟩`, the dual problem is `min H` over `image P`,
//! where `P` is the identity on `p` and the consensus-centering projector on `s`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graphs::GossipSequence;
use crate::linalg::{self, SymmetricEigen};

/// Tolerance of the eigenvalue sandwich check on `C_i`.
pub const SANDWICH_TOL: f64 = 1e-8;
/// Relative feasibility tolerance for `b ∈ image A`.
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// KKT residual tolerance.
pub const KKT_TOL: f64 = 1e-9;
/// Relative residual at which the dual conjugate-gradient solve stops.
pub const DUAL_SOLVE_TOL: f64 = 1e-10;
/// Default inner iterations of the inexact dual oracle.
pub const DEFAULT_INNER_STEPS: usize = 10;

/// Linear map `x ↦ A x` from `R^cols` to `R^rows`, shared by every node.
pub trait ConstraintOperator: Send + Sync + fmt::Debug {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
    fn apply_transpose(&self, y: &[f64], out: &mut [f64]);
    /// Multiplications by the Gram operator `AᵀA` spent per application.
    fn mults_per_apply(&self) -> u64 {
        1
    }
    /// Dense matrix of the operator.
    fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows(), self.cols());
        let mut e = vec![0.0; self.cols()];
        let mut col = vec![0.0; self.rows()];
        for j in 0..self.cols() {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            m.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        m
    }
}

/// Plain dense constraint matrix.
#[derive(Debug, Clone)]
pub struct DenseConstraint(pub DMatrix<f64>);

impl ConstraintOperator for DenseConstraint {
    fn rows(&self) -> usize {
        self.0.nrows()
    }
    fn cols(&self) -> usize {
        self.0.ncols()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let (r, c) = self.0.shape();
        for (i, o) in out.iter_mut().enumerate().take(r) {
            let mut acc = 0.0;
            for j in 0..c {
                acc += self.0[(i, j)] * x[j];
            }
            *o = acc;
        }
    }
    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        let (r, c) = self.0.shape();
        for (j, o) in out.iter_mut().enumerate().take(c) {
            let mut acc = 0.0;
            for i in 0..r {
                acc += self.0[(i, j)] * y[i];
            }
            *o = acc;
        }
    }
    fn to_dense(&self) -> DMatrix<f64> {
        self.0.clone()
    }
}

/// Per-node quadratics plus a shared feasible affine constraint.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    pub n: usize,
    pub d: usize,
    pub mu_f: f64,
    pub l_f: f64,
    pub seed: Option<u64>,
    pub chi_a: Option<f64>,
    /// `p × d`; `p` may be zero (unconstrained).
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: Vec<DMatrix<f64>>,
    pub lin: Vec<DVector<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ProblemDoc {
    n: usize,
    d: usize,
    #[serde(rename = "mu_F")]
    mu_f: f64,
    #[serde(rename = "L_F")]
    l_f: f64,
    seed: Option<u64>,
    p: usize,
    #[serde(rename = "chi_A")]
    chi_a: Option<f64>,
    #[serde(rename = "A")]
    a: Vec<f64>,
    b: Vec<f64>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    lin: Vec<Vec<f64>>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

/// Parameters of a seeded synthetic problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub chi_a: f64,
    pub mu_f: f64,
    pub l_f: f64,
    pub seed: u64,
}

/// Constraint data with a known feasible point.
#[derive(Debug, Clone)]
pub struct ConstraintData {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub x0: DVector<f64>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-node `(C_i, d_i)` with `mu_f I ⪯ C_i ⪯ l_f I`.
///
/// `C_i = Q Λ Qᵀ` with `Q` Haar-orthogonal and `Λ` uniform in `[mu_f, l_f]`;
/// both endpoints appear in at least one node. `d_i` is standard Gaussian.
pub fn generate_quadratic(
    n: usize,
    d: usize,
    mu_f: f64,
    l_f: f64,
    seed: u64,
) -> Result<(Vec<DMatrix<f64>>, Vec<DVector<f64>>)> {
    if n == 0 || d == 0 {
        return Err(invalid("n and d must be at least 1"));
    }
    if !(mu_f > 0.0) || !(mu_f <= l_f) || !l_f.is_finite() {
        return Err(invalid(format!("need 0 < mu_F <= L_F, got mu_F = {mu_f}, L_F = {l_f}")));
    }
    if n == 1 && d == 1 && mu_f < l_f {
        return Err(invalid("a single scalar node cannot carry both spectrum endpoints"));
    }
    let mut rng = stream_rng(seed, 0);
    let mut cs = Vec::with_capacity(n);
    let mut lins = Vec::with_capacity(n);
    for i in 0..n {
        let q = linalg::random_orthogonal(d, &mut rng);
        let mut lam: Vec<f64> = (0..d).map(|_| rng.random_range(mu_f..=l_f)).collect();
        if d >= 2 {
            if i == 0 {
                lam[0] = mu_f;
                lam[d - 1] = l_f;
            }
        } else if i == 0 {
            lam[0] = mu_f;
        } else if i == n - 1 {
            lam[0] = l_f;
        }
        let c = if mu_f == l_f {
            DMatrix::identity(d, d) * mu_f
        } else {
            let m = &q * DMatrix::from_diagonal(&DVector::from_vec(lam)) * q.transpose();
            (&m + m.transpose()) * 0.5
        };
        cs.push(c);
        lins.push(linalg::gaussian_vector(d, &mut rng));
    }
    Ok((cs, lins))
}

/// `A = U Σ [I 0] Vᵀ` with singular values log-uniform in `[1, √chi_a]` (endpoints forced)
/// and `b = A x0` for a Gaussian `x0`.
pub fn generate_constraints(p: usize, d: usize, chi_a: f64, seed: u64) -> Result<ConstraintData> {
    if p == 0 || p > d {
        return Err(invalid(format!("need 1 <= p <= d, got p = {p}, d = {d}")));
    }
    if !(chi_a >= 1.0) || !chi_a.is_finite() {
        return Err(invalid(format!("chi_A must be >= 1, got {chi_a}")));
    }
    if p == 1 && chi_a > 1.0 {
        return Err(invalid("a single-row constraint always has chi_A = 1"));
    }
    let mut rng = stream_rng(seed, 1);
    let top = chi_a.sqrt().ln();
    let mut sv: Vec<f64> = (0..p).map(|_| rng.random_range(0.0..=top).exp()).collect();
    if chi_a == 1.0 {
        sv.iter_mut().for_each(|s| *s = 1.0);
    } else {
        sv[0] = 1.0;
        sv[p - 1] = chi_a.sqrt();
    }
    let u = linalg::random_orthogonal(p, &mut rng);
    let v = linalg::random_orthogonal(d, &mut rng);
    let mut core = DMatrix::zeros(p, d);
    for (i, s) in sv.iter().enumerate() {
        core[(i, i)] = *s;
    }
    let a = u * core * v.transpose();
    let x0 = linalg::gaussian_vector(d, &mut rng);
    let b = &a * &x0;
    Ok(ConstraintData { a, b, x0 })
}

impl QuadraticProblem {
    /// Seeded synthetic instance; `p = 0` gives an unconstrained problem.
    pub fn generate(cfg: &ProblemConfig) -> Result<Self> {
        let (c, lin) = generate_quadratic(cfg.n, cfg.d, cfg.mu_f, cfg.l_f, cfg.seed)?;
        let (a, b) = if cfg.p == 0 {
            (DMatrix::zeros(0, cfg.d), DVector::zeros(0))
        } else {
            let cd = generate_constraints(cfg.p, cfg.d, cfg.chi_a, cfg.seed)?;
            (cd.a, cd.b)
        };
        let prob = Self {
            n: cfg.n,
            d: cfg.d,
            mu_f: cfg.mu_f,
            l_f: cfg.l_f,
            seed: Some(cfg.seed),
            chi_a: Some(cfg.chi_a),
            a,
            b,
            c,
            lin,
        };
        prob.validate()?;
        Ok(prob)
    }

    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    /// Checks the spectrum sandwich on every `C_i` and feasibility of `b`.
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_f > 0.0 && self.mu_f <= self.l_f) {
            return Err(invalid(format!("need 0 < mu_F <= L_F, got {} and {}", self.mu_f, self.l_f)));
        }
        if self.c.len() != self.n || self.lin.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: self.c.len().min(self.lin.len()) });
        }
        if self.a.ncols() != self.d || self.b.len() != self.a.nrows() {
            return Err(Error::DimensionMismatch { expected: self.d, got: self.a.ncols() });
        }
        for (i, (c, l)) in self.c.iter().zip(&self.lin).enumerate() {
            if c.shape() != (self.d, self.d) || l.len() != self.d {
                return Err(Error::DimensionMismatch { expected: self.d, got: l.len() });
            }
            let s = linalg::spectrum(c)?;
            let lo = s.eigenvalues[0];
            let hi = s.lambda_max;
            if lo < self.mu_f - SANDWICH_TOL || hi > self.l_f + SANDWICH_TOL {
                return Err(Error::Invariant(format!(
                    "C_{i} spectrum [{lo}, {hi}] outside [{}, {}]",
                    self.mu_f, self.l_f
                )));
            }
        }
        let resid = feasibility_residual(&self.a, &self.b)?;
        if resid > FEASIBILITY_TOL * self.b.norm().max(f64::MIN_POSITIVE) && resid > 0.0 {
            return Err(Error::Infeasible { residual: resid });
        }
        Ok(())
    }

    /// `F(x) = Σ f_i(x_i)` on a lifted primal vector.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let d = self.d;
        (0..self.n)
            .map(|i| {
                let xi = DVector::from_row_slice(&x[i * d..(i + 1) * d]);
                0.5 * xi.dot(&(&self.c[i] * &xi)) + self.lin[i].dot(&xi)
            })
            .sum()
    }

    /// `∇F(x)` on a lifted primal vector.
    pub fn primal_grad(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        for i in 0..self.n {
            let c = &self.c[i];
            let xi = &x[i * d..(i + 1) * d];
            let oi = &mut out[i * d..(i + 1) * d];
            for r in 0..d {
                let mut acc = self.lin[i][r];
                for k in 0..d {
                    acc += c[(r, k)] * xi[k];
                }
                oi[r] = acc;
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ProblemDoc {
            n: self.n,
            d: self.d,
            mu_f: self.mu_f,
            l_f: self.l_f,
            seed: self.seed,
            p: self.p(),
            chi_a: self.chi_a,
            a: row_major(&self.a),
            b: self.b.iter().copied().collect(),
            c: self.c.iter().map(row_major).collect(),
            lin: self.lin.iter().map(|v| v.iter().copied().collect()).collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    /// Parses and re-validates an instance.
    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ProblemDoc = serde_json::from_str(s)?;
        if doc.a.len() != doc.p * doc.d {
            return Err(Error::DimensionMismatch { expected: doc.p * doc.d, got: doc.a.len() });
        }
        if doc.c.iter().any(|c| c.len() != doc.d * doc.d) {
            return Err(invalid("every C_i must have d*d entries"));
        }
        let prob = Self {
            n: doc.n,
            d: doc.d,
            mu_f: doc.mu_f,
            l_f: doc.l_f,
            seed: doc.seed,
            chi_a: doc.chi_a,
            a: DMatrix::from_row_slice(doc.p, doc.d, &doc.a),
            b: DVector::from_vec(doc.b),
            c: doc.c.iter().map(|c| DMatrix::from_row_slice(doc.d, doc.d, c)).collect(),
            lin: doc.lin.into_iter().map(DVector::from_vec).collect(),
        };
        prob.validate()?;
        Ok(prob)
    }
}

/// Distance from `b` to the column space of `a`.
pub fn feasibility_residual(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<f64> {
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    if a.amax() == 0.0 {
        return Ok(b.norm());
    }
    let basis = linalg::range_basis(a)?;
    let proj = &basis * (basis.transpose() * b);
    Ok((b - proj).norm())
}

/// Primal solution and the multiplier of `A x = b`.
#[derive(Debug, Clone)]
pub struct KktSolution {
    pub x: DVector<f64>,
    pub multiplier: DVector<f64>,
}

/// Solves `min ½xᵀ(ΣC_i)x + (Σd_i)ᵀx  s.t.  Ax = b` through the symmetric KKT system.
pub fn kkt_solve(prob: &QuadraticProblem) -> Result<KktSolution> {
    let c_sum = prob.c.iter().fold(DMatrix::zeros(prob.d, prob.d), |acc, c| acc + c);
    let d_sum = prob.lin.iter().fold(DVector::zeros(prob.d), |acc, l| acc + l);
    kkt_solve_dense(&c_sum, &d_sum, &prob.a, &prob.b)
}

/// KKT solve for explicit data `min ½xᵀQx + cᵀx  s.t.  Ax = b`.
///
/// Rank-deficient `A` is first reduced to `UᵀA x = Uᵀb` with `U` an orthonormal
/// basis of its column space.
pub fn kkt_solve_dense(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<KktSolution> {
    let d = q.nrows();
    let u = if a.nrows() == 0 || a.amax() == 0.0 {
        DMatrix::zeros(a.nrows(), 0)
    } else {
        linalg::range_basis(a)?
    };
    let a_red = u.transpose() * a;
    let b_red = u.transpose() * b;
    let p = a_red.nrows();
    let mut k = DMatrix::zeros(d + p, d + p);
    k.view_mut((0, 0), (d, d)).copy_from(q);
    k.view_mut((0, d), (d, p)).copy_from(&a_red.transpose());
    k.view_mut((d, 0), (p, d)).copy_from(&a_red);
    let mut rhs = DVector::zeros(d + p);
    rhs.rows_mut(0, d).copy_from(&(-c));
    rhs.rows_mut(d, p).copy_from(&b_red);
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Degenerate("singular KKT system".into()))?;
    let x = sol.rows(0, d).into_owned();
    let multiplier = &u * sol.rows(d, p);

    let feas = (a * &x - b).norm();
    if feas > KKT_TOL * (1.0 + b.norm()) {
        return Err(Error::Degenerate(format!("KKT feasibility residual {feas:.3e}")));
    }
    let grad = q * &x + c;
    let stat = if p == 0 {
        grad.norm()
    } else {
        let basis = linalg::range_basis(&a_red.transpose())?;
        (&grad - &basis * (basis.transpose() * &grad)).norm()
    };
    let scale = 1.0 + c.norm() + q.norm() * x.norm();
    if stat > KKT_TOL * scale {
        return Err(Error::Degenerate(format!("KKT stationarity residual {stat:.3e}")));
    }
    Ok(KktSolution { x, multiplier })
}

/// Block sizes of the dual space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DualLayout {
    pub n: usize,
    pub rows: usize,
    pub d: usize,
}

impl DualLayout {
    pub fn p_len(&self) -> usize {
        self.n * self.rows
    }
    pub fn s_len(&self) -> usize {
        self.n * self.d
    }
    pub fn dim(&self) -> usize {
        self.p_len() + self.s_len()
    }
}

/// Dual reformulation of a [`QuadraticProblem`] over a gossip sequence.
#[derive(Debug, Clone)]
pub struct DualProblem {
    problem: QuadraticProblem,
    constraint: Arc<dyn ConstraintOperator>,
    rhs: DVector<f64>,
    gossip: Arc<dyn GossipSequence>,
    layout: DualLayout,
    c_inv: Vec<DMatrix<f64>>,
    q: DVector<f64>,
    gram_eigen: SymmetricEigen,
    sigma_min_plus: f64,
    sigma_max: f64,
    mu_h: f64,
    mu_h_certified: f64,
    l_h: f64,
    lam_min_plus: f64,
    lam_max: f64,
    x_star: DVector<f64>,
}

impl DualProblem {
    /// Dual of `problem` with its own dense constraint.
    pub fn new(problem: QuadraticProblem, gossip: Arc<dyn GossipSequence>) -> Result<Self> {
        let op: Arc<dyn ConstraintOperator> = Arc::new(DenseConstraint(problem.a.clone()));
        let rhs = problem.b.clone();
        Self::with_constraint(problem, gossip, op, rhs)
    }

    /// Dual with a replacement constraint `op x = rhs` describing the same feasible set.
    pub fn with_constraint(
        problem: QuadraticProblem,
        gossip: Arc<dyn GossipSequence>,
        constraint: Arc<dyn ConstraintOperator>,
        rhs: DVector<f64>,
    ) -> Result<Self> {
        problem.validate()?;
        if gossip.node_count() != problem.n {
            return Err(Error::DimensionMismatch { expected: problem.n, got: gossip.node_count() });
        }
        if constraint.cols() != problem.d || rhs.len() != constraint.rows() {
            return Err(Error::DimensionMismatch { expected: problem.d, got: constraint.cols() });
        }
        let layout = DualLayout { n: problem.n, rows: constraint.rows(), d: problem.d };
        let c_inv = problem
            .c
            .iter()
            .map(|c| {
                c.clone()
                    .cholesky()
                    .map(|ch| ch.inverse())
                    .ok_or_else(|| Error::Invariant("C_i is not positive definite".into()))
            })
            .collect::<Result<Vec<_>>>()?;

        let dense = constraint.to_dense();
        let gram = dense.transpose() * &dense;
        let gram = (&gram + gram.transpose()) * 0.5;
        let gram_eigen = linalg::symmetric_eigen(&gram)?;
        let spec = linalg::spectrum_from_values(gram_eigen.values.clone());
        let sigma_max = spec.lambda_max.max(0.0).sqrt();
        let sigma_min_plus = spec.lambda_min_plus.unwrap_or(0.0).sqrt();

        let mu_h = (1.0 + sigma_min_plus * sigma_min_plus) / problem.l_f;
        let mu_h_certified = 1f64.min(sigma_min_plus * sigma_min_plus) / problem.l_f;
        let mu_h_certified = if layout.rows == 0 { 1.0 / problem.l_f } else { mu_h_certified };
        let l_h = (1.0 + sigma_max * sigma_max) / problem.mu_f;
        let lam_min_plus = 1f64.min(gossip.lambda_min_plus());
        let lam_max = 1f64.max(gossip.lambda_max());

        let mut q = DVector::zeros(layout.dim());
        for i in 0..layout.n {
            q.rows_mut(i * layout.rows, layout.rows).copy_from(&rhs);
        }

        let kkt = kkt_solve(&problem)?;
        Ok(Self {
            problem,
            constraint,
            rhs,
            gossip,
            layout,
            c_inv,
            q,
            gram_eigen,
            sigma_min_plus,
            sigma_max,
            mu_h,
            mu_h_certified,
            l_h,
            lam_min_plus,
            lam_max,
            x_star: kkt.x,
        })
    }

    pub fn problem(&self) -> &QuadraticProblem {
        &self.problem
    }
    pub fn constraint(&self) -> &dyn ConstraintOperator {
        self.constraint.as_ref()
    }
    pub fn constraint_rhs(&self) -> &DVector<f64> {
        &self.rhs
    }
    pub fn gossip(&self) -> &dyn GossipSequence {
        self.gossip.as_ref()
    }
    pub fn layout(&self) -> DualLayout {
        self.layout
    }
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }
    pub fn primal_dim(&self) -> usize {
        self.layout.s_len()
    }
    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }
    pub fn sigma_min_plus(&self) -> f64 {
        self.sigma_min_plus
    }
    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }
    /// `(1 + σmin⁺(A)²) / L_F`, the constant used by the parameter schedule.
    pub fn mu_h(&self) -> f64 {
        self.mu_h
    }
    /// `min(1, σmin⁺(A)²) / L_F`, a valid curvature lower bound of `H` on `image PB`.
    pub fn mu_h_certified(&self) -> f64 {
        self.mu_h_certified
    }
    /// `(1 + σmax(A)²) / μ_F`.
    pub fn l_h(&self) -> f64 {
        self.l_h
    }
    /// `min(1, λ̃min⁺)`: lower spectrum bound of the block gossip operator.
    pub fn lam_min_plus(&self) -> f64 {
        self.lam_min_plus
    }
    /// `max(1, λ̃max)`: upper spectrum bound of the block gossip operator.
    pub fn lam_max(&self) -> f64 {
        self.lam_max
    }
    /// Reference primal solution in `R^d`.
    pub fn x_star(&self) -> &DVector<f64> {
        &self.x_star
    }
    /// `1 ⊗ x*`.
    pub fn x_star_lifted(&self) -> DVector<f64> {
        DVector::from_fn(self.layout.s_len(), |r, _| self.x_star[r % self.layout.d])
    }

    /// `Bᵀz = (I ⊗ Aᵀ) p + s`.
    pub fn apply_bt(&self, z: &[f64], out: &mut [f64]) {
        let DualLayout { n, rows, d } = self.layout;
        let (zp, zs) = z.split_at(n * rows);
        out.copy_from_slice(zs);
        if rows == 0 {
            return;
        }
        let mut tmp = vec![0.0; d];
        for i in 0..n {
            self.constraint.apply_transpose(&zp[i * rows..(i + 1) * rows], &mut tmp);
            for (o, t) in out[i * d..(i + 1) * d].iter_mut().zip(&tmp) {
                *o += t;
            }
        }
    }

    /// `B x = ((I ⊗ A) x, x)`.
    pub fn apply_b(&self, x: &[f64], out: &mut [f64]) {
        let DualLayout { n, rows, d } = self.layout;
        let (op, os) = out.split_at_mut(n * rows);
        os.copy_from_slice(x);
        for i in 0..n {
            self.constraint.apply(&x[i * d..(i + 1) * d], &mut op[i * rows..(i + 1) * rows]);
        }
    }

    pub fn bt(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.layout.s_len());
        self.apply_bt(z.as_slice(), out.as_mut_slice());
        out
    }

    pub fn b(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.layout.dim());
        self.apply_b(x.as_slice(), out.as_mut_slice());
        out
    }

    /// Centering projector on the consensus block, identity on the constraint block.
    pub fn project_p(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        let DualLayout { n, rows, d } = self.layout;
        let s = &mut out.as_mut_slice()[n * rows..];
        center_blocks(s, n, d);
        out
    }

    /// `‖v‖²_P`.
    pub fn p_norm_sq(&self, v: &DVector<f64>) -> f64 {
        self.project_p(v).norm_squared()
    }

    /// Block gossip operator `blockdiag(I, W(k) ⊗ I_d)`; returns communication rounds.
    pub fn apply_w(&self, k: u64, v: &DVector<f64>) -> Result<(DVector<f64>, u64)> {
        let DualLayout { n, rows, d } = self.layout;
        let mut out = v.clone();
        let split = n * rows;
        let rounds = self.gossip.apply_lifted(k, d, &v.as_slice()[split..], &mut out.as_mut_slice()[split..])?;
        Ok((out, rounds))
    }

    /// `∇F*(y)` blockwise: `C_i⁻¹ (y_i - d_i)`.
    pub fn conj_grad(&self, y: &[f64], out: &mut [f64]) {
        let d = self.layout.d;
        for i in 0..self.layout.n {
            let ci = &self.c_inv[i];
            let yi = &y[i * d..(i + 1) * d];
            let lin = &self.problem.lin[i];
            for r in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += ci[(r, k)] * (yi[k] - lin[k]);
                }
                out[i * d + r] = acc;
            }
        }
    }

    /// `F*(y) = Σ ½ (y_i - d_i)ᵀ C_i⁻¹ (y_i - d_i)`.
    pub fn conj_value(&self, y: &[f64]) -> f64 {
        let d = self.layout.d;
        (0..self.layout.n)
            .map(|i| {
                let r = DVector::from_row_slice(&y[i * d..(i + 1) * d]) - &self.problem.lin[i];
                0.5 * r.dot(&(&self.c_inv[i] * &r))
            })
            .sum()
    }

    /// `H(z) = F*(Bᵀz) - ⟨z, q⟩`.
    pub fn h(&self, z: &DVector<f64>) -> f64 {
        let y = self.bt(z);
        self.conj_value(y.as_slice()) - z.dot(&self.q)
    }

    /// `B g - q` for a primal estimate `g`.
    pub fn grad_from_primal(&self, g: &DVector<f64>) -> DVector<f64> {
        self.b(g) - &self.q
    }

    /// Exact `∇H(z)` together with `g = ∇F*(Bᵀz)`.
    pub fn grad_h_exact(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let y = self.bt(z);
        let mut g = DVector::zeros(self.layout.s_len());
        self.conj_grad(y.as_slice(), g.as_mut_slice());
        (self.grad_from_primal(&g), g)
    }

    /// Dual Hessian `B C⁻¹ Bᵀ v`.
    pub fn hessian_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let y = self.bt(v);
        let mut w = DVector::zeros(self.layout.s_len());
        let d = self.layout.d;
        for i in 0..self.layout.n {
            let wi = &self.c_inv[i] * y.rows(i * d, d);
            w.rows_mut(i * d, d).copy_from(&wi);
        }
        self.b(&w)
    }

    /// Orthogonal projection onto `image B`.
    pub fn project_image_b(&self, v: &DVector<f64>) -> DVector<f64> {
        // B (BᵀB)⁻¹ Bᵀ with BᵀB = I ⊗ (AᵀA + I)
        let y = self.bt(v);
        let x = self.apply_gram_blocks(&y, |lam| 1.0 / (lam + 1.0), |lam| 1.0 / (lam + 1.0));
        self.b(&x)
    }

    /// Orthogonal projection onto `image PB`, the complement of the flat directions of `H` in `image P`.
    pub fn project_image_pb(&self, v: &DVector<f64>) -> DVector<f64> {
        // PB G⁺ (PB)ᵀ with G = I ⊗ AᵀA + Π ⊗ I_d; Π centers across nodes
        let DualLayout { n, rows, d } = self.layout;
        let pv = self.project_p(v);
        let y = self.bt(&pv);
        let thr = linalg::RANK_TOL * self.gram_eigen.values.last().copied().unwrap_or(0.0).max(1.0);
        let x = self.apply_gram_blocks(&y, |lam| if lam > thr { 1.0 / lam } else { 0.0 }, |lam| 1.0 / (lam + 1.0));
        let mut out = self.b(&x);
        center_blocks(&mut out.as_mut_slice()[n * rows..], n, d);
        out
    }

    /// Applies a spectral function of `AᵀA` to each node-mean component (`mean_fn`)
    /// and each deviation component (`dev_fn`) of `y ∈ R^{nd}`.
    fn apply_gram_blocks(&self, y: &DVector<f64>, mean_fn: impl Fn(f64) -> f64, dev_fn: impl Fn(f64) -> f64) -> DVector<f64> {
        let DualLayout { n, d, .. } = self.layout;
        let v = &self.gram_eigen.vectors;
        let lam = &self.gram_eigen.values;
        // rotate every block into the eigenbasis
        let mut rot = DMatrix::zeros(n, d);
        for i in 0..n {
            let yi = y.rows(i * d, d);
            let r = v.transpose() * yi;
            rot.row_mut(i).copy_from(&r.transpose());
        }
        for j in 0..d {
            let mean = rot.column(j).sum() / n as f64;
            let (mf, df) = (mean_fn(lam[j]), dev_fn(lam[j]));
            for i in 0..n {
                let dev = rot[(i, j)] - mean;
                rot[(i, j)] = mf * mean + df * dev;
            }
        }
        let mut out = DVector::zeros(n * d);
        for i in 0..n {
            let back = v * rot.row(i).transpose();
            out.rows_mut(i * d, d).copy_from(&back);
        }
        out
    }

    /// Minimizer of `H` over `image P` lying in `image PB`, by conjugate gradients on the dual system.
    pub fn dual_optimum(&self) -> Result<DVector<f64>> {
        let dim = self.layout.dim();
        let mut lin_lifted = DVector::zeros(self.layout.s_len());
        for i in 0..self.layout.n {
            let t = &self.c_inv[i] * &self.problem.lin[i];
            lin_lifted.rows_mut(i * self.layout.d, self.layout.d).copy_from(&t);
        }
        // ∇H(z) = B C⁻¹ Bᵀ z - (B C⁻¹ d + q)
        let rhs = self.project_p(&(self.b(&lin_lifted) + &self.q));
        let op = |v: &DVector<f64>| self.project_p(&self.hessian_apply(&self.project_p(v)));
        let mut z = DVector::zeros(dim);
        let mut r = rhs.clone();
        let mut p = r.clone();
        let mut rr = r.norm_squared();
        let target = DUAL_SOLVE_TOL * rhs.norm().max(f64::MIN_POSITIVE);
        for _ in 0..(20 * dim.max(1)) {
            if rr.sqrt() <= target {
                break;
            }
            let ap = op(&p);
            let pap = p.dot(&ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rr / pap;
            z.axpy(alpha, &p, 1.0);
            r.axpy(-alpha, &ap, 1.0);
            let rr_new = r.norm_squared();
            p = &r + &p * (rr_new / rr);
            rr = rr_new;
        }
        let z = self.project_image_pb(&z);
        let resid = (op(&z) - &rhs).norm();
        if resid > 10.0 * target {
            return Err(Error::Degenerate(format!("dual solve residual {resid:.3e}")));
        }
        Ok(z)
    }

    /// Exact smallest and largest Rayleigh quotients of the dual Hessian on `image PB`.
    pub fn dual_curvature_on_image_pb(&self) -> Result<(f64, f64)> {
        let dim = self.layout.dim();
        let mut pb = DMatrix::zeros(dim, self.layout.s_len());
        let mut e = DVector::zeros(self.layout.s_len());
        for j in 0..self.layout.s_len() {
            e[j] = 1.0;
            let col = self.project_p(&self.b(&e));
            pb.column_mut(j).copy_from(&col);
            e[j] = 0.0;
        }
        let basis = linalg::range_basis(&pb)?;
        let mut hq = DMatrix::zeros(dim, basis.ncols());
        for c in 0..basis.ncols() {
            let col = self.hessian_apply(&basis.column(c).into_owned());
            hq.column_mut(c).copy_from(&col);
        }
        let reduced = basis.transpose() * hq;
        let reduced = (&reduced + reduced.transpose()) * 0.5;
        let s = linalg::spectrum(&reduced)?;
        Ok((s.eigenvalues[0], s.lambda_max))
    }
}

fn center_blocks(s: &mut [f64], n: usize, d: usize) {
    if n == 0 {
        return;
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(&s[i * d..(i + 1) * d]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for i in 0..n {
        for (v, m) in s[i * d..(i + 1) * d].iter_mut().zip(&mean) {
            *v -= m;
        }
    }
}

/// How the dual gradient is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleMode {
    /// Closed-form `∇F*`.
    Exact,
    /// `inner_steps` primal gradient steps per call, warm-started.
    Inexact { inner_steps: usize },
}

impl fmt::Display for OracleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleMode::Exact => write!(f, "exact"),
            OracleMode::Inexact { inner_steps } => write!(f, "inexact:{inner_steps}"),
        }
    }
}

impl std::str::FromStr for OracleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "exact" {
            return Ok(OracleMode::Exact);
        }
        if s == "inexact" {
            return Ok(OracleMode::Inexact { inner_steps: DEFAULT_INNER_STEPS });
        }
        if let Some(t) = s.strip_prefix("inexact:") {
            let inner_steps: usize = t.parse().map_err(|_| invalid(format!("bad inner step count '{t}'")))?;
            if inner_steps == 0 {
                return Err(invalid("inner step count must be positive"));
            }
            return Ok(OracleMode::Inexact { inner_steps });
        }
        Err(invalid(format!("unknown oracle mode '{s}'")))
    }
}

/// Dual gradient oracle carrying the warm-start primal estimate.
#[derive(Debug, Clone)]
pub struct DualGradOracle {
    mode: OracleMode,
    g: DVector<f64>,
    calls: u64,
}

impl DualGradOracle {
    pub fn new(mode: OracleMode, primal_dim: usize) -> Self {
        Self { mode, g: DVector::zeros(primal_dim), calls: 0 }
    }

    pub fn mode(&self) -> OracleMode {
        self.mode
    }

    /// Current primal estimate.
    pub fn primal(&self) -> &DVector<f64> {
        &self.g
    }

    pub fn set_warm_start(&mut self, g: DVector<f64>) {
        self.g = g;
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    /// Returns `(∇H(z), g)` with `∇H(z) = B g - q`.
    pub fn grad(&mut self, dp: &DualProblem, z: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        self.calls += 1;
        match self.mode {
            OracleMode::Exact => {
                let (grad, g) = dp.grad_h_exact(z);
                self.g = g.clone();
                Ok((grad, g))
            }
            OracleMode::Inexact { inner_steps } => {
                let y = dp.bt(z);
                let step = 1.0 / dp.problem().l_f;
                let mut grad_f = DVector::zeros(self.g.len());
                for _ in 0..inner_steps {
                    dp.problem().primal_grad(self.g.as_slice(), grad_f.as_mut_slice());
                    grad_f -= &y;
                    self.g.axpy(-step, &grad_f, 1.0);
                }
                if self.g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Invariant("non-finite primal estimate in inexact oracle".into()));
                }
                Ok((dp.grad_from_primal(&self.g), self.g.clone()))
            }
        }
    }
}

/// Dual gradient in one call, for callers that do not keep oracle state.
pub fn grad_h(dp: &DualProblem, z: &DVector<f64>, oracle: &mut DualGradOracle) -> Result<(DVector<f64>, DVector<f64>)> {
    oracle.grad(dp, z)
}

/// Draws a standard Gaussian vector; test and diagnostics helper.
pub fn random_dual_vector<R: Rng + ?Sized>(dp: &DualProblem, rng: &mut R) -> DVector<f64> {
    linalg::gaussian_vector(dp.dim(), rng)
}
