//! Chebyshev preconditioning of the constraint and multi-consensus gossip.
//!
//! The constraint `Ax = b` is replaced by `P(AᵀA) x = P'(AᵀA) Aᵀ b` where
//! `P(x) = 1 - T_K(y(x)) / T_K(-ν)`, `y(x) = -ν + 2x/(λ_hi - λ_lo)` and
//! `P'(x) = P(x)/x`. Each gossip round `W` is replaced by
//! `D(W) = I - (I - W)^K`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::graphs::GossipSequence;
use crate::linalg;
use crate::problems::{feasibility_residual, ConstraintOperator, QuadraticProblem, FEASIBILITY_TOL};

/// Highest degree for which `P'` is evaluated from monomial coefficients.
/// Above it the divided three-term recurrence is used.
pub const MONOMIAL_MAX_DEGREE: usize = 8;
/// Relative gap under which `λ_hi = λ_lo` is treated as a single eigenvalue.
pub const DEGENERATE_GAP: f64 = 1e-9;
/// Upper spectrum slack accepted for a normalized gossip source.
pub const NORMALIZED_TOL: f64 = 1e-9;

/// Symmetric linear operator on `R^dim`.
pub trait LinearOperator: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
}

/// `x ↦ AᵀA x` without forming `AᵀA`.
#[derive(Debug, Clone)]
pub struct GramOperator {
    a: DMatrix<f64>,
}

impl GramOperator {
    pub fn new(a: DMatrix<f64>) -> Self {
        Self { a }
    }
}

impl LinearOperator for GramOperator {
    fn dim(&self) -> usize {
        self.a.ncols()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let ax = &self.a * DVector::from_column_slice(x);
        let r = self.a.transpose() * ax;
        out.copy_from_slice(r.as_slice());
    }
}

/// Densifies a linear operator column by column.
pub fn densify(op: &dyn LinearOperator) -> DMatrix<f64> {
    let n = op.dim();
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        m.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    m
}

/// `λmax / λmin⁺` of a symmetric PSD matrix.
pub fn condition_of(m: &DMatrix<f64>) -> Result<f64> {
    let sym = (m + m.transpose()) * 0.5;
    linalg::spectrum(&sym)?.condition()
}

/// `P(M)` for `M` with positive spectrum in `[lam_lo, lam_hi]`.
#[derive(Debug, Clone)]
pub struct ChebyshevOperator {
    base: Arc<dyn LinearOperator>,
    degree: usize,
    lam_lo: f64,
    lam_hi: f64,
    nu: f64,
    scale: f64,
    /// `T_j(-ν)` for `j = 0..=K`.
    t_at_shift: Vec<f64>,
    degenerate: bool,
}

impl ChebyshevOperator {
    /// Degree `K = ⌊√(lam_hi/lam_lo)⌋`; a single-point spectrum gives `P(x) = x/lam_hi`.
    pub fn new(base: Arc<dyn LinearOperator>, lam_lo: f64, lam_hi: f64) -> Result<Self> {
        if !(lam_lo > 0.0 && lam_lo <= lam_hi && lam_hi.is_finite()) {
            return Err(invalid(format!("need 0 < lam_lo <= lam_hi, got {lam_lo} and {lam_hi}")));
        }
        let degenerate = lam_hi - lam_lo <= DEGENERATE_GAP * lam_hi;
        if degenerate {
            return Ok(Self {
                base,
                degree: 1,
                lam_lo,
                lam_hi,
                nu: f64::INFINITY,
                scale: 0.0,
                t_at_shift: vec![1.0],
                degenerate,
            });
        }
        let chi = lam_hi / lam_lo;
        let degree = ((chi.sqrt() + 1e-9).floor() as usize).max(1);
        let nu = (lam_hi + lam_lo) / (lam_hi - lam_lo);
        let scale = 2.0 / (lam_hi - lam_lo);
        let mut t_at_shift = vec![1.0, -nu];
        for j in 1..degree {
            let next = -2.0 * nu * t_at_shift[j] - t_at_shift[j - 1];
            t_at_shift.push(next);
        }
        t_at_shift.truncate(degree + 1);
        Ok(Self { base, degree, lam_lo, lam_hi, nu, scale, t_at_shift, degenerate })
    }

    /// Bounds taken from the positive spectrum of `AᵀA`.
    pub fn for_matrix(a: &DMatrix<f64>) -> Result<Self> {
        let (lo, hi) = gram_bounds(a)?;
        Self::new(Arc::new(GramOperator::new(a.clone())), lo, hi)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }
    pub fn bounds(&self) -> (f64, f64) {
        (self.lam_lo, self.lam_hi)
    }
    pub fn shift(&self) -> f64 {
        self.nu
    }
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }
    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    fn t_k_shift(&self) -> f64 {
        self.t_at_shift[self.degree]
    }

    /// `y(M) v = -ν v + s M v`.
    fn apply_shifted(&self, v: &[f64], out: &mut [f64]) {
        self.base.apply(v, out);
        for (o, x) in out.iter_mut().zip(v) {
            *o = self.scale * *o - self.nu * x;
        }
    }

    /// Scalar `P(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        if self.degenerate {
            return x / self.lam_hi;
        }
        let y = -self.nu + self.scale * x;
        1.0 - chebyshev_t(self.degree, y) / self.t_k_shift()
    }

    /// Scalar `P'(x) = P(x)/x`, well defined at `x = 0`.
    pub fn eval_quotient(&self, x: f64) -> f64 {
        if self.degenerate {
            return 1.0 / self.lam_hi;
        }
        let y = -self.nu + self.scale * x;
        let (mut u0, mut u1) = (0.0, self.scale);
        for j in 1..self.degree {
            let u2 = 2.0 * y * u1 + 2.0 * self.scale * self.t_at_shift[j] - u0;
            u0 = u1;
            u1 = u2;
        }
        -u1 / self.t_k_shift()
    }

    /// `P(M) x` with exactly `K` applications of `M`.
    pub fn apply_poly(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        if self.degenerate {
            self.base.apply(x, out);
            out.iter_mut().for_each(|o| *o /= self.lam_hi);
            return;
        }
        let mut prev = x.to_vec();
        let mut cur = vec![0.0; n];
        self.apply_shifted(x, &mut cur);
        let mut tmp = vec![0.0; n];
        for _ in 1..self.degree {
            self.apply_shifted(&cur, &mut tmp);
            for i in 0..n {
                tmp[i] = 2.0 * tmp[i] - prev[i];
            }
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut tmp);
        }
        let tk = self.t_k_shift();
        for i in 0..n {
            out[i] = x[i] - cur[i] / tk;
        }
    }

    /// `P'(M) v`.
    ///
    /// For `K ≤ MONOMIAL_MAX_DEGREE` this uses synthetic division of the monomial
    /// coefficients of `P`; larger degrees use the recurrence of
    /// `u_j = (T_j(y(x)) - T_j(-ν)) / x`, which stays accurate where the monomial
    /// form loses all digits.
    pub fn apply_quotient(&self, v: &[f64], out: &mut [f64]) {
        let n = v.len();
        if self.degenerate {
            for i in 0..n {
                out[i] = v[i] / self.lam_hi;
            }
            return;
        }
        if self.degree <= MONOMIAL_MAX_DEGREE {
            let q = self.quotient_coefficients();
            // Horner
            let mut acc: Vec<f64> = v.iter().map(|x| x * q[q.len() - 1]).collect();
            let mut tmp = vec![0.0; n];
            for c in q.iter().rev().skip(1) {
                self.base.apply(&acc, &mut tmp);
                for i in 0..n {
                    acc[i] = tmp[i] + c * v[i];
                }
            }
            out.copy_from_slice(&acc);
            return;
        }
        let mut prev = vec![0.0; n];
        let mut cur: Vec<f64> = v.iter().map(|x| self.scale * x).collect();
        let mut tmp = vec![0.0; n];
        for j in 1..self.degree {
            self.apply_shifted(&cur, &mut tmp);
            let shift = 2.0 * self.scale * self.t_at_shift[j];
            for i in 0..n {
                tmp[i] = 2.0 * tmp[i] + shift * v[i] - prev[i];
            }
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut tmp);
        }
        let tk = self.t_k_shift();
        for i in 0..n {
            out[i] = -cur[i] / tk;
        }
    }

    /// Monomial coefficients of `P`, lowest degree first; the constant term is exactly zero.
    pub fn poly_coefficients(&self) -> Vec<f64> {
        if self.degenerate {
            return vec![0.0, 1.0 / self.lam_hi];
        }
        let k = self.degree;
        let mut c_prev = vec![0.0; k + 1];
        let mut c_cur = vec![0.0; k + 1];
        c_prev[0] = 1.0;
        c_cur[0] = -self.nu;
        c_cur[1] = self.scale;
        for _ in 1..k {
            let mut next = vec![0.0; k + 1];
            for i in 0..=k {
                let shifted = if i > 0 { c_cur[i - 1] } else { 0.0 };
                next[i] = 2.0 * (self.scale * shifted - self.nu * c_cur[i]) - c_prev[i];
            }
            c_prev = c_cur;
            c_cur = next;
        }
        let tk = self.t_k_shift();
        let mut p: Vec<f64> = c_cur.iter().map(|c| -c / tk).collect();
        p[0] = 0.0;
        p
    }

    /// Coefficients of `P(x)/x` by synthetic division at the root `x = 0`.
    pub fn quotient_coefficients(&self) -> Vec<f64> {
        let p = self.poly_coefficients();
        let mut q = vec![0.0; p.len() - 1];
        let mut carry = 0.0;
        for i in (1..p.len()).rev() {
            // carry·root with root = 0
            carry = p[i] + carry * 0.0;
            q[i - 1] = carry;
        }
        debug_assert!(p[0] == 0.0);
        q
    }
}

impl ConstraintOperator for ChebyshevOperator {
    fn rows(&self) -> usize {
        self.dim()
    }
    fn cols(&self) -> usize {
        self.dim()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.apply_poly(x, out);
    }
    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        self.apply_poly(y, out);
    }
    fn mults_per_apply(&self) -> u64 {
        self.degree as u64
    }
}

/// `T_k(y)` by the three-term recurrence.
pub fn chebyshev_t(k: usize, y: f64) -> f64 {
    let (mut t0, mut t1) = (1.0, y);
    if k == 0 {
        return t0;
    }
    for _ in 1..k {
        let t2 = 2.0 * y * t1 - t0;
        t0 = t1;
        t1 = t2;
    }
    t1
}

/// `(λmin⁺, λmax)` of `AᵀA`.
pub fn gram_bounds(a: &DMatrix<f64>) -> Result<(f64, f64)> {
    let gram = a.transpose() * a;
    let s = linalg::spectrum(&((&gram + gram.transpose()) * 0.5))?;
    let lo = s.lambda_min_plus.ok_or(Error::RankZero)?;
    Ok((lo, s.lambda_max))
}

/// Chebyshev-transformed constraint `P(AᵀA) x = b_new`.
#[derive(Debug, Clone)]
pub struct TransformedConstraint {
    pub operator: ChebyshevOperator,
    pub rhs: DVector<f64>,
}

/// Builds `P(AᵀA)` and `b_new = P'(AᵀA) Aᵀ b`; bounds default to the exact positive spectrum of `AᵀA`.
pub fn transform_constraints(a: &DMatrix<f64>, b: &DVector<f64>, bounds: Option<(f64, f64)>) -> Result<TransformedConstraint> {
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: b.len() });
    }
    let resid = feasibility_residual(a, b)?;
    if resid > FEASIBILITY_TOL * b.norm().max(f64::MIN_POSITIVE) && resid > 0.0 {
        return Err(Error::Infeasible { residual: resid });
    }
    let (lo, hi) = match bounds {
        Some(bd) => bd,
        None => gram_bounds(a)?,
    };
    let operator = ChebyshevOperator::new(Arc::new(GramOperator::new(a.clone())), lo, hi)?;
    let atb = a.transpose() * b;
    let mut rhs = DVector::zeros(a.ncols());
    operator.apply_quotient(atb.as_slice(), rhs.as_mut_slice());
    Ok(TransformedConstraint { operator, rhs })
}

/// Copy of `prob` whose constraint is the dense Chebyshev-transformed one.
pub fn transformed_problem(prob: &QuadraticProblem, tc: &TransformedConstraint) -> Result<QuadraticProblem> {
    let mut out = prob.clone();
    out.a = ConstraintOperator::to_dense(&tc.operator);
    out.a = (&out.a + out.a.transpose()) * 0.5;
    out.b = tc.rhs.clone();
    out.validate()?;
    Ok(out)
}

/// `K = ⌈χ ln 2⌉`.
pub fn multi_consensus_rounds(chi: f64) -> Result<usize> {
    if !(chi >= 1.0) || !chi.is_finite() {
        return Err(invalid(format!("condition number must be >= 1, got {chi}")));
    }
    Ok(((chi * std::f64::consts::LN_2) - 1e-12).ceil().max(1.0) as usize)
}

/// Dense `D(W) = I - (I - W)^K`.
pub fn multi_consensus_matrix(w: &DMatrix<f64>, rounds: usize) -> DMatrix<f64> {
    let n = w.nrows();
    let id = DMatrix::identity(n, n);
    let step = &id - w;
    let mut pow = id.clone();
    for _ in 0..rounds {
        pow = &step * pow;
    }
    id - pow
}

/// Gossip sequence `D(W(k))` over a normalized source.
#[derive(Debug, Clone)]
pub struct MultiConsensus {
    source: Arc<dyn GossipSequence>,
    rounds: usize,
    chi: f64,
}

impl MultiConsensus {
    /// Requires `λmax ≤ 1` of the source; `K` follows from its certified `χ`.
    pub fn new(source: Arc<dyn GossipSequence>) -> Result<Self> {
        let hi = source.lambda_max();
        let lo = source.lambda_min_plus();
        if hi > 1.0 + NORMALIZED_TOL {
            return Err(invalid(format!("gossip source is not normalized: lambda_max = {hi}")));
        }
        if !(lo > 0.0 && lo <= hi) {
            return Err(invalid(format!("need 0 < lambda_min_plus <= lambda_max, got {lo} and {hi}")));
        }
        let chi = hi / lo;
        let rounds = multi_consensus_rounds(chi)?;
        Ok(Self { source, rounds, chi })
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// Condition number of the underlying source.
    pub fn source_condition(&self) -> f64 {
        self.chi
    }
}

impl GossipSequence for MultiConsensus {
    fn node_count(&self) -> usize {
        self.source.node_count()
    }

    fn lambda_min_plus(&self) -> f64 {
        1.0 - (1.0 - self.source.lambda_min_plus()).powi(self.rounds as i32)
    }

    fn lambda_max(&self) -> f64 {
        1.0
    }

    fn apply_lifted(&self, k: u64, d: usize, x: &[f64], out: &mut [f64]) -> Result<u64> {
        // r ← (I - W) r, K times; out = x - r
        let mut r = x.to_vec();
        let mut wr = vec![0.0; x.len()];
        let mut comms = 0;
        for _ in 0..self.rounds {
            comms += self.source.apply_lifted(k, d, &r, &mut wr)?;
            for (ri, wi) in r.iter_mut().zip(&wr) {
                *ri -= wi;
            }
        }
        for i in 0..x.len() {
            out[i] = x[i] - r[i];
        }
        Ok(comms)
    }
}
