//! Worst-case two-level instances and a span-propagation oracle.
//!
//! Outer nodes `i` hold `m` subnodes `j` each. Subnode `(i, j)` carries
//!
//! ```text
//! f_ij(x) = α/(2mn) ‖x‖² + (β - α)/8 · { (xᵀM₁x - 2x₁)/|S₁|  on S₁
//!                                      {  xᵀM₂x / |S₂|        on S₂
//!                                      {  xᵀM₃x / |S₃|        on S₃
//! ```
//!
//! where `M₁, M₂, M₃` pick out the coordinate pairs of a Nesterov chain so that
//! `Σ f_ij` is the chain with condition number `κ_g = β/α`. Subnodes of a node are
//! tied together by the constraint `A x_i = 0` with `AᵀA = W' ⊗ I_dim`.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::adom::{step, AdomParams, AdomState};
use crate::error::{invalid, Error, Result};
use crate::graphs::{laplacian, reweighted_line_graph, GossipSequence, GossipSource, ReweightedLine, WeightedGraph};
use crate::linalg;
use crate::problems::{DualGradOracle, DualProblem, OracleMode, QuadraticProblem};

/// Largest truncation dimension accepted by the exhaustive search.
pub const SEARCH_MAX_DIM: usize = 12;
/// Largest subnode count accepted by the exhaustive search.
pub const SEARCH_MAX_SUBNODES: usize = 30;

/// Outer network of an instance.
#[derive(Debug, Clone)]
pub enum OuterNetwork {
    Static(ReweightedLine),
    /// Star graphs whose center cycles through the middle third.
    StarCycle(GossipSource),
}

impl OuterNetwork {
    pub fn node_count(&self) -> usize {
        match self {
            OuterNetwork::Static(g) => g.graph.node_count(),
            OuterNetwork::StarCycle(s) => s.node_count(),
        }
    }

    /// Communication graph used by the `k`-th communication round.
    pub fn graph_at(&self, k: u64) -> WeightedGraph {
        match self {
            OuterNetwork::Static(g) => g.graph.clone(),
            OuterNetwork::StarCycle(s) => s.graph_at(k),
        }
    }

    /// Gossip sequence: the graph Laplacian at every step.
    pub fn gossip(&self) -> Result<Arc<dyn GossipSequence>> {
        Ok(match self {
            OuterNetwork::Static(g) => Arc::new(GossipSource::fixed(&laplacian(&g.graph))?),
            OuterNetwork::StarCycle(s) => Arc::new(s.clone()),
        })
    }
}

/// Which split term a subnode carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    S1,
    S2,
    S3,
}

/// Two-level worst-case instance, truncated to `dim` coordinates.
#[derive(Debug, Clone)]
pub struct WorstCaseInstance {
    pub outer: OuterNetwork,
    pub inner: ReweightedLine,
    pub s1: Vec<(usize, usize)>,
    pub s2: Vec<(usize, usize)>,
    pub s3: Vec<(usize, usize)>,
    pub alpha: f64,
    pub beta: f64,
    pub kappa_g: f64,
    /// Inner-graph hop distance between `S₁` and `S₂`.
    pub delta_a: usize,
    /// Outer communication rounds needed to carry information from `S₂` to `S₃`.
    pub delta_w: usize,
    pub dim: usize,
    pub l_f: f64,
    pub mu_f: f64,
}

fn check_constants(l_f: f64, mu_f: f64, chi_w: f64, chi_a: f64, dim: usize) -> Result<()> {
    if !(mu_f > 0.0 && mu_f <= l_f && l_f.is_finite()) {
        return Err(invalid(format!("need 0 < mu_F <= L_F, got {mu_f} and {l_f}")));
    }
    if !(chi_w >= 1.0 && chi_a >= 1.0) {
        return Err(invalid(format!("condition numbers must be >= 1, got {chi_w} and {chi_a}")));
    }
    if dim < 4 {
        return Err(invalid(format!("truncation dimension must be >= 4, got {dim}")));
    }
    Ok(())
}

/// `(first block, last block)` of a reweighted line: `{1..⌈n/32⌉}` and
/// `{⌈n/32⌉ + ⌈15n/16 - 1⌉ .. n}` (1-based), or `{1}`, `{2}` for the triangle.
pub fn line_blocks(line: &ReweightedLine) -> (Vec<usize>, Vec<usize>) {
    let n = line.size_index;
    if n == 2 {
        return (vec![0], vec![1]);
    }
    let head = n.div_ceil(32);
    let delta = (15.0 / 16.0) * n as f64 - 1.0;
    let start = head + delta.ceil() as usize;
    ((0..head).collect(), ((start - 1)..n).collect())
}

fn cross(a: &[usize], b: &[usize]) -> Vec<(usize, usize)> {
    a.iter().flat_map(|&i| b.iter().map(move |&j| (i, j))).collect()
}

fn nesterov_constants(l_f: f64, mu_f: f64, n: usize, m: usize, s2: usize) -> (f64, f64) {
    let alpha = mu_f * n as f64;
    let beta = 2.0 * s2 as f64 * (l_f - mu_f) / m as f64 + mu_f * n as f64;
    (alpha, beta)
}

/// Instance over a static reweighted line (or triangle) outer graph.
pub fn build_static_instance(l_f: f64, mu_f: f64, chi_w: f64, chi_a: f64, dim: usize) -> Result<WorstCaseInstance> {
    check_constants(l_f, mu_f, chi_w, chi_a, dim)?;
    let outer = reweighted_line_graph(1.0 / chi_w)?;
    let inner = reweighted_line_graph(1.0 / chi_a)?;
    let (s2g, s3g) = line_blocks(&outer);
    let (s1g_in, s2g_in) = line_blocks(&inner);
    let s1 = cross(&s2g, &s1g_in);
    let s2 = cross(&s2g, &s2g_in);
    let s3 = cross(&s3g, &s2g_in);
    let n = outer.graph.node_count();
    let m = inner.graph.node_count();
    let (alpha, beta) = nesterov_constants(l_f, mu_f, n, m, s2.len());
    let delta_a = inner
        .graph
        .set_distance(&s1g_in, &s2g_in)
        .ok_or(Error::Disconnected)?;
    let delta_w = outer.graph.set_distance(&s2g, &s3g).ok_or(Error::Disconnected)?;
    Ok(WorstCaseInstance {
        outer: OuterNetwork::Static(outer),
        inner,
        s1,
        s2,
        s3,
        alpha,
        beta,
        kappa_g: beta / alpha,
        delta_a,
        delta_w,
        dim,
        l_f,
        mu_f,
    })
}

/// Instance over star graphs on `n = 3⌊χ_W/3⌋` nodes with centers cycling through the middle third.
///
/// `S₃` holds every subnode of the last third that touches an inner edge.
pub fn build_tv_instance(l_f: f64, mu_f: f64, chi_w: f64, chi_a: f64, dim: usize) -> Result<WorstCaseInstance> {
    check_constants(l_f, mu_f, chi_w, chi_a, dim)?;
    if chi_w < 3.0 {
        return Err(invalid(format!("time-varying instance needs chi_W >= 3, got {chi_w}")));
    }
    let n = 3 * (chi_w / 3.0).floor() as usize;
    let source = GossipSource::star_cycle(n)?;
    let inner = reweighted_line_graph(1.0 / chi_a)?;
    let m = inner.graph.node_count();
    let (s1g_in, s2g_in) = line_blocks(&inner);
    let third = n / 3;
    let v1: Vec<usize> = (0..third).collect();
    let v3: Vec<usize> = (2 * third..n).collect();
    let touched: Vec<usize> = {
        let adj = inner.graph.neighbors();
        (0..m).filter(|&j| !adj[j].is_empty()).collect()
    };
    let s1 = cross(&v1, &s1g_in);
    let s2 = cross(&v1, &s2g_in);
    let s3 = cross(&v3, &touched);
    let (alpha, beta) = nesterov_constants(l_f, mu_f, n, m, s2.len());
    let delta_a = inner
        .graph
        .set_distance(&s1g_in, &s2g_in)
        .ok_or(Error::Disconnected)?;
    let outer = OuterNetwork::StarCycle(source);
    let delta_w = flooding_rounds(&outer, &v1, &v3).ok_or(Error::Disconnected)?;
    Ok(WorstCaseInstance {
        outer,
        inner,
        s1,
        s2,
        s3,
        alpha,
        beta,
        kappa_g: beta / alpha,
        delta_a,
        delta_w,
        dim,
        l_f,
        mu_f,
    })
}

/// Synchronous rounds until information held by `from` first reaches `to`.
pub fn flooding_rounds(outer: &OuterNetwork, from: &[usize], to: &[usize]) -> Option<usize> {
    let n = outer.node_count();
    let mut reached = vec![false; n];
    from.iter().for_each(|&i| reached[i] = true);
    if to.iter().any(|&i| reached[i]) {
        return Some(0);
    }
    for k in 0..(4 * n * n) {
        let adj = outer.graph_at(k as u64).neighbors();
        let prev = reached.clone();
        for i in 0..n {
            if adj[i].iter().any(|&j| prev[j]) {
                reached[i] = true;
            }
        }
        if to.iter().any(|&i| reached[i]) {
            return Some(k + 1);
        }
    }
    None
}

/// `x*_k = q^k` with `q = (√κ - 1)/(√κ + 1)`.
pub fn nesterov_solution(kappa_g: f64, k: usize) -> f64 {
    nesterov_ratio(kappa_g).powi(k as i32)
}

pub fn nesterov_ratio(kappa_g: f64) -> f64 {
    let s = kappa_g.sqrt();
    (s - 1.0) / (s + 1.0)
}

/// `Σ_{k > s} (x*_k)² = q^{2(s+1)} / (1 - q²)`.
pub fn tail_beyond(kappa_g: f64, s: usize) -> Result<f64> {
    if !(kappa_g > 1.0) || !kappa_g.is_finite() {
        return Err(Error::Degenerate(format!("kappa_g = {kappa_g}: the tail bound is 0")));
    }
    let q = nesterov_ratio(kappa_g);
    Ok(q.powi(2 * (s as i32 + 1)) / (1.0 - q * q))
}

/// `Σ_{k ≥ N+2} (x*_k)²`, the lower bound on `‖x^N - x*‖²`.
pub fn nesterov_residual(kappa_g: f64, iterations: usize) -> Result<f64> {
    tail_beyond(kappa_g, iterations + 1)
}

impl WorstCaseInstance {
    pub fn n(&self) -> usize {
        self.outer.node_count()
    }

    pub fn m(&self) -> usize {
        self.inner.graph.node_count()
    }

    pub fn subnode_count(&self) -> usize {
        self.n() * self.m()
    }

    /// Roles of subnode `(i, j)`.
    pub fn roles(&self, i: usize, j: usize) -> Vec<Role> {
        let mut r = Vec::new();
        for (set, role) in [(&self.s1, Role::S1), (&self.s2, Role::S2), (&self.s3, Role::S3)] {
            if set.contains(&(i, j)) {
                r.push(role);
            }
        }
        r
    }

    fn set_size(&self, role: Role) -> usize {
        match role {
            Role::S1 => self.s1.len(),
            Role::S2 => self.s2.len(),
            Role::S3 => self.s3.len(),
        }
    }

    /// `M₁`, `M₂`, `M₃` truncated to `dim`.
    pub fn split_matrix(&self, role: Role) -> DMatrix<f64> {
        split_matrix(role, self.dim)
    }

    /// Hessian of `f_ij`.
    pub fn hessian(&self, i: usize, j: usize) -> DMatrix<f64> {
        let mn = (self.n() * self.m()) as f64;
        let mut h = DMatrix::identity(self.dim, self.dim) * (self.alpha / mn);
        for role in self.roles(i, j) {
            h += self.split_matrix(role) * ((self.beta - self.alpha) / 4.0 / self.set_size(role) as f64);
        }
        h
    }

    /// Linear coefficient of `f_ij`.
    pub fn linear(&self, i: usize, j: usize) -> DVector<f64> {
        let mut d = DVector::zeros(self.dim);
        if self.roles(i, j).contains(&Role::S1) {
            d[0] = -(self.beta - self.alpha) / 4.0 / self.s1.len() as f64;
        }
        d
    }

    /// Minimizer of `Σ f_ij` on the truncated space.
    pub fn truncated_solution(&self) -> Result<DVector<f64>> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        let mut d = DVector::zeros(self.dim);
        for i in 0..self.n() {
            for j in 0..self.m() {
                h += self.hessian(i, j);
                d += self.linear(i, j);
            }
        }
        h.lu().solve(&(-d)).ok_or_else(|| Error::Degenerate("singular summed Hessian".into()))
    }

    /// `(μ, L)` of `f_i` restricted to consensual inner variables, per outer node.
    pub fn node_constants(&self) -> Result<Vec<(f64, f64)>> {
        (0..self.n())
            .map(|i| {
                let h = (0..self.m()).fold(DMatrix::zeros(self.dim, self.dim), |acc, j| acc + self.hessian(i, j));
                let s = linalg::spectrum(&h)?;
                Ok((s.eigenvalues[0], s.lambda_max))
            })
            .collect()
    }

    /// `A = Λ₊^{1/2} V₊ᵀ ⊗ I_dim`, a full-row-rank factor with `AᵀA = W' ⊗ I_dim`.
    pub fn constraint_matrix(&self) -> Result<DMatrix<f64>> {
        let w = laplacian(&self.inner.graph);
        let eig = linalg::symmetric_eigen(w.matrix())?;
        let thr = linalg::RANK_TOL * w.lambda_max().max(1.0);
        let keep: Vec<usize> = (0..eig.values.len()).filter(|&k| eig.values[k] > thr).collect();
        let m = self.m();
        let small = DMatrix::from_fn(keep.len(), m, |r, c| eig.values[keep[r]].sqrt() * eig.vectors[(c, keep[r])]);
        Ok(small.kronecker(&DMatrix::identity(self.dim, self.dim)))
    }

    /// The instance as a constrained quadratic problem over `n` nodes with `d = m·dim`.
    ///
    /// `mu_F` and `L_F` of the problem are the measured extreme eigenvalues of the node Hessians.
    pub fn to_problem(&self) -> Result<QuadraticProblem> {
        let (n, m, dim) = (self.n(), self.m(), self.dim);
        let d = m * dim;
        let mut cs = Vec::with_capacity(n);
        let mut lins = Vec::with_capacity(n);
        for i in 0..n {
            let mut c = DMatrix::zeros(d, d);
            let mut l = DVector::zeros(d);
            for j in 0..m {
                c.view_mut((j * dim, j * dim), (dim, dim)).copy_from(&self.hessian(i, j));
                l.rows_mut(j * dim, dim).copy_from(&self.linear(i, j));
            }
            cs.push(c);
            lins.push(l);
        }
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for c in &cs {
            let s = linalg::spectrum(c)?;
            lo = lo.min(s.eigenvalues[0]);
            hi = hi.max(s.lambda_max);
        }
        let a = self.constraint_matrix()?;
        let prob = QuadraticProblem {
            n,
            d,
            mu_f: lo,
            l_f: hi,
            seed: None,
            chi_a: None,
            b: DVector::zeros(a.nrows()),
            a,
            c: cs,
            lin: lins,
        };
        prob.validate()?;
        Ok(prob)
    }

    pub fn to_json(&self) -> Result<String> {
        let (kind, outer_graph, outer_a) = match &self.outer {
            OuterNetwork::Static(g) => ("static", Some(g.graph.clone()), Some(g.a)),
            OuterNetwork::StarCycle(_) => ("time_varying", None, None),
        };
        let doc = InstanceDoc {
            kind: kind.into(),
            n: self.n(),
            m: self.m(),
            dim: self.dim,
            outer_graph,
            outer_a,
            inner_graph: self.inner.graph.clone(),
            inner_a: self.inner.a,
            s1: self.s1.clone(),
            s2: self.s2.clone(),
            s3: self.s3.clone(),
            alpha: self.alpha,
            beta: self.beta,
            kappa_g: self.kappa_g,
            delta_a: self.delta_a,
            delta_w: self.delta_w,
            l_f: self.l_f,
            mu_f: self.mu_f,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceDoc {
    kind: String,
    n: usize,
    m: usize,
    dim: usize,
    outer_graph: Option<WeightedGraph>,
    outer_a: Option<f64>,
    inner_graph: WeightedGraph,
    inner_a: f64,
    s1: Vec<(usize, usize)>,
    s2: Vec<(usize, usize)>,
    s3: Vec<(usize, usize)>,
    alpha: f64,
    beta: f64,
    kappa_g: f64,
    delta_a: usize,
    delta_w: usize,
    #[serde(rename = "L_F")]
    l_f: f64,
    #[serde(rename = "mu_F")]
    mu_f: f64,
}

/// Pairs `(j, j+1)` (1-based) belonging to a role: `j ≡ 0 (mod 3)` for `S₁`, `1` for `S₂`, `2` for `S₃`.
fn role_owns_pair(role: Role, j: usize) -> bool {
    match role {
        Role::S1 => j % 3 == 0 && j >= 3,
        Role::S2 => j % 3 == 1,
        Role::S3 => j % 3 == 2,
    }
}

/// `M_k` truncated to `dim`, with `M₁` carrying the extra `1` at coordinate 1.
pub fn split_matrix(role: Role, dim: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    if role == Role::S1 {
        m[(0, 0)] = 1.0;
    }
    for j in 1..dim {
        if role_owns_pair(role, j) {
            let (a, b) = (j - 1, j);
            m[(a, a)] += 1.0;
            m[(b, b)] += 1.0;
            m[(a, b)] -= 1.0;
            m[(b, a)] -= 1.0;
        }
    }
    m
}

/// Action budget of the span model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Budget {
    pub computes: usize,
    pub comms: usize,
    pub mults: usize,
}

/// Synchronous actions of the span model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    /// Every subnode evaluates its local gradient (or conjugate gradient).
    Compute,
    /// One outer gossip round: subnode `(i, j)` merges with `(i', j)` for outer neighbors `i'`.
    Comm,
    /// One multiplication by `AᵀA`: subnode `(i, j)` merges with `(i, j')` for inner neighbors `j'`.
    Mult,
}

/// Nonzero prefix length of every subnode plus the actions spent so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanState {
    pub prefix: Vec<usize>,
    pub used: Budget,
}

impl SpanState {
    pub fn new(inst: &WorstCaseInstance) -> Self {
        Self { prefix: vec![0; inst.subnode_count()], used: Budget::default() }
    }

    pub fn max_prefix(&self) -> usize {
        self.prefix.iter().copied().max().unwrap_or(0)
    }

    pub fn apply(&mut self, ctx: &SpanContext, action: Action) {
        let next = ctx.successor(&self.prefix, self.used.comms, action);
        self.prefix = next;
        match action {
            Action::Compute => self.used.computes += 1,
            Action::Comm => self.used.comms += 1,
            Action::Mult => self.used.mults += 1,
        }
    }
}

/// Precomputed adjacency and roles for fast span updates.
#[derive(Debug, Clone)]
pub struct SpanContext {
    n: usize,
    m: usize,
    dim: usize,
    /// Extension bit per subnode: bit r set if the subnode carries role r.
    roles: Vec<u8>,
    inner: Vec<Vec<usize>>,
    outer: OuterNetwork,
    static_outer: Option<Vec<Vec<usize>>>,
}

impl SpanContext {
    pub fn new(inst: &WorstCaseInstance) -> Self {
        let (n, m) = (inst.n(), inst.m());
        let mut roles = vec![0u8; n * m];
        for (set, bit) in [(&inst.s1, 1u8), (&inst.s2, 2), (&inst.s3, 4)] {
            for &(i, j) in set {
                roles[i * m + j] |= bit;
            }
        }
        let static_outer = match &inst.outer {
            OuterNetwork::Static(g) => Some(g.graph.neighbors()),
            OuterNetwork::StarCycle(_) => None,
        };
        Self { n, m, dim: inst.dim, roles, inner: inst.inner.graph.neighbors(), outer: inst.outer.clone(), static_outer }
    }

    fn extends(&self, bits: u8, s: usize) -> bool {
        if s >= self.dim {
            return false;
        }
        match s {
            0 => bits & 1 != 0,
            _ if s % 3 == 1 => bits & 2 != 0,
            _ if s % 3 == 2 => bits & 4 != 0,
            _ => bits & 1 != 0,
        }
    }

    fn successor(&self, prefix: &[usize], comms_used: usize, action: Action) -> Vec<usize> {
        let (n, m) = (self.n, self.m);
        let mut next = prefix.to_vec();
        match action {
            Action::Compute => {
                for (idx, p) in next.iter_mut().enumerate() {
                    if self.extends(self.roles[idx], *p) {
                        *p += 1;
                    }
                }
            }
            Action::Mult => {
                for i in 0..n {
                    for j in 0..m {
                        for &jj in &self.inner[j] {
                            next[i * m + j] = next[i * m + j].max(prefix[i * m + jj]);
                        }
                    }
                }
            }
            Action::Comm => {
                let dynamic;
                let adj = match &self.static_outer {
                    Some(a) => a,
                    None => {
                        dynamic = self.outer.graph_at(comms_used as u64).neighbors();
                        &dynamic
                    }
                };
                for i in 0..n {
                    for &ii in &adj[i] {
                        for j in 0..m {
                            next[i * m + j] = next[i * m + j].max(prefix[ii * m + j]);
                        }
                    }
                }
            }
        }
        next
    }
}

/// Result of an exhaustive span search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanReport {
    pub budget: Budget,
    pub prefix: usize,
    /// Lower bound on `‖x - x*‖²` at any subnode for iterates with this prefix.
    pub certified_bound: Option<f64>,
}

fn dominated(a: &[usize], b: &[usize]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

/// Largest prefix reachable within `budget` over every interleaving of actions.
///
/// The search is layered by the number of actions taken. States sharing the
/// same spent budget are pruned when componentwise dominated, which is exact
/// because every action is monotone in the prefix vector.
pub fn span_progress(inst: &WorstCaseInstance, budget: Budget) -> Result<SpanReport> {
    if inst.dim > SEARCH_MAX_DIM || inst.subnode_count() > SEARCH_MAX_SUBNODES {
        return Err(Error::TooLarge(format!(
            "dim = {} (max {SEARCH_MAX_DIM}), subnodes = {} (max {SEARCH_MAX_SUBNODES})",
            inst.dim,
            inst.subnode_count()
        )));
    }
    let ctx = SpanContext::new(inst);
    let start = vec![0usize; inst.subnode_count()];
    let mut best = 0;
    let mut layer: HashMap<Budget, Vec<Vec<usize>>> = HashMap::new();
    layer.insert(Budget::default(), vec![start]);
    let total = budget.computes + budget.comms + budget.mults;
    for _ in 0..total {
        let mut next: HashMap<Budget, Vec<Vec<usize>>> = HashMap::new();
        for (used, states) in &layer {
            for s in states {
                best = best.max(s.iter().copied().max().unwrap_or(0));
                for action in [Action::Compute, Action::Comm, Action::Mult] {
                    let mut u = *used;
                    match action {
                        Action::Compute if u.computes < budget.computes => u.computes += 1,
                        Action::Comm if u.comms < budget.comms => u.comms += 1,
                        Action::Mult if u.mults < budget.mults => u.mults += 1,
                        _ => continue,
                    }
                    let succ = ctx.successor(s, used.comms, action);
                    let bucket = next.entry(u).or_default();
                    if bucket.iter().any(|b| dominated(&succ, b)) {
                        continue;
                    }
                    bucket.retain(|b| !dominated(b, &succ));
                    bucket.push(succ);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        layer = next;
    }
    for states in layer.values() {
        for s in states {
            best = best.max(s.iter().copied().max().unwrap_or(0));
        }
    }
    let certified_bound = if best < inst.dim { tail_beyond(inst.kappa_g, best).ok() } else { None };
    Ok(SpanReport { budget, prefix: best, certified_bound })
}

/// One iteration of the lower-bound probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub k: usize,
    /// Largest prefix the span model allows after `k` iterations.
    pub prefix: usize,
    /// Smallest `‖g_ij - x*‖²` over subnodes, against the untruncated solution.
    pub err2_min: f64,
    /// `Σ_{k > prefix} (x*_k)²` while `prefix < dim`.
    pub bound: Option<f64>,
}

/// Outcome of running the dual method on a worst-case instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdomProbe {
    pub records: Vec<ProbeRecord>,
    pub violations: usize,
    pub budget: Budget,
}

/// Runs the dual method with the exact oracle and compares every subnode's error
/// to the span-model bound.
///
/// Each iteration is accounted as one multiplication by `AᵀA`, one outer
/// round and one local computation, applied in that order; this over-approximates
/// the span reachable by the method, so the bound stays valid.
pub fn probe_adom(inst: &WorstCaseInstance, iterations: usize) -> Result<AdomProbe> {
    if iterations == 0 {
        return Err(invalid("iteration count must be at least 1"));
    }
    let prob = inst.to_problem()?;
    let dp = DualProblem::new(prob, inst.outer.gossip()?)?;
    let params = AdomParams::for_problem(&dp)?;
    let mut state = AdomState::zeros(&dp);
    let mut oracle = DualGradOracle::new(OracleMode::Exact, dp.primal_dim());
    let ctx = SpanContext::new(inst);
    let mut span = SpanState::new(inst);

    let dim = inst.dim;
    let x_inf: Vec<f64> = (1..=dim).map(|k| nesterov_solution(inst.kappa_g, k)).collect();
    let beyond = tail_beyond(inst.kappa_g, dim)?;
    let mut records = Vec::with_capacity(iterations);
    let mut violations = 0;
    for k in 1..=iterations {
        step(&mut state, &params, &dp, &mut oracle)?;
        for a in [Action::Mult, Action::Comm, Action::Compute] {
            span.apply(&ctx, a);
        }
        let err2_min = state
            .g
            .as_slice()
            .chunks(dim)
            .map(|block| block.iter().zip(&x_inf).map(|(g, x)| (g - x) * (g - x)).sum::<f64>() + beyond)
            .fold(f64::INFINITY, f64::min);
        let prefix = span.max_prefix();
        let bound = if prefix < dim { Some(tail_beyond(inst.kappa_g, prefix)?) } else { None };
        if let Some(b) = bound {
            if err2_min < b * (1.0 - 1e-9) {
                violations += 1;
            }
        }
        records.push(ProbeRecord { k, prefix, err2_min, bound });
    }
    Ok(AdomProbe { records, violations, budget: span.used })
}

/// Fewest synchronous iterations of the `(Mult, Comm, Compute)` schedule after which
/// some subnode reaches `target` nonzero coordinates.
pub fn schedule_iterations_to(inst: &WorstCaseInstance, target: usize) -> Option<usize> {
    let ctx = SpanContext::new(inst);
    let mut span = SpanState::new(inst);
    let limit = 4 * (target + 1) * (inst.delta_a + inst.delta_w + 3) * inst.subnode_count().max(1);
    for k in 1..=limit {
        for a in [Action::Mult, Action::Comm, Action::Compute] {
            span.apply(&ctx, a);
        }
        if span.max_prefix() >= target {
            return Some(k);
        }
    }
    None
}
