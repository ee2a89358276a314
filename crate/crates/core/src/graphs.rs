//! Graphs, gossip matrices and time-varying gossip sources.
//!
//! A gossip matrix of an undirected graph is symmetric PSD, nonzero only on
//! edges and the diagonal, and its kernel is spanned by the all-ones vector
//! when the graph is connected. Multiplying by it is one communication round.

use std::collections::{BTreeSet, VecDeque};
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Spectrum};

/// Tolerance on `|gamma(W_a) - target|` when reweighting a line graph.
pub const BISECTION_TOL: f64 = 1e-8;
pub const BISECTION_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Undirected weighted graph; each pair is stored once with `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphDoc", into = "GraphDoc")]
pub struct WeightedGraph {
    node_count: usize,
    edges: Vec<Edge>,
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl TryFrom<GraphDoc> for WeightedGraph {
    type Error = Error;
    fn try_from(doc: GraphDoc) -> Result<Self> {
        WeightedGraph::new(doc.n, doc.edges)
    }
}

impl From<WeightedGraph> for GraphDoc {
    fn from(g: WeightedGraph) -> Self {
        GraphDoc { n: g.node_count, edges: g.edges.iter().map(|e| (e.i, e.j, e.weight)).collect() }
    }
}

impl WeightedGraph {
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        if node_count == 0 {
            return Err(invalid("graph needs at least one node"));
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (i, j, w) in edges {
            if i == j {
                return Err(invalid(format!("self-loop at node {i}")));
            }
            if i >= node_count || j >= node_count {
                return Err(invalid(format!("edge ({i},{j}) out of range for {node_count} nodes")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(invalid(format!("edge ({i},{j}) has invalid weight {w}")));
            }
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            if !seen.insert((a, b)) {
                return Err(invalid(format!("duplicate edge ({a},{b})")));
            }
            out.push(Edge { i: a, j: b, weight: w });
        }
        Ok(Self { node_count, edges: out })
    }

    /// Path `0 - 1 - ... - (n-1)` with unit weights.
    pub fn path(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (i - 1, i, 1.0)))
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::new(n, (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j, 1.0))))
    }

    /// Ring visiting the nodes in the given order.
    pub fn ring(order: &[usize]) -> Result<Self> {
        let n = order.len();
        if n < 3 {
            return Err(invalid("a ring needs at least 3 nodes"));
        }
        Self::new(n, (0..n).map(|t| (order[t], order[(t + 1) % n], 1.0)))
    }

    pub fn star(n: usize, center: usize) -> Result<Self> {
        Self::new(n, (0..n).filter(|&i| i != center).map(|i| (center, i, 1.0)))
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.edges.iter().any(|e| e.i == a && e.j == b && e.weight > 0.0)
    }

    /// Adjacency lists over edges with positive weight.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for e in self.edges.iter().filter(|e| e.weight > 0.0) {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors().iter().map(Vec::len).collect()
    }

    /// Hop distance from the nearest of `sources` to every node (`None` if unreachable).
    pub fn bfs_distances(&self, sources: &[usize]) -> Vec<Option<usize>> {
        let adj = self.neighbors();
        let mut dist = vec![None; self.node_count];
        let mut queue = VecDeque::new();
        for &s in sources {
            if dist[s].is_none() {
                dist[s] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &v in &adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Minimum hop distance between two node sets.
    pub fn set_distance(&self, from: &[usize], to: &[usize]) -> Option<usize> {
        let dist = self.bfs_distances(from);
        to.iter().filter_map(|&t| dist[t]).min()
    }

    pub fn is_connected(&self) -> bool {
        self.bfs_distances(&[0]).iter().all(Option::is_some)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Dense gossip matrix with cached spectrum bounds.
#[derive(Debug, Clone)]
pub struct GossipMatrix {
    matrix: DMatrix<f64>,
    spectrum: Spectrum,
}

impl GossipMatrix {
    /// Wraps a symmetric PSD matrix whose kernel contains the all-ones vector.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let spectrum = linalg::spectrum(&matrix)?;
        let gm = Self { matrix, spectrum };
        gm.check_psd_and_kernel()?;
        Ok(gm)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn order(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn lambda_min_plus(&self) -> Option<f64> {
        self.spectrum.lambda_min_plus
    }

    pub fn lambda_max(&self) -> f64 {
        self.spectrum.lambda_max
    }

    pub fn kernel_dim(&self) -> usize {
        self.spectrum.kernel_dim()
    }

    /// True when the kernel is exactly the consensus line.
    pub fn is_connected(&self) -> bool {
        self.kernel_dim() == 1
    }

    fn check_psd_and_kernel(&self) -> Result<()> {
        let lo = self.spectrum.eigenvalues.first().copied().unwrap_or(0.0);
        if lo < -1e-10 {
            return Err(Error::Invariant(format!("gossip matrix not PSD: eigenvalue {lo:.3e}")));
        }
        let ones = DVector::from_element(self.order(), 1.0);
        let scale = self.matrix.norm().max(f64::MIN_POSITIVE);
        let r = (&self.matrix * ones).norm();
        if r > 1e-10 * scale {
            return Err(Error::Invariant(format!("W·1 = {r:.3e} is not zero")));
        }
        Ok(())
    }

    /// Checks all gossip invariants, including the sparsity pattern of `g`.
    pub fn check_invariants(&self, g: &WeightedGraph) -> Result<()> {
        linalg::check_symmetric(&self.matrix)?;
        self.check_psd_and_kernel()?;
        let n = self.order();
        for i in 0..n {
            for j in 0..n {
                if i != j && self.matrix[(i, j)] != 0.0 && !g.has_edge(i, j) {
                    return Err(Error::Invariant(format!("entry ({i},{j}) nonzero without an edge")));
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        linalg::matrix_to_csv(&self.matrix)
    }
}

fn laplacian_matrix(g: &WeightedGraph) -> DMatrix<f64> {
    let n = g.node_count();
    let mut w = DMatrix::zeros(n, n);
    for e in g.edges() {
        w[(e.i, e.j)] -= e.weight;
        w[(e.j, e.i)] -= e.weight;
        w[(e.i, e.i)] += e.weight;
        w[(e.j, e.j)] += e.weight;
    }
    w
}

/// Weighted Laplacian: `-w_ij` off the diagonal, row weight sums on it.
///
/// Disconnected graphs are accepted; `GossipMatrix::is_connected` reports it.
pub fn laplacian(g: &WeightedGraph) -> GossipMatrix {
    let matrix = laplacian_matrix(g);
    let spectrum = linalg::spectrum(&matrix).expect("Laplacian is symmetric by construction");
    GossipMatrix { matrix, spectrum }
}

fn metropolis_matrix(g: &WeightedGraph) -> DMatrix<f64> {
    let n = g.node_count();
    let deg = g.degrees();
    let mut m = DMatrix::zeros(n, n);
    for e in g.edges().iter().filter(|e| e.weight > 0.0) {
        let w = 1.0 / (1.0 + deg[e.i].max(deg[e.j]) as f64);
        m[(e.i, e.j)] = w;
        m[(e.j, e.i)] = w;
    }
    for i in 0..n {
        let row: f64 = m.row(i).sum();
        m[(i, i)] = 1.0 - row;
    }
    DMatrix::identity(n, n) - m
}

/// `I - M` for the Metropolis-weight mixing matrix `M` of a connected graph.
///
/// The spectrum of `I - M` lies in `[0, 2)`; it is not bounded by 1 in general
/// (even rings reach 4/3). Use [`GossipSource::normalized`] for `lambda_max <= 1`.
pub fn metropolis_gossip(g: &WeightedGraph) -> Result<GossipMatrix> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    GossipMatrix::from_matrix(metropolis_matrix(g))
}

/// `gamma(W) = lambda_min_plus / lambda_max` of a Laplacian (0 when disconnected).
pub fn spectral_ratio(g: &WeightedGraph) -> f64 {
    let w = laplacian(g);
    if !w.is_connected() {
        return 0.0;
    }
    match w.lambda_min_plus() {
        Some(lo) => lo / w.lambda_max(),
        None => 0.0,
    }
}

/// `(1 - cos(pi/n)) / (1 + cos(pi/n))`, the spectral ratio of the unweighted path on `n` nodes.
pub fn gamma_n(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(invalid(format!("gamma_n needs n >= 2, got {n}")));
    }
    if n == 2 {
        // cos(pi/2) rounds to 6e-17
        return Ok(1.0);
    }
    let c = (PI / n as f64).cos();
    Ok((1.0 - c) / (1.0 + c))
}

/// The unique `n >= 2` with `gamma_n >= gamma > gamma_{n+1}`.
pub fn select_size(gamma: f64) -> Result<usize> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(invalid(format!("target ratio {gamma} outside (0, 1]")));
    }
    // gamma_n carries rounding (gamma_3 evaluates just below 1/3)
    let slack = 1e-12;
    let mut n = 2;
    while gamma_n(n + 1)? >= gamma - slack {
        n += 1;
    }
    Ok(n)
}

/// Line (or triangle) graph reweighted to hit a target spectral ratio.
#[derive(Debug, Clone)]
pub struct ReweightedLine {
    pub graph: WeightedGraph,
    /// Index from the `gamma_n` sequence; 2 selects the triangle branch.
    pub size_index: usize,
    pub a: f64,
    pub gamma: f64,
}

fn reweighted_graph(size_index: usize, a: f64) -> WeightedGraph {
    if size_index == 2 {
        WeightedGraph::new(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, a)]).expect("valid triangle")
    } else {
        let edges = (1..size_index).map(|i| (i - 1, i, if i == 1 { 1.0 - a } else { 1.0 }));
        WeightedGraph::new(size_index, edges).expect("valid line")
    }
}

/// Builds the graph whose Laplacian has spectral ratio `target_gamma`.
///
/// For `n >= 3` this is the path on `n` nodes with the first edge weighted
/// `1 - a`; for `n = 2` it is the triangle with edge `(0, 2)` weighted `a`.
/// `a` is found by bisection.
pub fn reweighted_line_graph(target_gamma: f64) -> Result<ReweightedLine> {
    let n = select_size(target_gamma)?;
    let ratio = |a: f64| spectral_ratio(&reweighted_graph(n, a));
    // n >= 3: ratio decreases from gamma_n (a=0) to 0 (a=1); n = 2: increases from gamma_3 to 1
    let increasing = n == 2;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let (r_lo, r_hi) = (ratio(lo), ratio(hi));
    let (r_small, r_big) = if increasing { (r_lo, r_hi) } else { (r_hi, r_lo) };
    if target_gamma < r_small - BISECTION_TOL || target_gamma > r_big + BISECTION_TOL {
        return Err(Error::Invariant(format!(
            "target {target_gamma} not bracketed by [{r_small}, {r_big}]"
        )));
    }
    for (a, r) in [(lo, r_lo), (hi, r_hi)] {
        if (r - target_gamma).abs() <= BISECTION_TOL {
            return Ok(ReweightedLine { graph: reweighted_graph(n, a), size_index: n, a, gamma: r });
        }
    }
    for _ in 0..BISECTION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let r = ratio(mid);
        if (r - target_gamma).abs() <= BISECTION_TOL {
            return Ok(ReweightedLine { graph: reweighted_graph(n, mid), size_index: n, a: mid, gamma: r });
        }
        if (r > target_gamma) != increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Degenerate(format!("bisection for gamma = {target_gamma} did not converge")))
}

/// How a [`GossipSource`] generates its matrices.
#[derive(Debug, Clone)]
pub enum GossipFamily {
    /// Laplacian of a ring over a fresh random permutation at every step.
    RandomRing { seed: u64 },
    /// Star Laplacians whose center cycles through the middle third of the nodes.
    StarCycle,
    /// The same matrix at every step.
    Fixed(DMatrix<f64>),
}

/// Sequence of gossip matrices `W(k)` with certified spectrum bounds.
///
/// Emission is a pure function of `k`.
#[derive(Debug, Clone)]
pub struct GossipSource {
    n: usize,
    family: GossipFamily,
    scale: f64,
    lambda_min_plus: f64,
    lambda_max: f64,
}

impl GossipSource {
    pub fn random_ring(n: usize, seed: u64) -> Result<Self> {
        if n < 3 {
            return Err(invalid(format!("random ring needs n >= 3, got {n}")));
        }
        let nf = n as f64;
        Ok(Self {
            n,
            family: GossipFamily::RandomRing { seed },
            scale: 1.0,
            lambda_min_plus: 2.0 - 2.0 * (2.0 * PI / nf).cos(),
            lambda_max: 2.0 - 2.0 * (2.0 * PI * (n / 2) as f64 / nf).cos(),
        })
    }

    pub fn star_cycle(n: usize) -> Result<Self> {
        if n == 0 || n % 3 != 0 {
            return Err(invalid(format!("star source needs n divisible by 3, got {n}")));
        }
        // star Laplacian spectrum: {0, 1 (n-2 times), n}
        Ok(Self { n, family: GossipFamily::StarCycle, scale: 1.0, lambda_min_plus: 1.0, lambda_max: n as f64 })
    }

    /// Constant source; bounds are the matrix's own spectrum. Requires a connected pattern.
    pub fn fixed(w: &GossipMatrix) -> Result<Self> {
        if !w.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(Self {
            n: w.order(),
            family: GossipFamily::Fixed(w.matrix().clone()),
            scale: 1.0,
            lambda_min_plus: w.lambda_min_plus().ok_or(Error::RankZero)?,
            lambda_max: w.lambda_max(),
        })
    }

    /// Same sequence divided by its certified `lambda_max`, so every `W(k)` has `lambda_max <= 1`.
    pub fn normalized(&self) -> Self {
        let f = 1.0 / self.lambda_max;
        Self {
            n: self.n,
            family: self.family.clone(),
            scale: self.scale * f,
            lambda_min_plus: self.lambda_min_plus * f,
            lambda_max: 1.0,
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn family(&self) -> &GossipFamily {
        &self.family
    }

    /// Certified lower bound on `lambda_min_plus(W(k))` for every k.
    pub fn lambda_min_plus(&self) -> f64 {
        self.lambda_min_plus
    }

    /// Certified upper bound on `lambda_max(W(k))` for every k.
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// Communication graph at step `k`.
    pub fn graph_at(&self, k: u64) -> WeightedGraph {
        match &self.family {
            GossipFamily::RandomRing { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(k);
                let mut order: Vec<usize> = (0..self.n).collect();
                order.shuffle(&mut rng);
                WeightedGraph::ring(&order).expect("n >= 3")
            }
            GossipFamily::StarCycle => {
                let third = self.n / 3;
                let center = third + (k as usize % third);
                WeightedGraph::star(self.n, center).expect("valid star")
            }
            GossipFamily::Fixed(m) => {
                let n = m.nrows();
                let edges = (0..n)
                    .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                    .filter(|&(i, j)| m[(i, j)] != 0.0)
                    .map(|(i, j)| (i, j, -m[(i, j)]))
                    .collect::<Vec<_>>();
                WeightedGraph::new(n, edges).expect("valid pattern")
            }
        }
    }

    /// Gossip matrix `W(k)`.
    pub fn matrix_at(&self, k: u64) -> DMatrix<f64> {
        let base = match &self.family {
            GossipFamily::Fixed(m) => m.clone(),
            _ => laplacian_matrix(&self.graph_at(k)),
        };
        if self.scale == 1.0 {
            base
        } else {
            base * self.scale
        }
    }

    /// `W(k)` with its spectrum computed.
    pub fn gossip_at(&self, k: u64) -> Result<GossipMatrix> {
        GossipMatrix::from_matrix(self.matrix_at(k))
    }
}

/// A time-indexed gossip operator acting on node-major block vectors.
pub trait GossipSequence: Send + Sync + std::fmt::Debug {
    fn node_count(&self) -> usize;

    /// Certified lower bound on the smallest positive eigenvalue at every step.
    fn lambda_min_plus(&self) -> f64;

    /// Certified upper bound on the largest eigenvalue at every step.
    fn lambda_max(&self) -> f64;

    /// Writes the step-`k` operator applied to `x` (blocks of size `d`) into `out`
    /// and returns the number of communication rounds spent.
    fn apply_lifted(&self, k: u64, d: usize, x: &[f64], out: &mut [f64]) -> Result<u64>;
}

impl GossipSequence for GossipSource {
    fn node_count(&self) -> usize {
        self.n
    }

    fn lambda_min_plus(&self) -> f64 {
        self.lambda_min_plus
    }

    fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    fn apply_lifted(&self, k: u64, d: usize, x: &[f64], out: &mut [f64]) -> Result<u64> {
        lift_apply_into(&self.matrix_at(k), d, x, out)?;
        Ok(1)
    }
}

/// `(W ⊗ I_d) x` without forming the Kronecker product.
///
/// `x` is laid out node-major: block `i` is `x[i*d .. (i+1)*d]`.
pub fn lift_apply(w: &DMatrix<f64>, d: usize, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    lift_apply_into(w, d, x, &mut out)?;
    Ok(out)
}

pub fn lift_apply_into(w: &DMatrix<f64>, d: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
    let n = w.nrows();
    if d == 0 {
        return Err(invalid("block dimension must be >= 1"));
    }
    if x.len() != n * d || out.len() != n * d {
        return Err(Error::DimensionMismatch { expected: n * d, got: x.len().min(out.len()) });
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        let oi = &mut out[i * d..(i + 1) * d];
        for j in 0..n {
            let wij = w[(i, j)];
            if wij == 0.0 {
                continue;
            }
            let xj = &x[j * d..(j + 1) * d];
            for (o, v) in oi.iter_mut().zip(xj) {
                *o += wij * v;
            }
        }
    }
    Ok(())
}

/// Lifted gossip operator `W ⊗ I_d`.
#[derive(Debug, Clone)]
pub struct LiftedGossip<'a> {
    w: &'a DMatrix<f64>,
    d: usize,
}

pub fn lift(w: &DMatrix<f64>, d: usize) -> Result<LiftedGossip<'_>> {
    if d == 0 {
        return Err(invalid("block dimension must be >= 1"));
    }
    Ok(LiftedGossip { w, d })
}

impl LiftedGossip<'_> {
    pub fn dim(&self) -> usize {
        self.w.nrows() * self.d
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        lift_apply(self.w, self.d, x)
    }
}
