//! Undirected communication graphs, the weight matrices built on them, and
//! time-varying graph sequences.
//!
//! Nodes are indexed from 0. Snapshots are stored as sorted adjacency lists;
//! weight matrices are dense.

use std::borrow::Cow;
use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seed::mix_seed;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    NoNodes,
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) has an endpoint outside 0..{2}")]
    EndpointOutOfRange(usize, usize, usize),
    #[error("measuring node {0} outside 0..{1}")]
    MeasuringOutOfRange(usize, usize),
    #[error("invalid size {size} for {family} graph: {reason}")]
    InvalidSize {
        family: Family,
        size: usize,
        reason: &'static str,
    },
    #[error("unknown graph family `{0}`")]
    UnknownFamily(String),
    #[error("sequence parameter invalid: {0}")]
    InvalidSequence(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error reading graph file: {0}")]
    Io(String),
}

/// One undirected graph G(t) on `n` nodes without self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphSnapshot {
    adj: Vec<Vec<usize>>,
    edge_count: usize,
}

impl GraphSnapshot {
    /// Builds a snapshot from a list of node pairs. Duplicate pairs and both
    /// orientations of the same pair collapse to one undirected edge.
    pub fn new<I>(n: usize, edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if n == 0 {
            return Err(GraphError::NoNodes);
        }
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(GraphError::EndpointOutOfRange(i, j, n));
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            sets[i].insert(j);
            sets[j].insert(i);
        }
        let adj: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let edge_count = adj.iter().map(Vec::len).sum::<usize>() / 2;
        Ok(Self { adj, edge_count })
    }

    /// Graph on `n` nodes with no edges.
    pub fn empty(n: usize) -> Result<Self, GraphError> {
        Self::new(n, std::iter::empty())
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adj.iter().map(Vec::len).collect()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Neighbors of `i` in increasing index order.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj
            .get(i)
            .is_some_and(|nb| nb.binary_search(&j).is_ok())
    }

    /// Undirected edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    /// Breadth-first distances from `source`; `None` marks unreachable nodes.
    pub fn bfs_distances(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.node_count()];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for &w in &self.adj[u] {
                if dist[w].is_none() {
                    dist[w] = Some(du + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.bfs_distances(0).iter().all(Option::is_some)
    }

    /// Edge union of two snapshots on the same node set.
    pub fn union(&self, other: &GraphSnapshot) -> Result<GraphSnapshot, GraphError> {
        let n = self.node_count();
        if other.node_count() != n {
            return Err(GraphError::InvalidSequence(format!(
                "cannot union graphs on {} and {} nodes",
                n,
                other.node_count()
            )));
        }
        GraphSnapshot::new(n, self.edges().chain(other.edges()))
    }

    /// Parses the text graph format: first non-comment line `n`, then one
    /// `i j` pair per line. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut n: Option<usize> = None;
        let mut edges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| GraphError::Parse { line: idx + 1, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            match n {
                None => {
                    if fields.len() != 1 {
                        return Err(parse_err("expected node count".into()));
                    }
                    n = Some(
                        fields[0]
                            .parse()
                            .map_err(|e| parse_err(format!("bad node count: {e}")))?,
                    );
                }
                Some(_) => {
                    if fields.len() != 2 {
                        return Err(parse_err("expected `i j`".into()));
                    }
                    let i = fields[0]
                        .parse()
                        .map_err(|e| parse_err(format!("bad endpoint: {e}")))?;
                    let j = fields[1]
                        .parse()
                        .map_err(|e| parse_err(format!("bad endpoint: {e}")))?;
                    edges.push((i, j));
                }
            }
        }
        let n = n.ok_or(GraphError::Parse {
            line: 0,
            msg: "missing node count".into(),
        })?;
        GraphSnapshot::new(n, edges)
    }

    pub fn read(path: &Path) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path).map_err(|e| GraphError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.node_count());
        for (i, j) in self.edges() {
            out.push_str(&format!("{i} {j}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    Metropolis,
    Protocol,
    LazyWalk,
    /// Any other square matrix.
    General,
}

/// Dense n×n weight matrix tagged with how it was built.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    kind: WeightKind,
    matrix: DMatrix<f64>,
}

impl WeightMatrix {
    pub fn new(kind: WeightKind, matrix: DMatrix<f64>) -> Self {
        Self { kind, matrix }
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.matrix.row_iter().map(|r| r.sum()).collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.matrix.nrows();
        self.matrix.ncols() == n
            && (0..n).all(|i| (0..i).all(|j| (self.matrix[(i, j)] - self.matrix[(j, i)]).abs() <= tol))
    }
}

/// Off-diagonal weights `scale / max(d_i, d_j)` on edges, diagonal filled so
/// each row sums to one.
fn degree_weighted(g: &GraphSnapshot, scale: f64, kind: WeightKind) -> WeightMatrix {
    let n = g.node_count();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let di = g.degree(i);
        let mut off = 0.0;
        for &j in g.neighbors(i) {
            let w = scale / di.max(g.degree(j)) as f64;
            m[(i, j)] = w;
            off += w;
        }
        m[(i, i)] = 1.0 - off;
    }
    WeightMatrix::new(kind, m)
}

/// Metropolis matrix: `a_ij = 1/max(d_i, d_j)` on edges.
pub fn metropolis_matrix(g: &GraphSnapshot) -> WeightMatrix {
    degree_weighted(g, 1.0, WeightKind::Metropolis)
}

/// The update matrix A(t) of the protocol. Off-diagonal entries are
/// `1/(4 max(d_i, d_j))`; a measuring node's diagonal loses a further 1/4 so
/// its row sums to 3/4.
pub fn protocol_matrix(g: &GraphSnapshot, measuring: &[usize]) -> Result<WeightMatrix, GraphError> {
    let n = g.node_count();
    let mut w = degree_weighted(g, 0.25, WeightKind::Protocol);
    for &i in measuring {
        if i >= n {
            return Err(GraphError::MeasuringOutOfRange(i, n));
        }
    }
    let set: BTreeSet<usize> = measuring.iter().copied().collect();
    for i in set {
        w.matrix[(i, i)] -= 0.25;
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Complete,
    Line,
    Star,
    Lollipop,
    Grid2d,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Complete,
        Family::Line,
        Family::Star,
        Family::Lollipop,
        Family::Grid2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Complete => "complete",
            Family::Line => "line",
            Family::Star => "star",
            Family::Lollipop => "lollipop",
            Family::Grid2d => "grid2d",
        }
    }

    /// The node that takes measurements in the standard experiments: the
    /// star's center, the far end of a line or lollipop stem, node 0 otherwise.
    pub fn sampling_node(self, n: usize) -> usize {
        match self {
            Family::Line | Family::Lollipop => n - 1,
            Family::Complete | Family::Star | Family::Grid2d => 0,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| GraphError::UnknownFamily(s.to_string()))
    }
}

/// Builds a named topology on `n` nodes. `grid2d` takes `n` as a perfect
/// square; use [`grid2d`] for rectangular grids.
pub fn generate(family: Family, n: usize) -> Result<GraphSnapshot, GraphError> {
    let invalid = |reason| GraphError::InvalidSize {
        family,
        size: n,
        reason,
    };
    match family {
        Family::Complete => {
            if n < 2 {
                return Err(invalid("need n >= 2"));
            }
            GraphSnapshot::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
        }
        Family::Line => {
            if n < 2 {
                return Err(invalid("need n >= 2"));
            }
            GraphSnapshot::new(n, (1..n).map(|i| (i - 1, i)))
        }
        Family::Star => {
            if n < 2 {
                return Err(invalid("need n >= 2"));
            }
            GraphSnapshot::new(n, (1..n).map(|i| (0, i)))
        }
        Family::Lollipop => {
            if n < 4 || n % 2 != 0 {
                return Err(invalid("need even n >= 4"));
            }
            let head = n / 2;
            let clique = (0..head).flat_map(move |i| (i + 1..head).map(move |j| (i, j)));
            let stem = (head..n).map(|i| (i - 1, i));
            GraphSnapshot::new(n, clique.chain(stem))
        }
        Family::Grid2d => {
            let side = (n as f64).sqrt().round() as usize;
            if n < 2 || side * side != n {
                return Err(invalid("need a perfect square >= 4"));
            }
            grid2d(side, side)
        }
    }
}

/// Rectangular grid with node `r * cols + c` at row `r`, column `c`.
pub fn grid2d(rows: usize, cols: usize) -> Result<GraphSnapshot, GraphError> {
    let n = rows * cols;
    if n < 2 {
        return Err(GraphError::InvalidSize {
            family: Family::Grid2d,
            size: n,
            reason: "need at least two cells",
        });
    }
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let u = r * cols + c;
            if c + 1 < cols {
                edges.push((u, u + 1));
            }
            if r + 1 < rows {
                edges.push((u, u + cols));
            }
        }
    }
    GraphSnapshot::new(n, edges)
}

/// A deterministic provider of G(t) for t = 1, 2, ...
pub trait GraphSequence: Send + Sync {
    fn node_count(&self) -> usize;

    /// Declared connectivity window B.
    fn window(&self) -> usize;

    fn snapshot(&self, t: u64) -> Cow<'_, GraphSnapshot>;

    /// Largest degree seen over t = 1..=horizon.
    fn max_degree(&self, horizon: u64) -> usize {
        (1..=horizon)
            .map(|t| self.snapshot(t).max_degree())
            .max()
            .unwrap_or(0)
    }

    /// Whether every snapshot in 1..=horizon is connected.
    fn all_connected(&self, horizon: u64) -> bool {
        (1..=horizon).all(|t| self.snapshot(t).is_connected())
    }
}

/// The same graph at every step.
#[derive(Debug, Clone)]
pub struct StaticSequence {
    graph: GraphSnapshot,
}

impl StaticSequence {
    pub fn new(graph: GraphSnapshot) -> Self {
        Self { graph }
    }

    pub fn graph(&self) -> &GraphSnapshot {
        &self.graph
    }
}

impl GraphSequence for StaticSequence {
    fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    fn window(&self) -> usize {
        1
    }

    fn snapshot(&self, _t: u64) -> Cow<'_, GraphSnapshot> {
        Cow::Borrowed(&self.graph)
    }

    fn max_degree(&self, _horizon: u64) -> usize {
        self.graph.max_degree()
    }

    fn all_connected(&self, _horizon: u64) -> bool {
        self.graph.is_connected()
    }
}

/// Cycles through a fixed list of snapshots: G(t) = graphs[(t - 1) mod len].
#[derive(Debug, Clone)]
pub struct PeriodicSequence {
    graphs: Vec<GraphSnapshot>,
    window: usize,
}

impl PeriodicSequence {
    pub fn new(graphs: Vec<GraphSnapshot>, window: usize) -> Result<Self, GraphError> {
        let Some(first) = graphs.first() else {
            return Err(GraphError::InvalidSequence("empty period".into()));
        };
        let n = first.node_count();
        if graphs.iter().any(|g| g.node_count() != n) {
            return Err(GraphError::InvalidSequence(
                "snapshots disagree on node count".into(),
            ));
        }
        if window == 0 {
            return Err(GraphError::InvalidSequence("window must be >= 1".into()));
        }
        Ok(Self { graphs, window })
    }
}

impl GraphSequence for PeriodicSequence {
    fn node_count(&self) -> usize {
        self.graphs[0].node_count()
    }

    fn window(&self) -> usize {
        self.window
    }

    fn snapshot(&self, t: u64) -> Cow<'_, GraphSnapshot> {
        let idx = (t.saturating_sub(1) % self.graphs.len() as u64) as usize;
        Cow::Borrowed(&self.graphs[idx])
    }
}

/// Random B-connected fixture. Window k covers t in [kB+1, (k+1)B]; its edges
/// are a random spanning tree plus `edge_budget - (n - 1)` random extra
/// pairs, each placed at a uniformly chosen step of the window.
#[derive(Debug, Clone)]
pub struct RandomSequence {
    n: usize,
    window: usize,
    edge_budget: usize,
    seed: u64,
}

impl RandomSequence {
    pub fn new(n: usize, window: usize, edge_budget: usize, seed: u64) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::NoNodes);
        }
        if window == 0 {
            return Err(GraphError::InvalidSequence("window must be >= 1".into()));
        }
        if edge_budget < n - 1 {
            return Err(GraphError::InvalidSequence(format!(
                "edge budget {edge_budget} is below the n - 1 = {} edges of a spanning tree",
                n - 1
            )));
        }
        Ok(Self {
            n,
            window,
            edge_budget,
            seed,
        })
    }

    /// All snapshots of window `k` (0-based).
    pub fn window_snapshots(&self, k: u64) -> Vec<GraphSnapshot> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, k));
        let n = self.n;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut per_step: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.window];
        for idx in 1..n {
            let parent = order[rng.gen_range(0..idx)];
            per_step[rng.gen_range(0..self.window)].push((parent, order[idx]));
        }
        if n >= 2 {
            for _ in (n - 1)..self.edge_budget {
                let i = rng.gen_range(0..n);
                let mut j = rng.gen_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                per_step[rng.gen_range(0..self.window)].push((i, j));
            }
        }
        per_step
            .into_iter()
            .map(|edges| GraphSnapshot::new(n, edges).expect("generated edges are in range"))
            .collect()
    }
}

impl GraphSequence for RandomSequence {
    fn node_count(&self) -> usize {
        self.n
    }

    fn window(&self) -> usize {
        self.window
    }

    fn snapshot(&self, t: u64) -> Cow<'_, GraphSnapshot> {
        let t0 = t.max(1) - 1;
        let b = self.window as u64;
        let mut snaps = self.window_snapshots(t0 / b);
        Cow::Owned(snaps.swap_remove((t0 % b) as usize))
    }
}

/// Random B-connected sequence; see [`RandomSequence`].
pub fn random_sequence(
    n: usize,
    window: usize,
    edge_budget: usize,
    seed: u64,
) -> Result<RandomSequence, GraphError> {
    RandomSequence::new(n, window, edge_budget, seed)
}

/// True iff the edge union over every complete window `[kB+1, (k+1)B]`
/// inside `1..=horizon` is connected.
pub fn verify_b_connectivity<S: GraphSequence + ?Sized>(seq: &S, window: usize, horizon: u64) -> bool {
    if window == 0 {
        return false;
    }
    let n = seq.node_count();
    let b = window as u64;
    let mut start = 1;
    while start + b - 1 <= horizon {
        let mut edges = Vec::new();
        for t in start..start + b {
            edges.extend(seq.snapshot(t).edges());
        }
        let union = GraphSnapshot::new(n, edges).expect("snapshot edges are valid");
        if !union.is_connected() {
            return false;
        }
        start += b;
    }
    true
}
