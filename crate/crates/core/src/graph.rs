//! Attributed undirected graphs, the renormalized adjacency used by GCN layers,
//! node featurizers and synthetic graph generators.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{stream_rng, Stream};

/// Node targets: class indices for classification, reals for regression.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Classes(Vec<usize>),
    Targets(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(c) => c.len(),
            Labels::Targets(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> Option<&[usize]> {
        match self {
            Labels::Classes(c) => Some(c),
            Labels::Targets(_) => None,
        }
    }

    pub fn targets(&self) -> Option<&[f64]> {
        match self {
            Labels::Targets(t) => Some(t),
            Labels::Classes(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    User,
    Item,
    Plain,
}

/// A simple undirected attributed graph.
///
/// Edges are stored once as `(u, v)` with `u < v`, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Matrix,
    labels: Option<Labels>,
    roles: Option<Vec<NodeRole>>,
}

impl Graph {
    /// Validates and assembles a graph. Reversed and repeated pairs collapse
    /// into one undirected edge; self-loops are rejected.
    pub fn new<I>(
        num_nodes: usize,
        edges: I,
        features: Matrix,
        labels: Option<Labels>,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if num_nodes == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut normalized = Vec::new();
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::EdgeOutOfRange(u, v, num_nodes));
            }
            if u == v {
                return Err(Error::SelfLoop(u));
            }
            normalized.push((u.min(v), u.max(v)));
        }
        normalized.sort_unstable();
        normalized.dedup();

        if features.rows() != num_nodes {
            return Err(Error::DimensionMismatch {
                context: "feature rows",
                expected: num_nodes,
                found: features.rows(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != num_nodes {
                return Err(Error::DimensionMismatch {
                    context: "label count",
                    expected: num_nodes,
                    found: l.len(),
                });
            }
        }
        Ok(Graph {
            num_nodes,
            edges: normalized,
            features,
            labels,
            roles: None,
        })
    }

    pub fn with_roles(mut self, roles: Vec<NodeRole>) -> Result<Self> {
        if roles.len() != self.num_nodes {
            return Err(Error::DimensionMismatch {
                context: "node role count",
                expected: self.num_nodes,
                found: roles.len(),
            });
        }
        self.roles = Some(roles);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Option<Labels>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.num_nodes {
                return Err(Error::DimensionMismatch {
                    context: "label count",
                    expected: self.num_nodes,
                    found: l.len(),
                });
            }
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn with_features(mut self, features: Matrix) -> Result<Self> {
        if features.rows() != self.num_nodes {
            return Err(Error::DimensionMismatch {
                context: "feature rows",
                expected: self.num_nodes,
                found: features.rows(),
            });
        }
        self.features = features;
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    pub fn roles(&self) -> Option<&[NodeRole]> {
        self.roles.as_deref()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.binary_search(&(u.min(v), u.max(v))).is_ok()
    }

    /// Number of classes implied by class labels (`max + 1`).
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()?
            .classes()
            .map(|c| c.iter().copied().max().map_or(0, |m| m + 1))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Sorted neighbor lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Relabels nodes: node `v` of `self` becomes node `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.num_nodes;
        if perm.len() != n {
            return Err(Error::DimensionMismatch {
                context: "permutation length",
                expected: n,
                found: perm.len(),
            });
        }
        let mut inverse = vec![usize::MAX; n];
        for (v, &p) in perm.iter().enumerate() {
            if p >= n || inverse[p] != usize::MAX {
                return Err(Error::InvalidConfig(format!(
                    "not a permutation at position {v}"
                )));
            }
            inverse[p] = v;
        }
        let features = self.features.select_rows(&inverse);
        let labels = self.labels.as_ref().map(|l| match l {
            Labels::Classes(c) => Labels::Classes(inverse.iter().map(|&v| c[v]).collect()),
            Labels::Targets(t) => Labels::Targets(inverse.iter().map(|&v| t[v]).collect()),
        });
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v]));
        let mut g = Graph::new(n, edges, features, labels)?;
        if let Some(r) = &self.roles {
            g.roles = Some(inverse.iter().map(|&v| r[v]).collect());
        }
        Ok(g)
    }
}

/// `D^-1/2 (A + I) D^-1/2` in compressed sparse row form.
///
/// Column indices within a row are sorted, so iterating rows in order yields
/// `(row, col, value)` triples sorted by `(row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn num_nodes(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.num_nodes()).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[span.clone()].binary_search(&c) {
            Ok(i) => self.values[span.start + i],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let n = self.num_nodes();
        let mut m = Matrix::zeros(n, n);
        for (r, c, v) in self.triples() {
            m[(r, c)] = v;
        }
        m
    }

    /// `Â * x`. Â is symmetric, so this is also `Â^T * x`.
    pub fn propagate(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.rows(), self.num_nodes(), "propagate row dimension");
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for r in 0..self.num_nodes() {
            let out_row = out.row_mut(r);
            for (c, a) in self.row(r) {
                for (o, &b) in out_row.iter_mut().zip(x.row(c)) {
                    *o += a * b;
                }
            }
        }
        out
    }
}

pub fn renormalized_adjacency(g: &Graph) -> NormalizedAdjacency {
    let n = g.num_nodes();
    let neighbors = g.neighbors();
    let tilde_deg: Vec<usize> = neighbors.iter().map(|l| l.len() + 1).collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(n + 2 * g.num_edges());
    let mut values = Vec::with_capacity(n + 2 * g.num_edges());
    row_ptr.push(0);
    for (v, list) in neighbors.iter().enumerate() {
        let mut self_done = false;
        for &u in list.iter() {
            if !self_done && u > v {
                cols.push(v);
                values.push(1.0 / tilde_deg[v] as f64);
                self_done = true;
            }
            cols.push(u);
            // The product is commutative, so (v, u) and (u, v) are bit-equal.
            values.push(1.0 / libm::sqrt((tilde_deg[v] * tilde_deg[u]) as f64));
        }
        if !self_done {
            cols.push(v);
            values.push(1.0 / tilde_deg[v] as f64);
        }
        row_ptr.push(cols.len());
    }
    NormalizedAdjacency {
        row_ptr,
        cols,
        values,
    }
}

/// One-hot node degrees; degrees above `max_degree` land in the last bin.
pub fn degree_one_hot(g: &Graph, max_degree: usize) -> Matrix {
    one_hot_degrees(&g.degrees(), max_degree)
}

pub(crate) fn one_hot_degrees(degrees: &[usize], max_degree: usize) -> Matrix {
    let mut m = Matrix::zeros(degrees.len(), max_degree + 1);
    for (v, &d) in degrees.iter().enumerate() {
        m[(v, d.min(max_degree))] = 1.0;
    }
    m
}

/// Parameters of a pair of stochastic-block-model graphs with a controlled
/// attribute and/or structure shift between them.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthShiftConfig {
    pub nodes_per_block: usize,
    /// Also the number of classes.
    pub num_blocks: usize,
    pub intra_edge_prob: f64,
    pub inter_edge_prob: f64,
    pub feature_dim: usize,
    pub source_mean_scale: f64,
    pub target_mean_scale: f64,
    /// Replaces `intra_edge_prob` on the target side when set.
    pub target_intra_edge_prob: Option<f64>,
    pub seed: u64,
}

impl Default for SynthShiftConfig {
    fn default() -> Self {
        SynthShiftConfig {
            nodes_per_block: 50,
            num_blocks: 2,
            intra_edge_prob: 0.1,
            inter_edge_prob: 0.01,
            feature_dim: 8,
            source_mean_scale: 1.0,
            target_mean_scale: 3.0,
            target_intra_edge_prob: None,
            seed: 0,
        }
    }
}

impl SynthShiftConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("intra_edge_prob", Some(self.intra_edge_prob)),
            ("inter_edge_prob", Some(self.inter_edge_prob)),
            ("target_intra_edge_prob", self.target_intra_edge_prob),
        ];
        for (name, p) in probs {
            if let Some(p) = p {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidConfig(format!("{name} = {p} is not in [0, 1]")));
                }
            }
        }
        if self.nodes_per_block == 0 || self.num_blocks == 0 || self.feature_dim == 0 {
            return Err(Error::InvalidConfig(
                "nodes_per_block, num_blocks and feature_dim must be positive".into(),
            ));
        }
        if !self.source_mean_scale.is_finite() || !self.target_mean_scale.is_finite() {
            return Err(Error::InvalidConfig("mean scales must be finite".into()));
        }
        Ok(())
    }
}

/// Draws a `(source, target)` pair of block-model graphs.
///
/// Both graphs share the block layout and the per-class mean directions;
/// node features are `scale * mean[class] + N(0, I)` with the side's scale.
pub fn synth_shift_pair(cfg: &SynthShiftConfig) -> Result<(Graph, Graph)> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, Stream::Synth);
    let means: Vec<Vec<f64>> = (0..cfg.num_blocks)
        .map(|_| {
            (0..cfg.feature_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let mut draw = |scale: f64, intra: f64| -> Result<Graph> {
        let n = cfg.nodes_per_block * cfg.num_blocks;
        let block = |v: usize| v / cfg.nodes_per_block;
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                let p = if block(u) == block(v) {
                    intra
                } else {
                    cfg.inter_edge_prob
                };
                if rng.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        let mut features = Matrix::zeros(n, cfg.feature_dim);
        for v in 0..n {
            let mean = &means[block(v)];
            for (x, &mu) in features.row_mut(v).iter_mut().zip(mean) {
                *x = scale * mu + rng.sample::<f64, _>(StandardNormal);
            }
        }
        let labels = Labels::Classes((0..n).map(block).collect());
        Graph::new(n, edges, features, Some(labels))
    };

    let source = draw(cfg.source_mean_scale, cfg.intra_edge_prob)?;
    let target = draw(
        cfg.target_mean_scale,
        cfg.target_intra_edge_prob.unwrap_or(cfg.intra_edge_prob),
    )?;
    Ok((source, target))
}

pub const BENCH_FEATURE_DIM: usize = 16;
pub const BENCH_CLASSES: usize = 2;

/// A uniform random simple graph with exactly `n` nodes and `2n` edges,
/// uniform `[0, 1)` features and uniform random class labels.
pub fn synth_bench_graph(n: usize, seed: u64) -> Result<Graph> {
    let target_edges = 2 * n;
    if n < 3 || target_edges > n * (n - 1) / 2 {
        return Err(Error::InfeasibleEdgeCount {
            nodes: n,
            edges: target_edges,
        });
    }
    let mut rng = stream_rng(seed, Stream::Bench);
    let mut edges = BTreeSet::new();
    while edges.len() < target_edges {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }
    let mut features = Matrix::zeros(n, BENCH_FEATURE_DIM);
    features
        .as_mut_slice()
        .iter_mut()
        .for_each(|x| *x = rng.random::<f64>());
    let labels = (0..n).map(|_| rng.random_range(0..BENCH_CLASSES)).collect();
    Graph::new(n, edges, features, Some(Labels::Classes(labels)))
}

/// Builds a user/item interaction graph. Users are nodes `0..num_users`,
/// items follow. Features are `[is_user, is_item | degree one-hot]`.
pub fn bipartite_graph(
    num_users: usize,
    num_items: usize,
    interactions: &[(usize, usize)],
    max_degree: usize,
) -> Result<Graph> {
    let n = num_users + num_items;
    for &(u, i) in interactions {
        if u >= num_users || i >= num_items {
            return Err(Error::EdgeOutOfRange(u, num_users + i, n));
        }
    }
    let edges: Vec<(usize, usize)> = interactions
        .iter()
        .map(|&(u, i)| (u, num_users + i))
        .collect();
    let roles: Vec<NodeRole> = (0..n)
        .map(|v| if v < num_users { NodeRole::User } else { NodeRole::Item })
        .collect();
    let g = Graph::new(n, edges, Matrix::zeros(n, 0), None)?;
    let mut role_cols = Matrix::zeros(n, 2);
    for v in 0..n {
        role_cols[(v, usize::from(v >= num_users))] = 1.0;
    }
    let features = role_cols.hconcat(&degree_one_hot(&g, max_degree))?;
    g.with_features(features)?.with_roles(roles)
}
