//! Discrete Weisfeiler-Lehman relabeling and the subtree kernel.
//!
//! Colors are interned canonical strings, so two nodes share a color at depth
//! `m` exactly when their depth-`m` subtrees coincide. Histogram arithmetic is
//! carried out on integer counts; the resulting discrepancies are exact up to
//! the final division.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{Display, Write};

use crate::discrepancy::DiscrepancyReport;
use crate::error::{Error, Result};
use crate::graph::Graph;

pub type PatternId = u32;

/// Interning table shared by every graph relabeled through it.
#[derive(Debug, Default, Clone)]
pub struct Relabeler {
    table: BTreeMap<String, PatternId>,
    keys: Vec<String>,
}

/// Per-depth node colors `0..=depth`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WlColorSequence {
    colors: Vec<Vec<PatternId>>,
}

impl WlColorSequence {
    pub fn depth(&self) -> usize {
        self.colors.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.colors[0].len()
    }

    pub fn at(&self, m: usize) -> Result<&[PatternId]> {
        self.colors
            .get(m)
            .map(Vec::as_slice)
            .ok_or(Error::DepthOutOfRange {
                requested: m,
                max: self.depth(),
            })
    }
}

impl Relabeler {
    pub fn new() -> Self {
        Self::default()
    }

    fn intern(&mut self, key: String) -> PatternId {
        if let Some(&id) = self.table.get(&key) {
            return id;
        }
        let id = self.keys.len() as PatternId;
        self.keys.push(key.clone());
        self.table.insert(key, id);
        id
    }

    /// Canonical form behind an identifier.
    pub fn pattern(&self, id: PatternId) -> Option<&str> {
        self.keys.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn relabel<L: Display>(
        &mut self,
        g: &Graph,
        init_labels: &[L],
        depth: usize,
    ) -> Result<WlColorSequence> {
        if init_labels.len() != g.num_nodes() {
            return Err(Error::DimensionMismatch {
                context: "initial label count",
                expected: g.num_nodes(),
                found: init_labels.len(),
            });
        }
        let neighbors = g.neighbors();
        let mut colors = Vec::with_capacity(depth + 1);
        // Depth-0 keys carry an `L:` prefix and deeper keys start with `(`,
        // so the two families never collide.
        colors.push(
            init_labels
                .iter()
                .map(|l| self.intern(format!("L:{l}")))
                .collect::<Vec<_>>(),
        );
        let mut scratch = Vec::new();
        for m in 1..=depth {
            let prev: &Vec<PatternId> = &colors[m - 1];
            let mut next = Vec::with_capacity(prev.len());
            for (v, list) in neighbors.iter().enumerate() {
                scratch.clear();
                scratch.extend(list.iter().map(|&u| prev[u]));
                scratch.sort_unstable();
                let mut key = format!("({}|", prev[v]);
                for (i, c) in scratch.iter().enumerate() {
                    if i > 0 {
                        key.push(',');
                    }
                    let _ = write!(key, "{c}");
                }
                key.push(')');
                next.push(key);
            }
            let next = next.into_iter().map(|k| self.intern(k)).collect();
            colors.push(next);
        }
        Ok(WlColorSequence { colors })
    }
}

/// Relabels one graph with a private interning table.
pub fn wl_relabel<L: Display>(g: &Graph, init_labels: &[L], depth: usize) -> Result<WlColorSequence> {
    Relabeler::new().relabel(g, init_labels, depth)
}

/// Relabels two graphs through one shared table so their colors are comparable.
pub fn relabel_pair<L1: Display, L2: Display>(
    g1: &Graph,
    labels1: &[L1],
    g2: &Graph,
    labels2: &[L2],
    depth: usize,
) -> Result<(WlColorSequence, WlColorSequence)> {
    let mut r = Relabeler::new();
    let a = r.relabel(g1, labels1, depth)?;
    let b = r.relabel(g2, labels2, depth)?;
    Ok((a, b))
}

/// Node degrees, usable as initial labels when a graph carries none.
pub fn degree_labels(g: &Graph) -> Vec<usize> {
    g.degrees()
}

/// Empirical distribution of patterns over the nodes of one graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternHistogram<K: Ord = PatternId> {
    counts: BTreeMap<K, u64>,
    node_count: u64,
}

impl<K: Ord + Copy> PatternHistogram<K> {
    pub fn from_patterns(patterns: &[K]) -> Self {
        let mut counts = BTreeMap::new();
        for &p in patterns {
            *counts.entry(p).or_insert(0) += 1;
        }
        PatternHistogram {
            counts,
            node_count: patterns.len() as u64,
        }
    }

    /// From explicit `(pattern, count)` pairs; the node count is their sum.
    pub fn from_counts<I: IntoIterator<Item = (K, u64)>>(counts: I) -> Self {
        let mut map = BTreeMap::new();
        for (k, c) in counts {
            if c > 0 {
                *map.entry(k).or_insert(0) += c;
            }
        }
        let node_count = map.values().sum();
        PatternHistogram {
            counts: map,
            node_count,
        }
    }

    pub fn node_count(&self) -> u64 {
        self.node_count
    }

    pub fn count(&self, key: &K) -> u64 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn frequency(&self, key: &K) -> f64 {
        if self.node_count == 0 {
            return 0.0;
        }
        self.count(key) as f64 / self.node_count as f64
    }

    pub fn support(&self) -> impl Iterator<Item = &K> {
        self.counts.keys()
    }

    pub fn frequencies(&self) -> impl Iterator<Item = (&K, f64)> {
        let n = self.node_count as f64;
        self.counts.iter().map(move |(k, &c)| (k, c as f64 / n))
    }
}

pub fn subtree_histogram(seq: &WlColorSequence, m: usize) -> Result<PatternHistogram> {
    Ok(PatternHistogram::from_patterns(seq.at(m)?))
}

/// `sum_tau a_tau * b_tau` on raw counts.
fn matching_pairs<K: Ord + Copy>(p: &PatternHistogram<K>, q: &PatternHistogram<K>) -> u128 {
    p.counts
        .iter()
        .map(|(k, &a)| a as u128 * q.count(k) as u128)
        .sum()
}

/// Inner product of two pattern distributions.
pub fn histogram_similarity<K: Ord + Copy>(p: &PatternHistogram<K>, q: &PatternHistogram<K>) -> f64 {
    if p.node_count == 0 || q.node_count == 0 {
        return 0.0;
    }
    matching_pairs(p, q) as f64 / (p.node_count as f64 * q.node_count as f64)
}

/// Total variation distance, computed as an integer numerator over `2 n_p n_q`.
pub fn histogram_tv<K: Ord + Copy>(p: &PatternHistogram<K>, q: &PatternHistogram<K>) -> f64 {
    let (np, nq) = (p.node_count as u128, q.node_count as u128);
    if np == 0 || nq == 0 {
        return if np == nq { 0.0 } else { 1.0 };
    }
    let mut numerator: u128 = 0;
    for (k, &a) in &p.counts {
        let (x, y) = (a as u128 * nq, q.count(k) as u128 * np);
        numerator += x.abs_diff(y);
    }
    for (k, &b) in &q.counts {
        if !p.counts.contains_key(k) {
            numerator += b as u128 * np;
        }
    }
    numerator as f64 / (2 * np * nq) as f64
}

/// Per-depth matching-pair counts behind the subtree kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelReport {
    pub matches: Vec<u128>,
    /// `n * n'`.
    pub pair_count: u128,
    pub value: f64,
}

pub fn kernel_report(seq1: &WlColorSequence, seq2: &WlColorSequence) -> Result<KernelReport> {
    if seq1.depth() != seq2.depth() {
        return Err(Error::DimensionMismatch {
            context: "color sequence depth",
            expected: seq1.depth(),
            found: seq2.depth(),
        });
    }
    let matches: Vec<u128> = (0..=seq1.depth())
        .map(|m| {
            let p = PatternHistogram::from_patterns(&seq1.colors[m]);
            let q = PatternHistogram::from_patterns(&seq2.colors[m]);
            matching_pairs(&p, &q)
        })
        .collect();
    let pair_count = seq1.num_nodes() as u128 * seq2.num_nodes() as u128;
    let total: u128 = matches.iter().sum();
    Ok(KernelReport {
        value: total as f64 / pair_count as f64,
        matches,
        pair_count,
    })
}

/// WL subtree kernel: matching subtree pairs over depths `0..=depth`,
/// normalized by `n * n'`.
pub fn wl_subtree_kernel<L1: Display, L2: Display>(
    g1: &Graph,
    labels1: &[L1],
    g2: &Graph,
    labels2: &[L2],
    depth: usize,
) -> Result<f64> {
    let (a, b) = relabel_pair(g1, labels1, g2, labels2, depth)?;
    Ok(kernel_report(&a, &b)?.value)
}

/// Base discrepancies over pattern histograms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountingBase {
    TotalVariation,
    /// The histogram inner product. A similarity, not a distance; summing it
    /// over depths reproduces the subtree kernel.
    InnerProduct,
}

impl CountingBase {
    pub fn name(self) -> &'static str {
        match self {
            CountingBase::TotalVariation => "tv",
            CountingBase::InnerProduct => "inner",
        }
    }

    fn apply<K: Ord + Copy>(self, p: &PatternHistogram<K>, q: &PatternHistogram<K>) -> f64 {
        match self {
            CountingBase::TotalVariation => histogram_tv(p, q),
            CountingBase::InnerProduct => histogram_similarity(p, q),
        }
    }
}

fn check_depths(a: &WlColorSequence, b: &WlColorSequence) -> Result<()> {
    if a.depth() != b.depth() {
        return Err(Error::DimensionMismatch {
            context: "color sequence depth",
            expected: a.depth(),
            found: b.depth(),
        });
    }
    Ok(())
}

/// GSD on the counting path: the base applied to the depth-`m` pattern
/// histograms, averaged over `m = 0..=M`.
pub fn counting_gsd(
    seq_s: &WlColorSequence,
    seq_t: &WlColorSequence,
    base: CountingBase,
) -> Result<DiscrepancyReport> {
    check_depths(seq_s, seq_t)?;
    let per_depth = (0..=seq_s.depth())
        .map(|m| {
            let p = PatternHistogram::from_patterns(&seq_s.colors[m]);
            let q = PatternHistogram::from_patterns(&seq_t.colors[m]);
            base.apply(&p, &q)
        })
        .collect();
    Ok(DiscrepancyReport::new(per_depth, base.name(), None))
}

/// Counting-path GSD over colors jointly refined with a per-node side tag
/// (degree for the structure-aware variant, class for the label-informed one).
pub fn counting_gsd_joint<T: Ord + Copy>(
    seq_s: &WlColorSequence,
    side_s: &[T],
    seq_t: &WlColorSequence,
    side_t: &[T],
    base: CountingBase,
) -> Result<DiscrepancyReport> {
    check_depths(seq_s, seq_t)?;
    for (seq, side) in [(seq_s, side_s.len()), (seq_t, side_t.len())] {
        if seq.num_nodes() != side {
            return Err(Error::DimensionMismatch {
                context: "joint refinement tags",
                expected: seq.num_nodes(),
                found: side,
            });
        }
    }
    let joint = |colors: &[PatternId], side: &[T]| -> Vec<(PatternId, T)> {
        colors.iter().copied().zip(side.iter().copied()).collect()
    };
    let per_depth = (0..=seq_s.depth())
        .map(|m| {
            let p = PatternHistogram::from_patterns(&joint(&seq_s.colors[m], side_s));
            let q = PatternHistogram::from_patterns(&joint(&seq_t.colors[m], side_t));
            base.apply(&p, &q)
        })
        .collect();
    Ok(DiscrepancyReport::new(per_depth, base.name(), None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use alloc::vec;

    fn plain(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(n, edges.iter().copied(), Matrix::zeros(n, 1), None).unwrap()
    }

    fn triangle() -> Graph {
        plain(3, &[(0, 1), (1, 2), (0, 2)])
    }

    fn path3() -> Graph {
        plain(3, &[(0, 1), (1, 2)])
    }

    #[test]
    fn triangle_nodes_share_colors() {
        let seq = wl_relabel(&triangle(), &["a"; 3], 1).unwrap();
        let c = seq.at(1).unwrap();
        assert!(c[0] == c[1] && c[1] == c[2]);
    }

    #[test]
    fn path_endpoints_differ_from_middle() {
        let seq = wl_relabel(&path3(), &["a"; 3], 1).unwrap();
        let c = seq.at(1).unwrap();
        assert_eq!(c[0], c[2]);
        assert_ne!(c[0], c[1]);
    }

    #[test]
    fn depth_zero_canonicalizes_labels() {
        let seq = wl_relabel(&path3(), &["x", "y", "x"], 0).unwrap();
        assert_eq!(seq.depth(), 0);
        let c = seq.at(0).unwrap();
        assert_eq!(c[0], c[2]);
        assert_ne!(c[0], c[1]);
        assert!(seq.at(1).is_err());
    }

    #[test]
    fn canonical_form_is_readable() {
        let mut r = Relabeler::new();
        let seq = r.relabel(&path3(), &["a"; 3], 1).unwrap();
        assert_eq!(r.pattern(seq.at(0).unwrap()[0]), Some("L:a"));
        assert_eq!(r.pattern(seq.at(1).unwrap()[1]), Some("(0|0,0)"));
        assert_eq!(r.pattern(seq.at(1).unwrap()[0]), Some("(0|0)"));
    }

    #[test]
    fn histograms_by_hand() {
        let seq = wl_relabel(&path3(), &["a"; 3], 1).unwrap();
        let h = subtree_histogram(&seq, 1).unwrap();
        let c = seq.at(1).unwrap();
        assert_eq!(h.frequency(&c[0]), 2.0 / 3.0);
        assert_eq!(h.frequency(&c[1]), 1.0 / 3.0);

        let tri = wl_relabel(&triangle(), &["a"; 3], 2).unwrap();
        assert_eq!(subtree_histogram(&tri, 2).unwrap().support().count(), 1);

        let lab = wl_relabel(&path3(), &["a", "a", "b"], 0).unwrap();
        let h0 = subtree_histogram(&lab, 0).unwrap();
        let c0 = lab.at(0).unwrap();
        assert_eq!(h0.frequency(&c0[0]), 2.0 / 3.0);
        assert_eq!(h0.frequency(&c0[2]), 1.0 / 3.0);
        let total: f64 = h0.frequencies().map(|(_, f)| f).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(subtree_histogram(&lab, 3).is_err());
    }

    #[test]
    fn kernel_hand_values() {
        let k = wl_subtree_kernel(&triangle(), &["a"; 3], &triangle(), &["a"; 3], 2).unwrap();
        assert_eq!(k, 3.0);
        let k = wl_subtree_kernel(&triangle(), &["a"; 3], &path3(), &["a"; 3], 2).unwrap();
        assert!((k - 4.0 / 3.0).abs() < 1e-12);
        let k = wl_subtree_kernel(&triangle(), &["a"; 3], &path3(), &["b"; 3], 3).unwrap();
        assert_eq!(k, 0.0);
    }

    #[test]
    fn histogram_distances_by_hand() {
        let a = PatternHistogram::from_counts([(0u32, 1)]);
        let ab = PatternHistogram::from_counts([(0u32, 1), (1, 1)]);
        let b = PatternHistogram::from_counts([(1u32, 4)]);
        assert_eq!(histogram_similarity(&a, &a), 1.0);
        assert_eq!(histogram_similarity(&a, &b), 0.0);
        assert_eq!(histogram_similarity(&ab, &a), 0.5);
        assert_eq!(histogram_tv(&ab, &ab), 0.0);
        assert_eq!(histogram_tv(&a, &b), 1.0);
        assert_eq!(histogram_tv(&ab, &a), 0.5);
    }

    #[test]
    fn joint_refinement_rejects_bad_tags() {
        let seq = wl_relabel(&path3(), &["a"; 3], 1).unwrap();
        let err = counting_gsd_joint(&seq, &[1usize, 2], &seq, &[1, 2, 1], CountingBase::TotalVariation);
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        let ok = counting_gsd_joint(&seq, &[1usize, 2, 1], &seq, &[1, 2, 1], CountingBase::TotalVariation)
            .unwrap();
        assert_eq!(ok.per_depth, vec![0.0, 0.0]);
    }
}
