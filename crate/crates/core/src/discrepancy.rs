//! Base discrepancies between two samples of node representations, and the
//! graph subtree discrepancy that averages them over message-passing depths.
//!
//! The continuous bases ([`Mmd`], [`Coral`]) return gradients with respect to
//! both inputs so the encoder can be trained through them. New bases plug in
//! by implementing [`BaseDiscrepancy`].

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::gnn::SubtreeEmbeddingSequence;
use crate::linalg::{squared_distance, Matrix};

/// Per-depth base values and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyReport {
    pub per_depth: Vec<f64>,
    pub gsd: f64,
    pub base_name: &'static str,
    /// Gaussian bandwidth used at each depth, for kernel bases.
    pub bandwidths: Option<Vec<f64>>,
}

impl DiscrepancyReport {
    pub fn new(per_depth: Vec<f64>, base_name: &'static str, bandwidths: Option<Vec<f64>>) -> Self {
        // Shifted mean: exact when every depth carries the same value.
        let gsd = match per_depth.first() {
            None => 0.0,
            Some(&x0) => {
                x0 + per_depth.iter().map(|x| x - x0).sum::<f64>() / per_depth.len() as f64
            }
        };
        DiscrepancyReport {
            per_depth,
            gsd,
            base_name,
            bandwidths,
        }
    }

    pub fn depth(&self) -> usize {
        self.per_depth.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Biased,
    /// Within-sample means exclude the diagonal.
    Unbiased,
}

#[inline]
fn gaussian(sq_dist: f64, bandwidth: f64) -> f64 {
    libm::exp(-sq_dist / (2.0 * bandwidth * bandwidth))
}

fn check_cols(xs: &Matrix, xt: &Matrix) -> Result<()> {
    if xs.cols() != xt.cols() {
        return Err(Error::DimensionMismatch {
            context: "sample dimension",
            expected: xs.cols(),
            found: xt.cols(),
        });
    }
    Ok(())
}

fn check_bandwidth(bandwidth: f64) -> Result<()> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidBandwidth(bandwidth));
    }
    Ok(())
}

fn check_rows(x: &Matrix, needed: usize, context: &'static str) -> Result<()> {
    if x.rows() < needed {
        return Err(Error::TooFewRows {
            context,
            needed,
            found: x.rows(),
        });
    }
    Ok(())
}

/// Total order on matrices used to fix the summation order of cross terms,
/// which makes `mmd2(a, b)` and `mmd2(b, a)` bit-identical.
fn canonical_cmp(a: &Matrix, b: &Matrix) -> Ordering {
    a.rows()
        .cmp(&b.rows())
        .then_with(|| {
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

fn kernel_sum(a: &Matrix, b: &Matrix, bandwidth: f64, skip_diagonal: bool) -> f64 {
    let (first, second) = if canonical_cmp(b, a).is_lt() { (b, a) } else { (a, b) };
    let mut total = 0.0;
    for i in 0..first.rows() {
        let row = first.row(i);
        for j in 0..second.rows() {
            if skip_diagonal && i == j {
                continue;
            }
            total += gaussian(squared_distance(row, second.row(j)), bandwidth);
        }
    }
    total
}

fn within_normalizer(n: usize, estimator: Estimator) -> f64 {
    match estimator {
        Estimator::Biased => (n * n) as f64,
        Estimator::Unbiased => (n * (n - 1)) as f64,
    }
}

fn mmd_preconditions(xs: &Matrix, xt: &Matrix, bandwidth: f64, estimator: Estimator) -> Result<()> {
    check_cols(xs, xt)?;
    check_bandwidth(bandwidth)?;
    let needed = match estimator {
        Estimator::Biased => 1,
        Estimator::Unbiased => 2,
    };
    check_rows(xs, needed, "mmd2")?;
    check_rows(xt, needed, "mmd2")
}

/// Squared maximum mean discrepancy under the Gaussian kernel
/// `exp(-|x - y|^2 / (2 bandwidth^2))`.
pub fn mmd2(xs: &Matrix, xt: &Matrix, bandwidth: f64, estimator: Estimator) -> Result<f64> {
    mmd_preconditions(xs, xt, bandwidth, estimator)?;
    let skip = estimator == Estimator::Unbiased;
    let ss = kernel_sum(xs, xs, bandwidth, skip) / within_normalizer(xs.rows(), estimator);
    let tt = kernel_sum(xt, xt, bandwidth, skip) / within_normalizer(xt.rows(), estimator);
    let st = kernel_sum(xs, xt, bandwidth, false) / (xs.rows() * xt.rows()) as f64;
    Ok(ss + tt - 2.0 * st)
}

/// Sum over rows `j` of `b` of `dk(a_i, b_j)/da_i`, excluding `j = i` when
/// `skip_index` is set.
fn kernel_grad_row(
    ai: &[f64],
    b: &Matrix,
    bandwidth: f64,
    skip_index: Option<usize>,
    out: &mut [f64],
) {
    let inv_bw2 = 1.0 / (bandwidth * bandwidth);
    out.iter_mut().for_each(|o| *o = 0.0);
    for j in 0..b.rows() {
        if skip_index == Some(j) {
            continue;
        }
        let bj = b.row(j);
        let k = gaussian(squared_distance(ai, bj), bandwidth);
        for ((o, &x), &y) in out.iter_mut().zip(ai).zip(bj) {
            *o -= k * (x - y) * inv_bw2;
        }
    }
}

fn mmd_side_grad(
    own: &Matrix,
    other: &Matrix,
    bandwidth: f64,
    estimator: Estimator,
) -> Matrix {
    let n = own.rows();
    let within_coef = 2.0 / within_normalizer(n, estimator);
    let cross_coef = 2.0 / (n * other.rows()) as f64;
    let skip = estimator == Estimator::Unbiased;
    let mut grad = Matrix::zeros(n, own.cols());
    let mut within = alloc::vec![0.0; own.cols()];
    let mut cross = alloc::vec![0.0; own.cols()];
    for i in 0..n {
        let ai = own.row(i);
        kernel_grad_row(ai, own, bandwidth, skip.then_some(i), &mut within);
        kernel_grad_row(ai, other, bandwidth, None, &mut cross);
        for ((g, &w), &c) in grad.row_mut(i).iter_mut().zip(&within).zip(&cross) {
            *g = within_coef * w - cross_coef * c;
        }
    }
    grad
}

/// [`mmd2`] together with its gradients with respect to `xs` and `xt`.
/// The bandwidth is treated as a constant.
pub fn mmd2_with_grad(
    xs: &Matrix,
    xt: &Matrix,
    bandwidth: f64,
    estimator: Estimator,
) -> Result<(f64, Matrix, Matrix)> {
    let value = mmd2(xs, xt, bandwidth, estimator)?;
    let gs = mmd_side_grad(xs, xt, bandwidth, estimator);
    let gt = mmd_side_grad(xt, xs, bandwidth, estimator);
    Ok((value, gs, gt))
}

fn centered_covariance(x: &Matrix) -> (Matrix, Matrix) {
    let (n, d) = (x.rows(), x.cols());
    let mut mean = alloc::vec![0.0; d];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centered = x.clone();
    for r in 0..n {
        for (v, &m) in centered.row_mut(r).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut cov = centered.t_matmul(&centered);
    cov.scale(1.0 / (n - 1) as f64);
    (centered, cov)
}

fn coral_parts(xs: &Matrix, xt: &Matrix) -> Result<(f64, Matrix, Matrix, Matrix)> {
    check_cols(xs, xt)?;
    check_rows(xs, 2, "coral")?;
    check_rows(xt, 2, "coral")?;
    let (cs_centered, cs) = centered_covariance(xs);
    let (ct_centered, ct) = centered_covariance(xt);
    let mut diff = cs;
    diff.add_scaled(&ct, -1.0);
    let d = xs.cols();
    let value = if d == 0 {
        0.0
    } else {
        diff.as_slice().iter().map(|x| x * x).sum::<f64>() / (4 * d * d) as f64
    };
    Ok((value, diff, cs_centered, ct_centered))
}

/// Covariance alignment loss `|Cov(xs) - Cov(xt)|_F^2 / (4 d^2)` with
/// `1/(n-1)` sample covariances.
pub fn coral(xs: &Matrix, xt: &Matrix) -> Result<f64> {
    coral_parts(xs, xt).map(|p| p.0)
}

pub fn coral_with_grad(xs: &Matrix, xt: &Matrix) -> Result<(f64, Matrix, Matrix)> {
    let (value, diff, cs, ct) = coral_parts(xs, xt)?;
    let d = xs.cols();
    if d == 0 {
        return Ok((value, Matrix::zeros(xs.rows(), 0), Matrix::zeros(xt.rows(), 0)));
    }
    let mut gs = cs.matmul(&diff);
    gs.scale(1.0 / ((d * d) as f64 * (xs.rows() - 1) as f64));
    let mut gt = ct.matmul(&diff);
    gt.scale(-1.0 / ((d * d) as f64 * (xt.rows() - 1) as f64));
    Ok((value, gs, gt))
}

/// Median heuristic: the square root of the median nonzero squared distance
/// between distinct pooled rows.
pub fn median_bandwidth(xs: &Matrix, xt: &Matrix) -> Result<f64> {
    check_cols(xs, xt)?;
    let pooled: Vec<&[f64]> = (0..xs.rows())
        .map(|r| xs.row(r))
        .chain((0..xt.rows()).map(|r| xt.row(r)))
        .collect();
    let mut dists = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            let d = squared_distance(pooled[i], pooled[j]);
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    if dists.is_empty() {
        return Err(Error::DegenerateBandwidth);
    }
    let mid = dists.len() / 2;
    let (_, upper, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    let median = if dists.len() % 2 == 1 {
        upper
    } else {
        let lower = dists[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    Ok(libm::sqrt(median))
}

/// Result of one base evaluation at one depth.
#[derive(Debug, Clone)]
pub struct BaseValue {
    pub value: f64,
    /// Gradients with respect to the two inputs, when requested.
    pub grads: Option<(Matrix, Matrix)>,
    pub bandwidth: Option<f64>,
}

/// A two-sample discrepancy usable as the per-depth base of the GSD.
pub trait BaseDiscrepancy {
    fn name(&self) -> &'static str;

    fn evaluate(&self, depth: usize, xs: &Matrix, xt: &Matrix, with_grad: bool) -> Result<BaseValue>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Bandwidth {
    /// Median heuristic, recomputed on every evaluation.
    Median,
    Fixed(f64),
    /// One bandwidth per depth, typically medians frozen at a reference point.
    PerDepth(Vec<f64>),
}

/// Gaussian-kernel squared MMD base.
#[derive(Debug, Clone, PartialEq)]
pub struct Mmd {
    pub bandwidth: Bandwidth,
    pub estimator: Estimator,
}

impl Default for Mmd {
    fn default() -> Self {
        Mmd {
            bandwidth: Bandwidth::Median,
            estimator: Estimator::Biased,
        }
    }
}

impl Mmd {
    pub fn resolve_bandwidth(&self, depth: usize, xs: &Matrix, xt: &Matrix) -> Result<f64> {
        match &self.bandwidth {
            Bandwidth::Median => median_bandwidth(xs, xt).or_else(|e| match e {
                // Identical constant samples have zero discrepancy under any bandwidth.
                Error::DegenerateBandwidth => Ok(1.0),
                e => Err(e),
            }),
            Bandwidth::Fixed(b) => Ok(*b),
            Bandwidth::PerDepth(bs) => bs.get(depth).copied().ok_or(Error::DepthOutOfRange {
                requested: depth,
                max: bs.len().saturating_sub(1),
            }),
        }
    }

    /// The same base with median bandwidths evaluated once on the given
    /// per-depth inputs and then held fixed.
    pub fn frozen(&self, inputs_s: &[Matrix], inputs_t: &[Matrix]) -> Result<Mmd> {
        let bws = inputs_s
            .iter()
            .zip(inputs_t)
            .enumerate()
            .map(|(m, (s, t))| self.resolve_bandwidth(m, s, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Mmd {
            bandwidth: Bandwidth::PerDepth(bws),
            estimator: self.estimator,
        })
    }
}

impl BaseDiscrepancy for Mmd {
    fn name(&self) -> &'static str {
        "mmd"
    }

    fn evaluate(&self, depth: usize, xs: &Matrix, xt: &Matrix, with_grad: bool) -> Result<BaseValue> {
        let bw = self.resolve_bandwidth(depth, xs, xt)?;
        if with_grad {
            let (value, gs, gt) = mmd2_with_grad(xs, xt, bw, self.estimator)?;
            Ok(BaseValue {
                value,
                grads: Some((gs, gt)),
                bandwidth: Some(bw),
            })
        } else {
            Ok(BaseValue {
                value: mmd2(xs, xt, bw, self.estimator)?,
                grads: None,
                bandwidth: Some(bw),
            })
        }
    }
}

/// Covariance alignment base.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Coral;

impl BaseDiscrepancy for Coral {
    fn name(&self) -> &'static str {
        "coral"
    }

    fn evaluate(&self, _depth: usize, xs: &Matrix, xt: &Matrix, with_grad: bool) -> Result<BaseValue> {
        if with_grad {
            let (value, gs, gt) = coral_with_grad(xs, xt)?;
            Ok(BaseValue {
                value,
                grads: Some((gs, gt)),
                bandwidth: None,
            })
        } else {
            Ok(BaseValue {
                value: coral(xs, xt)?,
                grads: None,
                bandwidth: None,
            })
        }
    }
}

/// Per-depth gradients of the GSD with respect to its inputs.
pub type GsdGradients = (Vec<Matrix>, Vec<Matrix>);

/// Evaluates the base at every depth and averages. With `with_grad`, also
/// returns `d gsd / d input` per depth and side (already divided by `M + 1`).
pub fn gsd_on_inputs(
    inputs_s: &[Matrix],
    inputs_t: &[Matrix],
    base: &dyn BaseDiscrepancy,
    with_grad: bool,
) -> Result<(DiscrepancyReport, Option<GsdGradients>)> {
    if inputs_s.len() != inputs_t.len() || inputs_s.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "embedding depth",
            expected: inputs_s.len(),
            found: inputs_t.len(),
        });
    }
    let weight = 1.0 / inputs_s.len() as f64;
    let mut per_depth = Vec::with_capacity(inputs_s.len());
    let mut bandwidths = Vec::new();
    let mut grads_s = Vec::new();
    let mut grads_t = Vec::new();
    for (m, (xs, xt)) in inputs_s.iter().zip(inputs_t).enumerate() {
        let v = base.evaluate(m, xs, xt, with_grad)?;
        per_depth.push(v.value);
        if let Some(bw) = v.bandwidth {
            bandwidths.push(bw);
        }
        if let Some((mut gs, mut gt)) = v.grads {
            gs.scale(weight);
            gt.scale(weight);
            grads_s.push(gs);
            grads_t.push(gt);
        }
    }
    let bandwidths = (!bandwidths.is_empty()).then_some(bandwidths);
    let report = DiscrepancyReport::new(per_depth, base.name(), bandwidths);
    Ok((report, with_grad.then_some((grads_s, grads_t))))
}

fn check_depth(seq_s: &SubtreeEmbeddingSequence, seq_t: &SubtreeEmbeddingSequence) -> Result<()> {
    if seq_s.depth() != seq_t.depth() {
        return Err(Error::DimensionMismatch {
            context: "embedding depth",
            expected: seq_s.depth(),
            found: seq_t.depth(),
        });
    }
    Ok(())
}

pub fn gsd(
    seq_s: &SubtreeEmbeddingSequence,
    seq_t: &SubtreeEmbeddingSequence,
    base: &dyn BaseDiscrepancy,
) -> Result<DiscrepancyReport> {
    check_depth(seq_s, seq_t)?;
    gsd_on_inputs(seq_s.layers(), seq_t.layers(), base, false).map(|r| r.0)
}

/// Appends `extra` columns to every depth of the sequence.
pub fn concat_each(seq: &SubtreeEmbeddingSequence, extra: &Matrix) -> Result<Vec<Matrix>> {
    seq.layers().iter().map(|f| f.hconcat(extra)).collect()
}

/// Structure-aware GSD: the base is applied to `[f_m(v) | degree one-hot(v)]`.
pub fn gsd_degree(
    seq_s: &SubtreeEmbeddingSequence,
    seq_t: &SubtreeEmbeddingSequence,
    deg_s: &Matrix,
    deg_t: &Matrix,
    base: &dyn BaseDiscrepancy,
) -> Result<DiscrepancyReport> {
    check_depth(seq_s, seq_t)?;
    let s = concat_each(seq_s, deg_s)?;
    let t = concat_each(seq_t, deg_t)?;
    gsd_on_inputs(&s, &t, base, false).map(|r| r.0)
}

pub fn check_one_hot(m: &Matrix) -> Result<()> {
    for r in 0..m.rows() {
        let row = m.row(r);
        let ones = row.iter().filter(|&&x| x == 1.0).count();
        let zeros = row.iter().filter(|&&x| x == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::NotOneHot(r));
        }
    }
    Ok(())
}

/// Label-informed GSD: the base is applied to `[f_m(v) | label one-hot(v)]`.
/// Target rows may hold pseudo-labels.
pub fn gsd_label(
    seq_s: &SubtreeEmbeddingSequence,
    seq_t: &SubtreeEmbeddingSequence,
    y_s: &Matrix,
    y_t: &Matrix,
    base: &dyn BaseDiscrepancy,
) -> Result<DiscrepancyReport> {
    check_depth(seq_s, seq_t)?;
    check_one_hot(y_s)?;
    check_one_hot(y_t)?;
    let s = concat_each(seq_s, y_s)?;
    let t = concat_each(seq_t, y_t)?;
    gsd_on_inputs(&s, &t, base, false).map(|r| r.0)
}
