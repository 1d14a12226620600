//! GCN encoder, MLP heads and exact reverse-mode gradients of the training
//! objectives.
//!
//! Layer `m` computes `f_m = relu(Â f_{m-1} W_m)` without bias. Heads are
//! MLPs with ReLU between layers and a linear output. Gradients are derived
//! by hand, layer by layer; the ReLU subgradient at zero is zero.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::discrepancy::{check_one_hot, gsd_on_inputs, BaseDiscrepancy, DiscrepancyReport};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::linalg::Matrix;
use crate::rng::{stream_rng, Stream};

/// Fully connected layer `z = a W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Every trainable tensor of an encoder plus head.
///
/// Flat indices enumerate the GCN weights `W_1..W_M` (row-major), then each
/// head layer's weight (row-major) followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    input_dim: usize,
    gcn: Vec<Matrix>,
    head: Vec<DenseLayer>,
}

fn dim_error(context: &'static str, expected: usize, found: usize) -> Error {
    Error::DimensionMismatch {
        context,
        expected,
        found,
    }
}

impl ModelParams {
    pub fn new(input_dim: usize, gcn: Vec<Matrix>, head: Vec<DenseLayer>) -> Result<Self> {
        let mut dim = input_dim;
        for w in &gcn {
            if w.rows() != dim {
                return Err(dim_error("gcn layer input", dim, w.rows()));
            }
            dim = w.cols();
        }
        let first = head
            .first()
            .ok_or_else(|| Error::InvalidConfig("head needs at least one layer".into()))?;
        if first.weight.rows() != dim && first.weight.rows() != 2 * dim {
            return Err(dim_error("head input", dim, first.weight.rows()));
        }
        let mut hdim = first.weight.rows();
        for layer in &head {
            if layer.weight.rows() != hdim {
                return Err(dim_error("head layer input", hdim, layer.weight.rows()));
            }
            if layer.bias.len() != layer.weight.cols() {
                return Err(dim_error("head bias", layer.weight.cols(), layer.bias.len()));
            }
            hdim = layer.weight.cols();
        }
        Ok(ModelParams {
            input_dim,
            gcn,
            head,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Number of GCN layers `M`.
    pub fn depth(&self) -> usize {
        self.gcn.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.gcn.last().map_or(self.input_dim, Matrix::cols)
    }

    /// `[input_dim, d_1, ..., d_M]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(self.gcn.iter().map(Matrix::cols));
        dims
    }

    /// `[head input, hidden..., output]`.
    pub fn head_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.head[0].weight.rows()];
        dims.extend(self.head.iter().map(|l| l.weight.cols()));
        dims
    }

    pub fn output_dim(&self) -> usize {
        self.head.last().map_or(0, |l| l.weight.cols())
    }

    pub fn is_link_head(&self) -> bool {
        self.head[0].weight.rows() == 2 * self.embedding_dim()
            && self.head[0].weight.rows() != self.embedding_dim()
    }

    pub fn gcn_weights(&self) -> &[Matrix] {
        &self.gcn
    }

    pub fn head_layers(&self) -> &[DenseLayer] {
        &self.head
    }

    /// Parameter blocks in flat-index order.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.gcn.iter().map(Matrix::as_slice).collect();
        for l in &self.head {
            out.push(l.weight.as_slice());
            out.push(&l.bias);
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.gcn.iter_mut().map(Matrix::as_mut_slice).collect();
        for l in &mut self.head {
            out.push(l.weight.as_mut_slice());
            out.push(&mut l.bias);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        let mut i = index;
        for b in self.blocks() {
            if i < b.len() {
                return Some(b[i]);
            }
            i -= b.len();
        }
        None
    }

    pub fn set(&mut self, index: usize, value: f64) -> bool {
        let mut i = index;
        for b in self.blocks_mut() {
            if i < b.len() {
                b[i] = value;
                return true;
            }
            i -= b.len();
        }
        false
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            input_dim: self.input_dim,
            gcn: self.gcn.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            head: self
                .head
                .iter()
                .map(|l| DenseLayer {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Rebuilds parameters from dims and flat values.
    pub fn from_flat(layer_dims: &[usize], head_dims: &[usize], values: &[f64]) -> Result<Self> {
        let mut params = shaped_zeros(layer_dims, head_dims)?;
        let expected = params.num_params();
        if values.len() != expected {
            return Err(dim_error("flat parameter count", expected, values.len()));
        }
        let mut rest = values;
        for b in params.blocks_mut() {
            let (head, tail) = rest.split_at(b.len());
            b.copy_from_slice(head);
            rest = tail;
        }
        Ok(params)
    }
}

fn shaped_zeros(layer_dims: &[usize], head_dims: &[usize]) -> Result<ModelParams> {
    if layer_dims.is_empty() || layer_dims.contains(&0) {
        return Err(Error::InvalidConfig(
            "layer dims must be non-empty and positive".into(),
        ));
    }
    if head_dims.len() < 2 || head_dims.contains(&0) {
        return Err(Error::InvalidConfig(
            "head dims need an input and an output, all positive".into(),
        ));
    }
    let gcn = layer_dims
        .windows(2)
        .map(|w| Matrix::zeros(w[0], w[1]))
        .collect();
    let head = head_dims
        .windows(2)
        .map(|w| DenseLayer {
            weight: Matrix::zeros(w[0], w[1]),
            bias: vec![0.0; w[1]],
        })
        .collect();
    ModelParams::new(layer_dims[0], gcn, head)
}

/// Glorot-uniform weights, zero biases, drawn from the `Init` stream.
///
/// `head_dims[0]` must equal the last entry of `layer_dims` (node heads) or
/// twice it (link heads).
pub fn init_params(layer_dims: &[usize], head_dims: &[usize], seed: u64) -> Result<ModelParams> {
    let mut params = shaped_zeros(layer_dims, head_dims)?;
    let mut rng = stream_rng(seed, Stream::Init);
    let mut fill = |w: &mut Matrix| {
        let limit = libm::sqrt(6.0 / (w.rows() + w.cols()) as f64);
        for x in w.as_mut_slice() {
            *x = rng.random_range(-limit..limit);
        }
    };
    params.gcn.iter_mut().for_each(&mut fill);
    params.head.iter_mut().for_each(|l| fill(&mut l.weight));
    Ok(params)
}

/// Node representations `f_0..f_M`; `f_0` is the raw feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SubtreeEmbeddingSequence {
    layers: Vec<Matrix>,
}

impl SubtreeEmbeddingSequence {
    pub fn new(layers: Vec<Matrix>) -> Self {
        assert!(!layers.is_empty(), "an embedding sequence holds at least f_0");
        SubtreeEmbeddingSequence { layers }
    }

    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn at(&self, m: usize) -> Option<&Matrix> {
        self.layers.get(m)
    }

    pub fn last(&self) -> &Matrix {
        self.layers.last().expect("non-empty")
    }

    pub fn into_layers(self) -> Vec<Matrix> {
        self.layers
    }
}

struct GcnTrace {
    layers: Vec<Matrix>,
    /// `Â f_{m-1}` for `m = 1..=M`.
    propagated: Vec<Matrix>,
}

fn relu_in_place(m: &mut Matrix) {
    m.as_mut_slice().iter_mut().for_each(|x| {
        if *x < 0.0 {
            *x = 0.0
        }
    });
}

fn gcn_trace(adj: &NormalizedAdjacency, features: &Matrix, params: &ModelParams) -> Result<GcnTrace> {
    if features.cols() != params.input_dim {
        return Err(dim_error("feature dimension", params.input_dim, features.cols()));
    }
    if features.rows() != adj.num_nodes() {
        return Err(dim_error("feature rows", adj.num_nodes(), features.rows()));
    }
    let mut layers = vec![features.clone()];
    let mut propagated = Vec::with_capacity(params.gcn.len());
    for w in &params.gcn {
        let h = adj.propagate(layers.last().expect("non-empty"));
        let mut z = h.matmul(w);
        relu_in_place(&mut z);
        propagated.push(h);
        layers.push(z);
    }
    Ok(GcnTrace { layers, propagated })
}

pub fn gcn_forward(
    adj: &NormalizedAdjacency,
    features: &Matrix,
    params: &ModelParams,
) -> Result<SubtreeEmbeddingSequence> {
    Ok(SubtreeEmbeddingSequence::new(gcn_trace(adj, features, params)?.layers))
}

/// Accumulates weight gradients of the GCN given `d loss / d f_m` for every
/// depth. `grads[m]` is consumed.
fn gcn_backward(
    adj: &NormalizedAdjacency,
    trace: &GcnTrace,
    params: &ModelParams,
    mut grads: Vec<Matrix>,
    out: &mut ModelParams,
) {
    for m in (1..trace.layers.len()).rev() {
        let mut dz = core::mem::replace(&mut grads[m], Matrix::zeros(0, 0));
        for (g, &f) in dz.as_mut_slice().iter_mut().zip(trace.layers[m].as_slice()) {
            if f <= 0.0 {
                *g = 0.0;
            }
        }
        out.gcn[m - 1].add_scaled(&trace.propagated[m - 1].t_matmul(&dz), 1.0);
        if m > 1 {
            let dh = dz.matmul_t(&params.gcn[m - 1]);
            grads[m - 1].add_scaled(&adj.propagate(&dh), 1.0);
        }
    }
}

/// Activations `a_0..a_L` of the head.
struct MlpTrace {
    activations: Vec<Matrix>,
}

fn mlp_trace(input: &Matrix, head: &[DenseLayer]) -> Result<MlpTrace> {
    if input.cols() != head[0].weight.rows() {
        return Err(dim_error("head input", head[0].weight.rows(), input.cols()));
    }
    let mut activations = vec![input.clone()];
    for (l, layer) in head.iter().enumerate() {
        let mut z = activations.last().expect("non-empty").matmul(&layer.weight);
        for r in 0..z.rows() {
            for (x, &b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                *x += b;
            }
        }
        if l + 1 < head.len() {
            relu_in_place(&mut z);
        }
        activations.push(z);
    }
    Ok(MlpTrace { activations })
}

/// Returns `d loss / d input` and accumulates head gradients.
fn mlp_backward(trace: &MlpTrace, head: &[DenseLayer], d_out: Matrix, out: &mut [DenseLayer]) -> Matrix {
    let mut dz = d_out;
    for l in (0..head.len()).rev() {
        if l + 1 < head.len() {
            for (g, &a) in dz.as_mut_slice().iter_mut().zip(trace.activations[l + 1].as_slice()) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        out[l].weight.add_scaled(&trace.activations[l].t_matmul(&dz), 1.0);
        for r in 0..dz.rows() {
            for (b, &g) in out[l].bias.iter_mut().zip(dz.row(r)) {
                *b += g;
            }
        }
        dz = dz.matmul_t(&head[l].weight);
    }
    dz
}

/// Class logits (no softmax) from the final GCN representation.
pub fn classify_head(h_input: &Matrix, params: &ModelParams) -> Result<Matrix> {
    let mut trace = mlp_trace(h_input, &params.head)?;
    Ok(trace.activations.pop().expect("non-empty"))
}

/// Link logit for the ordered pair `[f(u) | f(v)]` (no sigmoid).
pub fn link_head(fu: &[f64], fv: &[f64], params: &ModelParams) -> Result<f64> {
    if fu.len() != fv.len() {
        return Err(dim_error("link endpoint dimension", fu.len(), fv.len()));
    }
    let mut row = Vec::with_capacity(fu.len() * 2);
    row.extend_from_slice(fu);
    row.extend_from_slice(fv);
    let input = Matrix::from_vec(1, row.len(), row)?;
    let out = classify_head(&input, params)?;
    if out.cols() != 1 {
        return Err(dim_error("link head output", 1, out.cols()));
    }
    Ok(out[(0, 0)])
}

fn pair_matrix(emb: &Matrix, pairs: impl Iterator<Item = (usize, usize)>) -> Result<Matrix> {
    let d = emb.cols();
    let mut data = Vec::new();
    let mut rows = 0;
    for (u, v) in pairs {
        if u >= emb.rows() || v >= emb.rows() {
            return Err(Error::EdgeOutOfRange(u, v, emb.rows()));
        }
        data.extend_from_slice(emb.row(u));
        data.extend_from_slice(emb.row(v));
        rows += 1;
    }
    Matrix::from_vec(rows, 2 * d, data)
}

/// Batched [`link_head`] over node pairs of one embedding matrix.
pub fn link_logits(emb: &Matrix, pairs: &[(usize, usize)], params: &ModelParams) -> Result<Vec<f64>> {
    let input = pair_matrix(emb, pairs.iter().copied())?;
    let out = classify_head(&input, params)?;
    Ok((0..out.rows()).map(|r| out[(r, 0)]).collect())
}

/// One graph's propagation matrix and raw features.
#[derive(Debug, Clone, Copy)]
pub struct DomainInput<'a> {
    pub adj: &'a NormalizedAdjacency,
    pub features: &'a Matrix,
}

/// A labeled node pair for the link objective; `label` is 1 or 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSample {
    pub u: usize,
    pub v: usize,
    pub label: f64,
}

#[derive(Debug, Clone, Copy)]
pub enum TaskLoss<'a> {
    /// Mean cross-entropy over all source nodes.
    CrossEntropy { labels: &'a [usize] },
    /// Mean squared error over all source nodes; the head has one output.
    SquaredError { targets: &'a [f64] },
    /// Mean binary cross-entropy on each graph's samples, summed over both
    /// graphs. An empty sample list contributes 0.
    Link {
        source: &'a [LinkSample],
        target: &'a [LinkSample],
    },
}

/// Extra columns appended to every depth before the base is applied.
#[derive(Debug, Clone, Copy)]
pub enum GsdVariant<'a> {
    Plain,
    Degree { source: &'a Matrix, target: &'a Matrix },
    Label { source: &'a Matrix, target: &'a Matrix },
}

/// `task loss + lambda * GSD` with everything needed to evaluate it.
#[derive(Clone, Copy)]
pub struct ObjectiveSpec<'a> {
    pub task: TaskLoss<'a>,
    pub lambda: f64,
    pub base: &'a dyn BaseDiscrepancy,
    pub variant: GsdVariant<'a>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub task_loss: f64,
    pub report: DiscrepancyReport,
    /// `task_loss + lambda * report.gsd`.
    pub total: f64,
    pub gradients: ModelParams,
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + libm::log1p(libm::exp(-z.abs()))
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Mean BCE with logits; returns the loss and `d loss / d logit`.
fn bce_with_logits(logits: &Matrix, samples: &[LinkSample]) -> (f64, Matrix) {
    let n = samples.len();
    let mut grad = Matrix::zeros(n, 1);
    if n == 0 {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let z = logits[(i, 0)];
        loss += softplus(z) - s.label * z;
        grad[(i, 0)] = (sigmoid(z) - s.label) / n as f64;
    }
    (loss / n as f64, grad)
}

fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, c) = (logits.rows(), logits.cols());
    if labels.len() != n {
        return Err(dim_error("label count", n, labels.len()));
    }
    let mut grad = Matrix::zeros(n, c);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::LabelOutOfRange {
                node: r,
                label: y,
                num_classes: c,
            });
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| libm::exp(z - max)).sum();
        let lse = max + libm::log(sum);
        loss += lse - row[y];
        for (k, g) in grad.row_mut(r).iter_mut().enumerate() {
            let p = libm::exp(row[k] - lse);
            *g = (p - if k == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

fn squared_error(out: &Matrix, targets: &[f64]) -> Result<(f64, Matrix)> {
    let n = out.rows();
    if out.cols() != 1 {
        return Err(dim_error("regression head output", 1, out.cols()));
    }
    if targets.len() != n {
        return Err(dim_error("target count", n, targets.len()));
    }
    let mut grad = Matrix::zeros(n, 1);
    let mut loss = 0.0;
    for (r, &y) in targets.iter().enumerate() {
        let d = out[(r, 0)] - y;
        loss += d * d;
        grad[(r, 0)] = 2.0 * d / n as f64;
    }
    Ok((loss / n as f64, grad))
}

fn variant_inputs(layers: &[Matrix], extra: Option<&Matrix>) -> Result<Vec<Matrix>> {
    match extra {
        None => Ok(layers.to_vec()),
        Some(e) => layers.iter().map(|f| f.hconcat(e)).collect(),
    }
}

fn variant_extras<'a>(variant: &GsdVariant<'a>) -> Result<(Option<&'a Matrix>, Option<&'a Matrix>)> {
    Ok(match *variant {
        GsdVariant::Plain => (None, None),
        GsdVariant::Degree { source, target } => (Some(source), Some(target)),
        GsdVariant::Label { source, target } => {
            check_one_hot(source)?;
            check_one_hot(target)?;
            (Some(source), Some(target))
        }
    })
}

struct Run {
    task_loss: f64,
    report: DiscrepancyReport,
    total: f64,
    grads: Option<ModelParams>,
    pattern: Vec<bool>,
}

fn record_pattern(pattern: &mut Vec<bool>, m: &Matrix) {
    pattern.extend(m.as_slice().iter().map(|&x| x > 0.0));
}

fn run(
    obj: &ObjectiveSpec<'_>,
    source: DomainInput<'_>,
    target: DomainInput<'_>,
    params: &ModelParams,
    with_grad: bool,
    with_pattern: bool,
) -> Result<Run> {
    if !(obj.lambda >= 0.0 && obj.lambda.is_finite()) {
        return Err(Error::InvalidConfig("lambda must be finite and >= 0".into()));
    }
    let trace_s = gcn_trace(source.adj, source.features, params)?;
    let trace_t = gcn_trace(target.adj, target.features, params)?;
    let depth = params.depth();
    let mut grads = with_grad.then(|| params.zeros_like());
    let zero_layers = |t: &GcnTrace| -> Vec<Matrix> {
        t.layers.iter().map(|f| Matrix::zeros(f.rows(), f.cols())).collect()
    };
    let mut df_s = zero_layers(&trace_s);
    let mut df_t = zero_layers(&trace_t);
    let mut pattern = Vec::new();
    if with_pattern {
        for t in [&trace_s, &trace_t] {
            t.layers[1..].iter().for_each(|f| record_pattern(&mut pattern, f));
        }
    }

    let mut head_pass = |input: &Matrix,
                         loss_fn: &dyn Fn(&Matrix) -> Result<(f64, Matrix)>|
     -> Result<(f64, Option<Matrix>)> {
        let trace = mlp_trace(input, &params.head)?;
        if with_pattern {
            let hidden = &trace.activations[1..trace.activations.len() - 1];
            hidden.iter().for_each(|a| record_pattern(&mut pattern, a));
        }
        let (loss, d_out) = loss_fn(trace.activations.last().expect("non-empty"))?;
        let d_in = grads
            .as_mut()
            .map(|g| mlp_backward(&trace, &params.head, d_out, &mut g.head));
        Ok((loss, d_in))
    };

    let task_loss = match obj.task {
        TaskLoss::CrossEntropy { labels } => {
            let (loss, d_in) = head_pass(&trace_s.layers[depth], &|o| cross_entropy(o, labels))?;
            if let Some(d) = d_in {
                df_s[depth].add_scaled(&d, 1.0);
            }
            loss
        }
        TaskLoss::SquaredError { targets } => {
            let (loss, d_in) = head_pass(&trace_s.layers[depth], &|o| squared_error(o, targets))?;
            if let Some(d) = d_in {
                df_s[depth].add_scaled(&d, 1.0);
            }
            loss
        }
        TaskLoss::Link {
            source: samples_s,
            target: samples_t,
        } => {
            let mut total = 0.0;
            for (trace, samples, df) in [
                (&trace_s, samples_s, &mut df_s),
                (&trace_t, samples_t, &mut df_t),
            ] {
                if samples.is_empty() {
                    continue;
                }
                let emb = &trace.layers[depth];
                let input = pair_matrix(emb, samples.iter().map(|s| (s.u, s.v)))?;
                let (loss, d_in) = head_pass(&input, &|o| {
                    if o.cols() != 1 {
                        return Err(dim_error("link head output", 1, o.cols()));
                    }
                    Ok(bce_with_logits(o, samples))
                })?;
                total += loss;
                if let Some(d) = d_in {
                    let dim = emb.cols();
                    for (i, s) in samples.iter().enumerate() {
                        let row = d.row(i);
                        for (x, &g) in df[depth].row_mut(s.u).iter_mut().zip(&row[..dim]) {
                            *x += g;
                        }
                        for (x, &g) in df[depth].row_mut(s.v).iter_mut().zip(&row[dim..]) {
                            *x += g;
                        }
                    }
                }
            }
            total
        }
    };
    if !task_loss.is_finite() {
        return Err(Error::NonFiniteLoss("task loss"));
    }

    let (extra_s, extra_t) = variant_extras(&obj.variant)?;
    let inputs_s = variant_inputs(&trace_s.layers, extra_s)?;
    let inputs_t = variant_inputs(&trace_t.layers, extra_t)?;
    let gsd_grad = with_grad && obj.lambda != 0.0;
    let (report, gsd_grads) = gsd_on_inputs(&inputs_s, &inputs_t, obj.base, gsd_grad)?;
    if !report.gsd.is_finite() {
        return Err(Error::NonFiniteLoss("gsd"));
    }
    if let Some((gs, gt)) = gsd_grads {
        for (df, g) in df_s.iter_mut().zip(&gs).chain(df_t.iter_mut().zip(&gt)) {
            let own = g.columns(0, df.cols());
            df.add_scaled(&own, obj.lambda);
        }
    }
    let total = task_loss + obj.lambda * report.gsd;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss("total loss"));
    }

    if let Some(g) = grads.as_mut() {
        gcn_backward(source.adj, &trace_s, params, df_s, g);
        gcn_backward(target.adj, &trace_t, params, df_t, g);
    }
    Ok(Run {
        task_loss,
        report,
        total,
        grads,
        pattern,
    })
}

/// Objective value and its exact gradient with respect to every parameter.
pub fn loss_and_gradients(
    obj: &ObjectiveSpec<'_>,
    source: DomainInput<'_>,
    target: DomainInput<'_>,
    params: &ModelParams,
) -> Result<Evaluation> {
    let r = run(obj, source, target, params, true, false)?;
    Ok(Evaluation {
        task_loss: r.task_loss,
        report: r.report,
        total: r.total,
        gradients: r.grads.expect("requested"),
    })
}

/// Objective value only: `(task loss, GSD report, total)`.
pub fn objective_value(
    obj: &ObjectiveSpec<'_>,
    source: DomainInput<'_>,
    target: DomainInput<'_>,
    params: &ModelParams,
) -> Result<(f64, DiscrepancyReport, f64)> {
    let r = run(obj, source, target, params, false, false)?;
    Ok((r.task_loss, r.report, r.total))
}

/// Sign pattern of every ReLU input in the objective. Two parameter points
/// with equal patterns lie in the same smooth piece of the objective.
pub fn activation_pattern(
    obj: &ObjectiveSpec<'_>,
    source: DomainInput<'_>,
    target: DomainInput<'_>,
    params: &ModelParams,
) -> Result<Vec<bool>> {
    Ok(run(obj, source, target, params, false, true)?.pattern)
}

/// Per-depth inputs the base sees under `variant` (embeddings plus any
/// appended one-hot columns). Useful to freeze kernel bandwidths.
pub fn gsd_inputs(
    variant: &GsdVariant<'_>,
    source: DomainInput<'_>,
    target: DomainInput<'_>,
    params: &ModelParams,
) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
    let (extra_s, extra_t) = variant_extras(variant)?;
    let s = gcn_trace(source.adj, source.features, params)?;
    let t = gcn_trace(target.adj, target.features, params)?;
    Ok((
        variant_inputs(&s.layers, extra_s)?,
        variant_inputs(&t.layers, extra_t)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrepancy::{Bandwidth, Estimator, Mmd};
    use crate::graph::{renormalized_adjacency, Graph};

    fn graph(n: usize, edges: &[(usize, usize)], features: Matrix) -> Graph {
        Graph::new(n, edges.iter().copied(), features, None).unwrap()
    }

    fn identity_params(d: usize, depth: usize, classes: usize) -> ModelParams {
        let gcn = (0..depth).map(|_| Matrix::identity(d)).collect();
        let head = vec![DenseLayer {
            weight: Matrix::zeros(d, classes),
            bias: vec![0.0; classes],
        }];
        ModelParams::new(d, gcn, head).unwrap()
    }

    #[test]
    fn init_shapes_and_determinism() {
        let p = init_params(&[4, 8, 8], &[8, 3], 11).unwrap();
        assert_eq!(p.gcn_weights()[0].rows(), 4);
        assert_eq!(p.gcn_weights()[0].cols(), 8);
        assert_eq!(p.gcn_weights()[1].rows(), 8);
        assert_eq!(p, init_params(&[4, 8, 8], &[8, 3], 11).unwrap());
        assert_ne!(p, init_params(&[4, 8, 8], &[8, 3], 12).unwrap());
        assert!(p.head_layers()[0].bias.iter().all(|&b| b == 0.0));
        assert_eq!(p.num_params(), 32 + 64 + 24 + 3);

        let link = init_params(&[4, 8], &[16, 1], 0).unwrap();
        assert!(link.is_link_head());
        assert_eq!(link.output_dim(), 1);
        assert!(init_params(&[4, 8], &[5, 1], 0).is_err());
    }

    #[test]
    fn flat_addressing_round_trips() {
        let p = init_params(&[3, 4], &[4, 5, 2], 3).unwrap();
        let flat = p.to_flat();
        assert_eq!(flat.len(), p.num_params());
        let q = ModelParams::from_flat(&p.layer_dims(), &p.head_dims(), &flat).unwrap();
        assert_eq!(p, q);
        for (i, &v) in flat.iter().enumerate() {
            assert_eq!(p.get(i), Some(v));
        }
        assert_eq!(p.get(flat.len()), None);
    }

    #[test]
    fn isolated_node_forward() {
        let g = graph(1, &[], Matrix::from_rows(&[[1.0, -1.0]]).unwrap());
        let p = identity_params(2, 1, 2);
        let seq = gcn_forward(&renormalized_adjacency(&g), g.features(), &p).unwrap();
        assert_eq!(seq.at(1).unwrap().row(0), &[1.0, 0.0]);
        assert_eq!(seq.at(0).unwrap(), g.features());
    }

    #[test]
    fn edge_forward_by_hand() {
        let g = graph(2, &[(0, 1)], Matrix::from_rows(&[[2.0, 0.0], [0.0, 2.0]]).unwrap());
        let p = identity_params(2, 1, 2);
        let seq = gcn_forward(&renormalized_adjacency(&g), g.features(), &p).unwrap();
        assert_eq!(seq.at(1).unwrap().as_slice(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_features_stay_zero() {
        let g = graph(3, &[(0, 1), (1, 2)], Matrix::zeros(3, 4));
        let p = init_params(&[4, 6, 5], &[5, 2], 9).unwrap();
        let seq = gcn_forward(&renormalized_adjacency(&g), g.features(), &p).unwrap();
        for m in 1..=2 {
            assert!(seq.at(m).unwrap().as_slice().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn forward_rejects_wrong_feature_dim() {
        let g = graph(2, &[(0, 1)], Matrix::zeros(2, 3));
        let p = init_params(&[4, 6], &[6, 2], 9).unwrap();
        assert!(gcn_forward(&renormalized_adjacency(&g), g.features(), &p).is_err());
    }

    #[test]
    fn heads_by_hand() {
        let f = Matrix::from_rows(&[[0.5, -2.0], [3.0, 1.0]]).unwrap();
        let mut p = identity_params(2, 0, 2);
        p.head[0].weight = Matrix::identity(2);
        assert_eq!(classify_head(&f, &p).unwrap(), f);

        let zero = init_params(&[8, 16], &[16, 3], 0).unwrap().zeros_like();
        let logits = classify_head(&Matrix::zeros(4, 16), &zero).unwrap();
        assert!(logits.as_slice().iter().all(|&x| x == 0.0));

        let hidden = init_params(&[8], &[8, 16, 3], 0).unwrap();
        let out = classify_head(&Matrix::zeros(5, 8), &hidden).unwrap();
        assert_eq!((out.rows(), out.cols()), (5, 3));
    }

    #[test]
    fn link_head_by_hand() {
        let zero = init_params(&[2], &[4, 1], 0).unwrap().zeros_like();
        assert_eq!(link_head(&[1.0, 2.0], &[3.0, 4.0], &zero).unwrap(), 0.0);

        let mut pick = zero.clone();
        pick.head[0].weight[(0, 0)] = 0.5;
        assert_eq!(link_head(&[3.0, 2.0], &[1.0, 4.0], &pick).unwrap(), 1.5);
        assert_eq!(link_head(&[1.0, 4.0], &[3.0, 2.0], &pick).unwrap(), 0.5);
        assert!(link_head(&[1.0], &[3.0, 2.0], &pick).is_err());
    }

    #[test]
    fn lambda_zero_ignores_target() {
        let src = graph(3, &[(0, 1), (1, 2)], Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap());
        let a = graph(2, &[(0, 1)], Matrix::from_rows(&[[5.0, 1.0], [0.0, 3.0]]).unwrap());
        let b = graph(3, &[], Matrix::from_rows(&[[-1.0, 2.0], [0.5, 0.5], [9.0, 0.0]]).unwrap());
        let p = init_params(&[2, 4, 4], &[4, 2], 5).unwrap();
        let base = Mmd::default();
        let obj = ObjectiveSpec {
            task: TaskLoss::CrossEntropy { labels: &[0, 1, 1] },
            lambda: 0.0,
            base: &base,
            variant: GsdVariant::Plain,
        };
        let adj_s = renormalized_adjacency(&src);
        let s = DomainInput { adj: &adj_s, features: src.features() };
        let (adj_a, adj_b) = (renormalized_adjacency(&a), renormalized_adjacency(&b));
        let ea = loss_and_gradients(&obj, s, DomainInput { adj: &adj_a, features: a.features() }, &p).unwrap();
        let eb = loss_and_gradients(&obj, s, DomainInput { adj: &adj_b, features: b.features() }, &p).unwrap();
        assert_eq!(ea.gradients, eb.gradients);
        assert_eq!(ea.task_loss, eb.task_loss);
        assert_eq!(ea.total, ea.task_loss);
    }

    #[test]
    fn duplicated_source_keeps_mean_loss() {
        let f = Matrix::from_rows(&[[1.0, 0.2], [0.1, 1.0], [0.7, 0.7]]).unwrap();
        let src = graph(3, &[(0, 1), (1, 2)], f.clone());
        let mut f2 = f.clone();
        f2 = Matrix::from_rows(&[f2.row(0), f2.row(1), f2.row(2), f.row(0), f.row(1), f.row(2)]).unwrap();
        let doubled = graph(6, &[(0, 1), (1, 2), (3, 4), (4, 5)], f2);
        let tgt = graph(2, &[(0, 1)], Matrix::from_rows(&[[2.0, 0.0], [0.0, 3.0]]).unwrap());
        let p = init_params(&[2, 4, 4], &[4, 2], 1).unwrap();
        let base = Mmd {
            bandwidth: Bandwidth::Fixed(1.5),
            estimator: Estimator::Biased,
        };
        let eval = |g: &Graph, labels: &[usize]| {
            let obj = ObjectiveSpec {
                task: TaskLoss::CrossEntropy { labels },
                lambda: 0.3,
                base: &base,
                variant: GsdVariant::Plain,
            };
            let (adj_s, adj_t) = (renormalized_adjacency(g), renormalized_adjacency(&tgt));
            objective_value(
                &obj,
                DomainInput { adj: &adj_s, features: g.features() },
                DomainInput { adj: &adj_t, features: tgt.features() },
                &p,
            )
            .unwrap()
            .2
        };
        let single = eval(&src, &[0, 1, 0]);
        let double = eval(&doubled, &[0, 1, 0, 0, 1, 0]);
        assert!((single - double).abs() < 1e-12, "{single} vs {double}");
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        let g = graph(2, &[(0, 1)], Matrix::identity(2));
        let adj = renormalized_adjacency(&g);
        let p = init_params(&[2, 3], &[3, 2], 0).unwrap();
        let base = Mmd::default();
        let obj = ObjectiveSpec {
            task: TaskLoss::CrossEntropy { labels: &[0, 2] },
            lambda: 0.0,
            base: &base,
            variant: GsdVariant::Plain,
        };
        let d = DomainInput { adj: &adj, features: g.features() };
        assert!(matches!(
            loss_and_gradients(&obj, d, d, &p),
            Err(Error::LabelOutOfRange { .. })
        ));
    }
}
