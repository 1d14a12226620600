//! Training loops for the transfer objectives: GRADE-N (node classification
//! or regression on the source graph) and GRADE-R (link prediction on both
//! graphs), each adding `lambda * GSD` between the two graphs' embeddings.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::discrepancy::{BaseDiscrepancy, Coral, Mmd};
use crate::error::{Error, Result};
use crate::gnn::{
    classify_head, gcn_forward, init_params, link_logits, loss_and_gradients, DomainInput,
    GsdVariant, LinkSample, ModelParams, ObjectiveSpec, SubtreeEmbeddingSequence, TaskLoss,
};
use crate::graph::{degree_one_hot, renormalized_adjacency, Graph, NodeRole, NormalizedAdjacency};
use crate::linalg::Matrix;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseKind {
    Mmd,
    Coral,
}

impl BaseKind {
    pub fn build(self) -> Box<dyn BaseDiscrepancy> {
        match self {
            BaseKind::Mmd => Box::new(Mmd::default()),
            BaseKind::Coral => Box::new(Coral),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantKind {
    Plain,
    Degree,
    Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    NodeClass,
    NodeRegress,
    Link,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub base: BaseKind,
    pub variant: VariantKind,
    pub task: Task,
    pub negatives_per_positive: usize,
    pub seed: u64,
    /// Number of GCN layers `M`.
    pub depth: usize,
    pub hidden_dim: usize,
    /// Hidden widths of the head MLP (empty = linear head).
    pub head_hidden: Vec<usize>,
    /// Last bin of the degree one-hot used by the structure-aware variant.
    pub max_degree: usize,
}

pub const NODE_LAMBDA: f64 = 0.02;
pub const LINK_LAMBDA: f64 = 0.1;

impl TrainConfig {
    pub fn node_classification() -> Self {
        TrainConfig {
            lambda: NODE_LAMBDA,
            epochs: 200,
            learning_rate: 0.01,
            adam: AdamConfig::default(),
            base: BaseKind::Mmd,
            variant: VariantKind::Plain,
            task: Task::NodeClass,
            negatives_per_positive: 1,
            seed: 0,
            depth: 2,
            hidden_dim: 16,
            head_hidden: Vec::new(),
            max_degree: 32,
        }
    }

    pub fn recommendation() -> Self {
        TrainConfig {
            lambda: LINK_LAMBDA,
            task: Task::Link,
            head_hidden: vec![16],
            ..Self::node_classification()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda must be finite and >= 0");
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.task == Task::Link && self.negatives_per_positive == 0 {
            return fail("negatives_per_positive must be >= 1 for the link task");
        }
        if self.hidden_dim == 0 || self.head_hidden.contains(&0) {
            return fail("layer widths must be positive");
        }
        if self.variant == VariantKind::Label && self.task != Task::NodeClass {
            return fail("the label-informed variant needs the classification task");
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::node_classification()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task_loss: f64,
    pub gsd_per_depth: Vec<f64>,
    pub gsd: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    /// One record per epoch, evaluated before that epoch's update.
    pub history: Vec<EpochRecord>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update, in place.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    learning_rate: f64,
    adam: &AdamConfig,
) -> Result<()> {
    let g = grads.to_flat();
    if g.len() != params.num_params() || state.m.len() != g.len() {
        return Err(Error::DimensionMismatch {
            context: "optimizer parameter count",
            expected: params.num_params(),
            found: g.len(),
        });
    }
    if let Some(i) = g.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteGradient(i));
    }
    state.t += 1;
    let t = state.t as f64;
    let c1 = 1.0 - libm::pow(adam.beta1, t);
    let c2 = 1.0 - libm::pow(adam.beta2, t);
    let mut i = 0;
    for block in params.blocks_mut() {
        for p in block.iter_mut() {
            let gi = g[i];
            state.m[i] = adam.beta1 * state.m[i] + (1.0 - adam.beta1) * gi;
            state.v[i] = adam.beta2 * state.v[i] + (1.0 - adam.beta2) * gi * gi;
            let m_hat = state.m[i] / c1;
            let v_hat = state.v[i] / c2;
            *p -= learning_rate * m_hat / (libm::sqrt(v_hat) + adam.eps);
            i += 1;
        }
    }
    Ok(())
}

/// Encoder output `f_0..f_M` for one graph.
pub fn embed(params: &ModelParams, g: &Graph) -> Result<SubtreeEmbeddingSequence> {
    gcn_forward(&renormalized_adjacency(g), g.features(), params)
}

/// Head outputs for every node.
pub fn node_outputs(params: &ModelParams, g: &Graph) -> Result<Matrix> {
    classify_head(embed(params, g)?.last(), params)
}

fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            let row = m.row(r);
            let mut best = 0;
            for (k, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Predicted classes; ties go to the smallest class index.
pub fn predict_classes(params: &ModelParams, g: &Graph) -> Result<Vec<usize>> {
    Ok(argmax_rows(&node_outputs(params, g)?))
}

pub fn predict_values(params: &ModelParams, g: &Graph) -> Result<Vec<f64>> {
    let out = node_outputs(params, g)?;
    Ok((0..out.rows()).map(|r| out[(r, 0)]).collect())
}

pub fn one_hot(classes: &[usize], num_classes: usize) -> Matrix {
    let mut m = Matrix::zeros(classes.len(), num_classes);
    for (r, &c) in classes.iter().enumerate() {
        m[(r, c)] = 1.0;
    }
    m
}

/// One-hot argmax predictions from logits, ties to the smallest index.
pub fn one_hot_argmax(logits: &Matrix) -> Matrix {
    one_hot(&argmax_rows(logits), logits.cols())
}

/// One-hot predicted classes of the target nodes under `params`.
pub fn pseudo_labels(params: &ModelParams, g_target: &Graph) -> Result<Matrix> {
    Ok(one_hot_argmax(&node_outputs(params, g_target)?))
}

impl TrainedModel {
    pub fn pseudo_labels(&self, g_target: &Graph) -> Result<Matrix> {
        pseudo_labels(&self.params, g_target)
    }
}

fn check_feature_dims(gs: &Graph, gt: &Graph) -> Result<()> {
    if gs.feature_dim() != gt.feature_dim() {
        return Err(Error::DimensionMismatch {
            context: "target feature dimension",
            expected: gs.feature_dim(),
            found: gt.feature_dim(),
        });
    }
    Ok(())
}

fn layer_dims(input: usize, cfg: &TrainConfig) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend(core::iter::repeat_n(cfg.hidden_dim, cfg.depth));
    dims
}

fn embedding_dim(input: usize, cfg: &TrainConfig) -> usize {
    if cfg.depth == 0 {
        input
    } else {
        cfg.hidden_dim
    }
}

fn head_dims(first: usize, out: usize, cfg: &TrainConfig) -> Vec<usize> {
    let mut dims = vec![first];
    dims.extend(&cfg.head_hidden);
    dims.push(out);
    dims
}

fn at_epoch(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFiniteLoss(term) => Error::NonFinite { term, epoch },
        e => e,
    }
}

enum NodeTargets {
    Classes { labels: Vec<usize>, num_classes: usize },
    Values(Vec<f64>),
}

/// Epoch-by-epoch GRADE-N training state.
pub struct NodeTrainer<'g> {
    target: &'g Graph,
    adj_s: NormalizedAdjacency,
    adj_t: NormalizedAdjacency,
    cfg: TrainConfig,
    base: Box<dyn BaseDiscrepancy>,
    targets: NodeTargets,
    degrees: Option<(Matrix, Matrix)>,
    source_one_hot: Option<Matrix>,
    params: ModelParams,
    state: AdamState,
    history: Vec<EpochRecord>,
    features_s: &'g Matrix,
}

impl<'g> NodeTrainer<'g> {
    pub fn new(source: &'g Graph, target: &'g Graph, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        check_feature_dims(source, target)?;
        let targets = match (cfg.task, source.labels()) {
            (Task::NodeClass, Some(l)) => {
                let labels = l.classes().ok_or(Error::MissingLabels)?.to_vec();
                let num_classes = source.num_classes().unwrap_or(0).max(1);
                NodeTargets::Classes {
                    labels,
                    num_classes,
                }
            }
            (Task::NodeRegress, Some(l)) => {
                NodeTargets::Values(l.targets().ok_or(Error::MissingLabels)?.to_vec())
            }
            (Task::Link, _) => {
                return Err(Error::InvalidConfig(
                    "node trainer needs a node-level task".into(),
                ))
            }
            (_, None) => return Err(Error::MissingLabels),
        };
        let out = match &targets {
            NodeTargets::Classes { num_classes, .. } => *num_classes,
            NodeTargets::Values(_) => 1,
        };
        let d = source.feature_dim();
        let params = init_params(
            &layer_dims(d, &cfg),
            &head_dims(embedding_dim(d, &cfg), out, &cfg),
            cfg.seed,
        )?;
        let degrees = (cfg.variant == VariantKind::Degree).then(|| {
            (
                degree_one_hot(source, cfg.max_degree),
                degree_one_hot(target, cfg.max_degree),
            )
        });
        let source_one_hot = match (&targets, cfg.variant) {
            (NodeTargets::Classes { labels, num_classes }, VariantKind::Label) => {
                Some(one_hot(labels, *num_classes))
            }
            _ => None,
        };
        Ok(NodeTrainer {
            target,
            adj_s: renormalized_adjacency(source),
            adj_t: renormalized_adjacency(target),
            base: cfg.base.build(),
            state: AdamState::new(params.num_params()),
            cfg,
            targets,
            degrees,
            source_one_hot,
            params,
            history: Vec::new(),
            features_s: source.features(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    /// Evaluates the objective, records it, and applies one Adam update.
    pub fn step(&mut self) -> Result<&EpochRecord> {
        let epoch = self.history.len();
        let pseudo = match self.cfg.variant {
            VariantKind::Label => {
                let logits = classify_head(
                    gcn_forward(&self.adj_t, self.target.features(), &self.params)?.last(),
                    &self.params,
                )?;
                Some(one_hot_argmax(&logits))
            }
            _ => None,
        };
        let variant = match (&self.degrees, &self.source_one_hot, &pseudo) {
            (Some((s, t)), _, _) => GsdVariant::Degree { source: s, target: t },
            (_, Some(s), Some(t)) => GsdVariant::Label { source: s, target: t },
            _ => GsdVariant::Plain,
        };
        let task = match &self.targets {
            NodeTargets::Classes { labels, .. } => TaskLoss::CrossEntropy { labels },
            NodeTargets::Values(v) => TaskLoss::SquaredError { targets: v },
        };
        let obj = ObjectiveSpec {
            task,
            lambda: self.cfg.lambda,
            base: self.base.as_ref(),
            variant,
        };
        let eval = loss_and_gradients(
            &obj,
            DomainInput {
                adj: &self.adj_s,
                features: self.features_s,
            },
            DomainInput {
                adj: &self.adj_t,
                features: self.target.features(),
            },
            &self.params,
        )
        .map_err(at_epoch(epoch))?;
        optimizer_step(
            &mut self.params,
            &eval.gradients,
            &mut self.state,
            self.cfg.learning_rate,
            &self.cfg.adam,
        )
        .map_err(|e| match e {
            Error::NonFiniteGradient(_) => Error::NonFinite {
                term: "gradient",
                epoch,
            },
            e => e,
        })?;
        self.history.push(EpochRecord {
            epoch,
            task_loss: eval.task_loss,
            gsd: eval.report.gsd,
            gsd_per_depth: eval.report.per_depth,
            total: eval.total,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn finish(self) -> TrainedModel {
        TrainedModel {
            params: self.params,
            history: self.history,
            config: self.cfg,
        }
    }
}

/// GRADE-N: source task loss plus `lambda` times the GSD between source and
/// target embeddings, trained full-batch with Adam.
pub fn train_grade_n(source: &Graph, target: &Graph, cfg: &TrainConfig) -> Result<TrainedModel> {
    let mut trainer = NodeTrainer::new(source, target, cfg.clone())?;
    for _ in 0..cfg.epochs {
        trainer.step()?;
    }
    Ok(trainer.finish())
}

/// User/item bookkeeping of one bipartite graph.
struct Interactions {
    positives: Vec<(usize, usize)>,
    items: Vec<usize>,
    user_degree: Vec<usize>,
}

impl Interactions {
    fn new(g: &Graph) -> Result<Self> {
        let roles = g.roles().ok_or(Error::MissingRoles)?;
        let mut positives = Vec::with_capacity(g.num_edges());
        for &(a, b) in g.edges() {
            match (roles[a], roles[b]) {
                (NodeRole::User, NodeRole::Item) => positives.push((a, b)),
                (NodeRole::Item, NodeRole::User) => positives.push((b, a)),
                _ => return Err(Error::NotBipartite(a, b)),
            }
        }
        let items = (0..g.num_nodes()).filter(|&v| roles[v] == NodeRole::Item).collect();
        Ok(Interactions {
            positives,
            items,
            user_degree: g.degrees(),
        })
    }

    /// Positives plus `per_positive` rejected-sampled non-edges for each.
    fn samples(&self, g: &Graph, per_positive: usize, rng: &mut ChaCha8Rng) -> Vec<LinkSample> {
        let mut out = Vec::with_capacity(self.positives.len() * (1 + per_positive));
        for &(u, i) in &self.positives {
            out.push(LinkSample { u, v: i, label: 1.0 });
            if self.user_degree[u] >= self.items.len() {
                continue;
            }
            for _ in 0..per_positive {
                let j = loop {
                    let j = self.items[rng.random_range(0..self.items.len())];
                    if !g.has_edge(u, j) {
                        break j;
                    }
                };
                out.push(LinkSample { u, v: j, label: 0.0 });
            }
        }
        out
    }
}

/// Epoch-by-epoch GRADE-R training state.
pub struct LinkTrainer<'g> {
    source: &'g Graph,
    target: &'g Graph,
    adj_s: NormalizedAdjacency,
    adj_t: NormalizedAdjacency,
    inter_s: Interactions,
    inter_t: Interactions,
    cfg: TrainConfig,
    base: Box<dyn BaseDiscrepancy>,
    rng: ChaCha8Rng,
    params: ModelParams,
    state: AdamState,
    history: Vec<EpochRecord>,
}

impl<'g> LinkTrainer<'g> {
    pub fn new(source: &'g Graph, target: &'g Graph, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.task != Task::Link {
            return Err(Error::InvalidConfig(format!(
                "link trainer needs the link task, got {:?}",
                cfg.task
            )));
        }
        check_feature_dims(source, target)?;
        let inter_s = Interactions::new(source)?;
        let inter_t = Interactions::new(target)?;
        if inter_s.positives.is_empty() {
            return Err(Error::NoPositives);
        }
        let d = source.feature_dim();
        let params = init_params(
            &layer_dims(d, &cfg),
            &head_dims(2 * embedding_dim(d, &cfg), 1, &cfg),
            cfg.seed,
        )?;
        Ok(LinkTrainer {
            source,
            target,
            adj_s: renormalized_adjacency(source),
            adj_t: renormalized_adjacency(target),
            inter_s,
            inter_t,
            base: cfg.base.build(),
            rng: stream_rng(cfg.seed, Stream::Negatives),
            state: AdamState::new(params.num_params()),
            params,
            cfg,
            history: Vec::new(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn step(&mut self) -> Result<&EpochRecord> {
        let epoch = self.history.len();
        let k = self.cfg.negatives_per_positive;
        let samples_s = self.inter_s.samples(self.source, k, &mut self.rng);
        let samples_t = self.inter_t.samples(self.target, k, &mut self.rng);
        let degrees = (self.cfg.variant == VariantKind::Degree).then(|| {
            (
                degree_one_hot(self.source, self.cfg.max_degree),
                degree_one_hot(self.target, self.cfg.max_degree),
            )
        });
        let variant = match &degrees {
            Some((s, t)) => GsdVariant::Degree { source: s, target: t },
            None => GsdVariant::Plain,
        };
        let obj = ObjectiveSpec {
            task: TaskLoss::Link {
                source: &samples_s,
                target: &samples_t,
            },
            lambda: self.cfg.lambda,
            base: self.base.as_ref(),
            variant,
        };
        let eval = loss_and_gradients(
            &obj,
            DomainInput {
                adj: &self.adj_s,
                features: self.source.features(),
            },
            DomainInput {
                adj: &self.adj_t,
                features: self.target.features(),
            },
            &self.params,
        )
        .map_err(at_epoch(epoch))?;
        optimizer_step(
            &mut self.params,
            &eval.gradients,
            &mut self.state,
            self.cfg.learning_rate,
            &self.cfg.adam,
        )?;
        self.history.push(EpochRecord {
            epoch,
            task_loss: eval.task_loss,
            gsd: eval.report.gsd,
            gsd_per_depth: eval.report.per_depth,
            total: eval.total,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn finish(self) -> TrainedModel {
        TrainedModel {
            params: self.params,
            history: self.history,
            config: self.cfg,
        }
    }
}

/// GRADE-R: BCE link loss on both graphs with a shared encoder and head,
/// plus `lambda` times the GSD.
pub fn train_grade_r(source: &Graph, target: &Graph, cfg: &TrainConfig) -> Result<TrainedModel> {
    let mut trainer = LinkTrainer::new(source, target, cfg.clone())?;
    for _ in 0..cfg.epochs {
        trainer.step()?;
    }
    Ok(trainer.finish())
}

/// Link logits for node pairs of `g`.
pub fn score_links(params: &ModelParams, g: &Graph, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    link_logits(embed(params, g)?.last(), pairs, params)
}
