//! Run configuration: a JSON document with one section per concern.
//!
//! Precedence is built-in defaults, then the config file, then command-line
//! flags. Relative paths in a config file are resolved against the file's
//! directory; relative paths given as flags against the working directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use grade_core::graph::SynthShiftConfig;
use grade_core::trainer::{BaseKind, Task, TrainConfig, VariantKind, LINK_LAMBDA, NODE_LAMBDA};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BaseName {
    Mmd,
    Coral,
    /// Histogram total variation over WL patterns (counting path only).
    Tv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum VariantName {
    Plain,
    Degree,
    Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeTask {
    Class,
    Regress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Defaults to 0.02 for node tasks and 0.1 for recommendation.
    pub lambda: Option<f64>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub base: BaseName,
    pub variant: VariantName,
    pub task: NodeTask,
    pub depth: usize,
    pub hidden_dim: usize,
    /// Defaults to `[]` for node tasks and `[16]` for recommendation.
    pub head_hidden: Option<Vec<usize>>,
    pub max_degree: usize,
    pub negatives_per_positive: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::node_classification();
        TrainSection {
            lambda: None,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            base: BaseName::Mmd,
            variant: VariantName::Plain,
            task: NodeTask::Class,
            depth: d.depth,
            hidden_dim: d.hidden_dim,
            head_hidden: None,
            max_degree: d.max_degree,
            negatives_per_positive: d.negatives_per_positive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFiles {
    pub edges: PathBuf,
    #[serde(default)]
    pub features: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub nodes_per_block: usize,
    pub num_blocks: usize,
    pub intra_edge_prob: f64,
    pub inter_edge_prob: f64,
    pub feature_dim: usize,
    pub source_mean_scale: f64,
    pub target_mean_scale: f64,
    pub target_intra_edge_prob: Option<f64>,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthShiftConfig::default();
        SynthSection {
            nodes_per_block: d.nodes_per_block,
            num_blocks: d.num_blocks,
            intra_edge_prob: d.intra_edge_prob,
            inter_edge_prob: d.inter_edge_prob,
            feature_dim: d.feature_dim,
            source_mean_scale: d.source_mean_scale,
            target_mean_scale: d.target_mean_scale,
            target_intra_edge_prob: d.target_intra_edge_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecSection {
    /// `user_id,item_id` interaction files.
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    /// Ranking cutoff.
    pub k: usize,
    /// Sampled negative candidates per held-out positive.
    pub negatives: usize,
}

impl Default for RecSection {
    fn default() -> Self {
        RecSection {
            source: None,
            target: None,
            k: 10,
            negatives: 99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GsdSection {
    /// Embeddings come from this checkpoint for the `mmd`/`coral` bases.
    pub checkpoint: Option<PathBuf>,
    pub base: BaseName,
    /// Fixed Gaussian bandwidth; the median heuristic when absent.
    pub bandwidth: Option<f64>,
}

impl Default for GsdSection {
    fn default() -> Self {
        GsdSection {
            checkpoint: None,
            base: BaseName::Tv,
            bandwidth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub sizes: Vec<usize>,
    /// Timed epochs per size; the median is reported.
    pub repeats: usize,
    pub base: BaseName,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            sizes: vec![1000, 2000, 4000, 8000],
            repeats: 5,
            base: BaseName::Coral,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub train: TrainSection,
    /// Graph files; the synthetic pair is used when both are absent.
    pub source: Option<GraphFiles>,
    pub target: Option<GraphFiles>,
    pub synth: SynthSection,
    pub rec: RecSection,
    pub gsd: GsdSection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            train: TrainSection::default(),
            source: None,
            target: None,
            synth: SynthSection::default(),
            rec: RecSection::default(),
            gsd: GsdSection::default(),
            bench: BenchSection::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("invalid config")
    }

    /// Loads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_json(&text).with_context(|| format!("in {}", path.display()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(dir);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, dir: &Path) {
        resolve(dir, &mut self.out);
        for files in [&mut self.source, &mut self.target].into_iter().flatten() {
            resolve(dir, &mut files.edges);
            for p in [&mut files.features, &mut files.labels].into_iter().flatten() {
                resolve(dir, p);
            }
        }
        for p in [&mut self.rec.source, &mut self.rec.target, &mut self.gsd.checkpoint]
            .into_iter()
            .flatten()
        {
            resolve(dir, p);
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Fills the task-dependent defaults so the echo is self-contained.
    pub fn fill_defaults(&mut self, link: bool) {
        let t = &mut self.train;
        t.lambda.get_or_insert(if link { LINK_LAMBDA } else { NODE_LAMBDA });
        t.head_hidden
            .get_or_insert_with(|| if link { TrainConfig::recommendation().head_hidden } else { Vec::new() });
    }

    pub fn synth_config(&self) -> SynthShiftConfig {
        let s = &self.synth;
        SynthShiftConfig {
            nodes_per_block: s.nodes_per_block,
            num_blocks: s.num_blocks,
            intra_edge_prob: s.intra_edge_prob,
            inter_edge_prob: s.inter_edge_prob,
            feature_dim: s.feature_dim,
            source_mean_scale: s.source_mean_scale,
            target_mean_scale: s.target_mean_scale,
            target_intra_edge_prob: s.target_intra_edge_prob,
            seed: self.seed,
        }
    }

    /// The core training config for a node task (`link = false`) or the
    /// recommendation task.
    pub fn train_config(&self, link: bool) -> Result<TrainConfig> {
        let t = &self.train;
        let base = match t.base {
            BaseName::Mmd => BaseKind::Mmd,
            BaseName::Coral => BaseKind::Coral,
            BaseName::Tv => bail!("base \"tv\" has no gradient; train with \"mmd\" or \"coral\""),
        };
        let variant = match t.variant {
            VariantName::Plain => VariantKind::Plain,
            VariantName::Degree => VariantKind::Degree,
            VariantName::Label => VariantKind::Label,
        };
        let task = match (link, t.task) {
            (true, _) => Task::Link,
            (false, NodeTask::Class) => Task::NodeClass,
            (false, NodeTask::Regress) => Task::NodeRegress,
        };
        let defaults = if link { TrainConfig::recommendation() } else { TrainConfig::node_classification() };
        let cfg = TrainConfig {
            lambda: t.lambda.unwrap_or(defaults.lambda),
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            base,
            variant,
            task,
            negatives_per_positive: t.negatives_per_positive,
            seed: self.seed,
            depth: t.depth,
            hidden_dim: t.hidden_dim,
            head_hidden: t.head_hidden.clone().unwrap_or(defaults.head_hidden),
            max_degree: t.max_degree,
            ..defaults
        };
        cfg.validate().map_err(|e| anyhow::anyhow!("invalid training config: {e}"))?;
        Ok(cfg)
    }
}
