use alloc::string::String;

/// Errors produced anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("graph must contain at least one node")]
    EmptyGraph,
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("edge ({0}, {0}) is a self-loop")]
    SelfLoop(usize),
    #[error("{context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("depth {requested} is out of range (maximum {max})")]
    DepthOutOfRange { requested: usize, max: usize },
    #[error("{context} needs at least {needed} rows, found {found}")]
    TooFewRows {
        context: &'static str,
        needed: usize,
        found: usize,
    },
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("median bandwidth is undefined: all pooled rows are identical")]
    DegenerateBandwidth,
    #[error("row {0} is not a one-hot vector")]
    NotOneHot(usize),
    #[error("label {label} at node {node} is outside 0..{num_classes}")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("source graph has no labels of the required kind")]
    MissingLabels,
    #[error("non-finite {term} at epoch {epoch}")]
    NonFinite { term: &'static str, epoch: usize },
    #[error("non-finite {0}")]
    NonFiniteLoss(&'static str),
    #[error("non-finite gradient entry at flat index {0}")]
    NonFiniteGradient(usize),
    #[error("edge ({0}, {1}) does not join a user and an item")]
    NotBipartite(usize, usize),
    #[error("graph has no node roles; a bipartite user/item graph is required")]
    MissingRoles,
    #[error("source graph has no positive edges")]
    NoPositives,
    #[error("cannot place {edges} distinct edges on {nodes} nodes")]
    InfeasibleEdgeCount { nodes: usize, edges: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{0} requires non-empty input")]
    EmptyInput(&'static str),
    #[error("R^2 is undefined for constant ground truth")]
    ConstantTruth,
    #[error("user {0}: positive candidate is missing or duplicated")]
    PositiveMissing(usize),
    #[error("user {0}: scores must be finite")]
    NonFiniteScore(usize),
}

pub type Result<T> = core::result::Result<T, Error>;
