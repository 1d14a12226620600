//! Cross-network transfer learning with the graph subtree discrepancy.
//!
//! A source and a target graph are compared through depth-indexed subtree
//! representations. Those come either from discrete Weisfeiler-Lehman
//! relabeling ([`wl`]) or from a GCN encoder ([`gnn`]). The per-depth base
//! discrepancies are averaged into a single value ([`discrepancy`]), and
//! [`trainer`] minimizes a source task loss plus `lambda` times that value for
//! node classification, node regression and link prediction.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! wall-clock benchmarks live in the `grade` companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod discrepancy;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod ranking;
pub mod rng;
pub mod trainer;
pub mod wl;

pub use error::{Error, Result};
pub use graph::{Graph, Labels, NodeRole, NormalizedAdjacency};
pub use linalg::Matrix;
