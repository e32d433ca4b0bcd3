//! Source-free merging of graph classifiers trained on distribution-shifted
//! domains.
//!
//! The pipeline inverts each frozen expert into label-conditional synthetic
//! graphs, then fine-tunes masks on the experts and a sparse top-k gate over
//! them using only that synthetic data.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod experiment;
pub mod gnn;
pub mod graph;
pub mod inversion;
pub mod merge;
mod persist;
pub mod rng;

pub use autodiff::{AdamW, AdamWConfig, Mode, Tape, Tensor, Var};
pub use error::{Error, Result};
pub use gnn::{ArchitectureDescriptor, Backbone, GnnModel};
pub use graph::{Graph, GraphDataset};
