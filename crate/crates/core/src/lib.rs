//! Graph representation learning with the TANGNN layer family.
//!
//! Every layer fuses two aggregations of the previous layer's embeddings:
//! a sampled-neighborhood mean (GraphSAGE style) and a Top-m attention
//! over the nodes ranked most similar to the center node. The Top-m
//! candidates come from a single scoring pass against an auxiliary vector
//! kept orthogonal to the mean embedding, followed by a sort, so selection
//! costs `O(N log N)` instead of the `O(N^2)` of pairwise similarity.
//!
//! Module map:
//!
//! - [`graph`]: topology, features, labels, splits, the neighbor sampler
//!   and synthetic fixtures.
//! - [`autodiff`]: a small dense reverse-mode tape and a finite-difference
//!   checker.
//! - [`topm`]: auxiliary-vector Top-m selection and its scaling benchmark.
//! - [`layers`]: the layer components, the five wiring variants and the
//!   computation plan for minibatches.
//! - [`train`]: initialization, loss, Adam and the training loop.
//! - [`tasks`]: task heads and evaluation metrics.
//! - [`checkpoint`]: binary parameter checkpoints.
//! - [`experiment`]: run configuration and the train/eval/sweep/embed
//!   drivers used by the command line tool.

pub mod autodiff;
pub mod checkpoint;
mod error;
pub mod experiment;
pub mod graph;
pub mod layers;
pub mod tasks;
pub mod topm;
pub mod train;

pub use error::{Error, Result};
