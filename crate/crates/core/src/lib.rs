//! Deformable graph convolutional networks.
//!
//! Nodes get positional coordinates from projected, graph-smoothed input
//! features. Convolutions run over k-nearest-neighbor graphs built in the
//! smoothed feature space (plus the input graph), using kernels whose
//! weights depend on the relative position of each neighbor and can be
//! deformed per center node. The per-graph outputs are fused with a
//! node-wise attention score before classification.
//!
//! Module map:
//! - [`tensor`]: dense tensors and reverse-mode differentiation
//! - [`graph`]: datasets, file formats, splits, synthetic graphs
//! - [`positional`]: feature smoothing, positional coordinates, kNN graphs
//! - [`deform`]: the deformable graph convolution layer
//! - [`model`]: the full network plus GCN and MLP baselines
//! - [`train`]: losses, Adam, the training loop and metrics
//! - [`analysis`]: homophilic weights, attention summaries, receptive fields
//! - [`checks`]: whole-model gradient check on a toy graph

pub mod analysis;
pub mod checks;
pub mod deform;
pub mod error;
pub mod graph;
pub mod init;
pub mod model;
pub mod positional;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
