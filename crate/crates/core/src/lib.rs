//! Community detection on attributed graphs.
//!
//! The pipeline has three phases:
//!
//! 1. [`router`] measures feature sparsity, mean degree and a feature
//!    assortativity ratio, and picks an initial encoder: an isolating MLP
//!    for dense or heterophilic graphs, a densifying one-hop mean aggregator
//!    otherwise.
//! 2. [`trainer`] optimises [`encoders`] + [`diffusion`] (attention-gated
//!    residual message passing) with the attention-weighted contrastive
//!    objective in [`contrastive`], whose negative term is evaluated in
//!    row blocks once it would exceed a memory threshold.
//! 3. [`extraction`] builds a sparse mutual top-k cosine similarity graph
//!    in row chunks without ever holding an `N x N` matrix, and
//!    [`clustering`] partitions it by Louvain modularity maximisation.
//!
//! [`synth`] generates LFR-style benchmark graphs with noisy community
//! features and [`metrics`] scores partitions with NMI.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod config;
pub mod contrastive;
pub mod diffusion;
pub mod encoders;
mod error;
pub mod extraction;
pub mod graph;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod router;
pub mod synth;
#[doc(hidden)]
pub mod testing;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{mean_degree, Embeddings, FeatureMatrix, Graph, Partition};
pub use rng::Rng;
