//! Anchor-based similarity graph over frozen teacher embeddings: k-means anchors,
//! sparse point-to-anchor affinities, streaming adjacency rows, per-row Gaussian
//! thresholds, the signed graph, and the balanced pair sampler.

mod affinity;
pub mod io;
mod kmeans;
mod signed;

pub use affinity::{
    build_affinity, default_bandwidth, nearest_centers, AnchorGraph, SparseAffinity,
};
pub use kmeans::{kmeans, nearest_center, AnchorSet};
pub use signed::{
    build_signed_graph, row_thresholds, sample_pairs, sign_row, GaussianThresholds, GraphHeader,
    PairSample, SampledPairs, SignedGraph,
};
