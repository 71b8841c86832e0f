//! Embedding of weighted fund-asset bipartite graphs with second-order
//! random walks and skip-gram training, plus the evaluation and similarity
//! analyses built on top of the embedding.

pub mod alias;
pub mod error;
pub mod evaluate;
pub mod graph;
pub mod ingest;
pub mod projection;
pub mod similarity;
pub mod trainer;
pub mod walker;

pub use error::{Error, Result};
pub use graph::{BipartiteGraph, GraphStats, Node, NodeId, NodeKind};
pub use ingest::{CleanEdgeList, CleanOptions, RawHolding};
pub use evaluate::{BipartitenessScore, ClusterAssignment, ClusterComposition, GridResult};
pub use similarity::OriginalRepresentation;
pub use trainer::{EmbeddingMatrix, TrainParams};
pub use walker::{WalkCorpus, WalkParams};
