//! Shared fixtures for the benchmarks.

use holdgraph::ingest::generate_synthetic;
use holdgraph::BipartiteGraph;

/// Giant component of a synthetic graph with two planted communities.
pub fn synthetic_graph(funds: usize, assets: usize, seed: u64) -> BipartiteGraph {
    let data = generate_synthetic(funds, assets, 2, 0.1, seed).expect("valid synthetic parameters");
    BipartiteGraph::build(&data.edges)
        .expect("synthetic edges build a graph")
        .giant_component()
}
