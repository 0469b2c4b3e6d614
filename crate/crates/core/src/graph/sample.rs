use rand::Rng;

use super::Graph;
use crate::{Error, Result};

/// Fixed-width neighbor draw for one center node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSample {
    pub center: usize,
    pub sampled: Vec<usize>,
}

/// Draws `fanout` neighbors of `node`.
///
/// Nodes with at least `fanout` neighbors get `fanout` distinct adjacency
/// entries. Smaller neighborhoods are drawn with replacement up to `fanout`
/// so batches stay rectangular, and an isolated node samples itself.
pub fn sample_neighbors<R: Rng + ?Sized>(
    graph: &Graph,
    node: usize,
    fanout: usize,
    rng: &mut R,
) -> Result<NeighborSample> {
    if node >= graph.num_nodes() {
        return Err(Error::Range(format!(
            "node {node} in a graph of {} nodes",
            graph.num_nodes()
        )));
    }
    if fanout == 0 {
        return Err(Error::Config("fanout must be at least 1".into()));
    }
    let nbrs = graph.neighbors(node);
    let sampled = if nbrs.is_empty() {
        vec![node]
    } else if nbrs.len() >= fanout {
        rand::seq::index::sample(rng, nbrs.len(), fanout)
            .into_iter()
            .map(|i| nbrs[i])
            .collect()
    } else {
        (0..fanout)
            .map(|_| nbrs[rng.random_range(0..nbrs.len())])
            .collect()
    };
    Ok(NeighborSample {
        center: node,
        sampled,
    })
}

/// The whole neighborhood, or the node itself when isolated.
pub(crate) fn full_neighbors(graph: &Graph, node: usize) -> Vec<usize> {
    let nbrs = graph.neighbors(node);
    if nbrs.is_empty() {
        vec![node]
    } else {
        nbrs.to_vec()
    }
}
