//! Graph topology, node features, labels, dataset splits and the
//! fixed-fan-out neighbor sampler.
//!
//! Adjacency is stored in CSR form and always holds the union of both edge
//! directions, so aggregation sees in- and out-neighbors alike. The edge
//! list keeps the original orientation for tasks where direction matters
//! (edge sentiment).

mod io;
mod sample;
mod split;
mod synthetic;

pub use io::{load_graph, load_graph_targets, load_linqs, load_manifest};
pub(crate) use sample::full_neighbors;
pub use sample::{sample_neighbors, NeighborSample};
pub use split::{make_graph_split, make_split, split_entities, SplitLevel, SplitSpec};
pub use synthetic::{
    mean_degree, regression_dataset, sentiment_fixture, synthetic_graph, RegressionParams,
    SbmParams, SyntheticSpec,
};

use ndarray::Array2;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    directed: bool,
    offsets: Vec<usize>,
    adjacency: Vec<usize>,
    features: Array2<f64>,
    node_labels: Option<Vec<Option<usize>>>,
    edge_labels: Option<Vec<usize>>,
    graph_target: Option<f64>,
}

impl Graph {
    /// Builds a graph over nodes `0..features.nrows()`.
    pub fn new(edges: Vec<(usize, usize)>, features: Array2<f64>, directed: bool) -> Result<Self> {
        let num_nodes = features.nrows();
        if let Some(&(u, v)) = edges.iter().find(|(u, v)| *u >= num_nodes || *v >= num_nodes) {
            return Err(Error::Range(format!(
                "edge ({u}, {v}) has an endpoint >= node count {num_nodes}"
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("node features".into()));
        }
        let (offsets, adjacency) = build_csr(num_nodes, &edges);
        Ok(Graph {
            num_nodes,
            edges,
            directed,
            offsets,
            adjacency,
            features,
            node_labels: None,
            edge_labels: None,
            graph_target: None,
        })
    }

    /// Attaches node labels; `None` marks an unlabeled node.
    pub fn with_node_labels(mut self, labels: Vec<Option<usize>>) -> Result<Self> {
        if labels.len() != self.num_nodes {
            return Err(Error::Shape(format!(
                "{} node labels for {} nodes",
                labels.len(),
                self.num_nodes
            )));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    pub fn with_edge_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.edges.len() {
            return Err(Error::Shape(format!(
                "{} edge labels for {} edges",
                labels.len(),
                self.edges.len()
            )));
        }
        self.edge_labels = Some(labels);
        Ok(self)
    }

    pub fn with_graph_target(mut self, target: f64) -> Self {
        self.graph_target = Some(target);
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of input edges (each undirected edge counted once).
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes).map(|v| self.degree(v)).collect()
    }

    pub fn node_labels(&self) -> Option<&[Option<usize>]> {
        self.node_labels.as_deref()
    }

    pub fn node_label(&self, v: usize) -> Option<usize> {
        self.node_labels.as_ref().and_then(|l| l[v])
    }

    pub fn edge_labels(&self) -> Option<&[usize]> {
        self.edge_labels.as_deref()
    }

    pub fn graph_target(&self) -> Option<f64> {
        self.graph_target
    }

    /// One more than the largest node label, or 0 without labels.
    pub fn num_classes(&self) -> usize {
        self.node_labels
            .iter()
            .flatten()
            .flatten()
            .map(|&c| c + 1)
            .max()
            .unwrap_or(0)
    }

    /// Rebuilds the undirected edge multiset from the CSR arrays, each edge
    /// normalized to `(min, max)`.
    pub fn edges_from_csr(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edges.len());
        for v in 0..self.num_nodes {
            for &u in self.neighbors(v) {
                if v <= u {
                    out.push((v, u));
                }
            }
        }
        out
    }

    /// Copy of this graph with `removed` edge indices dropped from the
    /// topology. Labels on the remaining edges are kept.
    pub fn without_edges(&self, removed: &[usize]) -> Graph {
        let mut drop = vec![false; self.edges.len()];
        for &e in removed {
            drop[e] = true;
        }
        let edges: Vec<_> = self
            .edges
            .iter()
            .zip(&drop)
            .filter(|(_, &d)| !d)
            .map(|(&e, _)| e)
            .collect();
        let (offsets, adjacency) = build_csr(self.num_nodes, &edges);
        let edge_labels = self.edge_labels.as_ref().map(|l| {
            l.iter()
                .zip(&drop)
                .filter(|(_, &d)| !d)
                .map(|(&x, _)| x)
                .collect()
        });
        Graph {
            num_nodes: self.num_nodes,
            edges,
            directed: self.directed,
            offsets,
            adjacency,
            features: self.features.clone(),
            node_labels: self.node_labels.clone(),
            edge_labels,
            graph_target: self.graph_target,
        }
    }

    /// Relabels nodes so that old node `v` becomes `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.num_nodes;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Input("not a permutation of the node ids".into()));
        }
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut features = Array2::zeros(self.features.raw_dim());
        for v in 0..n {
            features.row_mut(perm[v]).assign(&self.features.row(v));
        }
        let mut g = Graph::new(edges, features, self.directed)?;
        if let Some(labels) = &self.node_labels {
            let mut moved = vec![None; n];
            for v in 0..n {
                moved[perm[v]] = labels[v];
            }
            g = g.with_node_labels(moved)?;
        }
        g.edge_labels = self.edge_labels.clone();
        g.graph_target = self.graph_target;
        Ok(g)
    }
}

/// Counting-sort CSR over the union of both directions; self-loops are
/// stored once.
fn build_csr(num_nodes: usize, edges: &[(usize, usize)]) -> (Vec<usize>, Vec<usize>) {
    let mut counts = vec![0usize; num_nodes + 1];
    for &(u, v) in edges {
        counts[u + 1] += 1;
        if u != v {
            counts[v + 1] += 1;
        }
    }
    for i in 0..num_nodes {
        counts[i + 1] += counts[i];
    }
    let offsets = counts.clone();
    let mut cursor = counts;
    let mut adjacency = vec![0usize; offsets[num_nodes]];
    for &(u, v) in edges {
        adjacency[cursor[u]] = v;
        cursor[u] += 1;
        if u != v {
            adjacency[cursor[v]] = u;
            cursor[v] += 1;
        }
    }
    (offsets, adjacency)
}

/// Disjoint union of several graphs. Returns the union and, per node, the
/// index of the graph it came from. Node and edge labels are dropped.
pub fn disjoint_union(graphs: &[Graph]) -> Result<(Graph, Vec<usize>)> {
    let dim = graphs.first().map(|g| g.feature_dim()).unwrap_or(0);
    let total: usize = graphs.iter().map(Graph::num_nodes).sum();
    let mut features = Array2::zeros((total, dim));
    let mut edges = Vec::new();
    let mut group = Vec::with_capacity(total);
    let mut base = 0;
    for (gi, g) in graphs.iter().enumerate() {
        if g.feature_dim() != dim {
            return Err(Error::Shape(format!(
                "graph {gi} has feature width {}, expected {dim}",
                g.feature_dim()
            )));
        }
        features
            .slice_mut(ndarray::s![base..base + g.num_nodes(), ..])
            .assign(g.features());
        edges.extend(g.edges().iter().map(|&(u, v)| (u + base, v + base)));
        group.extend(std::iter::repeat_n(gi, g.num_nodes()));
        base += g.num_nodes();
    }
    Ok((Graph::new(edges, features, false)?, group))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn path3() -> Graph {
        Graph::new(vec![(0, 1), (1, 2)], Array2::zeros((3, 2)), false).unwrap()
    }

    #[test]
    fn path_graph_degrees() {
        let g = path3();
        assert_eq!(g.degrees(), vec![1, 2, 1]);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(*g.offsets().last().unwrap(), 4);
    }

    #[test]
    fn endpoint_out_of_range() {
        let err = Graph::new(vec![(0, 3)], Array2::zeros((3, 1)), false).unwrap_err();
        assert!(matches!(err, Error::Range(_)));
    }

    #[test]
    fn label_count_must_match() {
        let err = path3().with_node_labels(vec![Some(0); 2]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn self_loop_stored_once() {
        let g = Graph::new(vec![(0, 0), (0, 1)], Array2::zeros((2, 1)), false).unwrap();
        assert_eq!(g.neighbors(0), &[0, 1]);
        assert_eq!(g.edges_from_csr(), vec![(0, 0), (0, 1)]);
    }

    #[test]
    fn permutation_moves_rows() {
        let g = Graph::new(vec![(0, 1)], array![[1.0], [2.0], [3.0]], false).unwrap();
        let p = g.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.features(), &array![[2.0], [3.0], [1.0]]);
        assert_eq!(p.neighbors(2), &[0]);
        assert!(g.permuted(&[0, 0, 1]).is_err());
    }

    #[test]
    fn union_offsets_node_ids() {
        let (u, group) = disjoint_union(&[path3(), path3()]).unwrap();
        assert_eq!(u.num_nodes(), 6);
        assert_eq!(u.neighbors(4), &[3, 5]);
        assert_eq!(group, vec![0, 0, 0, 1, 1, 1]);
    }

    proptest! {
        #[test]
        fn csr_round_trip(n in 1usize..20, raw in proptest::collection::vec((0usize..100, 0usize..100), 0..60)) {
            let edges: Vec<_> = raw.iter().map(|&(u, v)| (u % n, v % n)).collect();
            let g = Graph::new(edges.clone(), Array2::zeros((n, 1)), false).unwrap();
            let mut expect: Vec<_> = edges.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
            expect.sort_unstable();
            let mut got = g.edges_from_csr();
            got.sort_unstable();
            prop_assert_eq!(got, expect);
            prop_assert!(g.offsets().windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
