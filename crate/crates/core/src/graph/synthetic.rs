//! Learnable synthetic fixtures: a stochastic block model for node
//! classification, random graphs with a mean-degree target for graph
//! regression, and a three-class edge sentiment graph.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbmParams {
    pub p_in: f64,
    pub p_out: f64,
    pub blocks: usize,
    pub feature_dim: usize,
    /// Per-dimension mean offset of a block's features, in units of the
    /// feature noise standard deviation.
    pub feature_shift: f64,
}

impl Default for SbmParams {
    fn default() -> Self {
        SbmParams {
            p_in: 0.2,
            p_out: 0.02,
            blocks: 2,
            feature_dim: 16,
            feature_shift: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionParams {
    pub edge_prob: f64,
    /// Degree one-hot width; larger degrees share the last slot.
    pub degree_slots: usize,
}

impl Default for RegressionParams {
    fn default() -> Self {
        RegressionParams {
            edge_prob: 0.2,
            degree_slots: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SyntheticSpec {
    Sbm(SbmParams),
    Regression(RegressionParams),
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")))
    }
}

pub fn synthetic_graph(spec: SyntheticSpec, n: usize, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(Error::Config(format!("synthetic graphs need n >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match spec {
        SyntheticSpec::Sbm(p) => sbm(&p, n, &mut rng),
        SyntheticSpec::Regression(p) => {
            check_prob("edge_prob", p.edge_prob)?;
            if p.degree_slots == 0 {
                return Err(Error::Config("degree_slots must be positive".into()));
            }
            let edges = erdos_renyi(n, p.edge_prob, &mut rng);
            with_degree_features(edges, n, p.degree_slots)
        }
    }
}

fn block_of(i: usize, n: usize, blocks: usize) -> usize {
    i * blocks / n
}

fn block_features<R: Rng>(blocks: &[usize], dim: usize, nblocks: usize, shift: f64, rng: &mut R) -> Array2<f64> {
    // Block c is shifted along the dimensions d with d % nblocks == c.
    Array2::from_shape_fn((blocks.len(), dim), |(i, d)| {
        let noise: f64 = rng.sample(StandardNormal);
        if d % nblocks == blocks[i] {
            noise + shift
        } else {
            noise
        }
    })
}

fn sbm<R: Rng>(p: &SbmParams, n: usize, rng: &mut R) -> Result<Graph> {
    check_prob("p_in", p.p_in)?;
    check_prob("p_out", p.p_out)?;
    if p.p_in <= p.p_out {
        return Err(Error::Config(format!(
            "p_in ({}) must exceed p_out ({}) for a learnable fixture",
            p.p_in, p.p_out
        )));
    }
    if p.blocks < 2 || p.blocks > n || p.feature_dim == 0 {
        return Err(Error::Config("need 2 <= blocks <= n and feature_dim >= 1".into()));
    }
    let blocks: Vec<usize> = (0..n).map(|i| block_of(i, n, p.blocks)).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let prob = if blocks[u] == blocks[v] { p.p_in } else { p.p_out };
            if rng.random::<f64>() < prob {
                edges.push((u, v));
            }
        }
    }
    let features = block_features(&blocks, p.feature_dim, p.blocks, p.feature_shift, rng);
    Graph::new(edges, features, false)?.with_node_labels(blocks.into_iter().map(Some).collect())
}

fn erdos_renyi<R: Rng>(n: usize, p: f64, rng: &mut R) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

/// Average node degree; the regression fixture's target.
pub fn mean_degree(graph: &Graph) -> f64 {
    if graph.num_nodes() == 0 {
        return 0.0;
    }
    graph.offsets()[graph.num_nodes()] as f64 / graph.num_nodes() as f64
}

fn with_degree_features(edges: Vec<(usize, usize)>, n: usize, slots: usize) -> Result<Graph> {
    let bare = Graph::new(edges, Array2::zeros((n, slots)), false)?;
    let mut features = Array2::zeros((n, slots));
    for v in 0..n {
        features[[v, bare.degree(v).min(slots - 1)]] = 1.0;
    }
    let target = mean_degree(&bare);
    Ok(Graph::new(bare.edges().to_vec(), features, false)?.with_graph_target(target))
}

/// `count` random graphs with node counts drawn from `nodes` and edge
/// probabilities from `edge_prob`, each with one-hot degree features and
/// its mean degree as target.
pub fn regression_dataset(
    count: usize,
    nodes: std::ops::RangeInclusive<usize>,
    edge_prob: std::ops::RangeInclusive<f64>,
    degree_slots: usize,
    seed: u64,
) -> Result<Vec<Graph>> {
    if *nodes.start() < 2 || degree_slots == 0 {
        return Err(Error::Config("graphs need >= 2 nodes and >= 1 degree slot".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(nodes.clone());
            let p = rng.random_range(edge_prob.clone());
            let edges = erdos_renyi(n, p, &mut rng);
            with_degree_features(edges, n, degree_slots)
        })
        .collect()
}

/// Directed three-block graph whose edge label is
/// `(block(dst) - block(src)) mod 3`, i.e. it depends on both endpoints.
/// Node labels hold the blocks.
pub fn sentiment_fixture(n: usize, p_in: f64, p_out: f64, feature_dim: usize, seed: u64) -> Result<Graph> {
    check_prob("p_in", p_in)?;
    check_prob("p_out", p_out)?;
    if n < 3 || feature_dim == 0 {
        return Err(Error::Config("sentiment fixture needs n >= 3 and feature_dim >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks: Vec<usize> = (0..n).map(|i| block_of(i, n, 3)).collect();
    let mut edges = Vec::new();
    let mut labels = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let prob = if blocks[u] == blocks[v] { p_in } else { p_out };
            if rng.random::<f64>() < prob {
                let (s, d) = if rng.random::<bool>() { (u, v) } else { (v, u) };
                edges.push((s, d));
                labels.push((blocks[d] + 3 - blocks[s]) % 3);
            }
        }
    }
    let features = block_features(&blocks, feature_dim, 3, 1.0, &mut rng);
    Graph::new(edges, features, true)?
        .with_edge_labels(labels)?
        .with_node_labels(blocks.into_iter().map(Some).collect())
}
