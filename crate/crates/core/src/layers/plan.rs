use rand::Rng;

use crate::autodiff::Segments;
use crate::graph::{sample_neighbors, Graph};
use crate::{Error, Result};

/// Where neighbor rows come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NeighborMode {
    /// Fixed fan-out per layer; `fanouts[i-1]` is used at layer `i`.
    Sampled(Vec<usize>),
    /// Every neighbor, averaged; deterministic.
    Full,
}

/// Candidate set for Top-m windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    /// Nodes of the minibatch's computation graph at that depth.
    #[default]
    Batch,
    /// Every node of the graph.
    Full,
}

/// Rows and neighbor lists of one layer. Positions refer to the previous
/// layer's node list, whose first `centers` entries are this layer's nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    pub centers: usize,
    pub neigh_segments: Segments,
    pub neigh_rows: Vec<usize>,
}

/// Top-m windows of one layer, as positions in the previous layer's node
/// list, one segment per center.
#[derive(Debug, Clone, PartialEq)]
pub struct Windows {
    pub segments: Segments,
    pub rows: Vec<usize>,
}

impl Windows {
    pub fn window(&self, center: usize) -> &[usize] {
        &self.rows[self.segments.range(center)]
    }
}

/// Which rows every layer computes for one forward pass.
///
/// `nodes[i]` lists the global ids whose layer-`i` embedding is computed;
/// `nodes[L]` holds the requested targets and each `nodes[i]` starts with
/// `nodes[i+1]`, so a node keeps its row position across layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub nodes: Vec<Vec<usize>>,
    pub layers: Vec<LayerPlan>,
    /// Graph membership per global node; windows never cross groups.
    pub groups: Option<Vec<usize>>,
    /// Replayed instead of recomputing windows when set.
    pub frozen: Option<Vec<Windows>>,
}

impl Plan {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn targets(&self) -> &[usize] {
        &self.nodes[self.depth()]
    }

    pub fn group_of(&self, v: usize) -> usize {
        self.groups.as_ref().map_or(0, |g| g[v])
    }

    /// Copy that replays `windows` instead of selecting new ones.
    pub fn with_frozen(mut self, windows: Vec<Windows>) -> Result<Self> {
        if windows.len() != self.depth() {
            return Err(Error::Shape(format!(
                "{} window sets for {} layers",
                windows.len(),
                self.depth()
            )));
        }
        self.frozen = Some(windows);
        Ok(self)
    }
}

/// Builds the plan for embedding `targets` with a `depth`-layer model.
///
/// Duplicate targets are computed once; the order of first appearance is
/// kept.
pub fn build_plan<R: Rng + ?Sized>(
    graph: &Graph,
    targets: &[usize],
    depth: usize,
    neighbors: &NeighborMode,
    pool: PoolMode,
    groups: Option<&[usize]>,
    rng: &mut R,
) -> Result<Plan> {
    let n = graph.num_nodes();
    if depth == 0 {
        return Err(Error::Config("model needs at least one layer".into()));
    }
    if targets.is_empty() {
        return Err(Error::Input("no target nodes".into()));
    }
    if let NeighborMode::Sampled(f) = neighbors {
        if f.len() != depth {
            return Err(Error::Config(format!(
                "{} fanouts for {depth} layers",
                f.len()
            )));
        }
    }
    if let Some(g) = groups {
        if g.len() != n {
            return Err(Error::Shape(format!("{} group ids for {n} nodes", g.len())));
        }
    }
    let mut position = vec![usize::MAX; n];
    let mut current = Vec::new();
    for &t in targets {
        if t >= n {
            return Err(Error::Range(format!("target {t} in a graph of {n} nodes")));
        }
        if position[t] == usize::MAX {
            position[t] = current.len();
            current.push(t);
        }
    }
    let mut nodes = vec![current];
    let mut layers = Vec::with_capacity(depth);
    for i in (1..=depth).rev() {
        let centers = nodes[0].clone();
        let mut next = centers.clone();
        let mut lengths = Vec::with_capacity(centers.len());
        let mut rows = Vec::new();
        for &v in &centers {
            let nbrs = match neighbors {
                NeighborMode::Sampled(f) => sample_neighbors(graph, v, f[i - 1], rng)?.sampled,
                NeighborMode::Full => crate::graph::full_neighbors(graph, v),
            };
            lengths.push(nbrs.len());
            for u in nbrs {
                if position[u] == usize::MAX {
                    position[u] = next.len();
                    next.push(u);
                }
                rows.push(position[u]);
            }
        }
        if pool == PoolMode::Full {
            for u in 0..n {
                if position[u] == usize::MAX {
                    position[u] = next.len();
                    next.push(u);
                }
            }
        }
        layers.push(LayerPlan {
            centers: centers.len(),
            neigh_segments: Segments::from_lengths(lengths),
            neigh_rows: rows,
        });
        nodes.insert(0, next);
    }
    layers.reverse();
    Ok(Plan {
        nodes,
        layers,
        groups: groups.map(<[usize]>::to_vec),
        frozen: None,
    })
}
