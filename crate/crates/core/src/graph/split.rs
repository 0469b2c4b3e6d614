use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLevel {
    Node,
    Edge,
    Graph,
}

/// Disjoint train/test partition of the labeled entities at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub level: SplitLevel,
    pub train_frac: f64,
    pub seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `entities` with `seed` and puts the first
/// `round(train_frac * len)` into the train set.
pub fn split_entities(
    mut entities: Vec<usize>,
    level: SplitLevel,
    train_frac: f64,
    seed: u64,
) -> Result<SplitSpec> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!(
            "train_frac must lie in (0, 1), got {train_frac}"
        )));
    }
    if entities.is_empty() {
        return Err(Error::Input(format!("no labeled entities at {level:?} level")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    entities.shuffle(&mut rng);
    let n_train = (train_frac * entities.len() as f64).round() as usize;
    let test = entities.split_off(n_train);
    Ok(SplitSpec {
        level,
        train_frac,
        seed,
        train: entities,
        test,
    })
}

/// Node level: labeled nodes. Edge level: all edges (edge labels, when
/// present, ride along with the edge index). Graph level needs a graph
/// collection, see [`make_graph_split`].
pub fn make_split(graph: &Graph, level: SplitLevel, train_frac: f64, seed: u64) -> Result<SplitSpec> {
    let entities = match level {
        SplitLevel::Node => {
            let labels = graph
                .node_labels()
                .ok_or_else(|| Error::Input("graph has no node labels".into()))?;
            labels
                .iter()
                .enumerate()
                .filter_map(|(i, l)| l.map(|_| i))
                .collect()
        }
        SplitLevel::Edge => (0..graph.num_edges()).collect(),
        SplitLevel::Graph => {
            return Err(Error::Input(
                "graph-level splits need a graph collection".into(),
            ))
        }
    };
    split_entities(entities, level, train_frac, seed)
}

pub fn make_graph_split(graphs: &[Graph], train_frac: f64, seed: u64) -> Result<SplitSpec> {
    let entities = graphs
        .iter()
        .enumerate()
        .filter_map(|(i, g)| g.graph_target().map(|_| i))
        .collect();
    split_entities(entities, SplitLevel::Graph, train_frac, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use std::collections::HashSet;

    fn labeled(n: usize) -> Graph {
        Graph::new(vec![], Array2::zeros((n, 1)), false)
            .unwrap()
            .with_node_labels((0..n).map(|i| Some(i % 3)).collect())
            .unwrap()
    }

    #[test]
    fn half_split_is_disjoint_and_exhaustive() {
        let s = make_split(&labeled(10), SplitLevel::Node, 0.5, 7).unwrap();
        assert_eq!(s.train.len(), 5);
        assert_eq!(s.test.len(), 5);
        let all: HashSet<_> = s.train.iter().chain(&s.test).collect();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn tenth_of_cora_sized_graph() {
        // round(0.1 * 2707) = round(270.7) = 271
        let s = make_split(&labeled(2707), SplitLevel::Node, 0.1, 1).unwrap();
        assert_eq!(s.train.len(), 271);
        assert_eq!(s.test.len(), 2436);
    }

    #[test]
    fn deterministic_by_seed() {
        let g = labeled(50);
        let a = make_split(&g, SplitLevel::Node, 0.3, 9).unwrap();
        let b = make_split(&g, SplitLevel::Node, 0.3, 9).unwrap();
        assert_eq!(a, b);
        let c = make_split(&g, SplitLevel::Node, 0.3, 10).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn unlabeled_nodes_excluded() {
        let g = Graph::new(vec![], Array2::zeros((4, 1)), false)
            .unwrap()
            .with_node_labels(vec![Some(0), None, Some(1), None])
            .unwrap();
        let s = make_split(&g, SplitLevel::Node, 0.5, 0).unwrap();
        let mut all: Vec<_> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 2]);
    }

    #[test]
    fn fraction_bounds() {
        let g = labeled(10);
        for f in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(matches!(make_split(&g, SplitLevel::Node, f, 0), Err(Error::Config(_))));
        }
        let bare = Graph::new(vec![], Array2::zeros((3, 1)), false).unwrap();
        assert!(matches!(make_split(&bare, SplitLevel::Node, 0.5, 0), Err(Error::Input(_))));
    }
}
