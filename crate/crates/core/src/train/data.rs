use std::collections::HashSet;
use std::ops::Range;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::ConstMatrix;
use crate::graph::{disjoint_union, split_entities, Graph, SplitLevel, SplitSpec};
use crate::tasks::{accuracy, auroc, auroc_ovr, f1_micro, mae, argmax_rows, Metric, TaskKind, SENTIMENT_CLASSES};
use crate::{Error, Result};

/// Feature matrices at or below this density are stored sparse.
const SPARSE_DENSITY: f64 = 0.1;
const VAL_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const NEG_SALT: u64 = 0xd1b5_4a32_d192_ed03;

/// Input data: one graph, or a collection for graph-level tasks.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Graph(Graph),
    Graphs(Vec<Graph>),
}

impl Dataset {
    pub fn split_level(task: TaskKind) -> SplitLevel {
        match task {
            TaskKind::Node => SplitLevel::Node,
            TaskKind::Link | TaskKind::Sentiment => SplitLevel::Edge,
            TaskKind::Regression => SplitLevel::Graph,
        }
    }

    pub fn make_split(&self, task: TaskKind, train_frac: f64, seed: u64) -> Result<SplitSpec> {
        match (self, task) {
            (Dataset::Graphs(gs), TaskKind::Regression) => {
                crate::graph::make_graph_split(gs, train_frac, seed)
            }
            (Dataset::Graph(g), TaskKind::Node | TaskKind::Link | TaskKind::Sentiment) => {
                crate::graph::make_split(g, Self::split_level(task), train_frac, seed)
            }
            _ => Err(Error::Config(format!(
                "task {task} does not fit this dataset (regression needs a graph collection, other tasks one graph)"
            ))),
        }
    }

    pub fn num_nodes(&self) -> usize {
        match self {
            Dataset::Graph(g) => g.num_nodes(),
            Dataset::Graphs(gs) => gs.iter().map(Graph::num_nodes).sum(),
        }
    }
}

/// A dataset bound to a task and a split, ready for training.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub task: TaskKind,
    /// Message-passing graph: held-out edges removed for link prediction,
    /// the disjoint union for graph collections.
    pub graph: Graph,
    pub features: ConstMatrix,
    pub groups: Option<Vec<usize>>,
    /// Node range of each graph inside the union.
    pub graph_nodes: Vec<Range<usize>>,
    /// Directed edges of the original graph (edge-level tasks).
    pub pairs: Vec<(usize, usize)>,
    pub node_labels: Vec<Option<usize>>,
    pub edge_labels: Vec<usize>,
    pub targets: Vec<f64>,
    pub classes: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub val_negatives: Vec<(usize, usize)>,
    pub test_negatives: Vec<(usize, usize)>,
    edge_set: HashSet<(usize, usize)>,
}

fn undirected(u: usize, v: usize) -> (usize, usize) {
    (u.min(v), u.max(v))
}

impl TaskData {
    pub fn prepare(
        dataset: &Dataset,
        task: TaskKind,
        split: &SplitSpec,
        val_frac: f64,
        seed: u64,
    ) -> Result<Self> {
        if split.level != Dataset::split_level(task) {
            return Err(Error::Config(format!(
                "task {task} needs a {:?}-level split, got {:?}",
                Dataset::split_level(task),
                split.level
            )));
        }
        let (train, val) = if val_frac > 0.0 && split.train.len() > 1 {
            let s = split_entities(split.train.clone(), split.level, 1.0 - val_frac, seed ^ VAL_SALT)?;
            (s.train, s.test)
        } else {
            (split.train.clone(), Vec::new())
        };
        if train.is_empty() {
            return Err(Error::Input("empty training split".into()));
        }
        let mut data = match (dataset, task) {
            (Dataset::Graphs(gs), TaskKind::Regression) => {
                let (union, groups) = disjoint_union(gs)?;
                let mut graph_nodes = Vec::with_capacity(gs.len());
                let mut base = 0;
                for g in gs {
                    graph_nodes.push(base..base + g.num_nodes());
                    base += g.num_nodes();
                }
                let targets = gs.iter().map(|g| g.graph_target().unwrap_or(f64::NAN)).collect();
                TaskData::base(task, union, Some(groups), graph_nodes, targets)
            }
            (Dataset::Graph(_), TaskKind::Regression) | (Dataset::Graphs(_), _) => {
                return Err(Error::Config(format!("task {task} does not fit this dataset")));
            }
            (Dataset::Graph(g), _) => {
                let mut d = TaskData::base(task, g.clone(), None, vec![0..g.num_nodes()], Vec::new());
                d.pairs = g.edges().to_vec();
                d.edge_set = d.pairs.iter().map(|&(u, v)| undirected(u, v)).collect();
                match task {
                    TaskKind::Node => {
                        d.node_labels = g
                            .node_labels()
                            .ok_or_else(|| Error::Input("node classification needs node labels".into()))?
                            .to_vec();
                        d.classes = g.num_classes();
                    }
                    TaskKind::Sentiment => {
                        d.edge_labels = g
                            .edge_labels()
                            .ok_or_else(|| Error::Input("edge sentiment needs edge labels".into()))?
                            .to_vec();
                        if let Some(&l) = d.edge_labels.iter().find(|&&l| l >= SENTIMENT_CLASSES) {
                            return Err(Error::Range(format!("edge label {l} outside 0..3")));
                        }
                        d.classes = SENTIMENT_CLASSES;
                    }
                    _ => {}
                }
                d
            }
        };
        let limit = match task {
            TaskKind::Node => data.graph.num_nodes(),
            TaskKind::Link | TaskKind::Sentiment => data.pairs.len(),
            TaskKind::Regression => data.graph_nodes.len(),
        };
        for &e in train.iter().chain(&val).chain(&split.test) {
            if e >= limit {
                return Err(Error::Range(format!("split entity {e} of {limit}")));
            }
            let ok = match task {
                TaskKind::Node => data.node_labels[e].is_some(),
                TaskKind::Regression => data.targets[e].is_finite(),
                _ => true,
            };
            if !ok {
                return Err(Error::Input(format!("split entity {e} has no label")));
            }
        }
        if task == TaskKind::Link {
            let held: Vec<usize> = val.iter().chain(&split.test).copied().collect();
            data.graph = data.graph.without_edges(&held);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ NEG_SALT);
            data.val_negatives = data.sample_negatives(val.len(), &mut rng)?;
            data.test_negatives = data.sample_negatives(split.test.len(), &mut rng)?;
        }
        data.train = train;
        data.val = val;
        data.test = split.test.clone();
        Ok(data)
    }

    fn base(
        task: TaskKind,
        graph: Graph,
        groups: Option<Vec<usize>>,
        graph_nodes: Vec<Range<usize>>,
        targets: Vec<f64>,
    ) -> Self {
        let features = ConstMatrix::auto(graph.features().view(), SPARSE_DENSITY);
        TaskData {
            task,
            features,
            groups,
            graph_nodes,
            pairs: Vec::new(),
            node_labels: Vec::new(),
            edge_labels: Vec::new(),
            targets,
            classes: if task == TaskKind::Regression { 1 } else { 0 },
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            val_negatives: Vec::new(),
            test_negatives: Vec::new(),
            edge_set: HashSet::new(),
            graph,
        }
    }

    /// Uniform node pairs that are not edges of the original graph.
    pub fn sample_negatives<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
        let n = self.graph.num_nodes();
        let possible = n * n.saturating_sub(1) / 2;
        if count > 0 && self.edge_set.len() >= possible {
            return Err(Error::Input("graph is complete; no negative pairs exist".into()));
        }
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            if u != v && !self.edge_set.contains(&undirected(u, v)) {
                out.push((u, v));
            }
        }
        Ok(out)
    }

    /// Entities of the named split.
    pub fn split(&self, name: SplitName) -> &[usize] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn node_label(&self, v: usize) -> Option<usize> {
        self.node_labels.get(v).copied().flatten()
    }

    pub(crate) fn one_hot(&self, labels: impl Iterator<Item = usize>, rows: usize) -> Array2<f64> {
        let mut q = Array2::zeros((rows, self.classes));
        for (i, l) in labels.enumerate() {
            q[[i, l]] = 1.0;
        }
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

/// Model outputs on a set of entities, with their true values.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Classes { probs: Array2<f64>, labels: Vec<usize> },
    Binary { scores: Vec<f64>, labels: Vec<bool> },
    Scalars { preds: Vec<f64>, targets: Vec<f64> },
}

impl Predictions {
    pub fn len(&self) -> usize {
        match self {
            Predictions::Classes { labels, .. } => labels.len(),
            Predictions::Binary { labels, .. } => labels.len(),
            Predictions::Scalars { targets, .. } => targets.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn metric(&self, metric: Metric) -> Result<f64> {
        match (self, metric) {
            (Predictions::Classes { probs, labels }, Metric::Accuracy) => {
                accuracy(&argmax_rows(probs.view()), labels)
            }
            (Predictions::Classes { probs, labels }, Metric::F1Micro) => {
                f1_micro(&argmax_rows(probs.view()), labels)
            }
            (Predictions::Classes { probs, labels }, Metric::Auroc) => auroc_ovr(probs.view(), labels),
            (Predictions::Binary { scores, labels }, Metric::Auroc) => auroc(scores, labels)?
                .ok_or_else(|| Error::Input("auroc needs both positive and negative pairs".into())),
            (Predictions::Binary { scores, labels }, Metric::Accuracy | Metric::F1Micro) => {
                let p: Vec<usize> = scores.iter().map(|&s| (s >= 0.5) as usize).collect();
                let l: Vec<usize> = labels.iter().map(|&b| b as usize).collect();
                if metric == Metric::Accuracy {
                    accuracy(&p, &l)
                } else {
                    f1_micro(&p, &l)
                }
            }
            (Predictions::Scalars { preds, targets }, Metric::Mae) => mae(preds, targets),
            _ => Err(Error::Config(format!("metric {metric} does not apply to these predictions"))),
        }
    }
}
