//! Task heads on top of the final embeddings, and evaluation metrics.

mod metrics;

pub use metrics::{accuracy, argmax_rows, auroc, auroc_ovr, f1_micro, mae, Metric};

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Segments, Tape, Var};
use crate::layers::{mlp_layout, Bound, Mlp, ParamKind, ParamSpec};
use crate::{Error, Result};

/// Edge sentiment polarity classes.
pub const SENTIMENT_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Node classification.
    Node,
    /// Link prediction with a dot-product decoder.
    Link,
    /// Three-way classification of directed edges.
    Sentiment,
    /// One scalar per graph from a mean readout.
    Regression,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Node => "node",
            TaskKind::Link => "link",
            TaskKind::Sentiment => "sentiment",
            TaskKind::Regression => "regression",
        }
    }

    /// Metric used for checkpoint selection.
    pub fn validation_metric(self) -> Metric {
        match self {
            TaskKind::Node | TaskKind::Sentiment => Metric::Accuracy,
            TaskKind::Link => Metric::Auroc,
            TaskKind::Regression => Metric::Mae,
        }
    }

    /// Metrics reported on the test split.
    pub fn report_metrics(self) -> &'static [Metric] {
        match self {
            TaskKind::Node => &[Metric::Accuracy, Metric::F1Micro, Metric::Auroc],
            TaskKind::Link => &[Metric::Auroc, Metric::Accuracy],
            TaskKind::Sentiment => &[Metric::Accuracy, Metric::F1Micro],
            TaskKind::Regression => &[Metric::Mae],
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "node" => TaskKind::Node,
            "link" => TaskKind::Link,
            "sentiment" => TaskKind::Sentiment,
            "regression" => TaskKind::Regression,
            _ => {
                return Err(Error::Config(format!(
                    "unknown task '{s}' (expected node, link, sentiment or regression)"
                )))
            }
        })
    }
}

/// Head tensors for `task` on `hidden`-wide embeddings.
pub fn head_layout(task: TaskKind, hidden: usize, classes: usize) -> Vec<ParamSpec> {
    match task {
        TaskKind::Node => vec![
            ParamSpec::new("head.w", ParamKind::Weight, (hidden, classes)),
            ParamSpec::new("head.b", ParamKind::Bias, (1, classes)),
        ],
        TaskKind::Link => Vec::new(),
        TaskKind::Sentiment => mlp_layout("head", 2 * hidden, hidden, SENTIMENT_CLASSES),
        TaskKind::Regression => vec![
            ParamSpec::new("head.w", ParamKind::Weight, (hidden, 1)),
            ParamSpec::new("head.b", ParamKind::Bias, (1, 1)),
        ],
    }
}

fn linear(tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
    let z = tape.matmul(x, bound.var("head.w")?)?;
    tape.add_row(z, bound.var("head.b")?)
}

/// Class logits `g·W + b`.
pub fn node_logits(tape: &mut Tape, bound: &Bound, emb: Var) -> Result<Var> {
    linear(tape, bound, emb)
}

/// Class probabilities, one row per embedding row.
pub fn node_classify(tape: &mut Tape, bound: &Bound, emb: Var) -> Result<Var> {
    let z = node_logits(tape, bound, emb)?;
    tape.softmax_rows(z)
}

fn pair_rows(tape: &mut Tape, emb: Var, pairs: &[(usize, usize)]) -> Result<(Var, Var)> {
    if pairs.is_empty() {
        return Err(Error::Input("no node pairs to score".into()));
    }
    let (us, vs): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
    Ok((tape.gather_rows(emb, &us)?, tape.gather_rows(emb, &vs)?))
}

/// Raw dot products `g_u · g_v` as a column; rows of `emb` are indexed by
/// the pair entries.
pub fn link_logits(tape: &mut Tape, emb: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let (gu, gv) = pair_rows(tape, emb, pairs)?;
    let prod = tape.mul(gu, gv)?;
    tape.row_sum(prod)
}

/// `sigmoid(g_u · g_v)` for each pair.
pub fn link_probabilities(tape: &mut Tape, emb: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let z = link_logits(tape, emb, pairs)?;
    tape.sigmoid(z)
}

/// Plain-value link score.
pub fn link_score(gu: ArrayView1<f64>, gv: ArrayView1<f64>) -> Result<f64> {
    if gu.len() != gv.len() {
        return Err(Error::Shape(format!("embedding widths {} and {}", gu.len(), gv.len())));
    }
    Ok(crate::autodiff::sigmoid(gu.dot(&gv)))
}

/// Sentiment logits from `[g_src ‖ g_dst]`.
pub fn sentiment_logits(
    tape: &mut Tape,
    bound: &Bound,
    emb: Var,
    edges: &[(usize, usize)],
) -> Result<Var> {
    let (gu, gv) = pair_rows(tape, emb, edges)?;
    let cat = tape.concat_cols(&[gu, gv])?;
    Mlp::bind(bound, "head")?.apply(tape, cat)
}

pub fn edge_sentiment(
    tape: &mut Tape,
    bound: &Bound,
    emb: Var,
    edges: &[(usize, usize)],
) -> Result<Var> {
    let z = sentiment_logits(tape, bound, emb, edges)?;
    tape.softmax_rows(z)
}

/// Mean of each graph's node rows, one row per segment.
pub fn readout(tape: &mut Tape, emb: Var, graphs: &Segments) -> Result<Var> {
    if graphs.is_empty() || graphs.iter().any(|r| r.is_empty()) {
        return Err(Error::Input("graph readout over an empty graph".into()));
    }
    tape.segment_mean(emb, graphs)
}

/// One prediction per graph segment.
pub fn graph_regress(tape: &mut Tape, bound: &Bound, emb: Var, graphs: &Segments) -> Result<Var> {
    let r = readout(tape, emb, graphs)?;
    linear(tape, bound, r)
}
