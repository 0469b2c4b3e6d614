use std::collections::HashMap;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::data::{Predictions, SplitName, TaskData};
use super::{bce, init_params, l2_penalty, mse, Adam, TrainConfig};
use crate::autodiff::{Segments, Tape, Var};
use crate::layers::{build_plan, forward, Bound, ModelParams, NeighborMode, Plan, PoolMode};
use crate::tasks::{edge_sentiment, graph_regress, link_probabilities, node_classify, TaskKind};
use crate::{Error, Result};

const TRAIN_SALT: u64 = 0x2545_f491_4f6c_dd1d;
const EVAL_SALT: u64 = 0x5851_f42d_4c95_7f2d;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub epoch: usize,
    /// Mean data loss over the epoch's minibatches, without the L2 term.
    pub loss: f64,
    pub val_metric: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    Converged,
    MaxEpochs,
    /// A non-finite value stopped training; the best earlier parameters
    /// are returned.
    Aborted(String),
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters from the epoch with the best validation metric.
    pub params: ModelParams,
    pub reports: Vec<LossReport>,
    pub best_epoch: usize,
    pub best_val: Option<f64>,
    pub stop: StopReason,
}

/// Trains a freshly initialized model.
pub fn fit(data: &TaskData, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    let params = init_params(cfg.model_config(data), cfg.seed)?;
    fit_from(params, data, cfg)
}

/// Trains `params` until the epoch loss settles or `max_epochs` is reached.
pub fn fit_from(mut params: ModelParams, data: &TaskData, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    if params.config().task != data.task {
        return Err(Error::Config("model head does not match the task".into()));
    }
    let metric = data.task.validation_metric();
    let val_split = if data.val.is_empty() {
        log::warn!("no validation entities; selecting checkpoints on the training split");
        SplitName::Train
    } else {
        SplitName::Val
    };
    let mut adam = Adam::new(params.values());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TRAIN_SALT);
    let mut result = FitResult {
        params: params.clone(),
        reports: Vec::new(),
        best_epoch: 0,
        best_val: None,
        stop: StopReason::MaxEpochs,
    };
    let mut prev_loss: Option<f64> = None;
    let mut streak = 0;
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let mut order = data.train.clone();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            match train_step(&mut params, &mut adam, data, batch, cfg, &mut rng) {
                Ok(loss) => total += loss * batch.len() as f64,
                Err(Error::NonFinite(msg)) => {
                    log::error!("epoch {epoch}: non-finite value ({msg}); stopping");
                    result.stop = StopReason::Aborted(msg);
                    return Ok(result);
                }
                Err(e) => return Err(e),
            }
        }
        let loss = total / order.len() as f64;
        let val = predict(&params, data, val_split, cfg)?.metric(metric)?;
        let seconds = start.elapsed().as_secs_f64();
        log::info!("epoch {epoch}: loss {loss:.6} val {metric} {val:.4} ({seconds:.2}s)");
        result.reports.push(LossReport {
            epoch,
            loss,
            val_metric: val,
            seconds,
        });
        if result.best_val.is_none_or(|b| !metric.improves(b, val)) {
            result.params = params.clone();
            result.best_val = Some(val);
            result.best_epoch = epoch;
        }
        if let Some(p) = prev_loss {
            streak = if (loss - p).abs() < cfg.min_delta { streak + 1 } else { 0 };
        }
        prev_loss = Some(loss);
        if streak >= cfg.patience {
            result.stop = StopReason::Converged;
            break;
        }
    }
    Ok(result)
}

fn train_step<R: Rng + ?Sized>(
    params: &mut ModelParams,
    adam: &mut Adam,
    data: &TaskData,
    batch: &[usize],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape)?;
    let bound = Bound::new(params, &vars)?;
    let neighbors = NeighborMode::Sampled(cfg.fanouts.clone());
    let loss = batch_loss(&mut tape, &bound, data, batch, &neighbors, cfg.pool, cfg.m, rng)?;
    let l2 = l2_penalty(&mut tape, &bound, cfg.l2_weight)?;
    let total = tape.add(loss, l2)?;
    tape.backward(total)?;
    let grads: Vec<Array2<f64>> = vars
        .iter()
        .zip(params.values())
        .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Array2::zeros(p.raw_dim())))
        .collect();
    let data_loss = tape.scalar(loss);
    adam.step(params.values_mut(), &grads, cfg.learning_rate)?;
    Ok(data_loss)
}

/// Distinct endpoints of `pairs` in first-appearance order, and each pair
/// as row positions in that list.
fn pair_targets(pairs: &[(usize, usize)]) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut pos = HashMap::new();
    let mut targets = Vec::new();
    let mut row = |v: usize| {
        *pos.entry(v).or_insert_with(|| {
            targets.push(v);
            targets.len() - 1
        })
    };
    let rows = pairs.iter().map(|&(u, v)| (row(u), row(v))).collect();
    (targets, rows)
}

fn graph_batch(data: &TaskData, graphs: &[usize]) -> (Vec<usize>, Segments) {
    let nodes = graphs.iter().flat_map(|&g| data.graph_nodes[g].clone()).collect();
    let segs = Segments::from_lengths(graphs.iter().map(|&g| data.graph_nodes[g].len()));
    (nodes, segs)
}

/// Embeds `targets` under `plan` settings and returns the final rows.
#[allow(clippy::too_many_arguments)]
fn embed<R: Rng + ?Sized>(
    tape: &mut Tape,
    bound: &Bound,
    data: &TaskData,
    targets: &[usize],
    neighbors: &NeighborMode,
    pool: PoolMode,
    m: usize,
    rng: &mut R,
) -> Result<(Var, Plan)> {
    let depth = bound.params().config().layers;
    let plan = build_plan(&data.graph, targets, depth, neighbors, pool, data.groups.as_deref(), rng)?;
    let out = forward(tape, bound, &data.features, &plan, m, rng)?;
    Ok((out.embeddings, plan))
}

/// Data loss of one minibatch of entities.
#[allow(clippy::too_many_arguments)]
fn batch_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    bound: &Bound,
    data: &TaskData,
    batch: &[usize],
    neighbors: &NeighborMode,
    pool: PoolMode,
    m: usize,
    rng: &mut R,
) -> Result<Var> {
    match data.task {
        TaskKind::Node => {
            let (emb, _) = embed(tape, bound, data, batch, neighbors, pool, m, rng)?;
            let p = node_classify(tape, bound, emb)?;
            let labels = batch.iter().map(|&v| data.node_label(v).expect("labeled split"));
            let q = data.one_hot(labels, batch.len());
            bce(tape, p, &q)
        }
        TaskKind::Link => {
            let mut pairs: Vec<(usize, usize)> = batch.iter().map(|&e| data.pairs[e]).collect();
            pairs.extend(data.sample_negatives(batch.len(), rng)?);
            let (targets, rows) = pair_targets(&pairs);
            let (emb, _) = embed(tape, bound, data, &targets, neighbors, pool, m, rng)?;
            let p = link_probabilities(tape, emb, &rows)?;
            let q = Array2::from_shape_fn((pairs.len(), 1), |(i, _)| (i < batch.len()) as u8 as f64);
            bce(tape, p, &q)
        }
        TaskKind::Sentiment => {
            let pairs: Vec<(usize, usize)> = batch.iter().map(|&e| data.pairs[e]).collect();
            let (targets, rows) = pair_targets(&pairs);
            let (emb, _) = embed(tape, bound, data, &targets, neighbors, pool, m, rng)?;
            let p = edge_sentiment(tape, bound, emb, &rows)?;
            let q = data.one_hot(batch.iter().map(|&e| data.edge_labels[e]), batch.len());
            bce(tape, p, &q)
        }
        TaskKind::Regression => {
            let (nodes, segs) = graph_batch(data, batch);
            let (emb, _) = embed(tape, bound, data, &nodes, neighbors, pool, m, rng)?;
            let pred = graph_regress(tape, bound, emb, &segs)?;
            let t: Vec<f64> = batch.iter().map(|&g| data.targets[g]).collect();
            mse(tape, pred, &t)
        }
    }
}

fn inference_mode(data: &TaskData, cfg: &TrainConfig) -> (NeighborMode, PoolMode) {
    let neighbors = if cfg.sampled_inference {
        NeighborMode::Sampled(cfg.fanouts.clone())
    } else {
        NeighborMode::Full
    };
    // Windows never leave a graph of a collection, so the receptive field
    // already is the whole pool there.
    let pool = if data.task == TaskKind::Regression { PoolMode::Batch } else { PoolMode::Full };
    (neighbors, pool)
}

/// Predictions on one split, with frozen parameters.
pub fn predict(params: &ModelParams, data: &TaskData, split: SplitName, cfg: &TrainConfig) -> Result<Predictions> {
    let entities = data.split(split);
    if entities.is_empty() {
        return Err(Error::Input(format!("the {split:?} split is empty")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ EVAL_SALT);
    let mut tape = Tape::new();
    let vars = params.bind_constants(&mut tape)?;
    let bound = Bound::new(params, &vars)?;
    let (neighbors, pool) = inference_mode(data, cfg);
    match data.task {
        TaskKind::Node => {
            let (emb, _) = embed(&mut tape, &bound, data, entities, &neighbors, pool, cfg.m, &mut rng)?;
            let p = node_classify(&mut tape, &bound, emb)?;
            let labels = entities.iter().map(|&v| data.node_label(v).expect("labeled split")).collect();
            Ok(Predictions::Classes {
                probs: tape.value(p).clone(),
                labels,
            })
        }
        TaskKind::Link => {
            let mut pairs: Vec<(usize, usize)> = entities.iter().map(|&e| data.pairs[e]).collect();
            let negatives = match split {
                SplitName::Val => data.val_negatives.clone(),
                SplitName::Test => data.test_negatives.clone(),
                SplitName::Train => data.sample_negatives(entities.len(), &mut rng)?,
            };
            pairs.extend(negatives);
            let (targets, rows) = pair_targets(&pairs);
            let (emb, _) = embed(&mut tape, &bound, data, &targets, &neighbors, pool, cfg.m, &mut rng)?;
            let p = link_probabilities(&mut tape, emb, &rows)?;
            Ok(Predictions::Binary {
                scores: tape.value(p).column(0).to_vec(),
                labels: (0..pairs.len()).map(|i| i < entities.len()).collect(),
            })
        }
        TaskKind::Sentiment => {
            let pairs: Vec<(usize, usize)> = entities.iter().map(|&e| data.pairs[e]).collect();
            let (targets, rows) = pair_targets(&pairs);
            let (emb, _) = embed(&mut tape, &bound, data, &targets, &neighbors, pool, cfg.m, &mut rng)?;
            let p = edge_sentiment(&mut tape, &bound, emb, &rows)?;
            Ok(Predictions::Classes {
                probs: tape.value(p).clone(),
                labels: entities.iter().map(|&e| data.edge_labels[e]).collect(),
            })
        }
        TaskKind::Regression => {
            let (nodes, segs) = graph_batch(data, entities);
            let (emb, _) = embed(&mut tape, &bound, data, &nodes, &neighbors, pool, cfg.m, &mut rng)?;
            let pred = graph_regress(&mut tape, &bound, emb, &segs)?;
            Ok(Predictions::Scalars {
                preds: tape.value(pred).column(0).to_vec(),
                targets: entities.iter().map(|&g| data.targets[g]).collect(),
            })
        }
    }
}

/// Final embeddings of every node of the message-passing graph, row `v`
/// for node `v`.
pub fn embed_all(params: &ModelParams, data: &TaskData, cfg: &TrainConfig) -> Result<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ EVAL_SALT);
    let mut tape = Tape::new();
    let vars = params.bind_constants(&mut tape)?;
    let bound = Bound::new(params, &vars)?;
    let (neighbors, pool) = inference_mode(data, cfg);
    let all: Vec<usize> = (0..data.graph.num_nodes()).collect();
    let (emb, _) = embed(&mut tape, &bound, data, &all, &neighbors, pool, cfg.m, &mut rng)?;
    Ok(tape.value(emb).clone())
}
