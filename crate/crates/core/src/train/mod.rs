//! Parameter initialization, the loss, Adam and the training loop.

mod data;
mod fit;

pub use data::{Dataset, Predictions, SplitName, TaskData};
pub use fit::{embed_all, fit, fit_from, predict, FitResult, LossReport, StopReason};

use ndarray::{Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::layers::{Bound, ModelConfig, ModelParams, ParamKind, PoolMode, VariantKind};
use crate::topm::AuxiliaryVector;
use crate::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: VariantKind,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    /// Top-m window size.
    pub m: usize,
    /// Neighbor fan-out per layer, first layer first.
    pub fanouts: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2_weight: f64,
    pub max_epochs: usize,
    /// Consecutive epochs with a small loss change before stopping.
    pub patience: usize,
    pub min_delta: f64,
    /// Share of the train split held out for checkpoint selection.
    pub val_frac: f64,
    pub seed: u64,
    pub pool: PoolMode,
    /// Sample neighbors at inference instead of averaging all of them.
    pub sampled_inference: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: VariantKind::Tangnn,
            layers: 2,
            hidden: 64,
            heads: 1,
            m: 30,
            fanouts: vec![20, 10],
            learning_rate: 0.001,
            batch_size: 128,
            l2_weight: 5e-4,
            max_epochs: 300,
            patience: 10,
            min_delta: 1e-4,
            val_frac: 0.1,
            seed: 0,
            pool: PoolMode::Batch,
            sampled_inference: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("m", self.m),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.fanouts.len() != self.layers || self.fanouts.contains(&0) {
            return Err(Error::Config(format!(
                "need one positive fanout per layer: {} layers, fanouts {:?}",
                self.layers, self.fanouts
            )));
        }
        let reals = [
            ("learning_rate", self.learning_rate),
            ("l2_weight", self.l2_weight),
            ("min_delta", self.min_delta),
        ];
        if let Some((name, v)) = reals.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
        }
        if !(0.0..1.0).contains(&self.val_frac) {
            return Err(Error::Config(format!("val_frac must lie in [0, 1), got {}", self.val_frac)));
        }
        Ok(())
    }

    pub fn model_config(&self, data: &TaskData) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            input_dim: data.features.ncols(),
            hidden: self.hidden,
            layers: self.layers,
            heads: self.heads,
            task: data.task,
            classes: data.classes,
        }
    }
}

/// FNV-1a over the seed and a tensor name, so a tensor's initial value
/// depends only on its name and the run seed.
fn name_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(name.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Xavier-uniform weights, zero biases, unit gains, random unit auxiliary
/// vectors.
pub fn init_params(config: ModelConfig, seed: u64) -> Result<ModelParams> {
    let specs = config.layout()?;
    let values = specs
        .iter()
        .map(|s| match s.kind {
            ParamKind::Weight => {
                let bound = (6.0 / (s.shape.0 + s.shape.1) as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, &s.name));
                Array2::from_shape_fn(s.shape, |_| rng.random_range(-bound..=bound))
            }
            ParamKind::Bias => Array2::zeros(s.shape),
            ParamKind::Gain => Array2::ones(s.shape),
        })
        .collect();
    let aux = (1..=config.layers)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, &format!("layer{i}.aux")));
            AuxiliaryVector::random(config.aux_dim(i), &mut rng)
        })
        .collect();
    ModelParams::from_parts(config, values, aux)
}

fn check_targets(q: ArrayView2<f64>) -> Result<()> {
    let binary = q.iter().all(|&x| x == 0.0 || x == 1.0);
    let one_hot = q.ncols() == 1 || q.rows().into_iter().all(|r| r.sum() == 1.0);
    if !binary || !one_hot {
        return Err(Error::Input("targets must be one-hot rows (or a 0/1 column)".into()));
    }
    Ok(())
}

/// Mean over rows of `-Σ_c [q log p + (1-q) log(1-p)]` with clamped `p`.
pub fn bce(tape: &mut Tape, p: Var, q: &Array2<f64>) -> Result<Var> {
    if tape.shape(p) != q.dim() {
        return Err(Error::Shape(format!(
            "probabilities {:?}, targets {:?}",
            tape.shape(p),
            q.dim()
        )));
    }
    check_targets(q.view())?;
    let rows = q.nrows().max(1) as f64;
    let pc = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS)?;
    let lp = tape.log(pc)?;
    let neg = tape.scale(pc, -1.0)?;
    let one_minus = tape.add_scalar(neg, 1.0)?;
    let lq = tape.log(one_minus)?;
    let qv = tape.constant(q.clone())?;
    let qn = tape.constant(q.mapv(|x| 1.0 - x))?;
    let a = tape.mul(qv, lp)?;
    let b = tape.mul(qn, lq)?;
    let t = tape.add(a, b)?;
    let s = tape.sum(t)?;
    tape.scale(s, -1.0 / rows)
}

/// Value-only version of [`bce`].
pub fn bce_value(p: ArrayView2<f64>, q: ArrayView2<f64>) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Shape(format!("probabilities {:?}, targets {:?}", p.dim(), q.dim())));
    }
    check_targets(q)?;
    let mut total = 0.0;
    Zip::from(p).and(q).for_each(|&p, &q| {
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        total -= q * p.ln() + (1.0 - q) * (1.0 - p).ln();
    });
    Ok(total / p.nrows().max(1) as f64)
}

/// Mean squared error of a prediction column.
pub fn mse(tape: &mut Tape, pred: Var, targets: &[f64]) -> Result<Var> {
    if tape.shape(pred) != (targets.len(), 1) {
        return Err(Error::Shape(format!(
            "predictions {:?} for {} targets",
            tape.shape(pred),
            targets.len()
        )));
    }
    let t = tape.constant(Array2::from_shape_vec((targets.len(), 1), targets.to_vec()).expect("column"))?;
    let d = tape.sub(pred, t)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum(sq)?;
    tape.scale(s, 1.0 / targets.len().max(1) as f64)
}

/// `weight · Σ‖W‖²` over weight tensors.
pub fn l2_penalty(tape: &mut Tape, bound: &Bound, weight: f64) -> Result<Var> {
    let mut total: Option<Var> = None;
    for w in bound.weights() {
        let sq = tape.mul(w, w)?;
        let s = tape.sum(sq)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    match total {
        Some(t) => tape.scale(t, weight),
        None => tape.constant(Array2::zeros((1, 1))),
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &[Array2<f64>]) -> Self {
        let zeros: Vec<_> = params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update. Nothing changes if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "{} parameters and {} gradients for {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.dim() != self.m[i].dim() || g.dim() != self.m[i].dim() {
                return Err(Error::Shape(format!("tensor {i} changed shape")));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of tensor {i}")));
            }
        }
        self.steps += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.steps as i32);
        let c2 = 1.0 - b2.powi(self.steps as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
        Ok(())
    }
}
