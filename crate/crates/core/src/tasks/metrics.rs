use std::fmt;

use ndarray::ArrayView2;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Accuracy,
    F1Micro,
    /// Binary AUROC, or the macro one-vs-rest average for several classes.
    Auroc,
    Mae,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::F1Micro => "f1_micro",
            Metric::Auroc => "auroc",
            Metric::Mae => "mae",
        }
    }

    pub fn higher_is_better(self) -> bool {
        self != Metric::Mae
    }

    /// Whether `a` is strictly better than `b`.
    pub fn improves(self, a: f64, b: f64) -> bool {
        if self.higher_is_better() {
            a > b
        } else {
            a < b
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn aligned(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{a} predictions for {b} labels")));
    }
    if a == 0 {
        return Err(Error::Input("metric over an empty set".into()));
    }
    Ok(())
}

pub fn argmax_rows(p: ArrayView2<f64>) -> Vec<usize> {
    p.rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
                .0
        })
        .collect()
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    aligned(preds.len(), labels.len())?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Micro-averaged F1 from pooled true positives, false positives and false
/// negatives over all classes.
pub fn f1_micro(preds: &[usize], labels: &[usize]) -> Result<f64> {
    aligned(preds.len(), labels.len())?;
    let classes = preds.iter().chain(labels).max().map_or(0, |&c| c + 1);
    let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
    for c in 0..classes {
        for (&p, &l) in preds.iter().zip(labels) {
            match (p == c, l == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fnn += 1,
                _ => {}
            }
        }
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fnn) as f64)
}

/// Area under the ROC curve from the Mann-Whitney statistic with midranks
/// for ties. `None` when either class is absent.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<Option<f64>> {
    aligned(scores.len(), positive.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score in auroc".into()));
    }
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("no NaN"));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(Some(u / (pos * neg) as f64))
}

/// Macro average of one-vs-rest AUROCs over the columns of `probs`.
/// Classes without positives or without negatives are skipped with a
/// warning.
pub fn auroc_ovr(probs: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    aligned(probs.nrows(), labels.len())?;
    if let Some(&c) = labels.iter().find(|&&c| c >= probs.ncols()) {
        return Err(Error::Range(format!("label {c} with {} classes", probs.ncols())));
    }
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..probs.ncols() {
        let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let scores = probs.column(c).to_vec();
        match auroc(&scores, &positive)? {
            Some(a) => {
                total += a;
                used += 1;
            }
            None => log::warn!("class {c} excluded from macro auroc: only one side present"),
        }
    }
    if used == 0 {
        return Err(Error::Input("no class has both positives and negatives".into()));
    }
    Ok(total / used as f64)
}

pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64> {
    aligned(preds.len(), targets.len())?;
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64)
}
