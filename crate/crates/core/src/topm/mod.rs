//! Auxiliary-vector Top-m selection.
//!
//! Embeddings are rectified and L2-normalized, the auxiliary vector `a` is
//! projected orthogonal to the (renormalized) mean embedding, every node is
//! scored once by `aᵀĝ`, and nodes are sorted by score. A node's Top-m set
//! is the `m` nodes nearest to it in that ranking. Total work is
//! `O(N·D + N log N + N·m)`; no pairwise similarity matrix is formed.

mod bench;

pub use bench::{benchmark_scaling, growth_exponent, quadratic_windows, ScalingReport, Timing};

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::{Error, Result};

/// Norm below which a vector counts as zero.
const ZERO_NORM: f64 = 1e-12;
/// Residual norm below which `a` is considered parallel to the mean.
const PARALLEL_NORM: f64 = 1e-10;
const MAX_REDRAWS: usize = 8;

/// Sequential dot product; fixed summation order keeps scores reproducible.
pub(crate) fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm(a: ArrayView1<f64>) -> f64 {
    dot(a, a).sqrt()
}

/// Unit vector used as the common reference for similarity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryVector(Array1<f64>);

impl AuxiliaryVector {
    /// Random direction drawn from an isotropic Gaussian.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        loop {
            let v = Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
            if let Ok(a) = AuxiliaryVector::new(v) {
                return a;
            }
        }
    }

    /// Normalizes `v`; fails for a zero vector.
    pub fn new(v: Array1<f64>) -> Result<Self> {
        let n = norm(v.view());
        if !(n > ZERO_NORM) || !n.is_finite() {
            return Err(Error::Input("auxiliary vector must be finite and non-zero".into()));
        }
        Ok(AuxiliaryVector(v / n))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.0
    }
}

/// Rectified, L2-normalized rows and their renormalized mean direction.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveNormalized {
    pub rows: Array2<f64>,
    /// Unit mean direction, or zero when every row is zero.
    pub mean: Array1<f64>,
    /// Rows that were all zero after rectification.
    pub zero_rows: Vec<usize>,
}

/// Rectifies each row elementwise with `max(x, 0)`, scales it to unit
/// length, and returns the normalized mean of the rows.
pub fn positive_normalize(g: ArrayView2<f64>) -> Result<PositiveNormalized> {
    if g.nrows() == 0 {
        return Err(Error::Input("no embeddings to normalize".into()));
    }
    let mut rows = g.mapv(|x| x.max(0.0));
    let mut zero_rows = Vec::new();
    for (i, mut row) in rows.rows_mut().into_iter().enumerate() {
        let n = norm(row.view());
        if n > ZERO_NORM {
            row.mapv_inplace(|x| x / n);
        } else {
            row.fill(0.0);
            zero_rows.push(i);
        }
    }
    if !zero_rows.is_empty() {
        log::debug!("top-m selection: {} all-zero rows after rectification", zero_rows.len());
    }
    let mut mean = Array1::zeros(g.ncols());
    for row in rows.rows() {
        mean += &row;
    }
    mean /= g.nrows() as f64;
    let n = norm(mean.view());
    if n > ZERO_NORM {
        mean /= n;
    } else {
        mean.fill(0.0);
    }
    Ok(PositiveNormalized {
        rows,
        mean,
        zero_rows,
    })
}

fn project_out(a: &mut Array1<f64>, unit: ArrayView1<f64>) {
    let c = dot(a.view(), unit);
    a.scaled_add(-c, &unit);
}

/// `a ← normalize(a − (aᵀḡ) ḡ)`. A zero `mean` or one-dimensional
/// embeddings (no orthogonal direction exists) leave `a` unchanged.
///
/// When `a` is (numerically) parallel to `mean` a fresh direction is drawn
/// from `rng`, up to eight times.
pub fn update_auxiliary<R: Rng + ?Sized>(
    a: &AuxiliaryVector,
    mean: ArrayView1<f64>,
    rng: &mut R,
) -> Result<AuxiliaryVector> {
    if mean.len() != a.dim() {
        return Err(Error::Shape(format!(
            "auxiliary vector has dim {}, mean has {}",
            a.dim(),
            mean.len()
        )));
    }
    if a.dim() < 2 || norm(mean) <= ZERO_NORM {
        return Ok(a.clone());
    }
    let mut candidate = a.0.clone();
    for _ in 0..=MAX_REDRAWS {
        let mut v = candidate.clone();
        project_out(&mut v, mean);
        if norm(v.view()) >= PARALLEL_NORM {
            // Second pass removes the rounding left by the first when the
            // residual is small.
            project_out(&mut v, mean);
            return AuxiliaryVector::new(v);
        }
        candidate = AuxiliaryVector::random(a.dim(), rng).0;
    }
    Err(Error::State(format!(
        "auxiliary vector stayed parallel to the mean after {MAX_REDRAWS} redraws"
    )))
}

/// `s_n = aᵀĝ_n` for every row.
pub fn similarity_scores(a: &AuxiliaryVector, normalized: ArrayView2<f64>) -> Result<Vec<f64>> {
    if normalized.ncols() != a.dim() {
        return Err(Error::Shape(format!(
            "embeddings have width {}, auxiliary vector {}",
            normalized.ncols(),
            a.dim()
        )));
    }
    Ok(normalized.rows().into_iter().map(|r| dot(a.0.view(), r)).collect())
}

/// Node ids by descending score; equal scores keep ascending id order.
pub fn rank_nodes(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    order
}

/// Inclusive rank range of the `min(m, n-1)`-window around `rank`, before
/// removing `rank` itself. Ties in rank distance go to the smaller rank.
fn window_bounds(n: usize, rank: usize, m: usize) -> (usize, usize) {
    let k = m.min(n.saturating_sub(1));
    let mut lo = rank as isize - k.div_ceil(2) as isize;
    let mut hi = rank as isize + (k / 2) as isize;
    if lo < 0 {
        hi -= lo;
        lo = 0;
    }
    if hi > n as isize - 1 {
        lo -= hi - (n as isize - 1);
        hi = n as isize - 1;
    }
    (lo as usize, hi as usize)
}

fn window_at_rank(ranking: &[usize], rank: usize, m: usize, out: &mut Vec<usize>) {
    let (lo, hi) = window_bounds(ranking.len(), rank, m);
    out.extend((lo..=hi).filter(|&r| r != rank).map(|r| ranking[r]));
}

/// The `min(m, N-1)` nodes whose ranks are nearest to `v`'s, excluding
/// `v`, in ascending rank order.
pub fn topm_window(ranking: &[usize], v: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::Config("m must be at least 1".into()));
    }
    let rank = ranking
        .iter()
        .position(|&u| u == v)
        .ok_or_else(|| Error::Range(format!("node {v} is not in the ranking")))?;
    let mut out = Vec::with_capacity(m);
    window_at_rank(ranking, rank, m, &mut out);
    Ok(out)
}

/// Scores, ranking and rank windows for one candidate pool.
#[derive(Debug, Clone, PartialEq)]
pub struct TopmIndex {
    /// The auxiliary vector after orthogonalization against this pool.
    pub aux: AuxiliaryVector,
    pub scores: Vec<f64>,
    pub ranking: Vec<usize>,
    pub rank_of: Vec<usize>,
    pub m: usize,
    window_len: usize,
    windows: Vec<usize>,
}

impl TopmIndex {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Every window holds this many members.
    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn window(&self, v: usize) -> &[usize] {
        &self.windows[v * self.window_len..(v + 1) * self.window_len]
    }

    /// Tab-separated `node score rank window` lines, window members
    /// comma-separated.
    pub fn dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "node\tscore\trank\twindow")?;
        for v in 0..self.len() {
            let members: Vec<String> = self.window(v).iter().map(usize::to_string).collect();
            writeln!(out, "{v}\t{}\t{}\t{}", self.scores[v], self.rank_of[v], members.join(","))?;
        }
        Ok(())
    }
}

/// Runs the whole selection pipeline over the rows of `g`.
pub fn build_index<R: Rng + ?Sized>(
    g: ArrayView2<f64>,
    a_prev: &AuxiliaryVector,
    m: usize,
    rng: &mut R,
) -> Result<TopmIndex> {
    if m == 0 {
        return Err(Error::Config("m must be at least 1".into()));
    }
    let normalized = positive_normalize(g)?;
    let aux = update_auxiliary(a_prev, normalized.mean.view(), rng)?;
    let mut scores = similarity_scores(&aux, normalized.rows.view())?;
    for &z in &normalized.zero_rows {
        scores[z] = f64::NEG_INFINITY;
    }
    let ranking = rank_nodes(&scores);
    let n = ranking.len();
    let mut rank_of = vec![0; n];
    for (r, &v) in ranking.iter().enumerate() {
        rank_of[v] = r;
    }
    let window_len = m.min(n - 1);
    let mut windows = vec![0; n * window_len];
    if window_len > 0 {
        windows
            .par_chunks_mut(window_len)
            .enumerate()
            .for_each(|(v, slot)| {
                let (lo, hi) = window_bounds(n, rank_of[v], m);
                let mut k = 0;
                for r in lo..=hi {
                    if r != rank_of[v] {
                        slot[k] = ranking[r];
                        k += 1;
                    }
                }
            });
    }
    Ok(TopmIndex {
        aux,
        scores,
        ranking,
        rank_of,
        m,
        window_len,
        windows,
    })
}
