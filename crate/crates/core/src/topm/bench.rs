//! Wall-clock scaling of the selection step against a quadratic baseline.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{build_index, dot, positive_normalize, update_auxiliary, AuxiliaryVector};
use crate::{Error, Result};

/// Windows computed straight from the definition in `O(N^2)`: each node's
/// rank is the number of nodes ahead of it, and each window is found by
/// scanning every node's rank distance.
pub fn quadratic_windows<R: Rng + ?Sized>(
    g: ArrayView2<f64>,
    a_prev: &AuxiliaryVector,
    m: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let normalized = positive_normalize(g)?;
    let aux = update_auxiliary(a_prev, normalized.mean.view(), rng)?;
    let n = g.nrows();
    let scores: Vec<f64> = (0..n)
        .map(|i| {
            if normalized.zero_rows.contains(&i) {
                f64::NEG_INFINITY
            } else {
                dot(aux.values().view(), normalized.rows.row(i))
            }
        })
        .collect();
    let rank: Vec<usize> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
                .count()
        })
        .collect();
    let k = m.min(n.saturating_sub(1));
    Ok((0..n)
        .map(|v| {
            let mut near: Vec<(usize, usize, usize)> = (0..n)
                .filter(|&u| u != v && rank[u].abs_diff(rank[v]) <= k)
                .map(|u| (rank[u].abs_diff(rank[v]), rank[u], u))
                .collect();
            near.sort_unstable();
            near.truncate(k);
            near.sort_unstable_by_key(|&(_, r, _)| r);
            near.into_iter().map(|(_, _, u)| u).collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub n: usize,
    /// Fastest of the repetitions.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub dim: usize,
    pub m: usize,
    pub quadratic: bool,
    pub timings: Vec<Timing>,
    /// Least-squares slope of log time against log N; absent with fewer
    /// than two sizes.
    pub exponent: Option<f64>,
}

impl ScalingReport {
    /// Time ratio between consecutive sizes.
    pub fn ratios(&self) -> Vec<f64> {
        self.timings
            .windows(2)
            .map(|w| w[1].seconds / w[0].seconds.max(1e-12))
            .collect()
    }
}

pub fn growth_exponent(timings: &[Timing]) -> Option<f64> {
    if timings.len() < 2 {
        return None;
    }
    let pts: Vec<(f64, f64)> = timings
        .iter()
        .map(|t| ((t.n.max(1) as f64).ln(), t.seconds.max(1e-12).ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Times index construction on random `N×dim` embeddings for each size.
/// With `quadratic` set, times [`quadratic_windows`] instead.
pub fn benchmark_scaling(
    sizes: &[usize],
    dim: usize,
    m: usize,
    repetitions: usize,
    quadratic: bool,
    seed: u64,
) -> Result<ScalingReport> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) || sizes[0] == 0 {
        return Err(Error::Config("sizes must be positive and strictly ascending".into()));
    }
    if dim == 0 || m == 0 || repetitions == 0 {
        return Err(Error::Config("dim, m and repetitions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<_> = sizes
        .iter()
        .map(|&n| {
            let g = Array2::from_shape_fn((n, dim), |_| rng.random_range(-1.0..1.0));
            (g, AuxiliaryVector::random(dim, &mut rng))
        })
        .collect();
    let run = |i: usize, rng: &mut ChaCha8Rng| -> Result<f64> {
        let (g, a) = &inputs[i];
        let start = Instant::now();
        if quadratic {
            std::hint::black_box(quadratic_windows(g.view(), a, m, rng)?);
        } else {
            std::hint::black_box(build_index(g.view(), a, m, rng)?);
        }
        Ok(start.elapsed().as_secs_f64())
    };
    if !quadratic {
        // warm caches and the allocator before timing
        for i in 0..sizes.len() {
            run(i, &mut rng)?;
        }
    }
    // Sizes are interleaved so a slow stretch of wall time hits all of them.
    let mut best = vec![f64::INFINITY; sizes.len()];
    for _ in 0..repetitions {
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(run(i, &mut rng)?);
        }
    }
    let timings: Vec<Timing> = sizes.iter().zip(best).map(|(&n, seconds)| Timing { n, seconds }).collect();
    let exponent = growth_exponent(&timings);
    Ok(ScalingReport {
        dim,
        m,
        quadratic,
        timings,
        exponent,
    })
}
