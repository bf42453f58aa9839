//! Lloyd's k-means with k-means++ seeding.
//!
//! All arithmetic is 64-bit. The assignment step runs in parallel over rows;
//! the update step is a sequential reduction in row order, so results do not
//! depend on the worker count. Empty clusters are reseeded from the point
//! farthest from its current centroid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rvq::Codebook;
use crate::scalar::{sq_dist, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once the relative drop in mean distortion falls to or below this.
    pub tol: f64,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iters: 100,
            tol: 1e-5,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k-means needs k >= 1".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Config(format!("k-means tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub codebook: Codebook<f64>,
    pub assignments: Vec<u32>,
    /// Mean squared distance to the assigned centroid, one entry per accepted iteration.
    pub distortion: Vec<f64>,
}

pub fn kmeans_fit<T: Scalar>(data: &[T], dim: usize, cfg: &KMeansConfig) -> Result<KMeansFit> {
    cfg.validate()?;
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!("{} values do not form rows of dimension {dim}", data.len())));
    }
    let n = data.len() / dim;
    if n < cfg.k {
        return Err(Error::InsufficientData { rows: n, k: cfg.k });
    }
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: pos / dim, col: pos % dim });
    }
    let data: Vec<f64> = data.iter().map(|v| v.widen()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut centroids = plus_plus_init(&data, dim, cfg.k, &mut rng);
    let (mut assign, mut dist) = assign_all(&data, dim, &centroids, cfg.k);
    let mut current = mean(&dist);
    let mut history = vec![current];

    for _ in 0..cfg.max_iters {
        let next = update(&data, dim, cfg.k, &assign, &dist);
        let (next_assign, next_dist) = assign_all(&data, dim, &next, cfg.k);
        let next_mean = mean(&next_dist);
        if next_mean > current {
            // rounding noise at convergence; keep the previous solution
            break;
        }
        let converged = current - next_mean <= cfg.tol * current;
        centroids = next;
        assign = next_assign;
        dist = next_dist;
        current = next_mean;
        history.push(current);
        if converged {
            break;
        }
    }

    Ok(KMeansFit {
        codebook: Codebook::new(cfg.k, dim, centroids)?,
        assignments: assign,
        distortion: history,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn plus_plus_init(data: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // float shortfall at the tail: last positive-weight row
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("total > 0"))
        } else {
            // every row coincides with a chosen centre
            (0..n).find(|i| !chosen.contains(i)).expect("n >= k")
        };
        chosen.push(pick);
        for (i, slot) in d2.iter_mut().enumerate() {
            let d = sq_dist(row(i), row(pick));
            if d < *slot {
                *slot = d;
            }
        }
    }
    chosen.iter().flat_map(|&i| row(i).iter().copied()).collect()
}

fn assign_all(data: &[f64], dim: usize, centroids: &[f64], k: usize) -> (Vec<u32>, Vec<f64>) {
    data.par_chunks(dim)
        .map(|x| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(x, &centroids[c * dim..(c + 1) * dim]);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            (best as u32, best_d)
        })
        .unzip()
}

fn update(data: &[f64], dim: usize, k: usize, assign: &[u32], dist: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (x, &a) in data.chunks_exact(dim).zip(assign) {
        let a = a as usize;
        counts[a] += 1;
        for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(x) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let n = counts[c] as f64;
            sums[c * dim..(c + 1) * dim].iter_mut().for_each(|s| *s /= n);
        }
    }
    let mut taken = vec![false; assign.len()];
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for (i, &a) in assign.iter().enumerate() {
            if taken[i] || counts[a as usize] < 2 {
                continue;
            }
            if far.is_none_or(|f| dist[i] > dist[f]) {
                far = Some(i);
            }
        }
        if let Some(i) = far {
            taken[i] = true;
            counts[assign[i] as usize] -= 1;
            counts[c] = 1;
            sums[c * dim..(c + 1) * dim].copy_from_slice(&data[i * dim..(i + 1) * dim]);
        }
    }
    sums
}
