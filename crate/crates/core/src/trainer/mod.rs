//! Codebook training: regime-controlled training-set assembly and
//! stage-by-stage k-means on residuals.

mod kmeans;
mod regime;

pub use kmeans::{kmeans_fit, KMeansConfig, KMeansFit};
pub use regime::{assemble_training_set, RegimeKind, TrainingRegime};

use crate::data::EmbeddingSet;
use crate::error::Result;
use crate::rvq::{Codebook, RvqStack, StackMeta};
use crate::scalar::Scalar;
use crate::seed::derive_seed;

/// Per-stage diagnostics collected while training a stack.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    /// Mean squared residual norm on the training rows; entry 0 is before stage 1.
    pub residual_mse: Vec<f64>,
    /// k-means distortion history of every stage.
    pub distortion: Vec<Vec<f64>>,
}

/// Assembles the regime's training set from `set` and trains an L-stage stack on it.
pub fn train_rvq<T: Scalar>(
    set: &EmbeddingSet<T>,
    regime: &TrainingRegime,
    stages: usize,
    entries: usize,
    cfg: &KMeansConfig,
) -> Result<RvqStack<T>> {
    train_rvq_detailed(set, regime, stages, entries, cfg).map(|(s, _)| s)
}

pub fn train_rvq_detailed<T: Scalar>(
    set: &EmbeddingSet<T>,
    regime: &TrainingRegime,
    stages: usize,
    entries: usize,
    cfg: &KMeansConfig,
) -> Result<(RvqStack<T>, TrainingTrace)> {
    let training = assemble_training_set(set, regime)?;
    train_stack_on(&training, stages, entries, cfg, regime.meta())
}

/// Sequential residual k-means over every row of an already-assembled set.
pub fn train_stack_on<T: Scalar>(
    training: &EmbeddingSet<T>,
    stages: usize,
    entries: usize,
    cfg: &KMeansConfig,
    meta: StackMeta,
) -> Result<(RvqStack<T>, TrainingTrace)> {
    if stages == 0 {
        return Err(crate::error::Error::Config("stack needs at least one stage".into()));
    }
    let d = training.dim();
    let n = training.n_rows();
    let mut residual: Vec<f64> = training.vectors().iter().map(|v| v.widen()).collect();
    let mse = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64;
    let mut trace = TrainingTrace {
        residual_mse: vec![mse(&residual)],
        distortion: Vec::with_capacity(stages),
    };
    let mut books = Vec::with_capacity(stages);
    for l in 0..stages {
        let stage_cfg = KMeansConfig {
            k: entries,
            seed: derive_seed(cfg.seed, &format!("stage{l}")),
            ..cfg.clone()
        };
        let fit = kmeans_fit(&residual, d, &stage_cfg)?;
        let book: Codebook<T> = fit.codebook.cast();
        for row in residual.chunks_exact_mut(d) {
            let (k, _) = book.nearest(row);
            for (r, c) in row.iter_mut().zip(book.codeword(k)) {
                *r -= c.widen();
            }
        }
        trace.residual_mse.push(mse(&residual));
        trace.distortion.push(fit.distortion);
        books.push(book);
    }
    Ok((RvqStack::new(books, meta)?, trace))
}

impl<T: Scalar> Codebook<T> {
    pub fn cast<U: Scalar>(&self) -> Codebook<U> {
        Codebook::new(
            self.entries(),
            self.dim(),
            self.codewords().iter().map(|v| U::narrow(v.widen())).collect(),
        )
        .expect("cast preserves shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EmotionLabel, Taxonomy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_set(n_per_class: usize, d: usize, seed: u64) -> EmbeddingSet<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = Vec::new();
        let mut labels = Vec::new();
        for c in 0..4u8 {
            for _ in 0..n_per_class {
                for j in 0..d {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    let mean = if j == c as usize { 3.0 } else { 0.0 };
                    v.push((mean + n) as f32);
                }
                labels.push(EmotionLabel(c));
            }
        }
        EmbeddingSet::from_rows(d, v, &labels, Taxonomy::canonical()).unwrap()
    }

    #[test]
    fn single_stage_single_entry_is_the_mean() {
        let set = gaussian_set(10, 3, 1);
        let regime = TrainingRegime::balanced(40, 5);
        let (stack, trace) = train_rvq_detailed(&set, &regime, 1, 1, &KMeansConfig::new(1, 9)).unwrap();
        let training = assemble_training_set(&set, &regime).unwrap();
        for j in 0..3 {
            let mean: f64 = training.rows().map(|r| r[j] as f64).sum::<f64>() / 40.0;
            assert!((stack.stage(0).codeword(0)[j] as f64 - mean).abs() < 1e-6);
        }
        // Residual energy drops by exactly the squared norm of the mean.
        let mean_sq: f64 = stack.stage(0).codeword(0).iter().map(|v| (*v as f64).powi(2)).sum();
        assert!((trace.residual_mse[0] - trace.residual_mse[1] - mean_sq).abs() < 1e-4);
    }

    #[test]
    fn residual_energy_is_non_increasing_across_stages() {
        let set = gaussian_set(50, 8, 2);
        let regime = TrainingRegime::balanced(200, 3);
        let (stack, trace) = train_rvq_detailed(&set, &regime, 24, 2, &KMeansConfig::new(2, 4)).unwrap();
        assert_eq!(stack.n_stages(), 24);
        assert_eq!(stack.entries(), 2);
        for w in trace.residual_mse.windows(2) {
            assert!(w[1] <= w[0], "{:?}", trace.residual_mse);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let set = gaussian_set(30, 6, 3);
        let regime = TrainingRegime::biased(EmotionLabel(1), 95, 30, 8);
        let cfg = KMeansConfig::new(4, 21);
        let a = train_rvq(&set, &regime, 3, 4, &cfg).unwrap();
        let b = train_rvq(&set, &regime, 3, 4, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.meta().target, Some(EmotionLabel(1)));
        assert_eq!(a.meta().bias_percent, Some(95));
    }
}
