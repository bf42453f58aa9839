//! Synthetic emotion-clustered embeddings.
//!
//! Class means sit at the vertices of a regular simplex with pairwise
//! distance `separation` (in units of the per-dimension noise sigma = 1).
//! Ambiguous utterances mix exactly two classes: their frames are centred on
//! the vote-weighted combination of the two means and their soft label is
//! the vote share.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{EmbeddingSet, EmotionLabel, Level, SoftLabel, Taxonomy, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub separation: f64,
    pub ambiguity_fraction: f64,
    /// Inclusive range of frames per utterance.
    pub frames: (usize, usize),
    /// Votes per ambiguous utterance; the primary class receives between
    /// ceil(n/2) and n-1 of them.
    pub annotators: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            dim: 64,
            per_class: 500,
            separation: 4.0,
            ambiguity_fraction: 0.3,
            frames: (1, 1),
            annotators: 4,
            seed: 7,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.classes > u8::MAX as usize {
            return Err(Error::Config(format!("class count {} outside 1..=255", self.classes)));
        }
        if self.dim + 1 < self.classes {
            return Err(Error::Config(format!(
                "dimension {} cannot hold {} distinct simplex vertices (needs >= {})",
                self.dim,
                self.classes,
                self.classes - 1
            )));
        }
        if self.dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        if !self.separation.is_finite() || self.separation <= 0.0 {
            return Err(Error::Config(format!("separation must be positive, got {}", self.separation)));
        }
        if !(0.0..=1.0).contains(&self.ambiguity_fraction) {
            return Err(Error::Config(format!("ambiguity fraction {} outside [0, 1]", self.ambiguity_fraction)));
        }
        if self.ambiguity_fraction > 0.0 && self.classes < 2 {
            return Err(Error::Config("ambiguous utterances need at least two classes".into()));
        }
        if self.frames.0 == 0 || self.frames.0 > self.frames.1 {
            return Err(Error::Config(format!("bad frame range {:?}", self.frames)));
        }
        if self.annotators < 2 {
            return Err(Error::Config("at least two annotators are needed for mixed votes".into()));
        }
        Ok(())
    }

    /// Class means: simplex vertices with pairwise distance `separation`, zero-padded to `dim`.
    pub fn class_means(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let c = self.classes;
        let centred: Vec<Vec<f64>> = (0..c)
            .map(|i| (0..c).map(|j| if i == j { 1.0 } else { 0.0 } - 1.0 / c as f64).collect())
            .collect();
        // orthonormal basis of the subspace orthogonal to the all-ones vector
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(c.saturating_sub(1));
        for v in centred.iter().take(c.saturating_sub(1)) {
            let mut u = v.clone();
            for b in &basis {
                let p: f64 = u.iter().zip(b).map(|(x, y)| x * y).sum();
                u.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
            let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            u.iter_mut().for_each(|x| *x /= n);
            basis.push(u);
        }
        let scale = self.separation / std::f64::consts::SQRT_2;
        Ok(centred
            .iter()
            .map(|v| {
                let mut m = vec![0.0; self.dim];
                for (j, b) in basis.iter().enumerate() {
                    m[j] = scale * v.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                }
                m
            })
            .collect())
    }
}

/// Soft label with weight `w` on class `a` and `1 - w` on class `b`.
pub fn mixture_soft_label(classes: usize, a: EmotionLabel, b: EmotionLabel, w: f64) -> Result<SoftLabel> {
    let mut p = vec![0.0; classes];
    p[a.index()] += w;
    p[b.index()] += 1.0 - w;
    SoftLabel::from_probs(&p, 1e-12)
}

pub fn generate(spec: &SynthSpec) -> Result<EmbeddingSet<f32>> {
    let means = spec.class_means()?;
    let taxonomy = Taxonomy::with_classes(spec.classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_amb = (spec.ambiguity_fraction * spec.per_class as f64).round() as usize;
    let n = spec.annotators;
    let min_votes = n.div_ceil(2);
    let mut vectors: Vec<f32> = Vec::new();
    let mut utterances = Vec::with_capacity(spec.classes * spec.per_class);
    let mut centre = vec![0.0f64; spec.dim];
    for c in 0..spec.classes {
        for i in 0..spec.per_class {
            let primary = EmotionLabel(c as u8);
            let soft = if i < n_amb {
                let mut other = rng.random_range(0..spec.classes - 1);
                if other >= c {
                    other += 1;
                }
                let votes = rng.random_range(min_votes..n);
                let w = votes as f64 / n as f64;
                let secondary = EmotionLabel(other as u8);
                for (j, slot) in centre.iter_mut().enumerate() {
                    *slot = w * means[c][j] + (1.0 - w) * means[other][j];
                }
                mixture_soft_label(spec.classes, primary, secondary, w)?
            } else {
                centre.copy_from_slice(&means[c]);
                SoftLabel::one_hot(spec.classes, primary)
            };
            let frames = rng.random_range(spec.frames.0..=spec.frames.1);
            let start = vectors.len() / spec.dim;
            for _ in 0..frames {
                for &m in &centre {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    vectors.push((m + z) as f32);
                }
            }
            utterances.push(Utterance {
                uid: format!("synth-{c}-{i:05}"),
                label: soft.argmax(),
                soft: Some(soft),
                frames: start..start + frames,
                corpus: "synth".into(),
            });
        }
    }
    let level = if spec.frames == (1, 1) { Level::Utterance } else { Level::Frame };
    EmbeddingSet::new(spec.dim, vectors, utterances, level, taxonomy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{stratify_indices, AmbiguityStratum};
    use crate::scalar::sq_dist;

    #[test]
    fn simplex_vertices_are_equidistant() {
        for c in 2..7 {
            let spec = SynthSpec { classes: c, dim: c - 1, separation: 3.0, ..SynthSpec::default() };
            let m = spec.class_means().unwrap();
            for i in 0..c {
                for j in i + 1..c {
                    assert!((sq_dist(&m[i], &m[j]).sqrt() - 3.0).abs() < 1e-12);
                }
            }
        }
        let bad = SynthSpec { classes: 5, dim: 3, ..SynthSpec::default() };
        assert!(generate(&bad).is_err());
    }

    #[test]
    fn reproducible_and_labels_match_soft_argmax() {
        let spec = SynthSpec { per_class: 50, dim: 8, frames: (1, 3), ..SynthSpec::default() };
        let a = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());
        assert_eq!(a.level(), Level::Frame);
        for u in a.utterances() {
            assert_eq!(u.label, u.soft.as_ref().unwrap().argmax());
        }
    }

    #[test]
    fn no_ambiguity_means_one_hot() {
        let spec = SynthSpec { per_class: 20, dim: 4, ambiguity_fraction: 0.0, ..SynthSpec::default() };
        let set = generate(&spec).unwrap();
        assert!(set.utterances().iter().all(|u| u.soft.as_ref().unwrap().max() == 1.0));
    }

    #[test]
    fn sixty_forty_mixture_is_low_ambiguity() {
        let s = mixture_soft_label(4, EmotionLabel(0), EmotionLabel(1), 0.6).unwrap();
        assert_eq!(s.probs(), &[0.6, 0.4, 0.0, 0.0]);
        assert_eq!(s.stratum(), AmbiguityStratum::Low);
    }

    #[test]
    fn ambiguous_share_produces_both_strata() {
        let spec = SynthSpec { per_class: 100, dim: 16, ..SynthSpec::default() };
        let set = generate(&spec).unwrap();
        let idx = stratify_indices(&set).unwrap();
        assert!(!idx.high.is_empty());
        assert!(idx.low.len() > idx.high.len());
    }

    #[test]
    fn empirical_means_near_specified_means() {
        let spec = SynthSpec { per_class: 400, dim: 6, ambiguity_fraction: 0.0, seed: 3, ..SynthSpec::default() };
        let set = generate(&spec).unwrap();
        let means = spec.class_means().unwrap();
        let n = spec.per_class as f64;
        for (c, ids) in set.indices_by_class().iter().enumerate() {
            for j in 0..spec.dim {
                let m: f64 = ids.iter().map(|&u| set.row(u)[j] as f64).sum::<f64>() / n;
                assert!((m - means[c][j]).abs() < 4.0 / n.sqrt(), "class {c} dim {j}");
            }
        }
    }

    #[test]
    fn huge_separation_is_perfectly_probeable() {
        use crate::probe::{probe_predict, probe_train, ProbeConfig};
        let spec = SynthSpec { per_class: 40, dim: 8, separation: 100.0, ambiguity_fraction: 0.0, ..SynthSpec::default() };
        let set = generate(&spec).unwrap();
        let probe = probe_train(&set, &ProbeConfig::default()).unwrap();
        let pred = probe_predict(&probe, &set).unwrap();
        assert_eq!(pred.hard, set.labels());
    }
}
