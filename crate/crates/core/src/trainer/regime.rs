use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{EmbeddingSet, EmotionLabel};
use crate::error::{Error, Result};
use crate::rvq::StackMeta;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegimeKind {
    Balanced,
    Specific,
    Biased,
}

impl RegimeKind {
    pub fn tag(self) -> u8 {
        match self {
            RegimeKind::Balanced => 0,
            RegimeKind::Specific => 1,
            RegimeKind::Biased => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(RegimeKind::Balanced),
            1 => Some(RegimeKind::Specific),
            2 => Some(RegimeKind::Biased),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegimeKind::Balanced => "balanced",
            RegimeKind::Specific => "specific",
            RegimeKind::Biased => "biased",
        }
    }
}

impl std::str::FromStr for RegimeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(RegimeKind::Balanced),
            "specific" => Ok(RegimeKind::Specific),
            "biased" => Ok(RegimeKind::Biased),
            other => Err(Error::Config(format!("unknown regime '{other}'"))),
        }
    }
}

/// Training-set composition under a fixed utterance budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingRegime {
    pub kind: RegimeKind,
    pub target: Option<EmotionLabel>,
    /// Share of the budget drawn from the target class (100 for `Specific`).
    pub bias_percent: u8,
    pub total_budget: usize,
    pub seed: u64,
}

impl TrainingRegime {
    pub fn balanced(total_budget: usize, seed: u64) -> Self {
        Self {
            kind: RegimeKind::Balanced,
            target: None,
            bias_percent: 0,
            total_budget,
            seed,
        }
    }

    pub fn specific(target: EmotionLabel, total_budget: usize, seed: u64) -> Self {
        Self {
            kind: RegimeKind::Specific,
            target: Some(target),
            bias_percent: 100,
            total_budget,
            seed,
        }
    }

    pub fn biased(target: EmotionLabel, bias_percent: u8, total_budget: usize, seed: u64) -> Self {
        Self {
            kind: RegimeKind::Biased,
            target: Some(target),
            bias_percent,
            total_budget,
            seed,
        }
    }

    /// Short identifier such as `balanced`, `happy100`, `happy99`.
    pub fn label(&self, names: &[String]) -> String {
        match (self.kind, self.target) {
            (RegimeKind::Balanced, _) | (_, None) => "balanced".into(),
            (_, Some(t)) => format!("{}{}", names[t.index()], self.bias_percent),
        }
    }

    pub fn meta(&self) -> StackMeta {
        StackMeta {
            regime: self.kind,
            target: self.target,
            bias_percent: match self.kind {
                RegimeKind::Balanced => None,
                _ => Some(self.bias_percent),
            },
            seed: self.seed,
        }
    }

    /// Utterances to draw from each class, in label-id order.
    pub fn quotas(&self, classes: usize) -> Result<Vec<usize>> {
        let t = self.total_budget;
        if t == 0 {
            return Err(Error::Config("training budget must be positive".into()));
        }
        match self.kind {
            RegimeKind::Balanced => {
                if !t.is_multiple_of(classes) {
                    return Err(Error::Config(format!(
                        "balanced budget {t} not divisible by {classes} classes"
                    )));
                }
                Ok(vec![t / classes; classes])
            }
            RegimeKind::Specific | RegimeKind::Biased => {
                let target = self
                    .target
                    .ok_or_else(|| Error::Config(format!("{} regime needs a target emotion", self.kind.name())))?;
                if target.index() >= classes {
                    return Err(Error::Config(format!("target id {} outside {classes} classes", target.0)));
                }
                let a = self.bias_percent as usize;
                if self.kind == RegimeKind::Specific && a != 100 {
                    return Err(Error::Config("specific regime implies bias 100".into()));
                }
                if !(50..=100).contains(&a) {
                    return Err(Error::Config(format!("bias percent {a} outside 50..=100")));
                }
                let on_target = a * t / 100;
                let rest = t - on_target;
                let mut q = vec![0usize; classes];
                q[target.index()] = on_target;
                if rest > 0 {
                    if classes < 2 {
                        return Err(Error::Config("biased regime needs at least two classes".into()));
                    }
                    let others: Vec<usize> = (0..classes).filter(|&c| c != target.index()).collect();
                    let base = rest / others.len();
                    let extra = rest % others.len();
                    for (i, &c) in others.iter().enumerate() {
                        q[c] = base + usize::from(i < extra);
                    }
                }
                Ok(q)
            }
        }
    }
}

/// Samples utterances without replacement to meet the regime's per-class quotas.
///
/// Each class is shuffled with its own seeded stream; the result lists classes
/// in label-id order.
pub fn assemble_training_set<T: Scalar>(set: &EmbeddingSet<T>, regime: &TrainingRegime) -> Result<EmbeddingSet<T>> {
    let quotas = regime.quotas(set.n_classes())?;
    let by_class = set.indices_by_class();
    for (c, (&q, members)) in quotas.iter().zip(&by_class).enumerate() {
        if members.len() < q {
            return Err(Error::Quota {
                class: set.taxonomy().names()[c].clone(),
                quota: q,
                shortfall: q - members.len(),
            });
        }
    }
    let mut picked = Vec::with_capacity(regime.total_budget);
    for (c, (&q, members)) in quotas.iter().zip(&by_class).enumerate() {
        if q == 0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(regime.seed);
        rng.set_stream(c as u64);
        let mut pool = members.clone();
        pool.shuffle(&mut rng);
        picked.extend_from_slice(&pool[..q]);
    }
    Ok(set.subset(&picked))
}
