//! Similarity-routed classification: reconstruct the input through one
//! emotion-specialized stack per class and pick the class whose
//! reconstruction has the highest cosine similarity to the input.

use rayon::prelude::*;

use crate::data::{argmax_lowest, pool_utterance, EmbeddingSet, EmotionLabel, Level};
use crate::error::{Error, Result};
use crate::metrics::macro_f1;
use crate::report::{EvalReport, ALL};
use crate::rvq::RvqStack;
use crate::scalar::{cosine, norm, Scalar};

/// One stack per emotion label, in label-id order.
#[derive(Debug, Clone)]
pub struct RouterBank<T> {
    stacks: Vec<RvqStack<T>>,
    depth: usize,
    normalize: bool,
}

impl<T: Scalar> RouterBank<T> {
    /// With `normalize`, inputs are scaled to unit norm before encoding; the
    /// stacks are expected to have been trained on unit-norm data.
    pub fn new(stacks: Vec<RvqStack<T>>, depth: usize, normalize: bool) -> Result<Self> {
        let first = stacks.first().ok_or_else(|| Error::Config("router bank needs at least one stack".into()))?;
        let (l, k, d) = (first.n_stages(), first.entries(), first.dim());
        for (i, s) in stacks.iter().enumerate() {
            if (s.n_stages(), s.entries(), s.dim()) != (l, k, d) {
                return Err(Error::Shape(format!(
                    "stack {i} is {}x{}x{}, expected {l}x{k}x{d}",
                    s.n_stages(),
                    s.entries(),
                    s.dim()
                )));
            }
            if let Some(t) = s.meta().target {
                if t.index() != i {
                    return Err(Error::Config(format!("stack in slot {i} targets emotion id {}", t.0)));
                }
            }
        }
        if depth == 0 || depth > l {
            return Err(Error::DepthOutOfRange { depth, max: l });
        }
        Ok(Self { stacks, depth, normalize })
    }

    pub fn stacks(&self) -> &[RvqStack<T>] {
        &self.stacks
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn normalize(&self) -> bool {
        self.normalize
    }

    pub fn classes(&self) -> usize {
        self.stacks.len()
    }

    pub fn dim(&self) -> usize {
        self.stacks[0].dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteResult {
    pub label: EmotionLabel,
    /// cos(z, e_i) for every stack i.
    pub scores: Vec<f64>,
    /// Stage indices chosen by each stack, `depth` per stack.
    pub codes: Vec<Vec<u32>>,
}

pub fn route<T: Scalar, S: Scalar>(z: &[S], bank: &RouterBank<T>) -> Result<RouteResult> {
    route_row(z, bank, 0)
}

fn route_row<T: Scalar, S: Scalar>(z: &[S], bank: &RouterBank<T>, row: usize) -> Result<RouteResult> {
    if z.len() != bank.dim() {
        return Err(Error::Shape(format!("vector has dimension {}, bank expects {}", z.len(), bank.dim())));
    }
    let n = norm(z);
    if n == 0.0 {
        return Err(Error::Degenerate { row, msg: "zero-norm input to router".into() });
    }
    let input: Vec<T> = if bank.normalize {
        z.iter().map(|v| T::narrow(v.widen() / n)).collect()
    } else {
        z.iter().map(|v| T::narrow(v.widen())).collect()
    };
    let mut scores = Vec::with_capacity(bank.classes());
    let mut codes = Vec::with_capacity(bank.classes());
    for stack in &bank.stacks {
        let mut idx = vec![0u32; bank.depth];
        stack.encode_row_into(&input, bank.depth, &mut idx);
        let recon = stack.reconstruct_row_f64(&idx, bank.depth);
        let c = cosine(&input, &recon).ok_or_else(|| Error::Degenerate {
            row,
            msg: "zero-norm reconstruction in router".into(),
        })?;
        scores.push(c);
        codes.push(idx);
    }
    Ok(RouteResult {
        label: EmotionLabel(argmax_lowest(&scores) as u8),
        scores,
        codes,
    })
}

/// Router scores at every depth `1..=L` of the bank's stacks: `out[d - 1][i]`
/// is cos(z, e_i) with `d` stages. The bank's own depth is ignored.
pub fn route_scores_by_depth<T: Scalar, S: Scalar>(z: &[S], bank: &RouterBank<T>) -> Result<Vec<Vec<f64>>> {
    if z.len() != bank.dim() {
        return Err(Error::Shape(format!("vector has dimension {}, bank expects {}", z.len(), bank.dim())));
    }
    let n = norm(z);
    if n == 0.0 {
        return Err(Error::Degenerate { row: 0, msg: "zero-norm input to router".into() });
    }
    let scale = if bank.normalize { n } else { 1.0 };
    let input: Vec<T> = z.iter().map(|v| T::narrow(v.widen() / scale)).collect();
    let l = bank.stacks[0].n_stages();
    let mut out = vec![Vec::with_capacity(bank.classes()); l];
    for stack in &bank.stacks {
        let idx = stack.encode_row(&input)?;
        let mut recon = vec![0.0f64; bank.dim()];
        for (d, &i) in idx.iter().enumerate() {
            for (r, c) in recon.iter_mut().zip(stack.stage(d).codeword(i as usize)) {
                *r += c.widen();
            }
            out[d].push(cosine(&input, &recon).unwrap_or(f64::NEG_INFINITY));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Mean-pool frames, then route the pooled vector.
    #[default]
    Pooled,
    /// Route every frame and take the majority label (ties to the lowest id).
    FrameVote,
}

#[derive(Debug, Clone)]
pub struct BatchRouting {
    pub labels: Vec<EmotionLabel>,
    pub report: EvalReport,
}

/// Routes every utterance and scores the result against the manifest labels.
pub fn route_batch<T: Scalar>(
    set: &EmbeddingSet<T>,
    bank: &RouterBank<T>,
    baseline_f1: Option<f64>,
    aggregation: Aggregation,
) -> Result<BatchRouting> {
    if set.n_classes() != bank.classes() {
        return Err(Error::Shape(format!(
            "taxonomy has {} classes, bank has {} stacks",
            set.n_classes(),
            bank.classes()
        )));
    }
    let labels: Vec<EmotionLabel> = match (aggregation, set.level()) {
        (Aggregation::FrameVote, Level::Frame) => (0..set.utterances().len())
            .into_par_iter()
            .map(|u| {
                let first = set.utterances()[u].frames.start;
                let mut votes = vec![0.0f64; bank.classes()];
                for (j, row) in set.utterance_rows(u).chunks_exact(set.dim()).enumerate() {
                    votes[route_row(row, bank, first + j)?.label.index()] += 1.0;
                }
                Ok(EmotionLabel(argmax_lowest(&votes) as u8))
            })
            .collect::<Result<_>>()?,
        _ => {
            let pooled = pool_utterance(set)?;
            pooled
                .vectors()
                .par_chunks(pooled.dim())
                .enumerate()
                .map(|(i, z)| route_row(z, bank, i).map(|r| r.label))
                .collect::<Result<_>>()?
        }
    };
    let truth = set.labels();
    let f1 = macro_f1(&labels, &truth, bank.classes())?;
    let mut report = EvalReport::new();
    report
        .set_config("stages", bank.stacks[0].n_stages())
        .set_config("entries", bank.stacks[0].entries())
        .set_config("depth", bank.depth)
        .set_config("normalize", bank.normalize);
    for (c, v) in f1.per_class.iter().enumerate() {
        report.push(bank.depth, &set.taxonomy().names()[c], "f1", *v);
    }
    report.push(bank.depth, ALL, "macro_f1", f1.macro_f1);
    if let Some(base) = baseline_f1 {
        report.push(bank.depth, ALL, "baseline_macro_f1", base);
        report.push(bank.depth, ALL, "delta_macro_f1", f1.macro_f1 - base);
    }
    Ok(BatchRouting { labels, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Taxonomy;
    use crate::rvq::{Codebook, StackMeta};

    fn one_stage(codewords: Vec<f64>, k: usize, d: usize) -> RvqStack<f64> {
        RvqStack::new(vec![Codebook::new(k, d, codewords).unwrap()], StackMeta::default()).unwrap()
    }

    #[test]
    fn exact_codeword_routes_to_its_stack() {
        let d = 4;
        let stacks = vec![
            one_stage(vec![1.0, 0.0, 0.0, 0.0], 1, d),
            one_stage(vec![0.0, 1.0, 0.0, 0.0], 1, d),
            one_stage(vec![0.0, 0.0, 1.0, 0.0], 1, d),
            one_stage(vec![0.0, 0.0, 0.0, 1.0], 1, d),
        ];
        let bank = RouterBank::new(stacks, 1, false).unwrap();
        let r = route(&[0.0f64, 1.0, 0.0, 0.0], &bank).unwrap();
        assert_eq!(r.label, EmotionLabel(1));
        assert_eq!(r.scores[1], 1.0);
        assert_eq!(r.scores[0], 0.0);
    }

    #[test]
    fn identical_stacks_tie_to_label_zero() {
        let s = one_stage(vec![1.0, 1.0, -1.0, 2.0], 2, 2);
        let bank = RouterBank::new(vec![s.clone(), s.clone(), s.clone(), s], 1, false).unwrap();
        let labels: Vec<EmotionLabel> = (0..4).map(|c| EmotionLabel(c as u8)).collect();
        let set = EmbeddingSet::from_rows(2, vec![0.3, 0.9, -1.0, 1.5, 2.0, 2.0, 0.1, -0.2], &labels, Taxonomy::canonical()).unwrap();
        let out = route_batch(&set, &bank, Some(0.5), Aggregation::Pooled).unwrap();
        assert!(out.labels.iter().all(|l| *l == EmotionLabel(0)));
        let f1 = out.report.get(1, ALL, "macro_f1").unwrap();
        assert!((out.report.get(1, ALL, "delta_macro_f1").unwrap() - (f1 - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        let s = one_stage(vec![0.0, 0.0], 1, 2);
        let bank = RouterBank::new(vec![s], 1, false).unwrap();
        assert!(matches!(route(&[0.0f64, 0.0], &bank), Err(Error::Degenerate { .. })));
        assert!(matches!(route(&[1.0f64, 0.0], &bank), Err(Error::Degenerate { .. })));
        assert!(RouterBank::new(vec![one_stage(vec![1.0], 1, 1)], 2, false).is_err());
    }

    #[test]
    fn normalized_routing_is_scale_invariant() {
        let stacks = vec![
            one_stage(vec![0.6, 0.8, 1.0, 0.0], 2, 2),
            one_stage(vec![-0.6, 0.8, 0.0, -1.0], 2, 2),
        ];
        let bank = RouterBank::new(stacks, 1, true).unwrap();
        for z in [[0.5f64, 0.7], [-1.0, 0.1], [0.2, -3.0]] {
            let base = route(&z, &bank).unwrap();
            for a in [0.1, 10.0, 1e4] {
                let scaled: Vec<f64> = z.iter().map(|v| v * a).collect();
                assert_eq!(route(&scaled, &bank).unwrap().label, base.label);
            }
        }
    }

    #[test]
    fn frame_votes_use_lowest_id_on_ties() {
        let stacks = vec![one_stage(vec![1.0, 0.0], 1, 2), one_stage(vec![0.0, 1.0], 1, 2)];
        let bank = RouterBank::new(stacks, 1, false).unwrap();
        let tax = Taxonomy::new(&["a", "b"]).unwrap();
        let utts = vec![crate::data::Utterance {
            uid: "x".into(),
            label: EmotionLabel(1),
            soft: None,
            frames: 0..2,
            corpus: "t".into(),
        }];
        let set = EmbeddingSet::new(2, vec![0.0f64, 1.0, 1.0, 0.0], utts, Level::Frame, tax).unwrap();
        let out = route_batch(&set, &bank, None, Aggregation::FrameVote).unwrap();
        assert_eq!(out.labels, vec![EmotionLabel(0)]);
    }
}
