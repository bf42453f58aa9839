//! Evaluation metrics: reconstruction fidelity, recall, codebook entropy,
//! soft-distribution divergence, top-2 agreement and macro-F1.

use crate::data::{argmax_lowest, EmbeddingSet, EmotionLabel};
use crate::error::{Error, Result};
use crate::rvq::CodeSequence;
use crate::scalar::{cosine, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct CosineFidelity {
    pub per_row: Vec<f64>,
    pub mean: f64,
}

/// Row-wise cos(z, z_hat) between aligned sets.
pub fn cosine_fidelity<A: Scalar, B: Scalar>(orig: &EmbeddingSet<A>, recon: &EmbeddingSet<B>) -> Result<CosineFidelity> {
    if orig.dim() != recon.dim() || orig.n_rows() != recon.n_rows() {
        return Err(Error::Shape(format!(
            "cannot align {}x{} with {}x{}",
            orig.n_rows(),
            orig.dim(),
            recon.n_rows(),
            recon.dim()
        )));
    }
    if orig.n_rows() == 0 {
        return Err(Error::EmptyInput("cosine fidelity over zero rows".into()));
    }
    let mut per_row = Vec::with_capacity(orig.n_rows());
    for (i, (a, b)) in orig.rows().zip(recon.rows()).enumerate() {
        let c = cosine(a, b).ok_or_else(|| Error::Degenerate {
            row: i,
            msg: "zero-norm vector in cosine fidelity".into(),
        })?;
        per_row.push(c);
    }
    let mean = per_row.iter().sum::<f64>() / per_row.len() as f64;
    Ok(CosineFidelity { per_row, mean })
}

fn check_aligned(pred: &[EmotionLabel], truth: &[EmotionLabel], classes: usize) -> Result<()> {
    if truth.is_empty() {
        return Err(Error::EmptyInput("no labels to score".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if let Some(bad) = pred.iter().chain(truth).find(|l| l.index() >= classes) {
        return Err(Error::Shape(format!("label id {} outside {classes} classes", bad.0)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    /// `None` where the class never occurs in the ground truth.
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes with a defined recall.
    pub macro_recall: f64,
    pub undefined: Vec<EmotionLabel>,
}

pub fn primary_recall(pred: &[EmotionLabel], truth: &[EmotionLabel], classes: usize) -> Result<RecallReport> {
    check_aligned(pred, truth, classes)?;
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    for (p, t) in pred.iter().zip(truth) {
        totals[t.index()] += 1;
        if p == t {
            hits[t.index()] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
        .collect();
    let undefined = per_class
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_none())
        .map(|(c, _)| EmotionLabel(c as u8))
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_recall = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(RecallReport { per_class, macro_recall, undefined })
}

/// Shannon entropy of `counts` divided by ln K, with K = `counts.len()`.
pub fn normalized_entropy(counts: &[usize]) -> f64 {
    let k = counts.len();
    let total: usize = counts.iter().sum();
    if k <= 1 || total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    h / (k as f64).ln()
}

/// Normalized usage entropy of stage `stage` (0-based).
pub fn codebook_entropy(codes: &CodeSequence, stage: usize) -> Result<f64> {
    if stage >= codes.n_stages() {
        return Err(Error::DepthOutOfRange { depth: stage + 1, max: codes.n_stages() });
    }
    if codes.n_rows() == 0 {
        return Err(Error::EmptyInput("no codes emitted".into()));
    }
    let mut counts = vec![0usize; codes.entries()];
    for i in codes.stage_column(stage) {
        counts[i as usize] += 1;
    }
    Ok(normalized_entropy(&counts))
}

fn check_distribution(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Normalization { sum });
    }
    Ok(())
}

/// Jensen-Shannon divergence in bits, in [0, 1].
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("supports of size {} and {}", p.len(), q.len())));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        let term = |x: f64| if x > 0.0 { x * (x / m).log2() } else { 0.0 };
        acc += term(a) + term(b);
    }
    Ok((0.5 * acc).clamp(0.0, 1.0))
}

/// The two most probable classes as an ascending pair; rank ties go to the lowest id.
pub fn top2_set(p: &[f64]) -> [usize; 2] {
    let first = argmax_lowest(p);
    let mut second = usize::MAX;
    for (i, &v) in p.iter().enumerate() {
        if i != first && (second == usize::MAX || v > p[second]) {
            second = i;
        }
    }
    [first.min(second), first.max(second)]
}

pub fn top2_set_accuracy(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} references", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("no distributions to score".into()));
    }
    let mut hits = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if p.len() < 2 || t.len() < 2 {
            return Err(Error::Precondition("top-2 agreement needs at least two classes".into()));
        }
        if p.len() != t.len() {
            return Err(Error::Shape("prediction and reference supports differ".into()));
        }
        if top2_set(p) == top2_set(t) {
            hits += 1;
        }
    }
    Ok(hits as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Report {
    pub per_class: Vec<f64>,
    /// Classes with neither predictions nor true instances (scored 0).
    pub flagged: Vec<EmotionLabel>,
    pub macro_f1: f64,
}

pub fn macro_f1(pred: &[EmotionLabel], truth: &[EmotionLabel], classes: usize) -> Result<F1Report> {
    check_aligned(pred, truth, classes)?;
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fnn = vec![0usize; classes];
    for (p, t) in pred.iter().zip(truth) {
        if p == t {
            tp[t.index()] += 1;
        } else {
            fp[p.index()] += 1;
            fnn[t.index()] += 1;
        }
    }
    let mut flagged = Vec::new();
    let per_class: Vec<f64> = (0..classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fnn[c];
            if tp[c] + fp[c] == 0 && tp[c] + fnn[c] == 0 {
                flagged.push(EmotionLabel(c as u8));
            }
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect();
    let macro_f1 = per_class.iter().sum::<f64>() / classes as f64;
    Ok(F1Report { per_class, flagged, macro_f1 })
}
