//! Core domain types: emotion taxonomy, labels, embedding sets and their
//! utterance manifest.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Canonical four-way emotion taxonomy, in label-id order.
pub const CANONICAL_EMOTIONS: [&str; 4] = ["angry", "happy", "neutral", "sad"];

/// Ordered, case-normalized set of emotion names. Position is the label id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    names: Vec<String>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::canonical()
    }
}

impl Taxonomy {
    pub fn canonical() -> Self {
        Self {
            names: CANONICAL_EMOTIONS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("taxonomy must name at least one class".into()));
        }
        if names.len() > u8::MAX as usize {
            return Err(Error::Config(format!(
                "taxonomy has {} classes, at most 255 supported",
                names.len()
            )));
        }
        let mut out: Vec<String> = Vec::with_capacity(names.len());
        for n in names {
            let n = n.as_ref().trim().to_lowercase();
            if n.is_empty() {
                return Err(Error::Config("empty emotion name".into()));
            }
            if out.contains(&n) {
                return Err(Error::Config(format!("duplicate emotion name '{n}'")));
            }
            out.push(n);
        }
        Ok(Self { names: out })
    }

    /// Canonical names for `c == 4`, otherwise `class0 .. class{c-1}`.
    pub fn with_classes(c: usize) -> Result<Self> {
        if c == CANONICAL_EMOTIONS.len() {
            return Ok(Self::canonical());
        }
        let names: Vec<String> = (0..c).map(|i| format!("class{i}")).collect();
        Self::new(&names)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, label: EmotionLabel) -> &str {
        &self.names[label.index()]
    }

    pub fn label(&self, name: &str) -> Result<EmotionLabel> {
        let key = name.trim().to_lowercase();
        self.names
            .iter()
            .position(|n| *n == key)
            .map(|i| EmotionLabel(i as u8))
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    pub fn labels(&self) -> impl Iterator<Item = EmotionLabel> {
        (0..self.names.len()).map(|i| EmotionLabel(i as u8))
    }
}

/// Emotion class id, an index into a [`Taxonomy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EmotionLabel(pub u8);

impl EmotionLabel {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Normalized emotion distribution, typically derived from annotator votes.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel {
    probs: Vec<f64>,
}

/// Divide by the total unless it is already 1 to within a few ulps.
/// Idempotent: the output of one call is returned unchanged by the next.
pub fn renormalize(raw: &[f64]) -> Result<Vec<f64>> {
    for &v in raw {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Precondition(format!(
                "soft label entries must be finite and non-negative, got {v}"
            )));
        }
    }
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Normalization { sum });
    }
    if (sum - 1.0).abs() <= 1e-12 {
        return Ok(raw.to_vec());
    }
    Ok(raw.iter().map(|v| v / sum).collect())
}

impl SoftLabel {
    /// Accepts raw vote counts or probabilities and renormalizes.
    pub fn from_votes(raw: &[f64]) -> Result<Self> {
        Ok(Self {
            probs: renormalize(raw)?,
        })
    }

    /// Accepts an already-normalized distribution; fails if the sum is off by more than `tol`.
    pub fn from_probs(probs: &[f64], tol: f64) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > tol {
            return Err(Error::Normalization { sum });
        }
        Ok(Self {
            probs: probs.to_vec(),
        })
    }

    pub fn one_hot(c: usize, label: EmotionLabel) -> Self {
        let mut probs = vec![0.0; c];
        probs[label.index()] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Highest-probability class; ties go to the lowest id.
    pub fn argmax(&self) -> EmotionLabel {
        EmotionLabel(argmax_lowest(&self.probs) as u8)
    }

    pub fn max(&self) -> f64 {
        self.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn stratum(&self) -> AmbiguityStratum {
        AmbiguityStratum::of(self)
    }
}

/// Index of the maximum; ties resolved to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AmbiguityStratum {
    /// Dominant emotion holds a strict majority of the votes.
    Low,
    High,
}

impl AmbiguityStratum {
    pub fn of(soft: &SoftLabel) -> Self {
        if soft.max() > 0.5 {
            AmbiguityStratum::Low
        } else {
            AmbiguityStratum::High
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AmbiguityStratum::Low => "low",
            AmbiguityStratum::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub uid: String,
    pub label: EmotionLabel,
    pub soft: Option<SoftLabel>,
    /// Half-open row range into the owning set's vector matrix.
    pub frames: Range<usize>,
    pub corpus: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Frame,
    Utterance,
}

/// N x D matrix of embedding rows plus the utterance manifest indexing it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<T> {
    dim: usize,
    vectors: Vec<T>,
    utterances: Vec<Utterance>,
    level: Level,
    taxonomy: Taxonomy,
}

impl<T: Scalar> EmbeddingSet<T> {
    pub fn new(
        dim: usize,
        vectors: Vec<T>,
        utterances: Vec<Utterance>,
        level: Level,
        taxonomy: Taxonomy,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("embedding dimension must be positive".into()));
        }
        if !vectors.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values is not a multiple of dimension {dim}",
                vectors.len()
            )));
        }
        let n_rows = vectors.len() / dim;
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        validate_manifest(&utterances, n_rows, &taxonomy)?;
        if level == Level::Utterance {
            if let Some(u) = utterances.iter().find(|u| u.frames.len() != 1) {
                return Err(Error::MalformedManifest(format!(
                    "utterance-level set has utterance '{}' spanning {} rows",
                    u.uid,
                    u.frames.len()
                )));
            }
        }
        Ok(Self {
            dim,
            vectors,
            utterances,
            level,
            taxonomy,
        })
    }

    /// Builds an utterance-level set with one row per utterance.
    pub fn from_rows(
        dim: usize,
        vectors: Vec<T>,
        labels: &[EmotionLabel],
        taxonomy: Taxonomy,
    ) -> Result<Self> {
        let utterances = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| Utterance {
                uid: format!("u{i:06}"),
                label,
                soft: None,
                frames: i..i + 1,
                corpus: "default".into(),
            })
            .collect();
        Self::new(dim, vectors, utterances, Level::Utterance, taxonomy)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn n_classes(&self) -> usize {
        self.taxonomy.len()
    }

    pub fn vectors(&self) -> &[T] {
        &self.vectors
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, T> {
        self.vectors.chunks_exact(self.dim)
    }

    /// Rows belonging to utterance `u`.
    pub fn utterance_rows(&self, u: usize) -> &[T] {
        let r = &self.utterances[u].frames;
        &self.vectors[r.start * self.dim..r.end * self.dim]
    }

    pub fn labels(&self) -> Vec<EmotionLabel> {
        self.utterances.iter().map(|u| u.label).collect()
    }

    /// Same manifest, new vectors of identical shape (e.g. reconstructions).
    pub fn with_vectors(&self, vectors: Vec<T>) -> Result<Self> {
        if vectors.len() != self.vectors.len() {
            return Err(Error::Shape(format!(
                "replacement has {} values, expected {}",
                vectors.len(),
                self.vectors.len()
            )));
        }
        Self::new(
            self.dim,
            vectors,
            self.utterances.clone(),
            self.level,
            self.taxonomy.clone(),
        )
    }

    /// Copies the selected utterances (and their rows) into a compact new set.
    pub fn subset(&self, utterance_ids: &[usize]) -> Self {
        let mut vectors = Vec::new();
        let mut utterances = Vec::with_capacity(utterance_ids.len());
        let mut cursor = 0;
        for &u in utterance_ids {
            let utt = &self.utterances[u];
            vectors.extend_from_slice(self.utterance_rows(u));
            let len = utt.frames.len();
            utterances.push(Utterance {
                frames: cursor..cursor + len,
                ..utt.clone()
            });
            cursor += len;
        }
        Self {
            dim: self.dim,
            vectors,
            utterances,
            level: self.level,
            taxonomy: self.taxonomy.clone(),
        }
    }

    /// Utterance indices grouped by hard label, in manifest order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_classes()];
        for (i, u) in self.utterances.iter().enumerate() {
            out[u.label.index()].push(i);
        }
        out
    }

    /// Rows scaled to unit L2 norm (computed in 64-bit). Zero rows are rejected.
    pub fn l2_normalized(&self) -> Result<Self> {
        let mut out = Vec::with_capacity(self.vectors.len());
        for (i, row) in self.rows().enumerate() {
            let n = crate::scalar::norm(row);
            if n == 0.0 {
                return Err(Error::Degenerate {
                    row: i,
                    msg: "zero-norm vector cannot be normalized".into(),
                });
            }
            out.extend(row.iter().map(|v| T::narrow(v.widen() / n)));
        }
        self.with_vectors(out)
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingSet<U> {
        EmbeddingSet {
            dim: self.dim,
            vectors: self.vectors.iter().map(|v| U::narrow(v.widen())).collect(),
            utterances: self.utterances.clone(),
            level: self.level,
            taxonomy: self.taxonomy.clone(),
        }
    }
}

fn validate_manifest(utterances: &[Utterance], n_rows: usize, taxonomy: &Taxonomy) -> Result<()> {
    let c = taxonomy.len();
    let mut spans: Vec<(usize, usize, usize)> = Vec::with_capacity(utterances.len());
    for (i, u) in utterances.iter().enumerate() {
        if u.frames.start >= u.frames.end {
            return Err(Error::MalformedManifest(format!(
                "utterance '{}' has empty frame range {:?}",
                u.uid, u.frames
            )));
        }
        if u.frames.end > n_rows {
            return Err(Error::MalformedManifest(format!(
                "utterance '{}' frame range {:?} exceeds {n_rows} rows",
                u.uid, u.frames
            )));
        }
        if u.label.index() >= c {
            return Err(Error::MalformedManifest(format!(
                "utterance '{}' label id {} outside taxonomy of {c}",
                u.uid, u.label.0
            )));
        }
        if let Some(s) = &u.soft {
            if s.len() != c {
                return Err(Error::MalformedManifest(format!(
                    "utterance '{}' soft label has {} entries, expected {c}",
                    u.uid,
                    s.len()
                )));
            }
        }
        spans.push((u.frames.start, u.frames.end, i));
    }
    spans.sort_unstable();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::MalformedManifest(format!(
                "utterances '{}' and '{}' overlap",
                utterances[w[0].2].uid, utterances[w[1].2].uid
            )));
        }
    }
    Ok(())
}

/// Mean-pools every utterance's frames into one row (64-bit accumulation).
///
/// An utterance-level set is returned unchanged.
pub fn pool_utterance<T: Scalar>(set: &EmbeddingSet<T>) -> Result<EmbeddingSet<T>> {
    if set.level == Level::Utterance {
        return Ok(set.clone());
    }
    let d = set.dim;
    let mut vectors = Vec::with_capacity(set.utterances.len() * d);
    let mut acc = vec![0.0f64; d];
    let mut utterances = Vec::with_capacity(set.utterances.len());
    for (i, u) in set.utterances.iter().enumerate() {
        if u.frames.is_empty() {
            return Err(Error::MalformedManifest(format!(
                "utterance '{}' has no frames",
                u.uid
            )));
        }
        acc.iter_mut().for_each(|a| *a = 0.0);
        for row in set.utterance_rows(i).chunks_exact(d) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v.widen();
            }
        }
        let n = u.frames.len() as f64;
        vectors.extend(acc.iter().map(|a| T::narrow(a / n)));
        utterances.push(Utterance {
            frames: i..i + 1,
            ..u.clone()
        });
    }
    EmbeddingSet::new(d, vectors, utterances, Level::Utterance, set.taxonomy.clone())
}

/// Utterance indices split by ambiguity stratum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratumIndices {
    pub low: Vec<usize>,
    pub high: Vec<usize>,
}

pub fn stratify_indices<T: Scalar>(set: &EmbeddingSet<T>) -> Result<StratumIndices> {
    let missing: Vec<String> = set
        .utterances
        .iter()
        .filter(|u| u.soft.is_none())
        .map(|u| u.uid.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingSoftLabels(missing));
    }
    let mut out = StratumIndices {
        low: Vec::new(),
        high: Vec::new(),
    };
    for (i, u) in set.utterances.iter().enumerate() {
        match u.soft.as_ref().map(AmbiguityStratum::of) {
            Some(AmbiguityStratum::Low) => out.low.push(i),
            _ => out.high.push(i),
        }
    }
    Ok(out)
}

/// Partitions a soft-labelled set into (low-ambiguity, high-ambiguity) subsets.
pub fn stratify<T: Scalar>(set: &EmbeddingSet<T>) -> Result<(EmbeddingSet<T>, EmbeddingSet<T>)> {
    let idx = stratify_indices(set)?;
    Ok((set.subset(&idx.low), set.subset(&idx.high)))
}
