//! Residual vector quantization: greedy stage-wise encoding, prefix
//! reconstruction and bitrate accounting.
//!
//! Stage `l` quantizes the residual left by stages `1..l`; the reconstruction
//! at depth `d` is the sum of the chosen codewords of the first `d` stages.
//! Residuals and partial sums are carried in 64-bit.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::data::{EmbeddingSet, EmotionLabel};
use crate::error::{Error, Result};
use crate::scalar::{sq_dist, Scalar};
use crate::trainer::RegimeKind;

/// K codewords of dimension D, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<T> {
    entries: usize,
    dim: usize,
    codewords: Vec<T>,
}

impl<T: Scalar> Codebook<T> {
    pub fn new(entries: usize, dim: usize, codewords: Vec<T>) -> Result<Self> {
        if entries == 0 || dim == 0 {
            return Err(Error::Shape("codebook needs K >= 1 and D >= 1".into()));
        }
        if codewords.len() != entries * dim {
            return Err(Error::Shape(format!(
                "codebook payload has {} values, expected {entries}x{dim}",
                codewords.len()
            )));
        }
        if let Some(pos) = codewords.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self {
            entries,
            dim,
            codewords,
        })
    }

    pub fn entries(&self) -> usize {
        self.entries
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn codewords(&self) -> &[T] {
        &self.codewords
    }

    pub fn codeword(&self, k: usize) -> &[T] {
        &self.codewords[k * self.dim..(k + 1) * self.dim]
    }

    /// Nearest codeword by squared Euclidean distance; ties go to the lowest index.
    pub fn nearest<S: Scalar>(&self, x: &[S]) -> (usize, f64) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for k in 0..self.entries {
            let d = sq_dist(x, self.codeword(k));
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        (best, best_d)
    }
}

/// Training provenance stored alongside a stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackMeta {
    pub regime: RegimeKind,
    pub target: Option<EmotionLabel>,
    pub bias_percent: Option<u8>,
    pub seed: u64,
}

impl Default for StackMeta {
    fn default() -> Self {
        Self {
            regime: RegimeKind::Balanced,
            target: None,
            bias_percent: None,
            seed: 0,
        }
    }
}

/// An ordered cascade of L codebooks sharing K and D.
#[derive(Debug, Clone, PartialEq)]
pub struct RvqStack<T> {
    stages: Vec<Codebook<T>>,
    meta: StackMeta,
}

impl<T: Scalar> RvqStack<T> {
    pub fn new(stages: Vec<Codebook<T>>, meta: StackMeta) -> Result<Self> {
        let first = stages
            .first()
            .ok_or_else(|| Error::Shape("stack needs at least one stage".into()))?;
        let (k, d) = (first.entries, first.dim);
        if let Some((l, _)) = stages
            .iter()
            .enumerate()
            .find(|(_, s)| s.entries != k || s.dim != d)
        {
            return Err(Error::Shape(format!(
                "stage {} disagrees with stage 1 on K or D",
                l + 1
            )));
        }
        Ok(Self { stages, meta })
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn entries(&self) -> usize {
        self.stages[0].entries
    }

    pub fn dim(&self) -> usize {
        self.stages[0].dim
    }

    pub fn stages(&self) -> &[Codebook<T>] {
        &self.stages
    }

    pub fn stage(&self, l: usize) -> &Codebook<T> {
        &self.stages[l]
    }

    pub fn meta(&self) -> &StackMeta {
        &self.meta
    }

    /// L * K * D float32 values.
    pub fn payload_bytes(&self) -> u64 {
        (self.n_stages() * self.entries() * self.dim() * 4) as u64
    }

    /// Content fingerprint used to tie code sequences to their stack.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.n_stages() as u64).to_le_bytes());
        h.update((self.entries() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        for s in &self.stages {
            for v in &s.codewords {
                h.update(v.widen().to_bits().to_le_bytes());
            }
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
    }

    fn check_depth(&self, depth: usize) -> Result<()> {
        if depth == 0 || depth > self.n_stages() {
            return Err(Error::DepthOutOfRange {
                depth,
                max: self.n_stages(),
            });
        }
        Ok(())
    }

    /// Greedy residual encoding of one vector through the first `depth` stages.
    /// Writes `depth` indices into `out` and returns the final residual.
    pub fn encode_row_into<S: Scalar>(&self, z: &[S], depth: usize, out: &mut [u32]) -> Vec<f64> {
        let mut residual: Vec<f64> = z.iter().map(|v| v.widen()).collect();
        for (l, slot) in out.iter_mut().enumerate().take(depth) {
            let cb = &self.stages[l];
            let (k, _) = cb.nearest(&residual);
            for (r, c) in residual.iter_mut().zip(cb.codeword(k)) {
                *r -= c.widen();
            }
            *slot = k as u32;
        }
        residual
    }

    /// Stage indices for `z` at full depth.
    pub fn encode_row<S: Scalar>(&self, z: &[S]) -> Result<Vec<u32>> {
        if z.len() != self.dim() {
            return Err(Error::Shape(format!(
                "vector has dimension {}, stack expects {}",
                z.len(),
                self.dim()
            )));
        }
        let mut idx = vec![0u32; self.n_stages()];
        self.encode_row_into(z, self.n_stages(), &mut idx);
        Ok(idx)
    }

    /// 64-bit partial sum of the selected codewords over stages `1..=depth`.
    pub fn reconstruct_row_f64(&self, indices: &[u32], depth: usize) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.dim()];
        for (l, &k) in indices.iter().enumerate().take(depth) {
            for (a, c) in acc.iter_mut().zip(self.stages[l].codeword(k as usize)) {
                *a += c.widen();
            }
        }
        acc
    }
}

/// Discrete tokens: N rows of L stage indices, all below K.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSequence {
    n_rows: usize,
    n_stages: usize,
    entries: usize,
    indices: Vec<u32>,
    stack_id: Option<u64>,
}

impl CodeSequence {
    pub fn new(n_stages: usize, entries: usize, indices: Vec<u32>) -> Result<Self> {
        if n_stages == 0 || entries == 0 {
            return Err(Error::Shape("code sequence needs L >= 1 and K >= 1".into()));
        }
        if !indices.len().is_multiple_of(n_stages) {
            return Err(Error::Shape(format!(
                "{} indices is not a multiple of {n_stages} stages",
                indices.len()
            )));
        }
        if let Some(bad) = indices.iter().find(|&&i| i as usize >= entries) {
            return Err(Error::Shape(format!("index {bad} not below K = {entries}")));
        }
        Ok(Self {
            n_rows: indices.len() / n_stages,
            n_stages,
            entries,
            indices,
            stack_id: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_stages(&self) -> usize {
        self.n_stages
    }

    pub fn entries(&self) -> usize {
        self.entries
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn stack_id(&self) -> Option<u64> {
        self.stack_id
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[i * self.n_stages..(i + 1) * self.n_stages]
    }

    /// Indices emitted by stage `l` (0-based) across all rows.
    pub fn stage_column(&self, l: usize) -> impl Iterator<Item = u32> + '_ {
        self.indices.chunks_exact(self.n_stages).map(move |r| r[l])
    }

    /// Keeps only the first `depth` stages.
    pub fn truncated(&self, depth: usize) -> Result<Self> {
        if depth == 0 || depth > self.n_stages {
            return Err(Error::DepthOutOfRange {
                depth,
                max: self.n_stages,
            });
        }
        let indices = self
            .indices
            .chunks_exact(self.n_stages)
            .flat_map(|r| r[..depth].iter().copied())
            .collect();
        Ok(Self {
            n_rows: self.n_rows,
            n_stages: depth,
            entries: self.entries,
            indices,
            stack_id: self.stack_id,
        })
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let indices = rows.iter().flat_map(|&r| self.row(r).iter().copied()).collect();
        Self {
            n_rows: rows.len(),
            n_stages: self.n_stages,
            entries: self.entries,
            indices,
            stack_id: self.stack_id,
        }
    }
}

/// Encodes every row of `set` through all stages of `stack`.
pub fn encode<T: Scalar, S: Scalar>(set: &EmbeddingSet<S>, stack: &RvqStack<T>) -> Result<CodeSequence> {
    if set.dim() != stack.dim() {
        return Err(Error::Shape(format!(
            "embeddings have dimension {}, stack expects {}",
            set.dim(),
            stack.dim()
        )));
    }
    let l = stack.n_stages();
    let mut indices = vec![0u32; set.n_rows() * l];
    indices
        .par_chunks_mut(l)
        .zip(set.vectors().par_chunks(set.dim()))
        .for_each(|(out, z)| {
            stack.encode_row_into(z, l, out);
        });
    let mut codes = CodeSequence::new(l, stack.entries(), indices)?;
    codes.stack_id = Some(stack.fingerprint());
    Ok(codes)
}

/// Reconstructed vectors (row-major) at the given depth.
pub fn reconstruct_rows<T: Scalar>(codes: &CodeSequence, stack: &RvqStack<T>, depth: usize) -> Result<Vec<T>> {
    stack.check_depth(depth)?;
    if depth > codes.n_stages() {
        return Err(Error::DepthOutOfRange {
            depth,
            max: codes.n_stages(),
        });
    }
    if codes.entries() != stack.entries() {
        return Err(Error::Shape(format!(
            "codes use K = {}, stack has K = {}",
            codes.entries(),
            stack.entries()
        )));
    }
    let d = stack.dim();
    let mut out = vec![T::zero(); codes.n_rows() * d];
    out.par_chunks_mut(d).enumerate().for_each(|(i, dst)| {
        let acc = stack.reconstruct_row_f64(codes.row(i), depth);
        for (o, a) in dst.iter_mut().zip(acc) {
            *o = T::narrow(a);
        }
    });
    Ok(out)
}

/// Reconstruction at `depth`, carrying the manifest of `like` through unchanged.
pub fn reconstruct<T: Scalar>(
    codes: &CodeSequence,
    stack: &RvqStack<T>,
    depth: usize,
    like: &EmbeddingSet<T>,
) -> Result<EmbeddingSet<T>> {
    if codes.n_rows() != like.n_rows() {
        return Err(Error::Shape(format!(
            "{} code rows for {} embedding rows",
            codes.n_rows(),
            like.n_rows()
        )));
    }
    like.with_vectors(reconstruct_rows(codes, stack, depth)?)
}

/// ceil(log2 K); 0 for K = 1.
pub fn bits_per_index(entries: usize) -> u32 {
    if entries <= 1 {
        0
    } else {
        usize::BITS - (entries - 1).leading_zeros()
    }
}

/// depth * ceil(log2 K) * frame rate, in bits per second.
pub fn nominal_bitrate_for(entries: usize, depth: usize, frame_rate_hz: f64) -> Result<f64> {
    if !frame_rate_hz.is_finite() || frame_rate_hz <= 0.0 {
        return Err(Error::Config(format!("frame rate must be positive, got {frame_rate_hz}")));
    }
    if depth == 0 {
        return Err(Error::DepthOutOfRange { depth, max: usize::MAX });
    }
    Ok(depth as f64 * bits_per_index(entries) as f64 * frame_rate_hz)
}

pub fn nominal_bitrate<T: Scalar>(stack: &RvqStack<T>, depth: usize, frame_rate_hz: f64) -> Result<f64> {
    stack.check_depth(depth)?;
    nominal_bitrate_for(stack.entries(), depth, frame_rate_hz)
}

/// Bitrate of transmitting raw `dim`-dimensional vectors of `bits`-bit floats.
pub fn continuous_bitrate(dim: usize, bits: u32, frame_rate_hz: f64) -> f64 {
    dim as f64 * bits as f64 * frame_rate_hz
}
