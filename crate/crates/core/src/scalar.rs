//! Scalar abstraction shared by every numeric container in the crate.
//!
//! Storage may be `f32` or `f64`; every reduction (distances, sums, norms,
//! softmax) is carried out in `f64` regardless of the storage type so that
//! metrics are bit-stable across platforms and storage choices.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point storage type for embeddings, codewords and probe weights.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless widening (f32 -> f64 is exact).
    fn widen(self) -> f64;
    /// Narrowing with round-to-nearest.
    fn narrow(v: f64) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }
    #[inline]
    fn narrow(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn widen(self) -> f64 {
        self
    }
    #[inline]
    fn narrow(v: f64) -> Self {
        v
    }
}

/// Squared Euclidean distance with 64-bit accumulation in index order.
#[inline]
pub fn sq_dist<A: Scalar, B: Scalar>(a: &[A], b: &[B]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = x.widen() - y.widen();
        acc += d * d;
    }
    acc
}

#[inline]
pub fn dot<A: Scalar, B: Scalar>(a: &[A], b: &[B]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.widen() * y.widen()).sum()
}

#[inline]
pub fn norm<A: Scalar>(a: &[A]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine<A: Scalar, B: Scalar>(a: &[A], b: &[B]) -> Option<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}
