//! Dense matrices, vector helpers, seeded random streams and the small
//! differentiable-layer toolkit used by the encoders and contrastive heads.

mod diff;
mod mat;
mod optim;
mod rng;

pub use diff::{
    gelu, gelu_grad, grad_check, DiffOp, Dropout, GradCheckReport, LayerNorm, LayerNormCache,
    Linear, Mode, Param, Relu,
};
pub use mat::Mat;
pub use optim::{AdamW, AdamWConfig};
pub use rng::Rng;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Result, UmcError};

/// Scalar type for matrices and layers: `f32` for training, `f64` for checks.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Scale `v` to unit Euclidean norm.
pub fn l2_normalize<T: Real>(v: &[T]) -> Result<Vec<T>> {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if norm <= T::zero() || !norm.is_finite() {
        return Err(UmcError::NormZero);
    }
    Ok(v.iter().map(|&x| x / norm).collect())
}

pub fn euclidean<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(UmcError::DimMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(squared_distance(a, b).sqrt())
}

/// Squared Euclidean distance; callers guarantee equal lengths.
#[inline]
pub fn squared_distance<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Numerically stable log-sum-exp over the entries selected by `keep`.
pub fn log_sum_exp<T: Real>(xs: &[T], keep: impl Fn(usize) -> bool) -> T {
    let mut max = T::neg_infinity();
    for (i, &x) in xs.iter().enumerate() {
        if keep(i) && x > max {
            max = x;
        }
    }
    if max == T::neg_infinity() {
        return max;
    }
    let mut s = T::zero();
    for (i, &x) in xs.iter().enumerate() {
        if keep(i) {
            s += (x - max).exp();
        }
    }
    max + s.ln()
}

/// In-place row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(m: &mut Mat<T>) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            s += *x;
        }
        for x in row.iter_mut() {
            *x /= s;
        }
    }
}
