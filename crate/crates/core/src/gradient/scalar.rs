use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Numeric type the performance model is written against.
///
/// Implemented by plain `f64` (fast evaluation of rounded mappings) and by
/// [`Var`](super::Var) (reverse-mode differentiation on a tape). Only the
/// primitives listed here can appear in an objective, so an objective using
/// anything else does not compile.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant(value: f64) -> Self;
    fn value(&self) -> f64;

    /// Larger of the two; the first argument wins ties.
    fn max(self, other: Self) -> Self;
    /// Smaller of the two; the first argument wins ties.
    fn min(self, other: Self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powf(self, exponent: f64) -> Self;

    /// `self > threshold`, recorded as a branch decision when on a tape.
    fn exceeds(&self, threshold: f64) -> bool;

    fn sqrt(self) -> Self {
        self.powf(0.5)
    }

    fn recip(self) -> Self {
        Self::constant(1.0) / self
    }

    fn max_const(self, c: f64) -> Self {
        self.max(Self::constant(c))
    }

    fn min_const(self, c: f64) -> Self {
        self.min(Self::constant(c))
    }
}

impl Scalar for f64 {
    fn constant(value: f64) -> Self {
        value
    }
    fn value(&self) -> f64 {
        *self
    }
    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }
    fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn powf(self, exponent: f64) -> Self {
        f64::powf(self, exponent)
    }
    fn exceeds(&self, threshold: f64) -> bool {
        *self > threshold
    }
}

/// Sum of a slice; `0` for an empty slice.
pub fn sum<S: Scalar>(xs: &[S]) -> S {
    let mut it = xs.iter().copied();
    match it.next() {
        Some(first) => it.fold(first, |acc, x| acc + x),
        None => S::constant(0.0),
    }
}

/// Product of a slice; `1` for an empty slice.
pub fn product<S: Scalar>(xs: &[S]) -> S {
    let mut it = xs.iter().copied();
    match it.next() {
        Some(first) => it.fold(first, |acc, x| acc * x),
        None => S::constant(1.0),
    }
}

/// Softmax over `logits`.
///
/// The stabilising shift is taken as a constant: softmax is invariant to it,
/// so the gradient is unaffected and no extra branch decisions are recorded.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let shift = logits
        .iter()
        .map(|l| l.value())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<S> = logits.iter().map(|&l| (l - shift).exp()).collect();
    let total = sum(&exps);
    exps.into_iter().map(|e| e / total).collect()
}
