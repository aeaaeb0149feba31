//! Dense tensors and tape-based reverse-mode differentiation.
//!
//! Everything is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checking). A [`Tape`] records operations on [`Var`] handles;
//! parameters are borrowed from a [`ParamSet`] and receive gradients by name.

mod check;
mod optim;
mod rnn;
mod tape;
mod tensor;

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

pub use check::{grad_check, GradCheckReport};
pub use optim::{AdamW, AdamWConfig};
pub use rnn::{birnn_encode, gru_cell, BiRnnOutput, GruNames};
pub use tape::{Gradients, ParamSet, Tape, Var};
pub use tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;

pub trait Scalar: Float + FromPrimitive + Sum + Default + fmt::Debug + fmt::Display + Send + Sync + 'static {
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }
}

// The strides passed in always describe the full slices, so every element
// the kernels touch is inside `a`, `b` and `c`.
impl Scalar for f32 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
        rsc: isize,
        csc: isize,
    ) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            )
        }
    }
}

impl Scalar for f64 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
        rsc: isize,
        csc: isize,
    ) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            )
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("shape mismatch in {op}: {left:?} vs {right:?}")]
pub struct ShapeError {
    pub op: &'static str,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

impl ShapeError {
    pub fn new(op: &'static str, left: Vec<usize>, right: Vec<usize>) -> Self {
        ShapeError { op, left, right }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum NumericError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
}

/// Numerically stable softmax of one vector.
pub fn softmax<T: Scalar>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn leaky_relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * T::from_f64_lossy(LEAKY_SLOPE)
    }
}

/// `-log softmax(logits)[label]`.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<T, NumericError> {
    if label >= logits.len() {
        return Err(NumericError::LabelOutOfRange { label, classes: logits.len() });
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    Ok(lse - logits[label])
}
