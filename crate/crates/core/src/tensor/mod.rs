//! Dense `f32` tensors, the math kernels that operate on them, and a
//! reverse-mode tape.
//!
//! Images use the `[batch, channels, height, width]` layout throughout.
//! Kernels in [`kernels`], [`conv`] and [`patch`] are pure functions; the
//! differentiable versions live on [`Var`] and record themselves on a
//! [`Tape`].

pub mod conv;
pub(crate) mod gemm;
pub mod kernels;
mod ops;
pub mod patch;
mod tape;

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_err, Result};

pub use tape::{Gradients, Tape, Var};

/// Row-major `f32` storage plus a shape. Clones share storage until mutated.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        check_shape("Tensor::new", shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return dim_err(
                "Tensor::new",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            );
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    /// Internal constructor for kernels that already know the sizes agree.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(shape.iter().all(|&d| d >= 1), "zero-sized dim in {shape:?}");
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Result<Self> {
        check_shape("Tensor::full", shape)?;
        let n = shape.iter().product();
        Ok(Self::from_parts(shape.to_vec(), vec![value; n]))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f32) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    /// Standard normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f32, rng: &mut R) -> Result<Self> {
        check_shape("Tensor::randn", shape)?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| std * rng.sample::<f32, _>(StandardNormal))
            .collect();
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f32, hi: f32, rng: &mut R) -> Result<Self> {
        check_shape("Tensor::uniform", shape)?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Element at a full multi-index; panics when out of range.
    pub fn at(&self, idx: &[usize]) -> f32 {
        assert_eq!(idx.len(), self.shape.len(), "index rank {} for shape {:?}", idx.len(), self.shape);
        let mut off = 0;
        for (&i, &d) in idx.iter().zip(self.shape.iter()) {
            assert!(i < d, "index {idx:?} out of range for shape {:?}", self.shape);
            off = off * d + i;
        }
        self.data[off]
    }

    /// Mutable access; copies the buffer first if it is shared.
    pub fn data_mut(&mut self) -> &mut [f32] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<f32> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        check_shape("reshape", shape)?;
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return dim_err(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            );
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn sum(&self) -> f32 {
        self.data.iter().map(|&x| x as f64).sum::<f64>() as f32
    }

    pub fn mean(&self) -> f32 {
        self.sum() / self.numel() as f32
    }

    /// `[batch, channels, height, width]`, or a dimension error naming `op`.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok([n, c, h, w]),
            s => dim_err(op, format!("expected a rank-4 tensor, got {s:?}")),
        }
    }

    pub(crate) fn dims3(&self, op: &'static str) -> Result<[usize; 3]> {
        match self.shape.as_slice() {
            &[a, b, c] => Ok([a, b, c]),
            s => dim_err(op, format!("expected a rank-3 tensor, got {s:?}")),
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.numel() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

fn check_shape(op: &'static str, shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return dim_err(op, format!("every dimension must be >= 1, got {shape:?}"));
    }
    Ok(())
}
