//! Dense row-major tensors and a tape-based reverse-mode autodiff graph.
//!
//! Images use NCHW layout. The only implicit broadcast anywhere in the crate
//! is a per-channel vector `[C]` against an `[N, C, H, W]` tensor.

mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod ops;

pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use graph::{Gradients, Graph, Var};
pub use ops::{BinaryOp, Eager, Ops, UnaryOp};

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating point element type of a tensor.
///
/// Implemented for `f32` (training default) and `f64` (verification).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    const BITS: u32;

    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    ///
    /// # Safety
    /// The pointers and strides must describe valid, non-overlapping (for `c`)
    /// matrices of the given dimensions.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {
    const BITS: u32 = 32;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const BITS: u32 = 64;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Dense N-dimensional array. `shape.iter().product() == data.len()` always holds.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(Error::shape("tensor", format!("zero extent in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor from `f64` values, rounding to `T`.
    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// `(N, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(
                "dims4",
                format!("expected NCHW, got {:?}", self.shape),
            )),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `max |self - other|` in `f64`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "max_abs_diff",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn sum(&self) -> Result<T> {
        if self.data.is_empty() {
            return Err(Error::Empty("sum"));
        }
        Ok(self.data.iter().copied().sum())
    }

    pub fn mean(&self) -> Result<T> {
        Ok(self.sum()? / T::from_usize(self.numel()).unwrap())
    }

    /// Per-channel mean of an NCHW tensor, shape `[C]`.
    pub fn channel_mean(&self) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.dims4()?;
        let hw = h * w;
        let count = T::from_usize(n * hw).unwrap();
        let mut out = vec![T::zero(); c];
        for b in 0..n {
            for (ch, acc) in out.iter_mut().enumerate() {
                let base = (b * c + ch) * hw;
                *acc = *acc + self.data[base..base + hw].iter().copied().sum::<T>();
            }
        }
        Tensor::new(vec![c], out.into_iter().map(|s| s / count).collect())
    }

    /// Per-channel population standard deviation of an NCHW tensor, shape `[C]`.
    pub fn channel_std(&self) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.dims4()?;
        let hw = h * w;
        if n * hw < 2 {
            return Err(Error::shape(
                "channel_std",
                format!("need more than one element per channel, shape {:?}", self.shape),
            ));
        }
        let mean = self.channel_mean()?;
        let count = T::from_usize(n * hw).unwrap();
        let mut out = vec![T::zero(); c];
        for b in 0..n {
            for (ch, acc) in out.iter_mut().enumerate() {
                let base = (b * c + ch) * hw;
                let m = mean.data[ch];
                *acc = *acc
                    + self.data[base..base + hw]
                        .iter()
                        .map(|&v| (v - m) * (v - m))
                        .sum::<T>();
            }
        }
        Tensor::new(vec![c], out.into_iter().map(|s| (s / count).sqrt()).collect())
    }

    /// Sample `i` of a batch as a `[1, C, H, W]` tensor.
    pub fn batch_item(&self, i: usize) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.dims4()?;
        if i >= n {
            return Err(Error::shape("batch_item", format!("index {i} of batch {n}")));
        }
        let len = c * h * w;
        Tensor::new(vec![1, c, h, w], self.data[i * len..(i + 1) * len].to_vec())
    }

    /// Concatenates NCHW tensors of identical `[C, H, W]` along the batch axis.
    pub fn stack_batch(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items.first().ok_or(Error::Empty("stack_batch"))?;
        let (_, c, h, w) = first.dims4()?;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            let (tn, tc, th, tw) = t.dims4()?;
            if (tc, th, tw) != (c, h, w) {
                return Err(Error::shape(
                    "stack_batch",
                    format!("{:?} vs {:?}", first.shape, t.shape),
                ));
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Tensor::new(vec![n, c, h, w], data)
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_length() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f32>::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn mean_of_three() {
        let t = Tensor::<f64>::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.mean().unwrap(), 2.0);
    }

    #[test]
    fn channel_mean_and_std() {
        let t = Tensor::<f64>::new(vec![1, 2, 2, 1], vec![1.0, 3.0, 10.0, 30.0]).unwrap();
        assert_eq!(t.channel_mean().unwrap().data(), &[2.0, 20.0]);
        let t = Tensor::<f64>::new(vec![1, 1, 2, 1], vec![1.0, 3.0]).unwrap();
        assert_eq!(t.channel_std().unwrap().data(), &[1.0]);
    }

    #[test]
    fn channel_std_needs_two_elements() {
        let t = Tensor::<f64>::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        assert!(t.channel_std().is_err());
    }

    #[test]
    fn batch_roundtrip() {
        let t = Tensor::<f32>::from_fn(vec![3, 2, 2, 2], |i| i as f32);
        let items: Vec<_> = (0..3).map(|i| t.batch_item(i).unwrap()).collect();
        assert_eq!(Tensor::stack_batch(&items).unwrap(), t);
    }
}
