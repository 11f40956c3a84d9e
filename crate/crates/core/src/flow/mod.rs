//! Invertible building blocks: activation normalization, invertible 1x1
//! convolution, affine coupling, and the space-to-depth squeeze.
//!
//! Every layer is written against [`Ops`] so one definition serves eager
//! inference, gradient recording, and finite-difference checks.

mod actnorm;
mod conv1x1;
mod coupling;
pub mod linalg;
mod squeeze;

pub use actnorm::ActNorm;
pub use conv1x1::Conv1x1;
pub use coupling::{Coupling, COUPLING_SCALE_OFFSET};
pub use squeeze::Squeeze;

use crate::error::Result;
use crate::tensor::{Ops, Real, Tensor};

/// An invertible layer.
pub trait Flow<T: Real> {
    fn forward<O: Ops<T>>(&self, ops: &O, x: &O::V) -> Result<O::V>;
    fn inverse<O: Ops<T>>(&self, ops: &O, y: &O::V) -> Result<O::V>;

    /// Log-determinant of the Jacobian at `x`, averaged over the batch.
    ///
    /// Diagnostic only; a finite value witnesses invertibility.
    fn log_det(&self, x: &Tensor<T>) -> Result<f64>;

    /// Learnable tensors in the order `forward` registers them.
    fn params(&self) -> Vec<&Tensor<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Vec::new()
    }
}

/// ActNorm, then 1x1 convolution, then affine coupling.
#[derive(Debug, Clone)]
pub struct FlowStep<T: Real> {
    pub actnorm: ActNorm<T>,
    pub conv: Conv1x1<T>,
    pub coupling: Coupling<T>,
}

impl<T: Real> FlowStep<T> {
    pub fn new(channels: usize, hidden: usize, rng: &mut impl rand::Rng) -> Result<Self> {
        Ok(Self {
            actnorm: ActNorm::new(channels),
            conv: Conv1x1::random_orthogonal(channels, rng)?,
            coupling: Coupling::new(channels, hidden, rng)?,
        })
    }
}

impl<T: Real> Flow<T> for FlowStep<T> {
    fn forward<O: Ops<T>>(&self, ops: &O, x: &O::V) -> Result<O::V> {
        let h = self.actnorm.forward(ops, x)?;
        let h = self.conv.forward(ops, &h)?;
        self.coupling.forward(ops, &h)
    }

    fn inverse<O: Ops<T>>(&self, ops: &O, y: &O::V) -> Result<O::V> {
        let h = self.coupling.inverse(ops, y)?;
        let h = self.conv.inverse(ops, &h)?;
        self.actnorm.inverse(ops, &h)
    }

    fn log_det(&self, x: &Tensor<T>) -> Result<f64> {
        let e = crate::tensor::Eager;
        let a = self.actnorm.forward(&e, x)?;
        let c = self.conv.forward(&e, &a)?;
        Ok(self.actnorm.log_det(x)? + self.conv.log_det(&a)? + self.coupling.log_det(&c)?)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        let mut p = self.actnorm.params();
        p.extend(self.conv.params());
        p.extend(self.coupling.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.actnorm.params_mut();
        p.extend(self.conv.params_mut());
        p.extend(self.coupling.params_mut());
        p
    }
}
