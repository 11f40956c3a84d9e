use rand::Rng;

use super::linalg::{random_orthogonal, Lu};
use super::Flow;
use crate::error::{Error, Result};
use crate::tensor::{Ops, Real, Tensor};

/// `|det W|` at or below this is treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;

/// Invertible per-pixel channel mixing `y = W x`.
#[derive(Debug, Clone)]
pub struct Conv1x1<T: Real> {
    pub weight: Tensor<T>,
}

impl<T: Real> Conv1x1<T> {
    pub fn random_orthogonal(channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let q = random_orthogonal(channels, rng);
        Self::new(Tensor::from_f64(vec![channels, channels], &q)?)
    }

    /// Wraps `weight` (`[C, C]`), refusing a singular matrix.
    pub fn new(weight: Tensor<T>) -> Result<Self> {
        match weight.shape() {
            [a, b] if a == b => {}
            s => {
                return Err(Error::shape(
                    "conv1x1",
                    format!("weight must be [C, C], got {s:?}"),
                ))
            }
        }
        let layer = Self { weight };
        layer.factor()?;
        Ok(layer)
    }

    pub fn channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn factor(&self) -> Result<Lu> {
        let c = self.channels();
        let w: Vec<f64> = self.weight.data().iter().map(|v| v.as_f64()).collect();
        let lu = Lu::factor(&w, c);
        let det = lu.det();
        if !det.is_finite() || det.abs() <= SINGULAR_DET {
            return Err(Error::SingularWeight { det });
        }
        Ok(lu)
    }

    pub fn det(&self) -> f64 {
        let c = self.channels();
        let w: Vec<f64> = self.weight.data().iter().map(|v| v.as_f64()).collect();
        Lu::factor(&w, c).det()
    }

    /// `W^{-1}` via partial-pivot LU; fails on a singular weight.
    pub fn inverse_weight(&self) -> Result<Tensor<T>> {
        let c = self.channels();
        Tensor::from_f64(vec![c, c], &self.factor()?.inverse())
    }
}

impl<T: Real> Flow<T> for Conv1x1<T> {
    fn forward<O: Ops<T>>(&self, ops: &O, x: &O::V) -> Result<O::V> {
        let w = ops.param(&self.weight);
        ops.channel_mix(x, &w)
    }

    fn inverse<O: Ops<T>>(&self, ops: &O, y: &O::V) -> Result<O::V> {
        let winv = ops.input(self.inverse_weight()?);
        ops.channel_mix(y, &winv)
    }

    fn log_det(&self, x: &Tensor<T>) -> Result<f64> {
        let (_, _, h, w) = x.dims4()?;
        Ok((h * w) as f64 * self.factor()?.log_abs_det())
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.weight]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight]
    }
}
