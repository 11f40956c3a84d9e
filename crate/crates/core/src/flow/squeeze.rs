use super::Flow;
use crate::error::Result;
use crate::tensor::{Ops, Real, Tensor};

/// Space-to-depth by a factor of 2: `[N, C, H, W] -> [N, 4C, H/2, W/2]`.
///
/// Output channel `4c + 2dy + dx` at `(i, j)` is input channel `c` at
/// `(2i + dy, 2j + dx)`. A pure permutation, so its log-determinant is 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct Squeeze;

impl<T: Real> Flow<T> for Squeeze {
    fn forward<O: Ops<T>>(&self, ops: &O, x: &O::V) -> Result<O::V> {
        ops.squeeze(x)
    }

    fn inverse<O: Ops<T>>(&self, ops: &O, y: &O::V) -> Result<O::V> {
        ops.unsqueeze(y)
    }

    fn log_det(&self, _x: &Tensor<T>) -> Result<f64> {
        Ok(0.0)
    }
}
