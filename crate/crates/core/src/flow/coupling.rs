use rand::Rng;

use super::Flow;
use crate::error::{Error, Result};
use crate::tensor::{Eager, Ops, Real, Tensor};

/// Offset added to the raw scale before the sigmoid, so a zero network
/// yields `s = sigmoid(2)`.
pub const COUPLING_SCALE_OFFSET: f64 = 2.0;

/// Affine coupling. The first half of the channels passes through unchanged
/// and conditions a scale and shift for the second half:
///
/// ```text
/// (raw, t) = net(x_a)
/// s        = sigmoid(raw + 2)
/// y        = [x_a, s * x_b + t]
/// ```
///
/// `net` is conv3x3 -> tanh -> conv3x3 -> tanh -> conv3x3 with the last
/// convolution zero-initialized.
#[derive(Debug, Clone)]
pub struct Coupling<T: Real> {
    channels: usize,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
    pub w3: Tensor<T>,
    pub b3: Tensor<T>,
}

fn uniform_conv<T: Real>(cout: usize, cin: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = 1.0 / ((cin * 9) as f64).sqrt();
    Tensor::from_fn(vec![cout, cin, 3, 3], |_| {
        T::from_f64_lossy(rng.gen_range(-bound..bound))
    })
}

impl<T: Real> Coupling<T> {
    pub fn new(channels: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        if !channels.is_multiple_of(2) {
            return Err(Error::OddChannels(channels));
        }
        if hidden == 0 {
            return Err(Error::InvalidConfig("coupling hidden width must be >= 1".into()));
        }
        let half = channels / 2;
        Ok(Self {
            channels,
            w1: uniform_conv(hidden, half, rng),
            b1: Tensor::zeros(vec![hidden]),
            w2: uniform_conv(hidden, hidden, rng),
            b2: Tensor::zeros(vec![hidden]),
            w3: Tensor::zeros(vec![channels, hidden, 3, 3]),
            b3: Tensor::zeros(vec![channels]),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> usize {
        self.b1.numel()
    }

    fn check_input<O: Ops<T>>(&self, ops: &O, x: &O::V) -> Result<()> {
        let shape = ops.shape_of(x)?;
        match shape[..] {
            [_, c, _, _] if c % 2 != 0 => Err(Error::OddChannels(c)),
            [_, c, _, _] if c == self.channels => Ok(()),
            _ => Err(Error::shape(
                "coupling",
                format!("expected {} channels, got shape {shape:?}", self.channels),
            )),
        }
    }

    /// Scale and shift for the second half, computed from the first half.
    fn scale_shift<O: Ops<T>>(&self, ops: &O, xa: &O::V) -> Result<(O::V, O::V)> {
        let w1 = ops.param(&self.w1);
        let b1 = ops.param(&self.b1);
        let w2 = ops.param(&self.w2);
        let b2 = ops.param(&self.b2);
        let w3 = ops.param(&self.w3);
        let b3 = ops.param(&self.b3);
        let h = ops.conv2d(xa, &w1, Some(&b1))?;
        let h = ops.tanh(&h)?;
        let h = ops.conv2d(&h, &w2, Some(&b2))?;
        let h = ops.tanh(&h)?;
        let out = ops.conv2d(&h, &w3, Some(&b3))?;
        let half = self.channels / 2;
        let raw = ops.slice_channels(&out, 0, half)?;
        let shift = ops.slice_channels(&out, half, half)?;
        let raw = ops.add_scalar(&raw, T::from_f64_lossy(COUPLING_SCALE_OFFSET))?;
        let scale = ops.sigmoid(&raw)?;
        Ok((scale, shift))
    }
}

impl<T: Real> Flow<T> for Coupling<T> {
    fn forward<O: Ops<T>>(&self, ops: &O, x: &O::V) -> Result<O::V> {
        self.check_input(ops, x)?;
        let half = self.channels / 2;
        let xa = ops.slice_channels(x, 0, half)?;
        let xb = ops.slice_channels(x, half, half)?;
        let (s, t) = self.scale_shift(ops, &xa)?;
        let yb = ops.mul(&xb, &s)?;
        let yb = ops.add(&yb, &t)?;
        ops.concat_channels(&xa, &yb)
    }

    fn inverse<O: Ops<T>>(&self, ops: &O, y: &O::V) -> Result<O::V> {
        self.check_input(ops, y)?;
        let half = self.channels / 2;
        let ya = ops.slice_channels(y, 0, half)?;
        let yb = ops.slice_channels(y, half, half)?;
        let (s, t) = self.scale_shift(ops, &ya)?;
        let xb = ops.sub(&yb, &t)?;
        let xb = ops.div(&xb, &s)?;
        ops.concat_channels(&ya, &xb)
    }

    fn log_det(&self, x: &Tensor<T>) -> Result<f64> {
        let (n, _, _, _) = x.dims4()?;
        let xa = Eager.slice_channels(x, 0, self.channels / 2)?;
        let (s, _) = self.scale_shift(&Eager, &xa)?;
        let total: f64 = s.data().iter().map(|v| v.as_f64().ln()).sum();
        Ok(total / n as f64)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }
}
