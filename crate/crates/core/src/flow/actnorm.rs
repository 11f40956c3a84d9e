use super::Flow;
use crate::error::{Error, Result};
use crate::tensor::{Ops, Real, Tensor};

/// Smallest admissible per-channel scale magnitude.
pub const MIN_SCALE: f64 = 1e-8;

/// Per-channel affine map `y = s * x + b` with data-dependent initialization.
#[derive(Debug, Clone)]
pub struct ActNorm<T: Real> {
    pub scale: Tensor<T>,
    pub bias: Tensor<T>,
    initialized: bool,
}

impl<T: Real> ActNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            scale: Tensor::full(vec![channels], T::one()),
            bias: Tensor::zeros(vec![channels]),
            initialized: false,
        }
    }

    /// A layer with explicit parameters, marked initialized.
    pub fn with_params(scale: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if scale.shape() != bias.shape() || scale.shape().len() != 1 {
            return Err(Error::shape(
                "actnorm",
                format!("scale {:?} vs bias {:?}", scale.shape(), bias.shape()),
            ));
        }
        let mut a = Self {
            scale,
            bias,
            initialized: true,
        };
        a.enforce_min_scale();
        Ok(a)
    }

    pub fn channels(&self) -> usize {
        self.scale.numel()
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub(crate) fn set_initialized(&mut self, v: bool) {
        self.initialized = v;
    }

    /// Sets `s = 1/std`, `b = -mean/std` per channel so that `forward(x)` has
    /// zero mean and unit (population) std. A zero-std channel uses std =
    /// 1e-8; the return value is `true` when that happened.
    pub fn initialize(&mut self, x: &Tensor<T>) -> Result<bool> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.channels() {
            return Err(Error::shape(
                "actnorm_init",
                format!("layer has {} channels, input {c}", self.channels()),
            ));
        }
        let mean = x.channel_mean()?;
        let std = x.channel_std()?;
        let floor = T::from_f64_lossy(MIN_SCALE);
        let mut degenerate = false;
        for ch in 0..c {
            let mut sd = std.data()[ch];
            if sd <= T::zero() {
                log::warn!("actnorm init: channel {ch} has zero std, clamping scale");
                sd = floor;
                degenerate = true;
            }
            self.scale.data_mut()[ch] = T::one() / sd;
            self.bias.data_mut()[ch] = -mean.data()[ch] / sd;
        }
        self.initialized = true;
        Ok(degenerate)
    }

    /// Pushes any scale below `1e-8` in magnitude back to `±1e-8`.
    pub fn enforce_min_scale(&mut self) {
        let floor = T::from_f64_lossy(MIN_SCALE);
        for s in self.scale.data_mut() {
            if s.abs() < floor {
                *s = if *s < T::zero() { -floor } else { floor };
            }
        }
    }

    fn check(&self) -> Result<()> {
        if self.initialized {
            Ok(())
        } else {
            Err(Error::Uninitialized("actnorm"))
        }
    }
}

impl<T: Real> Flow<T> for ActNorm<T> {
    fn forward<O: Ops<T>>(&self, ops: &O, x: &O::V) -> Result<O::V> {
        self.check()?;
        let s = ops.param(&self.scale);
        let b = ops.param(&self.bias);
        let y = ops.mul(x, &s)?;
        ops.add(&y, &b)
    }

    fn inverse<O: Ops<T>>(&self, ops: &O, y: &O::V) -> Result<O::V> {
        self.check()?;
        let s = ops.param(&self.scale);
        let b = ops.param(&self.bias);
        let x = ops.sub(y, &b)?;
        ops.div(&x, &s)
    }

    fn log_det(&self, x: &Tensor<T>) -> Result<f64> {
        self.check()?;
        let (_, _, h, w) = x.dims4()?;
        let s: f64 = self.scale.data().iter().map(|v| v.as_f64().abs().ln()).sum();
        Ok((h * w) as f64 * s)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.scale, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.scale, &mut self.bias]
    }
}
