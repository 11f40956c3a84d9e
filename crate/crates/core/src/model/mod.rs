//! The symmetric invertible encoder-decoder.
//!
//! Encoder level `l` (1-based) squeezes, then runs `K` flow steps at
//! `C * 4^l` channels. The decoder mirrors it with its own parameters: each
//! level runs `K` flow steps and then unsqueezes, so the output has the input
//! shape. There are no latent splits; every channel flows through every level.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{linalg, Flow, FlowStep};
use crate::tensor::{Eager, Ops, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn bits(self) -> u8 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        match bits {
            32 => Some(Precision::F32),
            64 => Some(Precision::F64),
            _ => None,
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "32" | "f32" => Ok(Precision::F32),
            "64" | "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision {other:?}"))),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "f{}", self.bits())
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IraeConfig {
    /// Flow steps per level.
    pub k: usize,
    /// Squeeze levels.
    pub levels: usize,
    /// Hidden width of each coupling network.
    pub hidden: usize,
    pub in_channels: usize,
    pub precision: Precision,
    pub seed: u64,
}

impl Default for IraeConfig {
    fn default() -> Self {
        Self {
            k: 16,
            levels: 2,
            hidden: 64,
            in_channels: 1,
            precision: Precision::F32,
            seed: 0,
        }
    }
}

impl IraeConfig {
    pub fn new(k: usize, levels: usize, hidden: usize, in_channels: usize) -> Self {
        Self {
            k,
            levels,
            hidden,
            in_channels,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.k < 1 {
            bad.push("K >= 1");
        }
        if self.levels < 1 {
            bad.push("L >= 1");
        }
        if self.hidden < 1 {
            bad.push("hidden width >= 1");
        }
        if self.in_channels < 1 {
            bad.push("in_channels >= 1");
        }
        if self.levels > 12 {
            bad.push("L <= 12");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("violated: {}", bad.join(", "))))
        }
    }

    /// Channel count inside encoder level `l` (1-based).
    pub fn level_channels(&self, l: usize) -> usize {
        self.in_channels * 4usize.pow(l as u32)
    }

    /// Spatial extents must be divisible by `2^L`.
    pub fn check_input_shape(&self, shape: &[usize]) -> Result<()> {
        let f = 1usize << self.levels;
        match shape {
            [_, c, h, w] if *c == self.in_channels && h % f == 0 && w % f == 0 => Ok(()),
            [_, c, h, w] => Err(Error::shape(
                "irae",
                format!(
                    "input [{c}, {h}, {w}] needs {} channels and extents divisible by {f}",
                    self.in_channels
                ),
            )),
            _ => Err(Error::shape("irae", format!("expected NCHW, got {shape:?}"))),
        }
    }

    /// Learnable scalars in one flow step at `c` channels:
    ///
    /// ```text
    /// actnorm   2c
    /// 1x1 conv  c^2
    /// coupling  (9 (c/2) h + h) + (9 h^2 + h) + (9 h c + c)
    /// ```
    pub fn step_param_count(c: usize, h: usize) -> usize {
        2 * c + c * c + (9 * (c / 2) * h + h) + (9 * h * h + h) + (9 * h * c + c)
    }

    /// Closed form: `2 K sum_{l=1..L} step(C 4^l, h)` (encoder plus decoder).
    pub fn param_count(&self) -> usize {
        let per_side: usize = (1..=self.levels)
            .map(|l| self.k * Self::step_param_count(self.level_channels(l), self.hidden))
            .sum();
        2 * per_side
    }
}

/// Hidden width whose parameter count is closest to `target` for the given
/// `(K, L, C)`, searched over `1..=max_hidden`.
pub fn search_hidden_width(
    k: usize,
    levels: usize,
    in_channels: usize,
    target: usize,
    max_hidden: usize,
) -> (usize, usize) {
    (1..=max_hidden)
        .map(|h| (h, IraeConfig::new(k, levels, h, in_channels).param_count()))
        .min_by_key(|&(_, n)| n.abs_diff(target))
        .expect("max_hidden >= 1")
}

#[derive(Debug, Clone)]
pub struct IraeModel<T: Real = f32> {
    config: IraeConfig,
    encoder: Vec<Vec<FlowStep<T>>>,
    decoder: Vec<Vec<FlowStep<T>>>,
}

impl<T: Real> IraeModel<T> {
    /// Deterministic construction from `config.seed`. ActNorm layers start
    /// uninitialized; couplings start as the identity on their first half and
    /// a fixed `sigmoid(2)` scaling on the second.
    pub fn build(config: IraeConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let level = |c: usize, rng: &mut ChaCha8Rng| -> Result<Vec<FlowStep<T>>> {
            (0..config.k)
                .map(|_| FlowStep::new(c, config.hidden, rng))
                .collect()
        };
        let encoder = (1..=config.levels)
            .map(|l| level(config.level_channels(l), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let decoder = (1..=config.levels)
            .rev()
            .map(|l| level(config.level_channels(l), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &IraeConfig {
        &self.config
    }

    pub fn steps(&self) -> impl Iterator<Item = &FlowStep<T>> {
        self.encoder.iter().chain(&self.decoder).flatten()
    }

    pub fn steps_mut(&mut self) -> impl Iterator<Item = &mut FlowStep<T>> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut()).flatten()
    }

    pub fn is_initialized(&self) -> bool {
        self.steps().all(|s| s.actnorm.is_initialized())
    }

    pub(crate) fn set_initialized(&mut self, v: bool) {
        self.steps_mut().for_each(|s| s.actnorm.set_initialized(v));
    }

    /// Learnable tensors in traversal order (encoder levels, then decoder
    /// levels; within a step: ActNorm, 1x1 conv, coupling). This is the
    /// order [`Ops::param`] sees them during `forward`.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.steps().flat_map(|s| s.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.steps_mut().flat_map(|s| s.params_mut()).collect()
    }

    /// Exact number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn forward_with<O: Ops<T>>(&self, ops: &O, y: &O::V) -> Result<O::V> {
        self.config.check_input_shape(&ops.shape_of(y)?)?;
        let mut x = y.clone();
        for level in &self.encoder {
            x = ops.squeeze(&x)?;
            for step in level {
                x = step.forward(ops, &x)?;
            }
        }
        for level in &self.decoder {
            for step in level {
                x = step.forward(ops, &x)?;
            }
            x = ops.unsqueeze(&x)?;
        }
        Ok(x)
    }

    /// Exact inverse of [`forward_with`](Self::forward_with): the decoder is
    /// undone first, then the encoder.
    pub fn inverse_with<O: Ops<T>>(&self, ops: &O, x: &O::V) -> Result<O::V> {
        self.config.check_input_shape(&ops.shape_of(x)?)?;
        let mut y = x.clone();
        for level in self.decoder.iter().rev() {
            y = ops.squeeze(&y)?;
            for step in level.iter().rev() {
                y = step.inverse(ops, &y)?;
            }
        }
        for level in self.encoder.iter().rev() {
            for step in level.iter().rev() {
                y = step.inverse(ops, &y)?;
            }
            y = ops.unsqueeze(&y)?;
        }
        Ok(y)
    }

    /// Restored estimate for a degraded batch.
    pub fn forward(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_with(&Eager, y)
    }

    pub fn inverse(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.inverse_with(&Eager, x)
    }

    /// Runs `forward`, first initializing every not-yet-initialized ActNorm
    /// on the activations reaching it. The decoder's layers therefore see
    /// the encoder's output of this batch.
    pub fn initialize(&mut self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.config.check_input_shape(y.shape())?;
        let e = Eager;
        let mut x = y.clone();
        let init = |step: &mut FlowStep<T>, x: &Tensor<T>| -> Result<Tensor<T>> {
            if !step.actnorm.is_initialized() {
                step.actnorm.initialize(x)?;
            }
            step.forward(&e, x)
        };
        for level in &mut self.encoder {
            x = e.squeeze(&x)?;
            for step in level {
                x = init(step, &x)?;
            }
        }
        for level in &mut self.decoder {
            for step in level {
                x = init(step, &x)?;
            }
            x = e.unsqueeze(&x)?;
        }
        Ok(x)
    }

    /// Sum of per-layer log-determinant diagnostics along the forward pass.
    pub fn log_det(&self, y: &Tensor<T>) -> Result<f64> {
        self.config.check_input_shape(y.shape())?;
        let e = Eager;
        let mut x = y.clone();
        let mut total = 0.0;
        for level in &self.encoder {
            x = e.squeeze(&x)?;
            for step in level {
                total += step.log_det(&x)?;
                x = step.forward(&e, &x)?;
            }
        }
        for level in &self.decoder {
            for step in level {
                total += step.log_det(&x)?;
                x = step.forward(&e, &x)?;
            }
            x = e.unsqueeze(&x)?;
        }
        Ok(total)
    }

    /// Keeps every ActNorm scale at least `1e-8` in magnitude.
    pub fn enforce_invariants(&mut self) {
        self.steps_mut().for_each(|s| s.actnorm.enforce_min_scale());
    }

    /// Replaces all parameters with random valid values and marks the model
    /// initialized: ActNorm scales in `[0.8, 1.25]`, biases in `[-0.1, 0.1]`,
    /// fresh orthogonal 1x1 weights, and coupling output layers drawn from
    /// `U(-0.05, 0.05)` so every coupling is non-trivial.
    pub fn randomize(&mut self, rng: &mut impl Rng) {
        for step in self.steps_mut() {
            for s in step.actnorm.scale.data_mut() {
                *s = T::from_f64_lossy(rng.gen_range(0.8..1.25));
            }
            for b in step.actnorm.bias.data_mut() {
                *b = T::from_f64_lossy(rng.gen_range(-0.1..0.1));
            }
            step.actnorm.set_initialized(true);
            let c = step.conv.channels();
            let q = linalg::random_orthogonal(c, rng);
            for (w, v) in step.conv.weight.data_mut().iter_mut().zip(q) {
                *w = T::from_f64_lossy(v);
            }
            let cp = &mut step.coupling;
            for p in [&mut cp.w3, &mut cp.b3, &mut cp.b1, &mut cp.b2] {
                for v in p.data_mut() {
                    *v = T::from_f64_lossy(rng.gen_range(-0.05..0.05));
                }
            }
        }
    }

    /// Sets every step to the identity up to rounding: `W = I`, zero coupling
    /// output layers, ActNorm bias 0 and scale 1 on the first channel half
    /// and `1 / sigmoid(2)` on the second, cancelling the coupling's fixed
    /// scale. The whole model is then a composition of permutations.
    pub fn reset_to_identity(&mut self) {
        let s0 = 1.0 + (-crate::flow::COUPLING_SCALE_OFFSET).exp();
        for step in self.steps_mut() {
            let c = step.conv.channels();
            for (i, s) in step.actnorm.scale.data_mut().iter_mut().enumerate() {
                *s = T::from_f64_lossy(if i < c / 2 { 1.0 } else { s0 });
            }
            step.actnorm.bias.data_mut().fill(T::zero());
            step.actnorm.set_initialized(true);
            for (i, w) in step.conv.weight.data_mut().iter_mut().enumerate() {
                *w = if i % (c + 1) == 0 { T::one() } else { T::zero() };
            }
            let cp = &mut step.coupling;
            cp.w3.data_mut().fill(T::zero());
            cp.b3.data_mut().fill(T::zero());
        }
    }

    /// Same architecture and parameters in another precision.
    pub fn cast<U: Real>(&self) -> IraeModel<U> {
        let mut out = IraeModel::<U>::build(self.config).expect("config already validated");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            *dst = src.cast();
        }
        out.set_initialized(self.is_initialized());
        out
    }
}

/// The whole model is itself an invertible layer.
impl<T: Real> Flow<T> for IraeModel<T> {
    fn forward<O: Ops<T>>(&self, ops: &O, x: &O::V) -> Result<O::V> {
        self.forward_with(ops, x)
    }

    fn inverse<O: Ops<T>>(&self, ops: &O, y: &O::V) -> Result<O::V> {
        self.inverse_with(ops, y)
    }

    fn log_det(&self, x: &Tensor<T>) -> Result<f64> {
        IraeModel::log_det(self, x)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        IraeModel::params(self)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        IraeModel::params_mut(self)
    }
}
