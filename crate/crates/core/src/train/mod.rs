//! L1 training with Adam and a plateau learning-rate schedule.

mod adam;
mod schedule;

pub use adam::{clip_global_norm, AdamState, BETA1, BETA2, EPSILON};
pub use schedule::{run_schedule, DecimalRate, LrSchedule};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degrade::DegradationSpec;
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::model::IraeModel;
use crate::tensor::{Graph, Ops, Real, Tensor};

/// `(1/N) sum_i ||xhat_i - x_i||_1` over a batch of `N` images.
pub fn l1_loss<T: Real, O: Ops<T>>(ops: &O, xhat: &O::V, x: &O::V) -> Result<O::V> {
    let shape = ops.shape_of(xhat)?;
    let other = ops.shape_of(x)?;
    if shape != other || shape.is_empty() {
        return Err(Error::shape("l1_loss", format!("{shape:?} vs {other:?}")));
    }
    let n = shape[0];
    let total = ops.sum(&ops.abs(&ops.sub(xhat, x)?)?)?;
    ops.scale(&total, T::from_f64_lossy(1.0 / n as f64))
}

/// A ground-truth image and its degraded observation.
#[derive(Debug, Clone)]
pub struct TrainingPair<T: Real> {
    pub x: Tensor<T>,
    pub y: Tensor<T>,
}

impl<T: Real> TrainingPair<T> {
    pub fn new(x: Tensor<T>, y: Tensor<T>) -> Result<Self> {
        if x.shape() != y.shape() {
            return Err(Error::shape("pair", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        if !x.all_finite() || !y.all_finite() {
            return Err(Error::NonFinite("training pair".into()));
        }
        Ok(Self { x, y })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub degradation: DegradationSpec,
    pub epochs_max: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Held-out fraction used for the plateau rule and best-model selection.
    pub val_fraction: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub schedule: LrSchedule,
}

impl TrainConfig {
    pub fn new(degradation: DegradationSpec, epochs_max: usize) -> Self {
        Self {
            degradation,
            epochs_max,
            batch_size: 16,
            seed: 0,
            val_fraction: 0.1,
            clip_norm: None,
            schedule: LrSchedule::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    /// Validation PSNR after the epoch.
    pub val_psnr: f64,
    /// Rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain struct") + "\n")
            .collect()
    }

    pub fn from_jsonl(s: &str) -> Result<Self> {
        let records = s
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::Config(format!("history line {l:?}: {e}"))))
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpochLimit,
    LearningRate,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    /// Parameters from the epoch with the highest validation PSNR, or the
    /// last good parameters if no epoch completed.
    pub model: IraeModel<T>,
    pub history: History,
    pub best_epoch: Option<usize>,
    pub best_val_psnr: f64,
    /// Validation PSNR of the model before the first update.
    pub initial_val_psnr: f64,
    pub stop: StopReason,
}

/// Independent ChaCha stream for one purpose.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_SPLIT: u64 = 0;
const STREAM_VAL: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_EPOCH0: u64 = 3;

/// Seeded split into (train, val) index lists. At least one image goes to
/// each side when the dataset has two or more images.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Empty("training needs at least two images"));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("val_fraction {val_fraction} outside [0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, STREAM_SPLIT));
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

/// Runs `model` over `ys` in batches and returns the mean PSNR of clipped
/// outputs against `xs`.
pub fn mean_psnr<T: Real>(
    model: &IraeModel<T>,
    pairs: &[TrainingPair<T>],
    batch_size: usize,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("no pairs to evaluate"));
    }
    let mut total = 0.0;
    for chunk in pairs.chunks(batch_size.max(1)) {
        let ys: Vec<_> = chunk.iter().map(|p| p.y.clone()).collect();
        let out = model.forward(&Tensor::stack_batch(&ys)?)?;
        for (i, p) in chunk.iter().enumerate() {
            let r = out.batch_item(i)?.clamp(T::zero(), T::one());
            total += psnr(&r, &p.x, 1.0)?;
        }
    }
    Ok(total / pairs.len() as f64)
}

fn degrade_all<T: Real>(
    images: &[&Tensor<T>],
    spec: &DegradationSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TrainingPair<T>>> {
    images
        .iter()
        .map(|x| TrainingPair::new((*x).clone(), spec.apply(x, rng)?.y))
        .collect()
}

/// One optimizer step on a batch. Returns the batch loss.
fn train_step<T: Real>(
    model: &mut IraeModel<T>,
    adam: &mut AdamState<T>,
    batch: &[TrainingPair<T>],
    lr: f64,
    clip_norm: Option<f64>,
) -> Result<f64> {
    let xs: Vec<_> = batch.iter().map(|p| p.x.clone()).collect();
    let ys: Vec<_> = batch.iter().map(|p| p.y.clone()).collect();
    let g = Graph::new();
    let y = g.input(Tensor::stack_batch(&ys)?);
    let x = g.input(Tensor::stack_batch(&xs)?);
    let out = model.forward_with(&g, &y)?;
    let loss = l1_loss(&g, &out, &x)?;
    let value = g.value(loss)?.data()[0].as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss {value}")));
    }
    let grads = g.backward(loss)?;
    let params = model.params();
    let mut grads: Vec<Tensor<T>> = grads
        .params()
        .zip(&params)
        .map(|(g, p)| g.cloned().unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
        .collect();
    drop(params);
    if let Some(max) = clip_norm {
        clip_global_norm(&mut grads, max);
    }
    adam.step(&mut model.params_mut(), &grads, lr)?;
    model.enforce_invariants();
    Ok(value)
}

/// Trains `model` on clean `images` (each `[1, C, H, W]`) degraded by
/// `cfg.degradation`.
///
/// Deterministic for a fixed seed: the split, the per-epoch shuffles and all
/// degradation draws come from separate seeded streams. Validation pairs are
/// degraded once. Training pairs get fresh draws every epoch. ActNorm layers
/// that are still uninitialized are initialized on the first training batch.
pub fn train<T: Real>(
    model: IraeModel<T>,
    images: &[Tensor<T>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with(model, images, cfg, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with<T: Real>(
    mut model: IraeModel<T>,
    images: &[Tensor<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.degradation.validate()?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    for img in images {
        model.config().check_input_shape(img.shape())?;
        if img.shape()[0] != 1 {
            return Err(Error::shape("train", "each image must have batch extent 1"));
        }
    }
    let (train_idx, val_idx) = split_indices(images.len(), cfg.val_fraction, cfg.seed)?;
    let val_imgs: Vec<&Tensor<T>> = val_idx.iter().map(|&i| &images[i]).collect();
    let val = degrade_all(&val_imgs, &cfg.degradation, &mut stream(cfg.seed, STREAM_VAL))?;

    let mut shuffle_rng = stream(cfg.seed, STREAM_SHUFFLE);
    let mut epoch_pairs = |epoch: usize, order: &mut Vec<usize>| -> Result<Vec<TrainingPair<T>>> {
        order.clone_from(&train_idx);
        order.shuffle(&mut shuffle_rng);
        let imgs: Vec<&Tensor<T>> = order.iter().map(|&i| &images[i]).collect();
        degrade_all(&imgs, &cfg.degradation, &mut stream(cfg.seed, STREAM_EPOCH0 + epoch as u64))
    };

    let mut order = Vec::new();
    let mut pairs = epoch_pairs(1, &mut order)?;
    if !model.is_initialized() {
        let first = &pairs[..cfg.batch_size.min(pairs.len())];
        let ys: Vec<_> = first.iter().map(|p| p.y.clone()).collect();
        model.initialize(&Tensor::stack_batch(&ys)?)?;
    }

    let mut schedule = cfg.schedule.clone();
    let mut adam = AdamState::new(&model.params());
    let mut history = History::default();
    let initial_val_psnr = mean_psnr(&model, &val, cfg.batch_size)?;
    let mut val_psnr = initial_val_psnr;
    let mut best: Option<(usize, f64, IraeModel<T>)> = None;
    let mut stop = StopReason::EpochLimit;

    for epoch in 1..=cfg.epochs_max {
        let (lr, done) = schedule.step(epoch, val_psnr);
        if done {
            stop = StopReason::LearningRate;
            break;
        }
        if epoch > 1 {
            pairs = epoch_pairs(epoch, &mut order)?;
        }
        let snapshot = model.clone();
        let mut losses = Vec::new();
        let mut diverged = None;
        for batch in pairs.chunks(cfg.batch_size) {
            match train_step(&mut model, &mut adam, batch, lr, cfg.clip_norm) {
                Ok(l) => losses.push(l),
                Err(Error::NonFinite(what)) => {
                    diverged = Some(what);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if let Some(what) = diverged {
            log::warn!("epoch {epoch}: non-finite {what}; keeping parameters from before the epoch");
            model = snapshot;
            stop = StopReason::Diverged;
            break;
        }
        val_psnr = mean_psnr(&model, &val, cfg.batch_size)?;
        if !val_psnr.is_finite() {
            log::warn!("epoch {epoch}: validation PSNR {val_psnr}; keeping parameters from before the epoch");
            model = snapshot;
            stop = StopReason::Diverged;
            break;
        }
        let record = EpochRecord {
            epoch,
            loss: losses.iter().sum::<f64>() / losses.len() as f64,
            val_psnr,
            lr,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} val_psnr {:.4} lr {lr:e}",
            record.loss,
            record.val_psnr
        );
        on_epoch(&record);
        history.records.push(record);
        if best.as_ref().is_none_or(|b| val_psnr > b.1) {
            best = Some((epoch, val_psnr, model.clone()));
        }
    }

    Ok(match best {
        Some((epoch, psnr, best_model)) => TrainOutcome {
            model: best_model,
            history,
            best_epoch: Some(epoch),
            best_val_psnr: psnr,
            initial_val_psnr,
            stop,
        },
        None => TrainOutcome {
            model,
            history,
            best_epoch: None,
            best_val_psnr: initial_val_psnr,
            initial_val_psnr,
            stop,
        },
    })
}
