//! Degradations `y = A x + n` for the three restoration tasks.
//!
//! Noise levels are given on the 0-255 scale and applied as `sigma / 255` to
//! images in `[0, 1]`. Noisy images are not clipped.

mod jpeg;

pub use jpeg::{apply_jpeg_sim, quant_table, BASE_LUMA_TABLE};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Default blind-denoising noise range (0-255 scale).
pub const BLIND_SIGMA_RANGE: (f64, f64) = (0.0, 55.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegradationSpec {
    Awgn { sigma: f64 },
    BlindAwgn { lo: f64, hi: f64 },
    Jpeg { quality: u8 },
    Inpaint { mask_h: usize, mask_w: usize },
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Awgn { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => Err(
                Error::InvalidDegradation(format!("sigma must be >= 0, got {sigma}")),
            ),
            Self::BlindAwgn { lo, hi } if !(lo >= 0.0 && lo <= hi && hi.is_finite()) => Err(
                Error::InvalidDegradation(format!("sigma range [{lo}, {hi}] is invalid")),
            ),
            Self::Jpeg { quality } if !(1..=100).contains(&quality) => Err(
                Error::InvalidDegradation(format!("quality factor {quality} outside 1..=100")),
            ),
            Self::Inpaint { mask_h, mask_w } if mask_h == 0 || mask_w == 0 => Err(
                Error::InvalidDegradation("mask size must be positive".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Degrades one image. All randomness comes from `rng`.
    pub fn apply<T: Real>(&self, x: &Tensor<T>, rng: &mut impl Rng) -> Result<Degraded<T>> {
        self.validate()?;
        match *self {
            Self::Awgn { sigma } => Ok(Degraded {
                y: apply_awgn(x, sigma, rng),
                sigma: Some(sigma),
                mask: None,
            }),
            Self::BlindAwgn { lo, hi } => {
                let (y, sigma) = apply_blind_awgn(x, (lo, hi), rng)?;
                Ok(Degraded {
                    y,
                    sigma: Some(sigma),
                    mask: None,
                })
            }
            Self::Jpeg { quality } => Ok(Degraded {
                y: apply_jpeg_sim(x, quality)?,
                sigma: None,
                mask: None,
            }),
            Self::Inpaint { mask_h, mask_w } => {
                let (_, _, h, w) = x.dims4()?;
                let mask = make_inpaint_mask((h, w), (mask_h, mask_w), rng)?;
                Ok(Degraded {
                    y: mask.apply(x)?,
                    sigma: None,
                    mask: Some(mask),
                })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Degraded<T: Real> {
    pub y: Tensor<T>,
    /// Noise level actually used (0-255 scale), for noise tasks.
    pub sigma: Option<f64>,
    pub mask: Option<InpaintMask>,
}

/// `y = x + n`, `n ~ N(0, (sigma/255)^2)` i.i.d.
pub fn apply_awgn<T: Real>(x: &Tensor<T>, sigma: f64, rng: &mut impl Rng) -> Tensor<T> {
    if sigma == 0.0 {
        return x.clone();
    }
    let std = sigma / 255.0;
    let data = x
        .data()
        .iter()
        .map(|v| {
            let n: f64 = rng.sample(StandardNormal);
            T::from_f64_lossy(v.as_f64() + std * n)
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

/// Draws `sigma ~ U[lo, hi]`, then applies [`apply_awgn`].
pub fn apply_blind_awgn<T: Real>(
    x: &Tensor<T>,
    (lo, hi): (f64, f64),
    rng: &mut impl Rng,
) -> Result<(Tensor<T>, f64)> {
    if !(lo <= hi) {
        return Err(Error::InvalidDegradation(format!(
            "sigma range [{lo}, {hi}] is empty"
        )));
    }
    let sigma = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    Ok((apply_awgn(x, sigma, rng), sigma))
}

/// A rectangular hole. Pixels inside are zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InpaintMask {
    pub image: (usize, usize),
    pub top: usize,
    pub left: usize,
    pub size: (usize, usize),
}

impl InpaintMask {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.size.0 && x >= self.left && x < self.left + self.size.1
    }

    /// Fraction of image area covered.
    pub fn area_fraction(&self) -> f64 {
        (self.size.0 * self.size.1) as f64 / (self.image.0 * self.image.1) as f64
    }

    /// `[1, 1, H, W]` tensor with ones inside the hole.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let (h, w) = self.image;
        Tensor::from_fn(vec![1, 1, h, w], |i| {
            if self.contains(i / w, i % w) {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    /// `x * (1 - mask)` on every plane of an NCHW image.
    pub fn apply<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, _, h, w) = x.dims4()?;
        if (h, w) != self.image {
            return Err(Error::shape(
                "inpaint",
                format!("mask for {:?}, image {h}x{w}", self.image),
            ));
        }
        let mut y = x.clone();
        let hw = h * w;
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            let p = i % hw;
            if self.contains(p / w, p % w) {
                *v = T::zero();
            }
        }
        Ok(y)
    }
}

/// Places an `mh x mw` hole with its top-left corner drawn uniformly from the
/// central `H/2 x W/2` window, restricted to positions where the hole fits.
/// Masks larger than the central window are rejected.
pub fn make_inpaint_mask(
    (h, w): (usize, usize),
    (mh, mw): (usize, usize),
    rng: &mut impl Rng,
) -> Result<InpaintMask> {
    if mh == 0 || mw == 0 || mh > h / 2 || mw > w / 2 {
        return Err(Error::InvalidDegradation(format!(
            "mask {mh}x{mw} does not fit the central {}x{} region of a {h}x{w} image",
            h / 2,
            w / 2
        )));
    }
    let anchor = |extent: usize, m: usize, rng: &mut dyn rand::RngCore| {
        let lo = extent / 4;
        let hi = (lo + extent / 2 - 1).min(extent - m);
        rng.gen_range(lo..=hi)
    };
    let top = anchor(h, mh, rng);
    let left = anchor(w, mw, rng);
    Ok(InpaintMask {
        image: (h, w),
        top,
        left,
        size: (mh, mw),
    })
}
