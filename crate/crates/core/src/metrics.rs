//! PSNR and SSIM.
//!
//! PSNR pools the squared error over every channel of every pixel. SSIM uses
//! the canonical 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03 and
//! dynamic range 1, evaluated over the valid region and averaged over planes.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// PSNR returned for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    Ok(())
}

pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape("mse", a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(sum / a.numel() as f64)
}

/// `10 log10(max^2 / MSE)` in dB, capped at [`PSNR_CAP_DB`] when MSE is 0.
pub fn psnr<T: Real>(restored: &Tensor<T>, truth: &Tensor<T>, max_val: f64) -> Result<f64> {
    if max_val <= 0.0 {
        return Err(Error::Shape {
            op: "psnr",
            detail: format!("max_val must be positive, got {max_val}"),
        });
    }
    Ok(psnr_from_mse(mse(restored, truth)?, max_val))
}

pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP_DB)
    }
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| g[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two `h x w` planes.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape {
            op: "ssim",
            detail: format!("image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        });
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let sq = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let mu_a = filter_valid(a, h, w, &g);
    let mu_b = filter_valid(b, h, w, &g);
    let aa = filter_valid(&sq(a, a), h, w, &g);
    let bb = filter_valid(&sq(b, b), h, w, &g);
    let ab = filter_valid(&sq(a, b), h, w, &g);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// SSIM of two NCHW tensors, averaged over every `(n, c)` plane.
pub fn ssim<T: Real>(restored: &Tensor<T>, truth: &Tensor<T>) -> Result<f64> {
    same_shape("ssim", restored, truth)?;
    let (n, c, h, w) = restored.dims4()?;
    let hw = h * w;
    let to64 = |t: &Tensor<T>, p: usize| -> Vec<f64> {
        t.data()[p * hw..(p + 1) * hw].iter().map(|v| v.as_f64()).collect()
    };
    let mut total = 0.0;
    for p in 0..n * c {
        total += ssim_plane(&to64(restored, p), &to64(truth, p), h, w)?;
    }
    Ok(total / (n * c) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-image metrics plus their arithmetic means.
#[derive(Debug, Clone, Default, Serialize)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, psnr_db: f64, ssim: f64) {
        self.images.push(ImageMetrics {
            name: name.into(),
            psnr_db,
            ssim,
        });
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.images.iter().map(|m| m.psnr_db))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.images.iter().map(|m| m.ssim))
    }

    /// Tab-separated table: a header row, one row per image, then `mean`.
    pub fn to_table(&self) -> String {
        let mut s = String::from("image\tpsnr_db\tssim\n");
        for m in &self.images {
            writeln!(s, "{}\t{:.4}\t{:.6}", m.name, m.psnr_db, m.ssim).unwrap();
        }
        writeln!(s, "mean\t{:.4}\t{:.6}", self.mean_psnr(), self.mean_ssim()).unwrap();
        s
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// PSNR and SSIM of `restored` (clipped to `[0, 1]` first) against `truth`.
/// SSIM is `None` for images smaller than the window.
pub fn evaluate_pair<T: Real>(restored: &Tensor<T>, truth: &Tensor<T>) -> Result<(f64, Option<f64>)> {
    let clipped = restored.clamp(T::zero(), T::one());
    let p = psnr(&clipped, truth, 1.0)?;
    let s = match ssim(&clipped, truth) {
        Ok(v) => Some(v),
        Err(Error::Shape { op: "ssim", .. }) => None,
        Err(e) => return Err(e),
    };
    Ok((p, s))
}
