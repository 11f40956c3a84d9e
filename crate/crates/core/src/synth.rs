//! Seeded synthetic images for desk-scale experiments: a smooth gradient
//! background with soft blobs and a few hard-edged rectangles.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Real, Tensor};

/// One `[1, channels, h, w]` image in `[0, 1]`.
pub fn synthetic_image<T: Real>(channels: usize, h: usize, w: usize, rng: &mut impl Rng) -> Tensor<T> {
    let mut data = Vec::with_capacity(channels * h * w);
    let (fh, fw) = (h as f64, w as f64);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..rng.gen_range(1..=3))
        .map(|_| {
            (
                rng.gen_range(0.0..fh),
                rng.gen_range(0.0..fw),
                rng.gen_range(0.15..0.4) * fh.min(fw),
                rng.gen_range(-0.4..0.4),
            )
        })
        .collect();
    let rects: Vec<(usize, usize, usize, usize, f64)> = (0..rng.gen_range(1..=2))
        .map(|_| {
            let (y0, x0) = (rng.gen_range(0..h), rng.gen_range(0..w));
            let (y1, x1) = (rng.gen_range(y0 + 1..=h), rng.gen_range(x0 + 1..=w));
            (y0, x0, y1, x1, rng.gen_range(-0.3..0.3))
        })
        .collect();
    for _ in 0..channels {
        let base = rng.gen_range(0.25..0.75);
        let (gy, gx) = (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
        let tint = rng.gen_range(0.8..1.2);
        for y in 0..h {
            for x in 0..w {
                let (fy, fx) = (y as f64, x as f64);
                let mut v = base + gy * (fy / fh - 0.5) + gx * (fx / fw - 0.5);
                for &(cy, cx, r, a) in &blobs {
                    let d2 = (fy - cy).powi(2) + (fx - cx).powi(2);
                    v += tint * a * (-d2 / (2.0 * r * r)).exp();
                }
                for &(y0, x0, y1, x1, a) in &rects {
                    if (y0..y1).contains(&y) && (x0..x1).contains(&x) {
                        v += tint * a;
                    }
                }
                data.push(T::from_f64_lossy(v.clamp(0.0, 1.0)));
            }
        }
    }
    Tensor::new(vec![1, channels, h, w], data).expect("sizes match")
}

/// `n` images from a single seeded stream.
pub fn synthetic_dataset<T: Real>(n: usize, channels: usize, h: usize, w: usize, seed: u64) -> Vec<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| synthetic_image(channels, h, w, &mut rng)).collect()
}
