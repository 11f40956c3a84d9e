//! Blockwise DCT quantization round trip standing in for a JPEG codec.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Standard luminance quantization table (row-major, natural order).
pub const BASE_LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Quantization table for quality factor `qf` in `1..=100`.
///
/// `scale = 5000 / qf` (integer division) below 50, else `200 - 2 qf`;
/// entries are `clamp(round(base * scale / 100), 1, 255)`.
pub fn quant_table(qf: u8) -> Result<[u16; 64]> {
    if !(1..=100).contains(&qf) {
        return Err(Error::InvalidDegradation(format!(
            "quality factor {qf} outside 1..=100"
        )));
    }
    let q = u32::from(qf);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut t = [0u16; 64];
    for (dst, &b) in t.iter_mut().zip(&BASE_LUMA_TABLE) {
        let v = (u32::from(b) * scale + 50) / 100;
        *dst = v.clamp(1, 255) as u16;
    }
    Ok(t)
}

/// `cos((2x + 1) u pi / 16)` scaled by the orthonormal factors, `[u][x]`.
fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let cu = if u == 0 { (0.125f64).sqrt() } else { 0.5 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = cu * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        b
    })
}

fn dct8x8(block: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| b[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| b[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

fn idct8x8(coef: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| b[u][x] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| b[v][y] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

/// One `h x w` plane in `[0, 1]`.
fn compress_plane(plane: &[f64], h: usize, w: usize, table: &[u16; 64]) -> Vec<f64> {
    let ph = h.div_ceil(8) * 8;
    let pw = w.div_ceil(8) * 8;
    // edge replication
    let padded: Vec<f64> = (0..ph * pw)
        .map(|i| {
            let (y, x) = ((i / pw).min(h - 1), (i % pw).min(w - 1));
            plane[y * w + x]
        })
        .collect();
    let mut out = vec![0.0; ph * pw];
    for by in (0..ph).step_by(8) {
        for bx in (0..pw).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = padded[(by + y) * pw + bx + x] * 255.0 - 128.0;
                }
            }
            let mut coef = dct8x8(&block);
            for (c, &q) in coef.iter_mut().zip(table) {
                let q = f64::from(q);
                *c = (*c / q).round() * q;
            }
            let rec = idct8x8(&coef);
            for y in 0..8 {
                for x in 0..8 {
                    let v = (rec[y * 8 + x] + 128.0) / 255.0;
                    out[(by + y) * pw + bx + x] = v.clamp(0.0, 1.0);
                }
            }
        }
    }
    (0..h * w).map(|i| out[(i / w) * pw + i % w]).collect()
}

/// Applies the DCT-quantization round trip to every plane of an NCHW image.
pub fn apply_jpeg_sim<T: Real>(x: &Tensor<T>, qf: u8) -> Result<Tensor<T>> {
    let table = quant_table(qf)?;
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let mut out = Vec::with_capacity(x.numel());
    for p in 0..n * c {
        let plane: Vec<f64> = x.data()[p * hw..(p + 1) * hw].iter().map(|v| v.as_f64()).collect();
        out.extend(compress_plane(&plane, h, w, &table).into_iter().map(T::from_f64_lossy));
    }
    Tensor::new(x.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qf50_is_base_table() {
        let t = quant_table(50).unwrap();
        assert!(t.iter().zip(&BASE_LUMA_TABLE).all(|(a, b)| a == b));
    }

    #[test]
    fn table_scaling() {
        assert!(quant_table(100).unwrap().iter().all(|&v| v == 1));
        // QF 10: scale 500, 16 -> 80
        assert_eq!(quant_table(10).unwrap()[0], 80);
        assert_eq!(quant_table(1).unwrap()[63], 255);
    }

    #[test]
    fn qf_out_of_range() {
        assert!(quant_table(0).is_err());
        assert!(quant_table(101).is_err());
    }

    #[test]
    fn dct_round_trip() {
        let block: [f64; 64] = std::array::from_fn(|i| ((i * 37) % 64) as f64 - 30.0);
        let back = idct8x8(&dct8x8(&block));
        for (a, b) in back.iter().zip(&block) {
            assert!((a - b).abs() < 1e-10);
        }
        // DC of a constant block is 8x the value
        let c = [3.0; 64];
        assert!((dct8x8(&c)[0] - 24.0).abs() < 1e-12);
    }

    #[test]
    fn constant_image_within_one_dc_step() {
        for qf in [10u8, 40, 75] {
            let q0 = f64::from(quant_table(qf).unwrap()[0]);
            let x = Tensor::<f64>::full(vec![1, 1, 12, 10], 0.437);
            let y = apply_jpeg_sim(&x, qf).unwrap();
            // DC rounding error is at most q0/2 in the coefficient, q0/16 per pixel
            let bound = q0 / 16.0 / 255.0 + 1e-12;
            assert!(y.max_abs_diff(&x).unwrap() <= bound, "qf {qf}");
            let first = y.data()[0];
            assert!(y.data().iter().all(|v| (v - first).abs() < 1e-12));
        }
    }
}
