//! Binary PGM (P5) and PPM (P6) images with 8-bit samples.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use irae_core::{Real, Tensor};

/// Decodes a P5/P6 file into a `[1, C, H, W]` tensor with values
/// `sample / maxval`.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    if bytes.len() < 2 || !matches!(&bytes[..2], b"P5" | b"P6") {
        let head = &bytes[..bytes.len().min(2)];
        bail!(
            "not a binary PGM/PPM file: magic bytes {:?} ({:02x?}), expected \"P5\" or \"P6\"",
            String::from_utf8_lossy(head),
            head
        );
    }
    let channels = if bytes[1] == b'5' { 1 } else { 3 };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (slot, name) in fields.iter_mut().zip(["width", "height", "maxval"]) {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        ensure!(pos > start, "malformed header: missing {name} at byte {start}");
        *slot = std::str::from_utf8(&bytes[start..pos])?
            .parse()
            .with_context(|| format!("malformed header: {name} out of range"))?;
    }
    let [w, h, maxval] = fields;
    ensure!(w > 0 && h > 0, "malformed header: zero image extent {w}x{h}");
    ensure!(
        (1..=255).contains(&maxval),
        "unsupported maxval {maxval}: only 8-bit samples are handled"
    );
    ensure!(
        bytes.get(pos).is_some_and(u8::is_ascii_whitespace),
        "malformed header: no whitespace after maxval"
    );
    pos += 1;
    let need = w * h * channels;
    let payload = &bytes[pos..];
    ensure!(
        payload.len() >= need,
        "short payload: {w}x{h}x{channels} needs {need} bytes, found {}",
        payload.len()
    );
    // interleaved HWC -> CHW
    let scale = maxval as f64;
    let data = (0..need)
        .map(|i| {
            let (c, p) = (i / (w * h), i % (w * h));
            T::from_f64_lossy(f64::from(payload[p * channels + c]) / scale)
        })
        .collect();
    Ok(Tensor::new(vec![1, channels, h, w], data)?)
}

/// Encodes a `[1, C, H, W]` tensor (C = 1 or 3) after clipping to `[0, 1]`
/// and rounding to 8 bits.
pub fn encode<T: Real>(img: &Tensor<T>) -> Result<Vec<u8>> {
    let (n, c, h, w) = img.dims4()?;
    ensure!(n == 1, "can only write a single image, got batch of {n}");
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => bail!("PNM needs 1 or 3 channels, got {c}"),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let d = img.data();
    for p in 0..h * w {
        for ch in 0..c {
            let v = d[ch * h * w + p].as_f64();
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn load_image<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode(&bytes).with_context(|| format!("decoding {}", path.display()))
}

pub fn save_image<T: Real>(img: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(img)?).with_context(|| format!("writing {}", path.display()))
}

pub fn is_pnm_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "ppm" | "pnm")
    )
}

/// PNM files directly inside `dir`, sorted by file name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.is_file() && is_pnm_path(p));
    paths.sort();
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p5_bytes_map_to_unit_range() {
        let mut f = b"P5\n2 2\n255\n".to_vec();
        f.extend_from_slice(&[0, 255, 128, 64]);
        let t: Tensor<f64> = decode(&f).unwrap();
        assert_eq!(t.shape(), &[1, 1, 2, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn comments_in_header() {
        let mut f = b"P5 # made by hand\n# another\n1 1 255\n".to_vec();
        f.push(51);
        let t: Tensor<f64> = decode(&f).unwrap();
        assert_eq!(t.data(), &[0.2]);
    }

    #[test]
    fn p6_round_trip_is_stable() {
        let mut f = b"P6\n3 2\n255\n".to_vec();
        f.extend((0..18u8).map(|v| v.wrapping_mul(37)));
        let t: Tensor<f32> = decode(&f).unwrap();
        assert_eq!(t.shape(), &[1, 3, 2, 3]);
        let again = encode(&t).unwrap();
        assert_eq!(again, f);
        let t2: Tensor<f32> = decode(&again).unwrap();
        assert_eq!(t, t2);
    }

    #[test]
    fn errors_are_descriptive() {
        let e = decode::<f32>(b"\x89PNG\r\n").unwrap_err().to_string();
        assert!(e.contains("magic bytes") && e.contains("[89, 50]"), "{e}");
        let e = decode::<f32>(b"P5\n4 4\n255\n\x00\x01").unwrap_err().to_string();
        assert!(e.contains("short payload"), "{e}");
        let e = decode::<f32>(b"P5\n4\n").unwrap_err().to_string();
        assert!(e.contains("height"), "{e}");
        let e = decode::<f32>(b"P5\n1 1\n65535\n\x00\x00").unwrap_err().to_string();
        assert!(e.contains("maxval"), "{e}");
    }
}
