//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "IRAE"            4 bytes magic
//! version           u32 (= 1)
//! k, levels,
//! hidden, channels  u32 x 4
//! precision         u8 (32 or 64)
//! seed              u64
//! initialized       u8 (0 or 1)
//! count             u64 number of parameters
//! params            count x f32, in IraeModel::params() order
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{IraeConfig, IraeModel, Precision};
use crate::error::{Error, Result};
use crate::tensor::Real;

pub const MAGIC: &[u8; 4] = b"IRAE";
pub const VERSION: u32 = 1;

fn u32_field(v: usize, name: &str) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Checkpoint(format!("{name} = {v} does not fit in u32")))
}

pub fn write_checkpoint<T: Real, W: Write>(model: &IraeModel<T>, mut w: W) -> Result<()> {
    let cfg = model.config();
    let mut buf = Vec::with_capacity(64 + 4 * model.param_count());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&u32_field(cfg.k, "k")?);
    buf.extend_from_slice(&u32_field(cfg.levels, "levels")?);
    buf.extend_from_slice(&u32_field(cfg.hidden, "hidden")?);
    buf.extend_from_slice(&u32_field(cfg.in_channels, "in_channels")?);
    buf.push(cfg.precision.bits());
    buf.extend_from_slice(&cfg.seed.to_le_bytes());
    buf.push(u8::from(model.is_initialized()));
    buf.extend_from_slice(&(model.param_count() as u64).to_le_bytes());
    for p in model.params() {
        for v in p.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!(
                "truncated file: {what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint. The architecture comes from the file; callers that
/// expect a particular config compare it against [`IraeModel::config`].
pub fn read_checkpoint<T: Real, R: Read>(mut r: R) -> Result<IraeModel<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected \"IRAE\"",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let k = c.u32("k")? as usize;
    let levels = c.u32("levels")? as usize;
    let hidden = c.u32("hidden")? as usize;
    let in_channels = c.u32("in_channels")? as usize;
    let bits = c.u8("precision")?;
    let precision = Precision::from_bits(bits)
        .ok_or_else(|| Error::Checkpoint(format!("bad precision tag {bits}")))?;
    let seed = c.u64("seed")?;
    let initialized = match c.u8("initialized")? {
        0 => false,
        1 => true,
        v => return Err(Error::Checkpoint(format!("bad initialized flag {v}"))),
    };
    let count = c.u64("parameter count")?;
    let config = IraeConfig {
        k,
        levels,
        hidden,
        in_channels,
        precision,
        seed,
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("stored config invalid: {e}")))?;
    let expected = config.param_count();
    if count != expected as u64 {
        return Err(Error::Checkpoint(format!(
            "stored parameter count {count} does not match config ({expected})"
        )));
    }
    let payload = c.take(4 * expected, "parameters")?;
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after parameters",
            bytes.len() - c.pos
        )));
    }
    let mut model = IraeModel::<T>::build(config)?;
    let mut values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()));
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v = T::from_f64_lossy(f64::from(values.next().expect("length checked")));
        }
    }
    model.set_initialized(initialized);
    Ok(model)
}

pub fn save_checkpoint<T: Real>(model: &IraeModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<IraeModel<T>> {
    read_checkpoint(fs::File::open(path)?)
}
