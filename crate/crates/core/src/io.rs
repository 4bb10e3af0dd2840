//! Binary `RGT1` tensor files: the magic bytes `RGT1`, a little-endian `u32`
//! order, that many little-endian `u64` mode sizes, then the values as
//! little-endian `f64` in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, RgtnError};
use crate::tensor::DenseTensor;

pub const MAGIC: &[u8; 4] = b"RGT1";

pub fn encode_tensor(t: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.order() + 8 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.order() as u32).to_le_bytes());
    for &s in t.shape() {
        out.extend_from_slice(&(s as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_tensor<W: Write>(mut w: W, t: &DenseTensor) -> Result<()> {
    w.write_all(&encode_tensor(t))?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<DenseTensor> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(RgtnError::Format(format!("bad magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    read_exact(&mut r, &mut b4, "order")?;
    let order = u32::from_le_bytes(b4) as usize;
    if order == 0 {
        return Err(RgtnError::Format("order 0 tensor".into()));
    }
    let mut shape = Vec::with_capacity(order);
    let mut b8 = [0u8; 8];
    for _ in 0..order {
        read_exact(&mut r, &mut b8, "shape")?;
        let s = u64::from_le_bytes(b8);
        shape.push(usize::try_from(s).map_err(|_| RgtnError::Format("mode too large".into()))?);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &s| acc.checked_mul(s))
        .ok_or_else(|| RgtnError::Format("shape overflows".into()))?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != numel * 8 {
        return Err(RgtnError::Format(format!(
            "payload has {} bytes, expected {}",
            raw.len(),
            numel * 8
        )));
    }
    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    DenseTensor::new(shape, data).map_err(|e| RgtnError::Format(e.to_string()))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|_| RgtnError::Format(format!("truncated file while reading {what}")))
}

pub fn save_tensor(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    write_tensor(BufWriter::new(File::create(path)?), t)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    read_tensor(BufReader::new(File::open(path)?))
}
