use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::DenseArray;

const MAGIC: &[u8; 4] = b"RSTR";

/// `[H, W, C]` grid as `RSTR`, three little-endian u32 dims, then f64 values.
pub fn encode_raster(frame: &DenseArray) -> Result<Vec<u8>> {
    let [h, w, c] = *frame.shape() else {
        return Err(Error::Shape(format!("raster must be [H, W, C], got {:?}", frame.shape())));
    };
    let mut out = Vec::with_capacity(16 + frame.len() * 8);
    out.extend_from_slice(MAGIC);
    for v in [h, w, c] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in frame.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_raster(bytes: &[u8]) -> Result<DenseArray> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Data("not a raster file".into()));
    }
    let dim = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
    let shape = [dim(0), dim(1), dim(2)];
    let n: usize = shape.iter().product();
    if bytes.len() != 16 + 8 * n {
        return Err(Error::Data(format!(
            "raster {:?} needs {} bytes, file has {}",
            shape,
            16 + 8 * n,
            bytes.len()
        )));
    }
    let values = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseArray::from_vec(&shape, values)
}

pub fn write_raster(path: &Path, frame: &DenseArray) -> Result<()> {
    fs::write(path, encode_raster(frame)?)?;
    Ok(())
}

pub fn read_raster(path: &Path) -> Result<DenseArray> {
    decode_raster(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let a = DenseArray::from_vec(&[2, 1, 3], vec![1.0, -2.0, 0.5, 1e-300, 7.0, f64::MAX]).unwrap();
        let b = encode_raster(&a).unwrap();
        assert_eq!(decode_raster(&b).unwrap(), a);
        assert!(decode_raster(&b[..b.len() - 1]).is_err());
    }
}
