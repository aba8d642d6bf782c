//! TNS binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size      | field                         |
//! |--------|-----------|-------------------------------|
//! | 0      | 4         | magic `TNSR`                  |
//! | 4      | 1         | version, must be 1            |
//! | 5      | 1         | dtype code, 0 = f32           |
//! | 6      | 1         | ndim                          |
//! | 7      | 1         | padding, written as 0         |
//! | 8      | 8 * ndim  | dims as u64                   |
//! | ...    | 4 * numel | row-major f32 payload         |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TNSR";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let shape = t.shape();
    let mut out = Vec::with_capacity(8 + 8 * shape.len() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F32);
    out.push(shape.len() as u8);
    out.push(0);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a TNS buffer; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 8 {
        return Err(bad(format!("header truncated ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(bad(format!("bad magic {:?}", &bytes[0..4])));
    }
    if bytes[4] != VERSION {
        return Err(bad(format!("unsupported version {}", bytes[4])));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(bad(format!("unsupported dtype code {}", bytes[5])));
    }
    let ndim = bytes[6] as usize;
    let dims_end = 8 + 8 * ndim;
    if bytes.len() < dims_end {
        return Err(bad("dims truncated".into()));
    }
    let shape: Vec<usize> = bytes[8..dims_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad("dims overflow".into()))?;
    let payload = &bytes[dims_end..];
    if payload.len() != numel * 4 {
        return Err(bad(format!(
            "payload is {} bytes, expected {} for shape {shape:?}",
            payload.len(),
            numel * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data).map_err(|e| bad(e.to_string()))
}

pub fn write(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::from_rows(&[[1.0f32, 2.0, 3.0]]);
        let b = encode(&t);
        assert_eq!(&b[..8], b"TNSR\x01\x00\x02\x00");
        assert_eq!(&b[8..16], &1u64.to_le_bytes());
        assert_eq!(&b[16..24], &3u64.to_le_bytes());
        assert_eq!(&b[24..28], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 24 + 12);
    }

    #[test]
    fn rejects_unknown_header_fields() {
        let t = Tensor::from_rows(&[[1.0f32]]);
        let p = Path::new("x.tns");
        for (pos, val) in [(0usize, b'X'), (4, 2), (5, 1)] {
            let mut b = encode(&t);
            b[pos] = val;
            assert!(matches!(decode(&b, p), Err(Error::Format { .. })), "byte {pos}");
        }
        let b = encode(&t);
        assert!(decode(&b[..b.len() - 1], p).is_err());
        assert!(decode(&b[..5], p).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let t = crate::rng::rng_normal(crate::rng::RngStream::new(seed, 0), &[rows, cols], 0.0, 3.0).unwrap();
            let back = decode(&encode(&t), Path::new("mem")).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
