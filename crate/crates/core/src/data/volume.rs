//! PIFV volume files.
//!
//! Layout, all little-endian:
//!
//! | bytes | content                                  |
//! |-------|------------------------------------------|
//! | 4     | magic `PIFV`                             |
//! | 2     | version, `u16` = 1                       |
//! | 16    | channels, depth, height, width (`u32`s)  |
//! | 4·n   | `f32` samples in `(C, D, H, W)` row-major |
//!
//! Values are stored as `f32`; a tensor whose entries are already exactly
//! representable in `f32` round-trips bit for bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PIFV";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 16;

/// Largest sample count a header may declare.
pub const MAX_SAMPLES: u64 = 1 << 32;

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Encodes a `(C, D, H, W)` tensor.
pub fn encode_volume(volume: &Tensor) -> Result<Vec<u8>> {
    let shape = volume.shape();
    if shape.len() != 4 {
        return Err(Error::InvalidShape(format!(
            "volumes are (C, D, H, W), got {shape:?}"
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * volume.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for &e in shape {
        let e = u32::try_from(e).map_err(|_| Error::InvalidShape(format!("extent {e} exceeds u32")))?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    for &v in volume.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Decodes bytes read from `path` (used only in error messages).
pub fn decode_volume(bytes: &[u8], path: &Path) -> Result<Tensor> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(format_err(path, "bad magic, not a PIFV file"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_err(path, format!("truncated header ({} bytes)", bytes.len())));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let mut shape = [0usize; 4];
    let mut count: u64 = 1;
    for (i, e) in shape.iter_mut().enumerate() {
        let at = 6 + 4 * i;
        let v = u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        if v == 0 {
            return Err(format_err(path, "zero extent in header"));
        }
        count = count
            .checked_mul(u64::from(v))
            .filter(|&c| c <= MAX_SAMPLES)
            .ok_or_else(|| format_err(path, "header extents overflow"))?;
        *e = v as usize;
    }
    let payload = &bytes[HEADER_LEN..];
    let want = count as usize * 4;
    if payload.len() < want {
        return Err(format_err(
            path,
            format!("truncated payload: {} of {want} bytes", payload.len()),
        ));
    }
    if payload.len() > want {
        return Err(format_err(
            path,
            format!("{} trailing bytes after payload", payload.len() - want),
        ));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    let t = Tensor::new(shape.to_vec(), data)?;
    t.check_finite("read volume")?;
    Ok(t)
}

pub fn write_volume(volume: &Tensor, path: &Path) -> Result<()> {
    let bytes = encode_volume(volume)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_volume(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes, path)
}

/// Rounds every entry to the nearest `f32`, the precision stored on disk.
pub fn to_storage_precision(t: &Tensor) -> Tensor {
    t.map(|v| f64::from(v as f32))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor {
        let data: Vec<f64> = (0..24).map(|i| f64::from(i as f32 * 0.37)).collect();
        Tensor::new(vec![1, 2, 3, 4], data).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.pifv");
        let t = sample();
        write_volume(&t, &path).unwrap();
        let back = read_volume(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&t));
    }

    #[test]
    fn header_layout() {
        let bytes = encode_volume(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"PIFV");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[1, 0, 0, 0]);
        assert_eq!(&bytes[18..22], &[4, 0, 0, 0]);
        assert_eq!(bytes.len(), HEADER_LEN + 24 * 4);
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = encode_volume(&sample()).unwrap();
        bytes[0] = b'X';
        let err = decode_volume(&bytes, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn truncated_payload() {
        let t = Tensor::full(&[1, 2, 2, 2], 1.0);
        let bytes = encode_volume(&t).unwrap();
        // seven samples where eight are declared
        let err = decode_volume(&bytes[..HEADER_LEN + 7 * 4], Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn overflowing_extents() {
        let mut bytes = encode_volume(&Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
        for i in 0..4 {
            bytes[6 + 4 * i..10 + 4 * i].copy_from_slice(&u32::MAX.to_le_bytes());
        }
        let err = decode_volume(&bytes, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("overflow"), "{err}");
    }

    #[test]
    fn wrong_version_and_trailing_bytes() {
        let mut bytes = encode_volume(&Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
        bytes.push(0);
        assert!(decode_volume(&bytes, Path::new("x")).is_err());
        bytes.pop();
        bytes[4] = 2;
        assert!(decode_volume(&bytes, Path::new("x")).is_err());
    }
}
