//! Little-endian binary containers.
//!
//! `GUDBASIS` layout (version 1):
//!
//! ```text
//! magic    8 bytes  "GUDBASIS"
//! version  u8
//! kind     u8       see KIND_* constants
//! height   u32
//! width    u32
//! channels u32
//! levels   u32      Haar levels (0 otherwise)
//! count    u32      number of samples for sample tensors (0 otherwise)
//! arrays   u32      number of f64 arrays that follow
//! per array: len u64, then len little-endian f64 values
//! ```
//!
//! A basis stores `scaling`, `labels` and, for the dense kind only, the
//! row-major per-channel orthogonal block. Sample tensors reuse the same
//! container with `KIND_SAMPLES` and a single `count * h * w * c` array.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{GudError, Result};

pub const BASIS_MAGIC: &[u8; 8] = b"GUDBASIS";
pub const BASIS_VERSION: u8 = 1;

pub const KIND_IDENTITY: u8 = 0;
pub const KIND_DENSE: u8 = 1;
pub const KIND_FFT2_REAL: u8 = 2;
pub const KIND_HAAR: u8 = 3;
pub const KIND_PERMUTATION: u8 = 4;
pub const KIND_SAMPLES: u8 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: u8,
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub levels: u32,
    pub count: u32,
    pub arrays: Vec<Vec<f64>>,
}

impl Container {
    /// Sample tensor container holding `count` samples of shape `(h, w, c)`.
    pub fn samples(shape: crate::Shape, samples: &[Vec<f64>]) -> Self {
        let flat: Vec<f64> = samples.iter().flatten().copied().collect();
        Container {
            kind: KIND_SAMPLES,
            height: shape.height as u32,
            width: shape.width as u32,
            channels: shape.channels as u32,
            levels: 0,
            count: samples.len() as u32,
            arrays: vec![flat],
        }
    }

    /// Split a sample container back into per-sample vectors.
    pub fn into_samples(self) -> Result<(crate::Shape, Vec<Vec<f64>>)> {
        if self.kind != KIND_SAMPLES {
            return Err(GudError::Format(format!("expected sample tensor, found kind {}", self.kind)));
        }
        let shape = crate::Shape::new(self.height as usize, self.width as usize, self.channels as usize)?;
        let d = shape.dim();
        let flat = self.arrays.into_iter().next().unwrap_or_default();
        if flat.len() != d * self.count as usize {
            return Err(GudError::Format("sample payload length does not match header".into()));
        }
        Ok((shape, flat.chunks(d.max(1)).map(<[f64]>::to_vec).collect()))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BASIS_MAGIC)?;
        w.write_all(&[BASIS_VERSION, self.kind])?;
        for v in [self.height, self.width, self.channels, self.levels, self.count] {
            write_u32(&mut w, v)?;
        }
        write_u32(&mut w, self.arrays.len() as u32)?;
        for a in &self.arrays {
            write_f64_array(&mut w, a)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != BASIS_MAGIC {
            return Err(GudError::Format("bad magic, expected GUDBASIS".into()));
        }
        let mut vk = [0u8; 2];
        r.read_exact(&mut vk).map_err(truncated)?;
        if vk[0] != BASIS_VERSION {
            return Err(GudError::Format(format!("unsupported version {}", vk[0])));
        }
        let height = read_u32(&mut r)?;
        let width = read_u32(&mut r)?;
        let channels = read_u32(&mut r)?;
        let levels = read_u32(&mut r)?;
        let count = read_u32(&mut r)?;
        let n_arrays = read_u32(&mut r)?;
        if n_arrays > 16 {
            return Err(GudError::Format(format!("implausible array count {n_arrays}")));
        }
        let arrays = (0..n_arrays).map(|_| read_f64_array(&mut r)).collect::<Result<_>>()?;
        Ok(Container { kind: vk[1], height, width, channels, levels, count, arrays })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

pub(crate) fn truncated(e: std::io::Error) -> GudError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        GudError::Format("truncated payload".into())
    } else {
        GudError::Io(e)
    }
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn write_f64_array<W: Write>(w: &mut W, a: &[f64]) -> Result<()> {
    w.write_all(&(a.len() as u64).to_le_bytes())?;
    for v in a {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64_array<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    let len = u64::from_le_bytes(b);
    if len > (1 << 32) {
        return Err(GudError::Format(format!("implausible array length {len}")));
    }
    let mut out = Vec::with_capacity(len as usize);
    for _ in 0..len {
        r.read_exact(&mut b).map_err(truncated)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_bits() {
        let c = Container {
            kind: KIND_HAAR,
            height: 4,
            width: 4,
            channels: 1,
            levels: 2,
            count: 0,
            arrays: vec![vec![1.0, -0.0, f64::MIN_POSITIVE], vec![]],
        };
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"GUDBASIS");
        assert_eq!(buf[8], BASIS_VERSION);
        let back = Container::read_from(&buf[..]).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.arrays[0][1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn truncated_and_bad_magic_are_rejected() {
        let c = Container {
            kind: KIND_IDENTITY,
            height: 1,
            width: 2,
            channels: 1,
            levels: 0,
            count: 0,
            arrays: vec![vec![1.0, 1.0]],
        };
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let cut = &buf[..buf.len() - 3];
        assert!(matches!(Container::read_from(cut), Err(GudError::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Container::read_from(&bad[..]), Err(GudError::Format(_))));
    }
}
