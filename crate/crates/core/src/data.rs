//! Tiny-image ingestion, dequantisation and centring, and synthetic mixtures.

use std::io::{Read, Write};
use std::path::Path;

use rand::RngCore;

use crate::basis::Shape;
use crate::container::{read_u32, truncated, write_u32};
use crate::error::{invalid, GudError, Result};
use crate::process::GaussianMixture;
use crate::rng;

pub const IMAGES_MAGIC: &[u8; 7] = b"GUDIMGS";
pub const IMAGES_VERSION: u8 = 1;

/// Dequantisation noise lives on this grid and the stored mean on a finer
/// one, so centring and un-centring are exact in `f64`.
const NOISE_SCALE: f64 = 1.0 / 4_294_967_296.0;
const MEAN_GRID: f64 = 1_099_511_627_776.0;

/// Raw 8-bit images, row-major `(row, col, channel)` per image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    shape: Shape,
    count: usize,
    pixels: Vec<u8>,
}

impl RawImages {
    pub fn new(shape: Shape, pixels: Vec<u8>) -> Result<Self> {
        let d = shape.dim();
        if d == 0 || !pixels.len().is_multiple_of(d) {
            return Err(invalid(format!("{} pixels do not split into images of size {d}", pixels.len())));
        }
        Ok(RawImages { shape, count: pixels.len() / d, pixels })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let d = self.shape.dim();
        &self.pixels[i * d..(i + 1) * d]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(IMAGES_MAGIC)?;
        w.write_all(&[IMAGES_VERSION])?;
        for v in [self.count, self.shape.height, self.shape.width, self.shape.channels] {
            write_u32(&mut w, v as u32)?;
        }
        w.write_all(&self.pixels)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != IMAGES_MAGIC {
            return Err(GudError::Format("not a GUDIMGS file".into()));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version).map_err(truncated)?;
        if version[0] != IMAGES_VERSION {
            return Err(GudError::Format(format!("unsupported image file version {}", version[0])));
        }
        let n = read_u32(&mut r)? as usize;
        let h = read_u32(&mut r)? as usize;
        let w = read_u32(&mut r)? as usize;
        let c = read_u32(&mut r)? as usize;
        let shape = Shape::new(h, w, c).map_err(|e| GudError::Format(e.to_string()))?;
        let len = n
            .checked_mul(shape.dim())
            .ok_or_else(|| GudError::Format("image payload size overflows".into()))?;
        let mut pixels = Vec::new();
        r.take(len as u64).read_to_end(&mut pixels)?;
        if pixels.len() != len {
            return Err(GudError::Format(format!("truncated payload: expected {len} bytes, got {}", pixels.len())));
        }
        Ok(RawImages { shape, count: n, pixels })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::with_capacity(24 + self.pixels.len());
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }

    /// One image per line, comma-separated integer pixels in storage order.
    pub fn from_csv(text: &str, shape: Shape) -> Result<Self> {
        let mut pixels = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let before = pixels.len();
            for field in line.split(',') {
                let v: u8 = field
                    .trim()
                    .parse()
                    .map_err(|_| invalid(format!("line {}: '{}' is not a pixel value in 0..=255", no + 1, field.trim())))?;
                pixels.push(v);
            }
            if pixels.len() - before != shape.dim() {
                return Err(invalid(format!(
                    "line {}: expected {} values, got {}",
                    no + 1,
                    shape.dim(),
                    pixels.len() - before
                )));
            }
        }
        Self::new(shape, pixels)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.count {
            let row: Vec<String> = self.image(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Preprocessed samples. `samples` are mean-free in data space; `mean` is
/// the training-split mean that was removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub shape: Shape,
    pub samples: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub levels: Option<u32>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, which: Split) -> Vec<Vec<f64>> {
        self.samples.iter().zip(&self.splits).filter(|(_, s)| **s == which).map(|(x, _)| x.clone()).collect()
    }

    /// Add the stored mean back.
    pub fn uncenter(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).map(|(a, m)| a + m).collect()
    }

    /// Map a centred sample back to integer pixels.
    pub fn requantize(&self, x: &[f64]) -> Result<Vec<u8>> {
        let levels = self.levels.ok_or_else(|| invalid("dataset is not quantised"))?;
        Ok(self.uncenter(x).iter().map(|&v| requantize_value(v, levels)).collect())
    }
}

pub fn requantize_value(x: f64, levels: u32) -> u8 {
    let q = ((x + 1.0) * levels as f64 / 2.0).floor();
    q.clamp(0.0, (levels - 1) as f64) as u8
}

/// `x = 2 (raw + u) / levels - 1` with `u ~ U[0, 1)` drawn once per pixel
/// (stream `i` of `seed` for image `i`), then the training-split mean is
/// removed. The last `test_count` images form the test split.
pub fn dequantize_and_center(raw: &RawImages, levels: u32, seed: u64, test_count: usize) -> Result<Dataset> {
    if !(2..=256).contains(&levels) {
        return Err(invalid(format!("levels must lie in 2..=256, got {levels}")));
    }
    if let Some(&bad) = raw.pixels.iter().find(|&&p| p as u32 >= levels) {
        return Err(invalid(format!("pixel value {bad} out of range for {levels} levels")));
    }
    if test_count > raw.len() {
        return Err(invalid("test split larger than the dataset"));
    }
    let d = raw.shape.dim();
    let scale = 2.0 / levels as f64;
    let mut samples: Vec<Vec<f64>> = (0..raw.len())
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            raw.image(i)
                .iter()
                .map(|&p| (p as f64 + r.next_u32() as f64 * NOISE_SCALE) * scale - 1.0)
                .collect()
        })
        .collect();
    let n_train = raw.len() - test_count;
    let mut mean = vec![0.0; d];
    if n_train > 0 {
        for x in &samples[..n_train] {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m = (*m / n_train as f64 * MEAN_GRID).round() / MEAN_GRID;
        }
    }
    for x in &mut samples {
        for (v, m) in x.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let splits = (0..raw.len()).map(|i| if i < n_train { Split::Train } else { Split::Test }).collect();
    Ok(Dataset { shape: raw.shape, samples, mean, levels: Some(levels), splits })
}

/// `n` exact mixture draws, all in the training split, zero stored mean.
pub fn synth_mixture(mix: &GaussianMixture, n: usize, seed: u64) -> Dataset {
    let d = mix.means()[0].len();
    Dataset {
        shape: Shape::vector(d),
        samples: mix.synth(n, seed),
        mean: vec![0.0; d],
        levels: None,
        splits: vec![Split::Train; n],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw() -> RawImages {
        let shape = Shape::new(2, 3, 1).unwrap();
        RawImages::new(shape, (0..24).map(|v| (v * 10) as u8).collect()).unwrap()
    }

    #[test]
    fn image_file_roundtrip_and_errors() {
        let r = raw();
        let mut buf = Vec::new();
        r.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 16 + 24);
        assert_eq!(RawImages::read_from(buf.as_slice()).unwrap(), r);
        assert!(matches!(RawImages::read_from(&buf[..buf.len() - 1]), Err(GudError::Format(_))));
        assert!(RawImages::read_from(&buf[..10]).is_err());
        let empty = RawImages::new(Shape::new(4, 4, 3).unwrap(), vec![]).unwrap();
        let mut buf = Vec::new();
        empty.write_to(&mut buf).unwrap();
        assert!(RawImages::read_from(buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn endpoints_of_dequantisation() {
        assert_eq!((0.0 + 0.0) * 2.0 / 256.0 - 1.0, -1.0);
        let top = (255.0 + u32::MAX as f64 * NOISE_SCALE) * 2.0 / 256.0 - 1.0;
        assert!(top < 1.0 && top > 1.0 - 1e-9);
    }

    #[test]
    fn centring_is_exact_and_invertible() {
        let r = raw();
        let ds = dequantize_and_center(&r, 256, 7, 1).unwrap();
        let train = ds.split(Split::Train);
        assert_eq!(train.len(), 3);
        for i in 0..6 {
            let m: f64 = train.iter().map(|x| x[i]).sum::<f64>() / 3.0;
            assert!(m.abs() <= 1e-10);
        }
        for (i, x) in ds.samples.iter().enumerate() {
            assert_eq!(ds.requantize(x).unwrap(), r.image(i));
            let back = ds.uncenter(x);
            let again: Vec<f64> = back.iter().zip(&ds.mean).map(|(a, m)| a - m).collect();
            assert_eq!(&again, x);
        }
    }

    #[test]
    fn out_of_range_pixels_rejected() {
        assert!(dequantize_and_center(&raw(), 16, 0, 0).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let r = raw();
        let back = RawImages::from_csv(&r.to_csv(), r.shape()).unwrap();
        assert_eq!(back, r);
        assert!(RawImages::from_csv("1,2,3\n", r.shape()).is_err());
        assert!(RawImages::from_csv("1,2,3,4,5,300\n", r.shape()).is_err());
    }
}
