//! Image-space feature arrays and the `TFM1` file format.
//!
//! `TFM1` (little-endian): magic `b"TFM1"`, `u32` height, width, channels,
//! then `height * width * channels` `f32` values indexed
//! `(row * width + col) * channels + channel`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const TFM_MAGIC: &[u8; 4] = b"TFM1";

/// `height x width x channels` array of `f32`, channel-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch {
                expected: format!("{height}x{width}x{channels} = {} values", height * width * channels),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Self { height, width, channels, data })
    }

    /// Builds a single-channel map from a function of `(col, row)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Self { height, width, channels: 1, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f32) {
        self.data[(row * self.width + col) * self.channels + ch] = v;
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn check_same_dims(&self, other: &FeatureMap) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: fmt_dims(self.dims()),
                actual: fmt_dims(other.dims()),
            });
        }
        Ok(())
    }

    /// Per-pixel L2 norm across channels.
    pub fn channel_norm(&self) -> FeatureMap {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().map(|v| v * v).sum::<f32>().sqrt())
            .collect();
        FeatureMap { height: self.height, width: self.width, channels: 1, data }
    }

    /// Keeps the listed channels, in order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<FeatureMap> {
        if let Some(&bad) = channels.iter().find(|&&c| c >= self.channels) {
            return Err(Error::InvalidArgument(format!(
                "channel {bad} out of range for a {}-channel map",
                self.channels
            )));
        }
        let mut data = Vec::with_capacity(self.height * self.width * channels.len());
        for px in self.data.chunks_exact(self.channels) {
            data.extend(channels.iter().map(|&c| px[c]));
        }
        Ok(FeatureMap { height: self.height, width: self.width, channels: channels.len(), data })
    }

    /// Mean over pixels and channels of the squared difference.
    pub fn mse(&self, other: &FeatureMap) -> Result<f64> {
        self.check_same_dims(other)?;
        if self.data.is_empty() {
            return Ok(0.0);
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }

    pub fn flip_horizontal(&self) -> FeatureMap {
        let mut out = FeatureMap::zeros(self.height, self.width, self.channels);
        for row in 0..self.height {
            for col in 0..self.width {
                for ch in 0..self.channels {
                    out.set(row, self.width - 1 - col, ch, self.get(row, col, ch));
                }
            }
        }
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(TFM_MAGIC)?;
        for d in [self.height, self.width, self.channels] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + self.data.len() * 4);
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(r: &mut impl Read, context: &str) -> Result<FeatureMap> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, context, "magic")?;
        if &magic != TFM_MAGIC {
            return Err(Error::format(
                context,
                format!("bad magic {:?}, expected \"TFM1\"", String::from_utf8_lossy(&magic)),
            ));
        }
        let height = read_u32(r, context, "height")? as usize;
        let width = read_u32(r, context, "width")? as usize;
        let channels = read_u32(r, context, "channels")? as usize;
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::format(context, "dimensions overflow"))?;
        let data = read_f32s(r, n, context, "payload")?;
        Ok(FeatureMap { height, width, channels, data })
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<FeatureMap> {
        let mut cursor = bytes;
        let map = Self::read_from(&mut cursor, context)?;
        if !cursor.is_empty() {
            return Err(Error::format(context, format!("{} trailing bytes", cursor.len())));
        }
        Ok(map)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FeatureMap> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

pub(crate) fn fmt_dims((h, w, c): (usize, usize, usize)) -> String {
    format!("{h}x{w}x{c}")
}

pub(crate) fn read_exact(r: &mut impl Read, buf: &mut [u8], context: &str, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(context, format!("truncated while reading {what}")),
        _ => Error::format(context, format!("{what}: {e}")),
    })
}

pub(crate) fn read_u32(r: &mut impl Read, context: &str, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, context, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f32(r: &mut impl Read, context: &str, what: &str) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, context, what)?;
    Ok(f32::from_le_bytes(b))
}

pub(crate) fn read_f32s(r: &mut impl Read, n: usize, context: &str, what: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    read_exact(r, &mut bytes, context, what)?;
    Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = FeatureMap::from_vec(1, 2, 1, vec![1.0, -2.5]).unwrap();
        let b = m.to_bytes();
        assert_eq!(&b[0..4], b"TFM1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
        assert_eq!(f32::from_le_bytes(b[20..24].try_into().unwrap()), -2.5);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut b = FeatureMap::zeros(2, 2, 3).to_bytes();
        let good = b.clone();
        b[0..4].copy_from_slice(b"XXXX");
        assert!(matches!(FeatureMap::from_bytes(&b, "t"), Err(Error::Format { .. })));
        let err = FeatureMap::from_bytes(&good[..good.len() - 2], "t").unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn mse_is_mean_over_pixels_and_channels() {
        let a = FeatureMap::from_vec(1, 2, 2, vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let b = FeatureMap::from_vec(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(a.mse(&b).unwrap(), 0.5);
        assert!(a.mse(&FeatureMap::zeros(2, 1, 2)).is_err());
    }

    proptest! {
        #[test]
        fn tfm_roundtrip(h in 0usize..6, w in 0usize..6, c in 1usize..5, seed in any::<u64>()) {
            let data: Vec<f32> = (0..h * w * c)
                .map(|i| f32::from_bits((seed as u32).wrapping_mul(2654435761).wrapping_add(i as u32) & 0x7f7f_ffff))
                .collect();
            let m = FeatureMap::from_vec(h, w, c, data).unwrap();
            let back = FeatureMap::from_bytes(&m.to_bytes(), "prop").unwrap();
            prop_assert_eq!(back.dims(), m.dims());
            prop_assert!(back.data().iter().zip(m.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
