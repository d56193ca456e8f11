//! Ingestion of externally extracted feature maps.
//!
//! Raw layout (little-endian): `u32 height, u32 width, u32 channels`, then
//! `height * width * channels` f32 values in row-major HWC order. Masks use the
//! same layout with one channel; values above 0.5 are foreground.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{read_exact, read_u32, FeatureMap};

pub const PCA_COMPONENTS: usize = 3;
/// Eigenvalues below this fraction of the largest are treated as zero variance.
pub const RANK_TOLERANCE: f64 = 1e-10;
const MAX_RAW_ELEMENTS: usize = 1 << 30;

/// Unreduced feature map; same layout as [`FeatureMap`] but any channel count.
pub type RawFeatureMap = FeatureMap;

pub fn read_raw(r: &mut impl Read, context: &str) -> Result<RawFeatureMap> {
    let h = read_u32(r, context, "height")? as usize;
    let w = read_u32(r, context, "width")? as usize;
    let c = read_u32(r, context, "channels")? as usize;
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::format(context, format!("empty raw map {h}x{w}x{c}")));
    }
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .filter(|&n| n <= MAX_RAW_ELEMENTS)
        .ok_or_else(|| Error::format(context, format!("raw map {h}x{w}x{c} is too large")))?;
    let mut bytes = vec![0u8; n * 4];
    read_exact(r, &mut bytes, context, "feature data")?;
    let data: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(context, "raw map contains non-finite values"));
    }
    FeatureMap::from_vec(h, w, c, data)
}

pub fn write_raw(map: &RawFeatureMap, w: &mut impl Write) -> std::io::Result<()> {
    for d in [map.height(), map.width(), map.channels()] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in map.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_raw(path: impl AsRef<Path>) -> Result<RawFeatureMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    let mut cursor = bytes.as_slice();
    let map = read_raw(&mut cursor, &ctx)?;
    if !cursor.is_empty() {
        return Err(Error::format(ctx, format!("{} trailing bytes", cursor.len())));
    }
    Ok(map)
}

pub fn save_raw(map: &RawFeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(12 + 4 * map.data().len());
    write_raw(map, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Loads a one-channel raw mask as per-pixel foreground flags.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Vec<bool>> {
    let map = load_raw(path.as_ref())?;
    if map.channels() != 1 {
        return Err(Error::format(path.as_ref().display().to_string(), format!("mask must have 1 channel, got {}", map.channels())));
    }
    Ok(mask_from_map(&map))
}

pub fn mask_from_map(map: &FeatureMap) -> Vec<bool> {
    map.data().iter().map(|&v| v > 0.5).collect()
}

fn check_mask(map: &RawFeatureMap, mask: Option<&[bool]>) -> Result<()> {
    match mask {
        Some(m) if m.len() != map.height() * map.width() => Err(Error::DimensionMismatch {
            expected: format!("{}x{} mask", map.height(), map.width()),
            actual: format!("{} mask pixels", m.len()),
        }),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaFit {
    pub input_channels: usize,
    pub mean: Vec<f64>,
    /// Row per component, unit length, largest-magnitude loading positive.
    /// Zero rows for components without variance.
    pub components: Vec<Vec<f64>>,
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Share of total variance captured by the kept components.
    pub explained_variance: f64,
    pub n_pixels: usize,
    pub degenerate_components: usize,
}

/// Fits PCA over the foreground pixels of every input.
pub fn fit_pca(inputs: &[(&RawFeatureMap, Option<&[bool]>)]) -> Result<PcaFit> {
    let c = match inputs.first() {
        Some((m, _)) => m.channels(),
        None => return Err(Error::InvalidArgument("PCA needs at least one input".into())),
    };
    if c < PCA_COMPONENTS {
        return Err(Error::InvalidArgument(format!("PCA needs at least {PCA_COMPONENTS} channels, got {c}")));
    }
    let mut n = 0usize;
    let mut sum = vec![0.0f64; c];
    for (map, mask) in inputs {
        if map.channels() != c {
            return Err(Error::DimensionMismatch { expected: format!("{c} channels"), actual: format!("{} channels", map.channels()) });
        }
        check_mask(map, *mask)?;
        for (p, px) in map.data().chunks_exact(c).enumerate() {
            if mask.is_none_or(|m| m[p]) {
                n += 1;
                for (s, &v) in sum.iter_mut().zip(px) {
                    *s += v as f64;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no foreground pixels to fit PCA".into()));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let mut cov = DMatrix::<f64>::zeros(c, c);
    let mut centered = vec![0.0f64; c];
    for (map, mask) in inputs {
        for (p, px) in map.data().chunks_exact(c).enumerate() {
            if mask.is_none_or(|m| m[p]) {
                for ((d, &v), m) in centered.iter_mut().zip(px).zip(&mean) {
                    *d = v as f64 - m;
                }
                for i in 0..c {
                    let di = centered[i];
                    for j in i..c {
                        cov[(i, j)] += di * centered[j];
                    }
                }
            }
        }
    }
    for i in 0..c {
        for j in i..c {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let top = eigenvalues[0];
    let mut degenerate = 0;
    let components: Vec<Vec<f64>> = order[..PCA_COMPONENTS]
        .iter()
        .zip(&eigenvalues)
        .map(|(&i, &lambda)| {
            if !(lambda > RANK_TOLERANCE * top) {
                degenerate += 1;
                return vec![0.0; c];
            }
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let lead = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    if degenerate > 0 {
        log::warn!("covariance has rank < {PCA_COMPONENTS}; {degenerate} component(s) emitted as zeros");
    }
    let total: f64 = eigenvalues.iter().sum();
    let kept: f64 = eigenvalues[..PCA_COMPONENTS].iter().sum();
    let explained_variance = if total > 0.0 { kept / total } else { 0.0 };
    Ok(PcaFit { input_channels: c, mean, components, eigenvalues, explained_variance, n_pixels: n, degenerate_components: degenerate })
}

impl PcaFit {
    /// Projects onto the kept components; masked-out pixels become zero.
    pub fn project(&self, map: &RawFeatureMap, mask: Option<&[bool]>) -> Result<FeatureMap> {
        let c = self.input_channels;
        if map.channels() != c {
            return Err(Error::DimensionMismatch { expected: format!("{c} channels"), actual: format!("{} channels", map.channels()) });
        }
        check_mask(map, mask)?;
        let mut out = Vec::with_capacity(map.height() * map.width() * PCA_COMPONENTS);
        for (p, px) in map.data().chunks_exact(c).enumerate() {
            if mask.is_none_or(|m| m[p]) {
                for comp in &self.components {
                    let v: f64 = px.iter().zip(&self.mean).zip(comp).map(|((&x, m), w)| (x as f64 - m) * w).sum();
                    out.push(v as f32);
                }
            } else {
                out.extend([0.0; PCA_COMPONENTS]);
            }
        }
        FeatureMap::from_vec(map.height(), map.width(), PCA_COMPONENTS, out)
    }
}

/// Keeps a 3-channel map as is, zeroing masked-out pixels.
pub fn pass_through(map: &RawFeatureMap, mask: Option<&[bool]>) -> Result<FeatureMap> {
    if map.channels() != PCA_COMPONENTS {
        return Err(Error::InvalidArgument(format!("pass-through needs {PCA_COMPONENTS} channels, got {}", map.channels())));
    }
    check_mask(map, mask)?;
    let mut out = map.clone();
    if let Some(m) = mask {
        for (px, &keep) in out.data_mut().chunks_exact_mut(PCA_COMPONENTS).zip(m) {
            if !keep {
                px.fill(0.0);
            }
        }
    }
    Ok(out)
}
