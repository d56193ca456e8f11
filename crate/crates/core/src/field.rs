//! Dense voxel feature fields and their volume rendering.
//!
//! A field stores density `sigma`, an `F`-channel feature vector and an RGB
//! colour per grid node. Nodes sit on a regular lattice whose outermost nodes
//! coincide with the bounding-box faces, so node `(ix, iy, iz)` lives at
//! `min + (ix, iy, iz) * (max - min) / (dims - 1)`.
//!
//! Rendering marches `n_samples` midpoints over each ray's box interval and
//! composites with weights `w_i = T_i * alpha_i`, `alpha_i = 1 - exp(-sigma_i * delta_i)`.
//! The same weights drive colour, feature and depth.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{generate_rays, pose_to_extrinsics, Aabb, CameraPose, Intrinsics, Ray};
use crate::map::{read_exact, read_f32, read_f32s, read_u32, FeatureMap};

pub const TFF_MAGIC: &[u8; 4] = b"TFF1";

/// Colour, feature and density at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub color: [f32; 3],
    pub feature: Vec<f32>,
    pub density: f32,
}

#[derive(Debug, Clone)]
pub struct FeatureField {
    dims: [usize; 3],
    bbox: Aabb,
    channels: usize,
    density: Vec<f32>,
    feature: Vec<f32>,
    color: Vec<f32>,
    // interleaved [sigma, r, g, b, f_0 .. f_F] per node, used by the sampler
    packed: Vec<f32>,
}

impl PartialEq for FeatureField {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.bbox == other.bbox
            && self.channels == other.channels
            && self.density == other.density
            && self.feature == other.feature
            && self.color == other.color
    }
}

impl FeatureField {
    /// Validates and packs a field. `bbox` is rounded to `f32` so files round-trip exactly.
    pub fn new(
        dims: [usize; 3],
        bbox: Aabb,
        channels: usize,
        density: Vec<f32>,
        feature: Vec<f32>,
        color: Vec<f32>,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::Validation(format!("field dims must be >= 2 per axis, got {dims:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if density.len() != n || feature.len() != n * channels || color.len() != n * 3 {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} density, {} feature, {} color values", n * channels, n * 3),
                actual: format!("{}, {}, {}", density.len(), feature.len(), color.len()),
            });
        }
        let round = |v: [f64; 3]| v.map(|x| x as f32 as f64);
        let bbox = Aabb::new(round(bbox.min), round(bbox.max))
            .map_err(|e| Error::Validation(e.to_string()))?;
        for (i, &s) in density.iter().enumerate() {
            if !s.is_finite() || s < 0.0 {
                return Err(Error::Validation(format!(
                    "density at voxel {i} is {s}; densities must be finite and >= 0"
                )));
            }
        }
        for (i, &c) in color.iter().enumerate() {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::Validation(format!(
                    "color component {} of voxel {} is {c}; colors must lie in [0, 1]",
                    i % 3,
                    i / 3
                )));
            }
        }
        if let Some(i) = feature.iter().position(|f| !f.is_finite()) {
            return Err(Error::Validation(format!(
                "feature channel {} of voxel {} is not finite",
                i % channels.max(1),
                i / channels.max(1)
            )));
        }

        let stride = 4 + channels;
        let mut packed = Vec::with_capacity(n * stride);
        for i in 0..n {
            packed.push(density[i]);
            packed.extend_from_slice(&color[i * 3..i * 3 + 3]);
            packed.extend_from_slice(&feature[i * channels..(i + 1) * channels]);
        }
        Ok(Self { dims, bbox, channels, density, feature, color, packed })
    }

    /// Builds a field by evaluating `f(point) -> (density, color, feature)` at every node.
    pub fn from_fn(
        dims: [usize; 3],
        bbox: Aabb,
        channels: usize,
        mut f: impl FnMut(Point3<f64>) -> (f32, [f32; 3], Vec<f32>),
    ) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        let mut density = Vec::with_capacity(n);
        let mut feature = Vec::with_capacity(n * channels);
        let mut color = Vec::with_capacity(n * 3);
        let proto = Self::lattice(dims, &bbox);
        for ix in 0..dims[0] {
            for iy in 0..dims[1] {
                for iz in 0..dims[2] {
                    let (s, c, feat) = f(proto.node_position(ix, iy, iz));
                    if feat.len() != channels {
                        return Err(Error::DimensionMismatch {
                            expected: format!("{channels} feature channels"),
                            actual: format!("{}", feat.len()),
                        });
                    }
                    density.push(s);
                    color.extend_from_slice(&c);
                    feature.extend_from_slice(&feat);
                }
            }
        }
        Self::new(dims, bbox, channels, density, feature, color)
    }

    fn lattice(dims: [usize; 3], bbox: &Aabb) -> Lattice {
        Lattice { dims, bbox: *bbox }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bbox(&self) -> &Aabb {
        &self.bbox
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn density(&self) -> &[f32] {
        &self.density
    }

    pub fn feature(&self) -> &[f32] {
        &self.feature
    }

    pub fn color(&self) -> &[f32] {
        &self.color
    }

    pub fn voxel_count(&self) -> usize {
        self.density.len()
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.dims[1] + iy) * self.dims[2] + iz
    }

    pub fn node_position(&self, ix: usize, iy: usize, iz: usize) -> Point3<f64> {
        Self::lattice(self.dims, &self.bbox).node_position(ix, iy, iz)
    }

    /// Copy with colour channels replaced by `color` and features replaced by `feature`.
    pub fn with_data(&self, density: Vec<f32>, feature: Vec<f32>, channels: usize, color: Vec<f32>) -> Result<Self> {
        Self::new(self.dims, self.bbox, channels, density, feature, color)
    }

    /// Trilinear lookup; zero outside the box.
    pub fn sample_field(&self, p: &Point3<f64>) -> FieldSample {
        let mut buf = vec![0.0f32; 4 + self.channels];
        self.sample_packed(p, &mut buf, false);
        FieldSample { color: [buf[1], buf[2], buf[3]], feature: buf[4..].to_vec(), density: buf[0] }
    }

    // Writes [sigma, rgb, feature] into `out`. Returns false when the point has zero density;
    // with `skip_empty` the colour/feature interpolation is skipped for such points.
    #[inline]
    fn sample_packed(&self, p: &Point3<f64>, out: &mut [f32], skip_empty: bool) -> bool {
        out.iter_mut().for_each(|v| *v = 0.0);
        if !self.bbox.contains(p) {
            return false;
        }
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let g = self.dims[a];
            let u = (p[a] - self.bbox.min[a]) / (self.bbox.max[a] - self.bbox.min[a]) * (g - 1) as f64;
            let i0 = (u.floor().max(0.0) as usize).min(g - 2);
            base[a] = i0;
            frac[a] = (u - i0 as f64).clamp(0.0, 1.0);
        }
        let stride = 4 + self.channels;
        let (sy, sz) = (self.dims[1] * self.dims[2], self.dims[2]);
        let origin = base[0] * sy + base[1] * sz + base[2];

        let mut corners = [(0usize, 0f32); 8];
        let mut sigma = 0f32;
        for (c, slot) in corners.iter_mut().enumerate() {
            let (dx, dy, dz) = (c >> 2 & 1, c >> 1 & 1, c & 1);
            let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
            let w = (wx * wy * wz) as f32;
            let node = (origin + dx * sy + dy * sz + dz) * stride;
            *slot = (node, w);
            sigma += w * self.packed[node];
        }
        if sigma <= 0.0 && skip_empty {
            return false;
        }
        for &(node, w) in &corners {
            if w == 0.0 {
                continue;
            }
            let src = &self.packed[node..node + stride];
            for (o, s) in out.iter_mut().zip(src) {
                *o += w * s;
            }
        }
        out[0] = sigma;
        sigma > 0.0
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(16 + 24 + 4 * (self.density.len() + self.feature.len() + self.color.len()));
        buf.extend_from_slice(TFF_MAGIC);
        for d in [self.dims[0], self.dims[1], self.dims[2], self.channels] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.bbox.min.iter().chain(self.bbox.max.iter()) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for v in self.density.iter().chain(&self.feature).chain(&self.color) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(r: &mut impl Read, context: &str) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, context, "magic")?;
        if &magic != TFF_MAGIC {
            return Err(Error::format(
                context,
                format!("bad magic {:?}, expected \"TFF1\"", String::from_utf8_lossy(&magic)),
            ));
        }
        let gx = read_u32(r, context, "gx")? as usize;
        let gy = read_u32(r, context, "gy")? as usize;
        let gz = read_u32(r, context, "gz")? as usize;
        let channels = read_u32(r, context, "feature channels")? as usize;
        let mut corners = [0f64; 6];
        for c in corners.iter_mut() {
            *c = read_f32(r, context, "bbox")? as f64;
        }
        let n = gx
            .checked_mul(gy)
            .and_then(|v| v.checked_mul(gz))
            .filter(|&n| n.checked_mul(channels.max(3)).is_some())
            .ok_or_else(|| Error::format(context, "dimensions overflow"))?;
        let density = read_f32s(r, n, context, "density")?;
        let feature = read_f32s(r, n * channels, context, "feature")?;
        let color = read_f32s(r, n * 3, context, "color")?;
        let bbox = Aabb::new([corners[0], corners[1], corners[2]], [corners[3], corners[4], corners[5]])
            .map_err(|e| Error::format(context, e.to_string()))?;
        Self::new([gx, gy, gz], bbox, channels, density, feature, color).map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("{context}: {m}")),
            other => other,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let mut cursor = bytes;
        let field = Self::read_from(&mut cursor, context)?;
        if !cursor.is_empty() {
            return Err(Error::format(context, format!("{} trailing bytes", cursor.len())));
        }
        Ok(field)
    }
}

struct Lattice {
    dims: [usize; 3],
    bbox: Aabb,
}

impl Lattice {
    fn node_position(&self, ix: usize, iy: usize, iz: usize) -> Point3<f64> {
        let idx = [ix, iy, iz];
        let mut p = Point3::origin();
        for a in 0..3 {
            let t = idx[a] as f64 / (self.dims[a] - 1) as f64;
            p[a] = self.bbox.min[a] + t * (self.bbox.max[a] - self.bbox.min[a]);
        }
        p
    }
}

pub fn read_field(path: impl AsRef<Path>) -> Result<FeatureField> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureField::from_bytes(&bytes, &path.display().to_string())
}

pub fn write_field(field: &FeatureField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, field.to_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub n_samples: usize,
    pub white_background: bool,
    pub min_alpha_for_depth: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { n_samples: 64, white_background: false, min_alpha_for_depth: 0.01 }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::InvalidArgument(format!("n_samples must be >= 2, got {}", self.n_samples)));
        }
        if !(0.0..=1.0).contains(&self.min_alpha_for_depth) {
            return Err(Error::InvalidArgument("min_alpha_for_depth must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color_map: FeatureMap,
    pub feature_map: FeatureMap,
    pub depth_map: FeatureMap,
    pub alpha_map: FeatureMap,
}

/// Composited values for one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayResult {
    pub color: [f64; 3],
    pub feature: Vec<f64>,
    pub depth: f64,
    pub alpha: f64,
}

/// Opacity of a homogeneous segment of length `delta`.
#[inline]
pub fn segment_alpha(sigma: f64, delta: f64) -> f64 {
    1.0 - (-sigma * delta).exp()
}

/// Marches one ray.
pub fn composite_ray(field: &FeatureField, ray: &Ray, cfg: &RenderConfig) -> RayResult {
    let mut scratch = vec![0f32; 4 + field.channels];
    let mut out = RayResult { color: [0.0; 3], feature: vec![0.0; field.channels], depth: 0.0, alpha: 0.0 };
    composite_into(field, ray, cfg, &mut scratch, &mut out);
    out
}

fn composite_into(field: &FeatureField, ray: &Ray, cfg: &RenderConfig, scratch: &mut [f32], out: &mut RayResult) {
    out.color = [0.0; 3];
    out.feature.iter_mut().for_each(|v| *v = 0.0);
    out.depth = 0.0;
    out.alpha = 0.0;
    if ray.is_empty() {
        return;
    }
    let n = cfg.n_samples;
    let delta = (ray.t_far - ray.t_near) / n as f64;
    let mut transmittance = 1.0f64;
    let mut weight_sum = 0.0f64;
    let mut depth_sum = 0.0f64;
    for i in 0..n {
        let t = ray.t_near + (i as f64 + 0.5) * delta;
        let p = ray.origin + ray.direction * t;
        if !field.sample_packed(&p, scratch, true) {
            continue;
        }
        let alpha = segment_alpha(scratch[0] as f64, delta);
        let w = transmittance * alpha;
        for c in 0..3 {
            out.color[c] += w * scratch[1 + c] as f64;
        }
        for (acc, &f) in out.feature.iter_mut().zip(&scratch[4..]) {
            *acc += w * f as f64;
        }
        weight_sum += w;
        depth_sum += w * t;
        transmittance *= 1.0 - alpha;
    }
    // equals the weight sum, but stays within [0, 1] under rounding
    out.alpha = 1.0 - transmittance;
    if weight_sum > 0.0 && weight_sum >= cfg.min_alpha_for_depth {
        out.depth = depth_sum / weight_sum;
    }
}

/// Renders colour, feature, depth and alpha maps of `field` seen from `pose`.
pub fn render(field: &FeatureField, pose: &CameraPose, intr: &Intrinsics, cfg: &RenderConfig) -> Result<RenderOutput> {
    intr.validate()?;
    cfg.validate()?;
    let (h, w, f) = (intr.height, intr.width, field.channels);
    let extrinsics = pose_to_extrinsics(pose);
    let rays = generate_rays(&extrinsics, intr, &field.bbox);

    let mut color = vec![0f32; h * w * 3];
    let mut feature = vec![0f32; h * w * f];
    let mut depth = vec![0f32; h * w];
    let mut alpha = vec![0f32; h * w];

    color
        .par_chunks_mut(w * 3)
        .zip(feature.par_chunks_mut((w * f).max(1)))
        .zip(depth.par_chunks_mut(w))
        .zip(alpha.par_chunks_mut(w))
        .enumerate()
        .for_each(|(row, (((c_row, f_row), d_row), a_row))| {
            let mut scratch = vec![0f32; 4 + f];
            let mut acc = RayResult { color: [0.0; 3], feature: vec![0.0; f], depth: 0.0, alpha: 0.0 };
            for col in 0..w {
                composite_into(field, &rays[row * w + col], cfg, &mut scratch, &mut acc);
                let bg = if cfg.white_background { 1.0 - acc.alpha } else { 0.0 };
                for ch in 0..3 {
                    c_row[col * 3 + ch] = (acc.color[ch] + bg) as f32;
                }
                for ch in 0..f {
                    f_row[col * f + ch] = acc.feature[ch] as f32;
                }
                d_row[col] = acc.depth as f32;
                a_row[col] = acc.alpha as f32;
            }
        });

    Ok(RenderOutput {
        color_map: FeatureMap::from_vec(h, w, 3, color)?,
        feature_map: FeatureMap::from_vec(h, w, f, feature)?,
        depth_map: FeatureMap::from_vec(h, w, 1, depth)?,
        alpha_map: FeatureMap::from_vec(h, w, 1, alpha)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use std::f64::consts::{LN_2, PI};

    fn unit_box() -> Aabb {
        Aabb::new([-1.0; 3], [1.0; 3]).unwrap()
    }

    fn blob_field(channels: usize) -> FeatureField {
        FeatureField::from_fn([9, 9, 9], unit_box(), channels, |p| {
            let d2 = p.coords.norm_squared();
            let s = (4.0 * (-(d2 / 0.3)).exp()) as f32;
            let c = [(0.5 + 0.4 * p.x) as f32, (0.5 + 0.4 * p.y) as f32, (0.5 + 0.4 * p.z) as f32];
            let f = (0..channels).map(|k| (k as f64 + p.x * p.y) as f32).collect();
            (s, c, f)
        })
        .unwrap()
    }

    #[test]
    fn node_lookup_and_midpoint() {
        let field = blob_field(2);
        let (ix, iy, iz) = (3, 5, 2);
        let s = field.sample_field(&field.node_position(ix, iy, iz));
        let i = field.index(ix, iy, iz);
        assert_eq!(s.density, field.density()[i]);
        assert_eq!(s.feature, field.feature()[i * 2..i * 2 + 2].to_vec());

        let a = field.node_position(3, 5, 2);
        let b = field.node_position(4, 5, 2);
        let mid = Point3::from((a.coords + b.coords) * 0.5);
        let s = field.sample_field(&mid);
        let j = field.index(4, 5, 2);
        let expect = 0.5 * (field.density()[i] + field.density()[j]);
        assert_abs_diff_eq!(s.density, expect, epsilon = 1e-6);
        for c in 0..3 {
            assert_abs_diff_eq!(s.color[c], 0.5 * (field.color()[i * 3 + c] + field.color()[j * 3 + c]), epsilon = 1e-6);
        }
    }

    #[test]
    fn outside_box_is_empty() {
        let s = blob_field(3).sample_field(&Point3::new(1.5, 0.0, 0.0));
        assert_eq!(s.density, 0.0);
        assert_eq!(s.color, [0.0; 3]);
        assert!(s.feature.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_density_renders_nothing() {
        let field = FeatureField::from_fn([4, 4, 4], unit_box(), 3, |_| (0.0, [0.7; 3], vec![1.0; 3])).unwrap();
        let pose = CameraPose { theta: 0.3, phi: 1.4, gamma: 0.0, r: 3.0 };
        let out = render(&field, &pose, &Intrinsics::new(0.8, 16, 16).unwrap(), &RenderConfig::default()).unwrap();
        assert!(out.alpha_map.data().iter().all(|&a| a == 0.0));
        assert!(out.feature_map.data().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn single_segment_alpha_is_half() {
        assert_abs_diff_eq!(segment_alpha(LN_2, 1.0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(segment_alpha(2.0 * LN_2, 0.5), 0.5, epsilon = 1e-12);

        // homogeneous field, two unit samples: 0.5 + 0.5 * 0.5
        let field = FeatureField::from_fn([2, 2, 2], unit_box(), 1, |_| (LN_2 as f32, [1.0; 3], vec![1.0])).unwrap();
        let ray = Ray {
            origin: Point3::new(3.0, 0.0, 0.0),
            direction: Vector3::new(-1.0, 0.0, 0.0),
            t_near: 2.0,
            t_far: 4.0,
        };
        let res = composite_ray(&field, &ray, &RenderConfig { n_samples: 2, ..Default::default() });
        assert_abs_diff_eq!(res.alpha, 0.75, epsilon = 1e-7);
        assert_abs_diff_eq!(res.depth, (0.5 * 2.5 + 0.25 * 3.5) / 0.75, epsilon = 1e-6);
    }

    #[test]
    fn duplicated_color_features_render_identically() {
        let base = blob_field(1);
        let field = base.with_data(base.density().to_vec(), base.color().to_vec(), 3, base.color().to_vec()).unwrap();
        let pose = CameraPose { theta: 1.1, phi: 1.3, gamma: 0.4, r: 3.0 };
        let out = render(&field, &pose, &Intrinsics::new(0.9, 24, 20).unwrap(), &RenderConfig::default()).unwrap();
        assert_eq!(out.feature_map.data(), out.color_map.data());
    }

    #[test]
    fn white_background_fills_empty_pixels() {
        let field = blob_field(1);
        let cfg = RenderConfig { white_background: true, ..Default::default() };
        let pose = CameraPose { theta: 0.0, phi: PI / 2.0, gamma: 0.0, r: 3.0 };
        let out = render(&field, &pose, &Intrinsics::new(1.5, 16, 16).unwrap(), &cfg).unwrap();
        assert_eq!(out.alpha_map.get(0, 0, 0), 0.0);
        assert_eq!(out.color_map.pixel(0, 0), &[1.0, 1.0, 1.0]);
        assert_eq!(out.feature_map.get(0, 0, 0), 0.0);
    }

    #[test]
    fn render_is_deterministic() {
        let field = blob_field(2);
        let pose = CameraPose { theta: 2.0, phi: 1.0, gamma: -0.3, r: 2.5 };
        let intr = Intrinsics::new(0.8, 17, 13).unwrap();
        let a = render(&field, &pose, &intr, &RenderConfig::default()).unwrap();
        let b = render(&field, &pose, &intr, &RenderConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn depth_of_center_pixel_lands_inside_blob() {
        let field = blob_field(1);
        let pose = CameraPose { theta: 0.0, phi: PI / 2.0, gamma: 0.0, r: 3.0 };
        let out = render(&field, &pose, &Intrinsics::new(0.6, 15, 15).unwrap(), &RenderConfig::default()).unwrap();
        let d = out.depth_map.get(7, 7, 0) as f64;
        assert!(d > 2.0 && d < 3.0, "depth {d}");
    }

    #[test]
    fn tff_roundtrip_and_rejections() {
        let field = blob_field(2);
        let bytes = field.to_bytes();
        assert_eq!(&bytes[0..4], b"TFF1");
        let back = FeatureField::from_bytes(&bytes, "mem").unwrap();
        assert_eq!(back, field);

        let mut bad = bytes.clone();
        bad[0..4].copy_from_slice(b"XXXX");
        assert!(matches!(FeatureField::from_bytes(&bad, "mem"), Err(Error::Format { .. })));
        assert!(FeatureField::from_bytes(&bytes[..bytes.len() - 1], "mem").is_err());

        // negative density at voxel 5
        let mut neg = bytes.clone();
        let off = 4 + 16 + 24 + 5 * 4;
        neg[off..off + 4].copy_from_slice(&(-1.0f32).to_le_bytes());
        let err = FeatureField::from_bytes(&neg, "mem").unwrap_err().to_string();
        assert!(err.contains("voxel 5"), "{err}");

        let mut nan = bytes;
        nan[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(FeatureField::from_bytes(&nan, "mem").is_err());
    }

    #[test]
    fn tff_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.tff");
        let field = blob_field(3);
        write_field(&field, &path).unwrap();
        assert_eq!(read_field(&path).unwrap(), field);
    }
}
