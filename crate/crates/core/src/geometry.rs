//! Spherical camera model, pose-grid discretization and pinhole ray generation.
//!
//! World frame: +z is up. A pose places the camera on a sphere of radius `r`
//! centred at the origin, with `phi` the polar angle from +z (so `phi = pi/2`
//! is the equator) and `theta` the azimuth measured from +x towards +y.
//!
//! Camera frame (columns of the camera-to-world matrix): `right`, `up`,
//! `back`, where the optical axis is `-back`. Image rows grow downwards.
//! The in-plane rotation `gamma` rolls the camera so that image content
//! rotates by `gamma` in (col, row) pixel coordinates, i.e. the same sense
//! as [`crate::registration::warp`].

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const POLE_EPS: f64 = 1e-6;

/// Wraps an angle into `[0, 2pi)`.
pub fn wrap_tau(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_pi(a: f64) -> f64 {
    let w = wrap_tau(a + PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// 4-DoF camera pose on the viewing sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub theta: f64,
    pub phi: f64,
    pub gamma: f64,
    pub r: f64,
}

impl CameraPose {
    /// Builds a pose, wrapping `theta`/`gamma` and clamping `phi`.
    pub fn new(theta: f64, phi: f64, gamma: f64, r: f64) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::InvalidArgument(format!("camera radius must be > 0, got {r}")));
        }
        if !theta.is_finite() || !phi.is_finite() || !gamma.is_finite() {
            return Err(Error::InvalidArgument("pose angles must be finite".into()));
        }
        Ok(Self { theta, phi, gamma, r }.normalized())
    }

    pub fn normalized(self) -> Self {
        Self {
            theta: wrap_tau(self.theta),
            phi: self.phi.clamp(0.0, PI),
            gamma: wrap_pi(self.gamma),
            r: self.r,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        let p = self.normalized();
        let (st, ct) = p.theta.sin_cos();
        let (sp, cp) = p.phi.sin_cos();
        Vector3::new(sp * ct, sp * st, cp) * p.r
    }
}

/// Camera-to-world rigid transform.
pub fn pose_to_extrinsics(pose: &CameraPose) -> Matrix4<f64> {
    let p = pose.normalized();
    let eye = p.position();
    let forward = -eye.normalize();
    let world_up = if p.phi.sin().abs() < POLE_EPS {
        Vector3::x()
    } else {
        Vector3::z()
    };
    let right0 = forward.cross(&world_up).normalize();
    let up0 = right0.cross(&forward);

    // roll about the optical axis
    let (sg, cg) = p.gamma.sin_cos();
    let right = right0 * cg + up0 * sg;
    let up = -right0 * sg + up0 * cg;
    let back = -forward;

    let mut m = Matrix4::identity();
    for i in 0..3 {
        m[(i, 0)] = right[i];
        m[(i, 1)] = up[i];
        m[(i, 2)] = back[i];
        m[(i, 3)] = eye[i];
    }
    m
}

/// Pinhole intrinsics with square pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fov_y: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Self { fov_y, width, height };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_y > 0.0 && self.fov_y < PI) {
            return Err(Error::InvalidArgument(format!(
                "fov_y must lie in (0, pi), got {}",
                self.fov_y
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image dimensions must be >= 1".into()));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.fov_y).tan()
    }
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self { fov_y: 45f64.to_radians(), width: 64, height: 64 }
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        if (0..3).any(|i| !(min[i] < max[i])) {
            return Err(Error::InvalidArgument(format!(
                "bbox min must be < max per axis, got {min:?} / {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Slab test. Returns `(t_near, t_far)` clipped to `t >= 0`, or `None` on a miss.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if dir[i].abs() < 1e-15 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let mut ta = (self.min[i] - origin[i]) * inv;
            let mut tb = (self.max[i] - origin[i]) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t0 < t1).then_some((t0, t1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub direction: Vector3<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    /// A ray with an empty interval never hits anything.
    pub fn is_empty(&self) -> bool {
        !(self.t_near < self.t_far)
    }
}

/// Direction through the centre of pixel `(col, row)`, in world space.
pub fn pixel_direction(extrinsics: &Matrix4<f64>, intr: &Intrinsics, col: usize, row: usize) -> Vector3<f64> {
    let f = intr.focal();
    let x = (col as f64 + 0.5 - 0.5 * intr.width as f64) / f;
    let y = -(row as f64 + 0.5 - 0.5 * intr.height as f64) / f;
    let right = extrinsics.fixed_view::<3, 1>(0, 0);
    let up = extrinsics.fixed_view::<3, 1>(0, 1);
    let back = extrinsics.fixed_view::<3, 1>(0, 2);
    (right * x + up * y - back).normalize()
}

/// Row-major `height x width` grid of pinhole rays clipped to `bbox`.
/// Rays that miss the box get `t_near == t_far == 0`.
pub fn generate_rays(extrinsics: &Matrix4<f64>, intr: &Intrinsics, bbox: &Aabb) -> Vec<Ray> {
    let origin = Point3::new(extrinsics[(0, 3)], extrinsics[(1, 3)], extrinsics[(2, 3)]);
    let mut rays = Vec::with_capacity(intr.width * intr.height);
    for row in 0..intr.height {
        for col in 0..intr.width {
            let direction = pixel_direction(extrinsics, intr, col, row);
            let (t_near, t_far) = bbox.intersect(&origin, &direction).unwrap_or((0.0, 0.0));
            rays.push(Ray { origin, direction, t_near, t_far });
        }
    }
    rays
}

/// Regular azimuth/elevation grid. Bin centres stand for the grid poses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseGrid {
    pub theta_range: (f64, f64),
    pub phi_range: (f64, f64),
    pub n_theta: usize,
    pub n_phi: usize,
    pub gamma_fixed: f64,
    pub r_fixed: f64,
}

impl PoseGrid {
    /// 360 degrees of azimuth in 36 bins, elevation 85..95 degrees in 3 bins.
    pub fn narrow(r_fixed: f64) -> Self {
        Self {
            theta_range: (0.0, TAU),
            phi_range: (85f64.to_radians(), 95f64.to_radians()),
            n_theta: 36,
            n_phi: 3,
            gamma_fixed: 0.0,
            r_fixed,
        }
    }

    /// 360 degrees of azimuth in 36 bins, the full 180 degrees of elevation in 18 bins.
    pub fn full(r_fixed: f64) -> Self {
        Self { phi_range: (0.0, PI), n_phi: 18, ..Self::narrow(r_fixed) }
    }

    pub fn with_bins(mut self, n_theta: usize, n_phi: usize) -> Self {
        self.n_theta = n_theta;
        self.n_phi = n_phi;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_theta == 0 || self.n_phi == 0 {
            return Err(Error::InvalidArgument("grid needs at least one bin per axis".into()));
        }
        if !(self.theta_range.0 < self.theta_range.1) || !(self.phi_range.0 <= self.phi_range.1) {
            return Err(Error::InvalidArgument("grid ranges must be increasing".into()));
        }
        if !(self.r_fixed > 0.0) {
            return Err(Error::InvalidArgument("grid radius must be > 0".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_theta * self.n_phi
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn theta_step(&self) -> f64 {
        (self.theta_range.1 - self.theta_range.0) / self.n_theta as f64
    }

    pub fn phi_step(&self) -> f64 {
        (self.phi_range.1 - self.phi_range.0) / self.n_phi as f64
    }

    pub fn theta_center(&self, i: usize) -> f64 {
        self.theta_range.0 + (i as f64 + 0.5) * self.theta_step()
    }

    pub fn phi_center(&self, j: usize) -> f64 {
        self.phi_range.0 + (j as f64 + 0.5) * self.phi_step()
    }

    /// Flat index; phi-major, so `k = j * n_theta + i`.
    pub fn index(&self, theta_bin: usize, phi_bin: usize) -> usize {
        phi_bin * self.n_theta + theta_bin
    }

    /// Inverse of [`PoseGrid::index`]: `(theta_bin, phi_bin)`.
    pub fn bins(&self, k: usize) -> (usize, usize) {
        (k % self.n_theta, k / self.n_theta)
    }

    pub fn pose(&self, k: usize) -> CameraPose {
        let (i, j) = self.bins(k);
        CameraPose {
            theta: self.theta_center(i),
            phi: self.phi_center(j),
            gamma: self.gamma_fixed,
            r: self.r_fixed,
        }
        .normalized()
    }

    /// Azimuth bin containing `theta`, with wrap-around when the grid spans the full circle.
    pub fn theta_bin_of(&self, theta: f64) -> usize {
        let span = self.theta_range.1 - self.theta_range.0;
        let mut rel = theta - self.theta_range.0;
        if (span - TAU).abs() < 1e-9 {
            rel = wrap_tau(rel);
        }
        ((rel / self.theta_step()).floor().max(0.0) as usize).min(self.n_theta - 1)
    }

    pub fn phi_bin_of(&self, phi: f64) -> usize {
        let step = self.phi_step();
        if step <= 0.0 {
            return 0;
        }
        (((phi - self.phi_range.0) / step).floor().max(0.0) as usize).min(self.n_phi - 1)
    }

    /// Bin index containing a continuous pose.
    pub fn index_of(&self, pose: &CameraPose) -> usize {
        self.index(self.theta_bin_of(pose.theta), self.phi_bin_of(pose.phi))
    }
}

/// All grid poses in index order (phi-major, then theta).
pub fn enumerate_grid(grid: &PoseGrid) -> Vec<CameraPose> {
    (0..grid.len()).map(|k| grid.pose(k)).collect()
}
