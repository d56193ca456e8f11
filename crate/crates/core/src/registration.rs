//! Scale and in-plane rotation between feature maps via Fourier-Mellin phase correlation.
//!
//! Pixel convention: `x` is the column, `y` the row (growing downwards), and
//! similarity transforms act about the image centre `((W-1)/2, (H-1)/2)`:
//! `p' = c + s * R(rotation) * (p - c)` with `R = [[cos, -sin], [sin, cos]]`.
//! [`warp`] applies that map to a template; the geometry module rolls the
//! camera in the same sense, so a roll of `gamma` shows up as `rotation = gamma`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::wrap_pi;
use crate::map::FeatureMap;
use crate::spectral::{hann, signed_index, Fft2};

/// Similarity mapping a template onto a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity2D {
    pub scale: f64,
    pub rotation: f64,
    pub confidence: f64,
}

impl Similarity2D {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: 0.0, confidence: 0.0 }
    }

    pub fn new(scale: f64, rotation: f64) -> Self {
        Self { scale, rotation: wrap_pi(rotation), confidence: 0.0 }
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.rotation == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Window {
    None,
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub window: Window,
    /// `(radial, angular)` log-polar sample counts.
    pub log_polar_size: (usize, usize),
    pub scale_bounds: (f64, f64),
    pub subpixel: bool,
    /// Zero-padding factor applied before the magnitude spectrum.
    pub padding: usize,
    /// Polish the selected candidate by a local warped-MSE search (off by default).
    pub refine: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            window: Window::Hann,
            log_polar_size: (128, 128),
            scale_bounds: (0.5, 2.0),
            subpixel: true,
            padding: 2,
            refine: false,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let (nr, na) = self.log_polar_size;
        if nr < 32 || na < 32 {
            return Err(Error::InvalidArgument(format!("log_polar_size must be >= (32, 32), got ({nr}, {na})")));
        }
        let (lo, hi) = self.scale_bounds;
        if !(lo > 0.0 && lo < 1.0 && hi > 1.0) {
            return Err(Error::InvalidArgument(format!("scale_bounds must satisfy 0 < lo < 1 < hi, got ({lo}, {hi})")));
        }
        if !(1..=8).contains(&self.padding) {
            return Err(Error::InvalidArgument(format!("padding must be in 1..=8, got {}", self.padding)));
        }
        Ok(())
    }
}

/// Translation of `b` relative to `a`, i.e. `b(x, y) ~ a(x - dx, y - dy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Translation {
    pub dx: f64,
    pub dy: f64,
    pub confidence: f64,
}

fn check_single_channel(m: &FeatureMap) -> Result<()> {
    if m.channels() != 1 {
        return Err(Error::InvalidArgument(format!(
            "phase correlation takes single-channel maps, got {} channels",
            m.channels()
        )));
    }
    Ok(())
}

fn to_f64(m: &FeatureMap) -> Vec<f64> {
    m.data().iter().map(|&v| v as f64).collect()
}

/// Phase correlation of two single-channel maps of equal size.
pub fn phase_correlate(a: &FeatureMap, b: &FeatureMap) -> Result<Translation> {
    phase_correlate_with(a, b, Window::Hann, true)
}

pub fn phase_correlate_with(a: &FeatureMap, b: &FeatureMap, window: Window, subpixel: bool) -> Result<Translation> {
    check_single_channel(a)?;
    check_single_channel(b)?;
    a.check_same_dims(b)?;
    let (h, w) = (a.height(), a.width());
    let hann_on = window == Window::Hann;
    let surface = correlation_surface(&to_f64(a), &to_f64(b), h, w, hann_on, hann_on, &Fft2::new(h, w))?;
    Ok(locate_peak(&surface, h, w, subpixel))
}

// Normalized cross-power correlation surface (h x w), peak at the shift of b relative to a.
fn correlation_surface(
    a: &[f64],
    b: &[f64],
    h: usize,
    w: usize,
    window_rows: bool,
    window_cols: bool,
    fft: &Fft2,
) -> Result<Vec<f64>> {
    let spec_a = windowed_spectrum(a, h, w, window_rows, window_cols, fft)?;
    let spec_b = windowed_spectrum(b, h, w, window_rows, window_cols, fft)?;
    Ok(correlate_spectra(&spec_a, &spec_b, fft))
}

fn windowed_spectrum(x: &[f64], h: usize, w: usize, window_rows: bool, window_cols: bool, fft: &Fft2) -> Result<Vec<Complex64>> {
    let wy = if window_rows { hann(h) } else { vec![1.0; h] };
    let wx = if window_cols { hann(w) } else { vec![1.0; w] };
    let mut data = Vec::with_capacity(h * w);
    let mut energy = 0.0;
    for r in 0..h {
        for c in 0..w {
            let v = x[r * w + c] * wy[r] * wx[c];
            energy += v * v;
            data.push(Complex64::new(v, 0.0));
        }
    }
    if !(energy > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    fft.forward(&mut data);
    Ok(data)
}

fn correlate_spectra(spec_a: &[Complex64], spec_b: &[Complex64], fft: &Fft2) -> Vec<f64> {
    let mut cross: Vec<Complex64> = spec_a.iter().zip(spec_b).map(|(a, b)| a.conj() * b).collect();
    // norm_sqr avoids hypot, which dominates otherwise
    let peak_sq = cross.iter().map(|p| p.norm_sqr()).fold(0.0f64, f64::max);
    let floor_sq = peak_sq * 1e-24;
    for p in cross.iter_mut() {
        let m2 = p.norm_sqr();
        *p = if m2 > floor_sq { *p / m2.sqrt() } else { Complex64::new(0.0, 0.0) };
    }
    fft.inverse(&mut cross);
    let n = cross.len() as f64;
    cross.iter().map(|c| c.re / n).collect()
}

fn locate_peak(surface: &[f64], h: usize, w: usize, subpixel: bool) -> Translation {
    let (mut best, mut best_val) = (0usize, f64::NEG_INFINITY);
    for (i, &v) in surface.iter().enumerate() {
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    let (pr, pc) = (best / w, best % w);
    let mut dx = signed_index(pc, w);
    let mut dy = signed_index(pr, h);
    if subpixel {
        let at = |r: usize, c: usize| surface[r * w + c];
        if w >= 3 {
            let (l, r) = (at(pr, (pc + w - 1) % w), at(pr, (pc + 1) % w));
            dx += parabolic_offset(l, best_val, r);
        }
        if h >= 3 {
            let (u, d) = (at((pr + h - 1) % h, pc), at((pr + 1) % h, pc));
            dy += parabolic_offset(u, best_val, d);
        }
    }
    let mean_abs = surface.iter().map(|v| v.abs()).sum::<f64>() / surface.len() as f64;
    let confidence = if mean_abs > 0.0 { (best_val / mean_abs).max(0.0) } else { 0.0 };
    Translation { dx, dy, confidence }
}

/// Vertex of the parabola through `(-1, l), (0, c), (1, r)`.
fn parabolic_offset(l: f64, c: f64, r: f64) -> f64 {
    let denom = l - 2.0 * c + r;
    if denom.abs() < 1e-15 {
        return 0.0;
    }
    let off = 0.5 * (l - r) / denom;
    // exact self-correlation leaves round-off noise on the neighbours
    if off.abs() < 1e-9 {
        0.0
    } else {
        off.clamp(-0.5, 0.5)
    }
}

/// Log-polar resampled, translation-invariant magnitude spectrum of a map.
#[derive(Debug, Clone)]
pub struct LogPolarSpectrum {
    height: usize,
    width: usize,
    cfg: RegistrationConfig,
    // angular rows x radial columns, already transformed to the frequency domain
    spectrum: Vec<Complex64>,
    log_step: f64,
    plan: Arc<Fft2>,
}

const MIN_RADIUS_BINS: f64 = 2.0;

impl LogPolarSpectrum {
    pub fn new(map: &FeatureMap, cfg: &RegistrationConfig) -> Result<Self> {
        cfg.validate()?;
        let scalar = map.channel_norm();
        let (h, w) = (scalar.height(), scalar.width());
        if h < 4 || w < 4 {
            return Err(Error::InvalidArgument(format!("maps must be at least 4x4, got {h}x{w}")));
        }
        let hann_on = cfg.window == Window::Hann;
        let pad = cfg.padding;
        let (ph, pw) = (h * pad, w * pad);
        let (oy, ox) = ((ph - h) / 2, (pw - w) / 2);
        // remove the border level so padding does not add a step edge
        let mut rim = 0.0;
        for c in 0..w {
            rim += scalar.get(0, c, 0) as f64 + scalar.get(h - 1, c, 0) as f64;
        }
        for r in 1..h - 1 {
            rim += scalar.get(r, 0, 0) as f64 + scalar.get(r, w - 1, 0) as f64;
        }
        rim /= (2 * w + 2 * (h - 2)) as f64;
        let mut padded = vec![0.0f64; ph * pw];
        for r in 0..h {
            for c in 0..w {
                padded[(r + oy) * pw + c + ox] = scalar.get(r, c, 0) as f64 - rim;
            }
        }
        let fft = Fft2::new(ph, pw);
        let spec = windowed_spectrum(&padded, ph, pw, false, false, &fft)?;

        // high-pass emphasis keeps the low-frequency lobe from dominating
        let cy: Vec<f64> = (0..ph).map(|r| (PI * signed_index(r, ph) / ph as f64).cos()).collect();
        let cx: Vec<f64> = (0..pw).map(|c| (PI * signed_index(c, pw) / pw as f64).cos()).collect();
        let magnitude: Vec<f64> = spec
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let x = cy[i / pw] * cx[i % pw];
                z.norm_sqr().sqrt() * (1.0 - x) * (2.0 - x)
            })
            .collect();

        let (nr, na) = cfg.log_polar_size;
        let short = h.min(w) as f64;
        let r_max = 0.5 * short - 1.0;
        let r_min = MIN_RADIUS_BINS.min(0.5 * r_max);
        let log_step = (r_max / r_min).ln() / nr as f64;
        // radius in bins of the shorter side, as a fraction of it
        let rho: Vec<f64> = (0..nr).map(|i| r_min * (i as f64 * log_step).exp() / short).collect();
        let mut lp = vec![0.0f64; na * nr];
        for j in 0..na {
            let (sa, ca) = (PI * j as f64 / na as f64).sin_cos();
            let (fy, fx) = (sa * ph as f64, ca * pw as f64);
            for (i, &r) in rho.iter().enumerate() {
                lp[j * nr + i] = sample_periodic(&magnitude, ph, pw, r * fy, r * fx);
            }
        }
        let plan = Arc::new(Fft2::new(na, nr));
        let spectrum = windowed_spectrum(&lp, na, nr, false, hann_on, &plan)?;
        Ok(Self { height: h, width: w, cfg: *cfg, spectrum, log_step, plan })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn config(&self) -> &RegistrationConfig {
        &self.cfg
    }
}

// Bilinear lookup in a spectrum indexed by wrapped integer frequencies.
fn sample_periodic(data: &[f64], h: usize, w: usize, ky: f64, kx: f64) -> f64 {
    let (y0, x0) = (ky.floor(), kx.floor());
    let (fy, fx) = (ky - y0, kx - x0);
    let wrap = |v: f64, n: usize| (v as i64).rem_euclid(n as i64) as usize;
    let (ya, yb) = (wrap(y0, h), wrap(y0 + 1.0, h));
    let (xa, xb) = (wrap(x0, w), wrap(x0 + 1.0, w));
    data[ya * w + xa] * (1.0 - fy) * (1.0 - fx)
        + data[ya * w + xb] * (1.0 - fy) * fx
        + data[yb * w + xa] * fy * (1.0 - fx)
        + data[yb * w + xb] * fy * fx
}

/// Scale and rotation between two prepared spectra: both rotation candidates
/// (`gamma` and `gamma + pi`), smaller |rotation| first.
pub fn register_spectra(template: &LogPolarSpectrum, target: &LogPolarSpectrum) -> Result<[Similarity2D; 2]> {
    if template.dims() != target.dims() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", template.height, template.width),
            actual: format!("{}x{}", target.height, target.width),
        });
    }
    if template.cfg != target.cfg {
        return Err(Error::InvalidArgument("spectra were prepared with different configs".into()));
    }
    let cfg = &template.cfg;
    let (nr, na) = cfg.log_polar_size;
    let surface = correlate_spectra(&template.spectrum, &target.spectrum, &template.plan);
    let peak = locate_peak(&surface, na, nr, cfg.subpixel);

    // target(rho, alpha) = template(rho + ln s, alpha - gamma)
    let mut scale = (-peak.dx * template.log_step).exp();
    let rotation = wrap_pi(peak.dy * PI / na as f64);
    let mut confidence = peak.confidence;
    let (lo, hi) = cfg.scale_bounds;
    if scale < lo || scale > hi {
        scale = scale.clamp(lo, hi);
        confidence = 0.0;
    }
    let first = if rotation.abs() <= PI / 2.0 { rotation } else { wrap_pi(rotation + PI) };
    Ok([
        Similarity2D { scale, rotation: first, confidence },
        Similarity2D { scale, rotation: wrap_pi(first + PI), confidence },
    ])
}

/// Fourier-Mellin estimate of the similarity taking `template` onto `target`.
pub fn estimate_scale_rotation(template: &FeatureMap, target: &FeatureMap, cfg: &RegistrationConfig) -> Result<[Similarity2D; 2]> {
    if (template.height(), template.width()) != (target.height(), target.width()) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", template.height(), template.width()),
            actual: format!("{}x{}", target.height(), target.width()),
        });
    }
    let a = LogPolarSpectrum::new(template, cfg)?;
    let b = LogPolarSpectrum::new(target, cfg)?;
    register_spectra(&a, &b)
}

/// Picks the candidate with the lower warped MSE (first on ties) and, when
/// `cfg.refine` is set, polishes it with [`refine_similarity`].
pub fn select_candidate(
    template: &FeatureMap,
    target: &FeatureMap,
    candidates: &[Similarity2D; 2],
    cfg: &RegistrationConfig,
) -> Result<(Similarity2D, f64)> {
    let e0 = warped_mse(template, target, &candidates[0])?;
    let e1 = warped_mse(template, target, &candidates[1])?;
    let (best, err) = if e1 < e0 { (candidates[1], e1) } else { (candidates[0], e0) };
    if cfg.refine {
        refine_similarity(template, target, &best, cfg)
    } else {
        Ok((best, err))
    }
}

/// FM estimate followed by [`select_candidate`].
pub fn register(template: &FeatureMap, target: &FeatureMap, cfg: &RegistrationConfig) -> Result<Similarity2D> {
    let candidates = estimate_scale_rotation(template, target, cfg)?;
    Ok(select_candidate(template, target, &candidates, cfg)?.0)
}

const REFINE_LOG_STEP: f64 = 0.01;
const REFINE_ROT_STEP: f64 = 1.0 * PI / 180.0;
const REFINE_MIN_FRACTION: f64 = 1.0 / 32.0;

/// Compass search on warped MSE over `(ln scale, rotation)` starting at `init`.
/// Returns the polished similarity and its MSE; confidence is carried over.
pub fn refine_similarity(
    template: &FeatureMap,
    target: &FeatureMap,
    init: &Similarity2D,
    cfg: &RegistrationConfig,
) -> Result<(Similarity2D, f64)> {
    let (lo, hi) = cfg.scale_bounds;
    let (u_lo, u_hi) = (lo.ln(), hi.ln());
    let eval = |u: f64, v: f64| warped_mse(template, target, &Similarity2D::new(u.exp(), v));
    let (mut u, mut v) = (init.scale.clamp(lo, hi).ln(), init.rotation);
    let mut best = eval(u, v)?;
    let (mut hu, mut hv) = (REFINE_LOG_STEP, REFINE_ROT_STEP);
    while hu >= REFINE_LOG_STEP * REFINE_MIN_FRACTION {
        let mut moved = false;
        for (du, dv) in [(hu, 0.0), (-hu, 0.0), (0.0, hv), (0.0, -hv)] {
            let (cu, cv) = ((u + du).clamp(u_lo, u_hi), v + dv);
            let e = eval(cu, cv)?;
            if e < best {
                best = e;
                u = cu;
                v = cv;
                moved = true;
            }
        }
        if !moved {
            hu *= 0.5;
            hv *= 0.5;
        }
    }
    let sim = Similarity2D { scale: u.exp(), rotation: wrap_pi(v), confidence: init.confidence };
    Ok((sim, best))
}

// Inverse map from output pixel to source position: p = c + R(-rot) (p' - c) / s.
struct InverseMap {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
}

impl InverseMap {
    fn new(h: usize, w: usize, sim: &Similarity2D) -> Self {
        let (sn, cs) = sim.rotation.sin_cos();
        Self { cx: 0.5 * (w as f64 - 1.0), cy: 0.5 * (h as f64 - 1.0), a: cs / sim.scale, b: sn / sim.scale }
    }

    #[inline]
    fn source(&self, col: usize, row: usize) -> (f64, f64) {
        let (u, v) = (col as f64 - self.cx, row as f64 - self.cy);
        (self.cx + self.a * u + self.b * v, self.cy - self.b * u + self.a * v)
    }
}

// Visits the bilinear taps of `(x, y)` with zero padding as `(element offset, weight)`.
#[inline(always)]
fn bilinear_taps(h: usize, w: usize, ch: usize, x: f64, y: f64, mut f: impl FnMut(usize, f64)) {
    if !(x > -1.0 && y > -1.0 && x < w as f64 && y < h as f64) {
        return;
    }
    // both exceed -1 here, so truncation after the shift is a floor
    let (x0, y0) = ((x + 1.0) as isize - 1, (y + 1.0) as isize - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    if x0 >= 0 && y0 >= 0 && x0 + 1 < w as isize && y0 + 1 < h as isize {
        let i00 = (y0 as usize * w + x0 as usize) * ch;
        let i10 = i00 + w * ch;
        f(i00, (1.0 - fy) * (1.0 - fx));
        f(i00 + ch, (1.0 - fy) * fx);
        f(i10, fy * (1.0 - fx));
        f(i10 + ch, fy * fx);
        return;
    }
    for (dy, wy) in [(0isize, 1.0 - fy), (1, fy)] {
        let yy = y0 + dy;
        if yy < 0 || yy >= h as isize {
            continue;
        }
        for (dx, wx) in [(0isize, 1.0 - fx), (1, fx)] {
            let xx = x0 + dx;
            if xx >= 0 && xx < w as isize {
                f((yy as usize * w + xx as usize) * ch, wy * wx);
            }
        }
    }
}

// Calls `f(element index, value)` for every element of `warp(map, sim)`.
#[inline(always)]
fn for_each_warped(map: &FeatureMap, sim: &Similarity2D, mut f: impl FnMut(usize, f32)) {
    let (h, w, ch) = map.dims();
    let inv = InverseMap::new(h, w, sim);
    let src = map.data();
    if ch == 1 {
        for row in 0..h {
            for col in 0..w {
                let (x, y) = inv.source(col, row);
                let mut acc = 0.0f64;
                bilinear_taps(h, w, 1, x, y, |i, wt| acc += wt * src[i] as f64);
                f(row * w + col, acc as f32);
            }
        }
        return;
    }
    let mut acc = vec![0f64; ch];
    for row in 0..h {
        for col in 0..w {
            let (x, y) = inv.source(col, row);
            acc.fill(0.0);
            bilinear_taps(h, w, ch, x, y, |i, wt| {
                for (a, &s) in acc.iter_mut().zip(&src[i..i + ch]) {
                    *a += wt * s as f64;
                }
            });
            let o = (row * w + col) * ch;
            for (k, &a) in acc.iter().enumerate() {
                f(o + k, a as f32);
            }
        }
    }
}

/// Applies `sim` about the image centre with bilinear sampling and zero padding.
pub fn warp(map: &FeatureMap, sim: &Similarity2D) -> FeatureMap {
    if sim.is_identity() {
        return map.clone();
    }
    let (h, w, ch) = map.dims();
    let mut out = vec![0f32; h * w * ch];
    for_each_warped(map, sim, |i, v| out[i] = v);
    FeatureMap::from_vec(h, w, ch, out).expect("shape preserved")
}

/// `mse(warp(template, sim), target)` without materialising the warped map.
pub fn warped_mse(template: &FeatureMap, target: &FeatureMap, sim: &Similarity2D) -> Result<f64> {
    template.check_same_dims(target)?;
    if sim.is_identity() {
        return template.mse(target);
    }
    let dst = target.data();
    let mut sum = 0.0f64;
    for_each_warped(template, sim, |i, v| {
        let d = v as f64 - dst[i] as f64;
        sum += d * d;
    });
    Ok(sum / dst.len().max(1) as f64)
}

/// Exhaustive search over `scale_grid x rotation_grid` minimising warped MSE.
/// Ties go to the scale closest to 1, then the rotation closest to 0.
pub fn brute_force_scale_rotation(
    template: &FeatureMap,
    target: &FeatureMap,
    scale_grid: &[f64],
    rotation_grid: &[f64],
) -> Result<Similarity2D> {
    if scale_grid.is_empty() || rotation_grid.is_empty() {
        return Err(Error::InvalidArgument("brute-force grids must be nonempty".into()));
    }
    template.check_same_dims(target)?;
    let mut best: Option<(f64, f64, f64)> = None;
    let mut total = 0.0;
    for &s in scale_grid {
        for &rot in rotation_grid {
            let e = warped_mse(template, target, &Similarity2D { scale: s, rotation: rot, confidence: 0.0 })?;
            total += e;
            let better = match best {
                None => true,
                Some((be, bs, br)) => {
                    e < be || (e == be && ((s - 1.0).abs(), rot.abs()) < ((bs - 1.0).abs(), br.abs()))
                }
            };
            if better {
                best = Some((e, s, rot));
            }
        }
    }
    let (e, scale, rotation) = best.expect("grids are nonempty");
    let mean = total / (scale_grid.len() * rotation_grid.len()) as f64;
    let confidence = if e > 0.0 { mean / e } else { f64::MAX };
    Ok(Similarity2D { scale, rotation, confidence })
}

/// `n` evenly spaced values over `[lo, hi]` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}
