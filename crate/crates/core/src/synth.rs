//! Procedural template fields, perturbed instances, pose mixtures and labeled datasets.
//!
//! The template is a body elongated along `+x` with mirrored side parts, so it
//! is symmetric under `x -> -x` and `y -> -y` at zero asymmetry. Asymmetry adds
//! a head at `+x` and a fin on the `+y` top side.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{render, FeatureField, RenderConfig};
use crate::geometry::{wrap_tau, Aabb, CameraPose, Intrinsics};
use crate::map::FeatureMap;

pub const MANIFEST_HEADER: &str = "file,theta,phi,gamma,r";
pub const MANIFEST_NAME: &str = "manifest.csv";
pub const DATASET_META_NAME: &str = "dataset.json";

/// Which rendered quantity plays the role of the feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Piecewise-constant per-part features, 3 channels.
    #[default]
    PartId,
    /// Features are a copy of the RGB colour.
    ColorCopy,
    /// Single-channel luminance of the colour.
    GrayCopy,
}

impl FeatureMode {
    pub fn channels(self) -> usize {
        match self {
            FeatureMode::GrayCopy => 1,
            _ => 3,
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::PartId => "part-id",
            FeatureMode::ColorCopy => "color-copy",
            FeatureMode::GrayCopy => "gray-copy",
        })
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "part-id" => Ok(FeatureMode::PartId),
            "color-copy" => Ok(FeatureMode::ColorCopy),
            "gray-copy" => Ok(FeatureMode::GrayCopy),
            _ => Err(Error::InvalidArgument(format!(
                "unknown feature mode {s:?} (expected part-id, color-copy or gray-copy)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub seed: u64,
    pub dims: [usize; 3],
    pub n_parts: usize,
    pub asymmetry: f64,
    pub feature_mode: FeatureMode,
}

impl Default for TemplateSpec {
    fn default() -> Self {
        Self { seed: 0, dims: [32, 32, 32], n_parts: 4, asymmetry: 1.0, feature_mode: FeatureMode::PartId }
    }
}

impl TemplateSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_parts < 2 {
            return Err(Error::InvalidArgument(format!("n_parts must be >= 2, got {}", self.n_parts)));
        }
        if !(self.asymmetry >= 0.0) || !self.asymmetry.is_finite() {
            return Err(Error::InvalidArgument(format!("asymmetry must be >= 0, got {}", self.asymmetry)));
        }
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidArgument(format!("field dims must be >= 2, got {:?}", self.dims)));
        }
        Ok(())
    }
}

const SIGMA_MAX: f32 = 30.0;
// soft edge width in world units
const EDGE: f64 = 0.06;

const PART_FEATURES: [[f32; 3]; 8] = [
    [0.2, 0.6, 0.2],
    [0.0, 0.9, 0.5],
    [0.6, 0.0, 0.9],
    [0.9, 0.9, 0.0],
    [0.0, 0.4, 0.9],
    [0.5, 0.5, 0.5],
    [0.9, 0.4, 0.0],
    [0.3, 0.0, 0.5],
];
const HEAD_FEATURE: [f32; 3] = [1.0, 0.0, 0.0];
const FIN_FEATURE: [f32; 3] = [0.0, 0.0, 1.0];

#[derive(Debug, Clone, Copy)]
struct Part {
    centre: [f64; 3],
    radii: [f64; 3],
    color: [f32; 3],
    feature: [f32; 3],
}

impl Part {
    // 1 well inside, 0 well outside, linear across the soft edge
    fn occupancy(&self, p: &Point3<f64>) -> f64 {
        let mut q = 0.0;
        for a in 0..3 {
            q += ((p[a] - self.centre[a]) / self.radii[a]).powi(2);
        }
        let min_r = self.radii.iter().cloned().fold(f64::INFINITY, f64::min);
        let signed = (q.sqrt() - 1.0) * min_r;
        (0.5 - signed / EDGE).clamp(0.0, 1.0)
    }
}

fn luminance(c: [f32; 3]) -> f32 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn random_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9)]
}

fn build_parts(spec: &TemplateSpec) -> Vec<Part> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut parts = vec![Part {
        centre: [0.0, 0.0, 0.0],
        radii: [0.8, 0.32, 0.26],
        color: random_color(&mut rng),
        feature: PART_FEATURES[0],
    }];
    for id in 1..spec.n_parts {
        let centre = [rng.gen_range(0.2..0.6), rng.gen_range(0.2..0.35), rng.gen_range(-0.3..0.2)];
        let radii = [rng.gen_range(0.1..0.22), rng.gen_range(0.08..0.14), rng.gen_range(0.08..0.16)];
        let color = random_color(&mut rng);
        let feature = PART_FEATURES[id % PART_FEATURES.len()];
        // mirrored copies keep the x -> -x and y -> -y symmetry
        for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
            parts.push(Part { centre: [sx * centre[0], sy * centre[1], centre[2]], radii, color, feature });
        }
    }
    let a = spec.asymmetry.min(1.0);
    if a > 0.0 {
        parts.push(Part {
            centre: [0.72, 0.0, 0.12],
            radii: [0.24 * a, 0.2 * a, 0.2 * a],
            color: random_color(&mut rng),
            feature: HEAD_FEATURE,
        });
        parts.push(Part {
            centre: [-0.25, 0.16, 0.34],
            radii: [0.3 * a, 0.07 * a, 0.2 * a],
            color: random_color(&mut rng),
            feature: FIN_FEATURE,
        });
    }
    parts
}

/// Unit cube `[-1, 1]^3`, the box all synthetic fields live in.
pub fn synth_bbox() -> Aabb {
    Aabb::new([-1.0; 3], [1.0; 3]).expect("static box")
}

/// Builds the template field. Deterministic in `spec`.
pub fn make_template(spec: &TemplateSpec) -> Result<FeatureField> {
    spec.validate()?;
    let parts = build_parts(spec);
    let mode = spec.feature_mode;
    FeatureField::from_fn(spec.dims, synth_bbox(), mode.channels(), |p| {
        let (mut best, mut occ) = (0usize, 0.0f64);
        for (i, part) in parts.iter().enumerate() {
            let o = part.occupancy(&p);
            // later parts (markers) win ties so they stay visible on the body
            if o > 0.0 && o >= occ {
                best = i;
                occ = o;
            }
        }
        if occ <= 0.0 {
            return (0.0, [0.0; 3], vec![0.0; mode.channels()]);
        }
        let part = &parts[best];
        let feature = match mode {
            FeatureMode::PartId => part.feature.to_vec(),
            FeatureMode::ColorCopy => part.color.to_vec(),
            FeatureMode::GrayCopy => vec![luminance(part.color)],
        };
        (SIGMA_MAX * occ as f32, part.color, feature)
    })
}

/// Perturbation amplitudes applied by [`make_instance_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    /// Relative density change.
    pub density: f64,
    /// Additive colour change.
    pub color: f64,
    /// Additive feature change; kept at most half the colour amplitude by [`Perturbation::from_strength`].
    pub feature: f64,
}

impl Perturbation {
    pub fn from_strength(strength: f64) -> Self {
        Self { density: 0.5 * strength, color: strength, feature: 0.25 * strength }
    }

    pub fn is_zero(&self) -> bool {
        self.density == 0.0 && self.color == 0.0 && self.feature == 0.0
    }
}

// Smooth random field: a few low-frequency plane waves, range about [-1, 1].
struct LowFreq {
    waves: Vec<([f64; 3], f64)>,
}

impl LowFreq {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..4)
            .map(|_| {
                let dir: [f64; 3] = [0; 3].map(|_| rng.sample(rand_distr::StandardNormal));
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
                let k = rng.gen_range(1.0..3.0);
                (dir.map(|v| v / norm * k), rng.gen_range(0.0..TAU))
            })
            .collect();
        Self { waves }
    }

    fn at(&self, p: &Point3<f64>) -> f64 {
        let s: f64 = self.waves.iter().map(|(k, ph)| (k[0] * p.x + k[1] * p.y + k[2] * p.z + ph).cos()).sum();
        s / (self.waves.len() as f64).sqrt()
    }
}

/// Instance variation at a single `strength` in `[0, 1]`.
pub fn make_instance(template: &FeatureField, seed: u64, strength: f64) -> Result<FeatureField> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::InvalidArgument(format!("strength must lie in [0, 1], got {strength}")));
    }
    make_instance_with(template, seed, &Perturbation::from_strength(strength))
}

/// Smooth multiplicative density and additive colour/feature perturbation.
/// Colour changes get a per-instance global shift plus a spatially varying part.
pub fn make_instance_with(template: &FeatureField, seed: u64, pert: &Perturbation) -> Result<FeatureField> {
    if pert.is_zero() {
        return Ok(template.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dens = LowFreq::new(&mut rng);
    let color_fields: Vec<LowFreq> = (0..3).map(|_| LowFreq::new(&mut rng)).collect();
    let shift: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ch = template.channels();
    let feat_fields: Vec<LowFreq> = (0..ch).map(|_| LowFreq::new(&mut rng)).collect();

    let [gx, gy, gz] = template.dims();
    let n = gx * gy * gz;
    let mut density = template.density().to_vec();
    let mut color = template.color().to_vec();
    let mut feature = template.feature().to_vec();
    for ix in 0..gx {
        for iy in 0..gy {
            for iz in 0..gz {
                let i = template.index(ix, iy, iz);
                let p = template.node_position(ix, iy, iz);
                density[i] = (density[i] as f64 * (1.0 + pert.density * dens.at(&p))).max(0.0) as f32;
                for c in 0..3 {
                    let dc = pert.color * 0.5 * (shift[c] + color_fields[c].at(&p));
                    color[i * 3 + c] = (color[i * 3 + c] as f64 + dc).clamp(0.0, 1.0) as f32;
                }
                for c in 0..ch {
                    let df = pert.feature * 0.5 * feat_fields[c].at(&p);
                    feature[i * ch + c] = (feature[i * ch + c] as f64 + df) as f32;
                }
            }
        }
    }
    debug_assert_eq!(density.len(), n);
    template.with_data(density, feature, ch, color)
}

/// Same as [`make_instance_with`] but, for colour-derived modes, features follow the perturbed colour.
pub fn make_instance_for_mode(template: &FeatureField, seed: u64, pert: &Perturbation, mode: FeatureMode) -> Result<FeatureField> {
    let inst = make_instance_with(template, seed, pert)?;
    match mode {
        FeatureMode::PartId => Ok(inst),
        FeatureMode::ColorCopy => {
            let color = inst.color().to_vec();
            inst.with_data(inst.density().to_vec(), color.clone(), 3, color)
        }
        FeatureMode::GrayCopy => {
            let color = inst.color().to_vec();
            let gray = color.chunks_exact(3).map(|c| luminance([c[0], c[1], c[2]])).collect();
            inst.with_data(inst.density().to_vec(), gray, 1, color)
        }
    }
}

/// One wrapped-Gaussian azimuth component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AzimuthComponent {
    pub mean: f64,
    pub std: f64,
    pub weight: f64,
}

/// Ground-truth pose distribution: wrapped-Gaussian azimuth mixture, uniform
/// elevation and radius, Gaussian roll.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseDistSpec {
    pub components: Vec<AzimuthComponent>,
    pub phi_range: (f64, f64),
    pub gamma_std: f64,
    pub r_range: (f64, f64),
}

impl PoseDistSpec {
    /// Two equal peaks at 90 and 270 degrees, 15 degrees wide.
    pub fn two_peaks() -> Self {
        Self::from_peaks(&[(90.0, 15.0, 0.5), (270.0, 15.0, 0.5)])
    }

    /// Uniform azimuth, as one component far wider than the circle.
    pub fn uniform() -> Self {
        let mut d = Self::from_peaks(&[(0.0, 0.0, 1.0)]);
        d.components[0].std = UNIFORM_STD;
        d
    }

    /// Components given as `(mean_deg, std_deg, weight)`; other fields at their defaults.
    pub fn from_peaks(peaks: &[(f64, f64, f64)]) -> Self {
        Self {
            components: peaks
                .iter()
                .map(|&(m, s, w)| AzimuthComponent { mean: m.to_radians(), std: s.to_radians(), weight: w })
                .collect(),
            phi_range: (85f64.to_radians(), 95f64.to_radians()),
            gamma_std: 0.0,
            r_range: (3.0, 3.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidArgument("pose distribution needs at least one component".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if self.components.iter().any(|c| !(c.weight >= 0.0) || !(c.std >= 0.0)) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument("component weights must be >= 0 and sum to 1, stds >= 0".into()));
        }
        let (p0, p1) = self.phi_range;
        if !(0.0 <= p0 && p0 <= p1 && p1 <= PI) {
            return Err(Error::InvalidArgument("phi_range must lie within [0, pi]".into()));
        }
        let (r0, r1) = self.r_range;
        if !(r0 > 0.0 && r0 <= r1) || !(self.gamma_std >= 0.0) {
            return Err(Error::InvalidArgument("r_range must be positive and ordered, gamma_std >= 0".into()));
        }
        Ok(())
    }

    /// Parses `mean:std:weight,...` with angles in degrees.
    pub fn parse_peaks(text: &str) -> Result<Vec<(f64, f64, f64)>> {
        text.split(',')
            .map(|item| {
                let v: Vec<f64> = item
                    .split(':')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::InvalidArgument(format!("bad peak {item:?}: {e}")))?;
                match v[..] {
                    [m, s, w] => Ok((m, s, w)),
                    _ => Err(Error::InvalidArgument(format!("peak {item:?} must be mean:std:weight"))),
                }
            })
            .collect()
    }
}

fn uniform_in(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn gaussian(rng: &mut impl Rng, std: f64) -> f64 {
    if std > 0.0 {
        Normal::new(0.0, std).expect("finite std").sample(rng)
    } else {
        0.0
    }
}

// wrapping a Gaussian this wide gives a uniform angle to far below f64 precision
const UNIFORM_STD: f64 = 100.0;

/// Draws one ground-truth pose.
pub fn sample_gt_pose(dist: &PoseDistSpec, rng: &mut impl Rng) -> CameraPose {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut comp = dist.components[dist.components.len() - 1];
    for c in &dist.components {
        acc += c.weight;
        if u < acc {
            comp = *c;
            break;
        }
    }
    let theta = wrap_tau(comp.mean + gaussian(rng, comp.std));
    let phi = uniform_in(rng, dist.phi_range);
    let gamma = gaussian(rng, dist.gamma_std);
    let r = uniform_in(rng, dist.r_range);
    CameraPose { theta, phi, gamma, r }.normalized()
}

/// Everything needed to generate a labeled dataset from a template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n: usize,
    pub seed: u64,
    pub perturbation: Perturbation,
    pub dist: PoseDistSpec,
    pub intrinsics: Intrinsics,
    pub render: RenderConfig,
    pub feature_mode: FeatureMode,
}

impl DatasetSpec {
    pub fn new(n: usize, seed: u64, strength: f64, dist: PoseDistSpec) -> Self {
        Self {
            n,
            seed,
            perturbation: Perturbation::from_strength(strength),
            dist,
            intrinsics: Intrinsics::default(),
            render: RenderConfig::default(),
            feature_mode: FeatureMode::PartId,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub file: PathBuf,
    pub pose: CameraPose,
    pub seed: u64,
}

impl DatasetEntry {
    /// Companion file holding depth (channel 0) and alpha (channel 1).
    pub fn depth_file(&self) -> PathBuf {
        depth_path(&self.file)
    }
}

fn depth_path(file: &Path) -> PathBuf {
    let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    file.with_file_name(format!("{stem}.depth.tfm"))
}

/// Sidecar metadata written next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub spec: DatasetSpec,
    /// Min and max over all feature values, for consistent image export.
    pub value_range: (f32, f32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub entries: Vec<DatasetEntry>,
    pub manifest: PathBuf,
}

fn entry_rngs(seed: u64, index: usize) -> (u64, ChaCha8Rng) {
    let derived = seed.wrapping_add(index as u64);
    let mut pose_rng = ChaCha8Rng::seed_from_u64(derived);
    pose_rng.set_stream(1);
    (derived, pose_rng)
}

/// Renders entry `index` of a dataset: the instance's feature map plus a 2-channel depth/alpha map.
pub fn render_entry(template: &FeatureField, spec: &DatasetSpec, index: usize) -> Result<(CameraPose, u64, FeatureMap, FeatureMap)> {
    let (inst_seed, mut rng) = entry_rngs(spec.seed, index);
    let pose = sample_gt_pose(&spec.dist, &mut rng);
    let inst = make_instance_for_mode(template, inst_seed, &spec.perturbation, spec.feature_mode)?;
    let out = render(&inst, &pose, &spec.intrinsics, &spec.render)?;
    let (h, w) = (spec.intrinsics.height, spec.intrinsics.width);
    let da: Vec<f32> = out.depth_map.data().iter().zip(out.alpha_map.data()).flat_map(|(&d, &a)| [d, a]).collect();
    let depth_alpha = FeatureMap::from_vec(h, w, 2, da)?;
    Ok((pose, inst_seed, out.feature_map, depth_alpha))
}

/// Writes `n` rendered instances, their depth/alpha maps, `manifest.csv` and `dataset.json`.
/// Angles in the manifest are radians. Output is identical for any thread count.
pub fn make_dataset(template: &FeatureField, spec: &DatasetSpec, out_dir: &Path) -> Result<LabeledDataset> {
    spec.dist.validate()?;
    spec.intrinsics.validate()?;
    spec.render.validate()?;
    if template.channels() != spec.feature_mode.channels() {
        return Err(Error::InvalidArgument(format!(
            "template has {} feature channels but mode {} needs {}",
            template.channels(),
            spec.feature_mode,
            spec.feature_mode.channels()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results = (0..spec.n)
        .into_par_iter()
        .map(|i| -> Result<(DatasetEntry, (f32, f32))> {
            let (pose, seed, features, depth_alpha) = render_entry(template, spec, i)?;
            let file = out_dir.join(format!("{i:05}.tfm"));
            features.save(&file)?;
            depth_alpha.save(depth_path(&file))?;
            let range = features
                .data()
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            Ok((DatasetEntry { file, pose, seed }, range))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    let mut range = (f32::INFINITY, f32::NEG_INFINITY);
    for (e, (lo, hi)) in &results {
        let name = e.file.file_name().expect("entry files have names").to_string_lossy();
        manifest.push_str(&format!("{name},{},{},{},{}\n", e.pose.theta, e.pose.phi, e.pose.gamma, e.pose.r));
        range = (range.0.min(*lo), range.1.max(*hi));
    }
    if results.is_empty() {
        range = (0.0, 0.0);
    }
    let manifest_path = out_dir.join(MANIFEST_NAME);
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    let meta = DatasetMeta { spec: spec.clone(), value_range: range };
    let meta_path = out_dir.join(DATASET_META_NAME);
    std::fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;
    Ok(LabeledDataset { entries: results.into_iter().map(|(e, _)| e).collect(), manifest: manifest_path })
}

impl LabeledDataset {
    /// Reads a manifest; file names resolve relative to its directory.
    /// Instance seeds come from `dataset.json` when present.
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let dir = manifest.parent().unwrap_or(Path::new("."));
        let base_seed = std::fs::read(dir.join(DATASET_META_NAME))
            .ok()
            .and_then(|b| serde_json::from_slice::<DatasetMeta>(&b).ok())
            .map(|m| m.spec.seed);
        let ctx = manifest.display().to_string();
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == MANIFEST_HEADER => {}
            other => return Err(Error::format(&ctx, format!("expected header {MANIFEST_HEADER:?}, got {other:?}"))),
        }
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(Error::format(&ctx, format!("line {}: expected 5 columns, got {}", i + 2, cols.len())));
            }
            let num = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::format(&ctx, format!("line {}: {s:?}: {e}", i + 2)))
            };
            let pose = CameraPose::new(num(cols[1])?, num(cols[2])?, num(cols[3])?, num(cols[4])?)
                .map_err(|e| Error::format(&ctx, format!("line {}: {e}", i + 2)))?;
            let idx = entries.len() as u64;
            entries.push(DatasetEntry {
                file: dir.join(cols[0].trim()),
                pose,
                seed: base_seed.map(|s| s.wrapping_add(idx)).unwrap_or(idx),
            });
        }
        Ok(Self { entries, manifest: manifest.to_path_buf() })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks that every referenced feature file exists and parses.
    pub fn verify(&self) -> Result<()> {
        for e in &self.entries {
            FeatureMap::load(&e.file)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::wrap_pi;

    fn side_render(field: &FeatureField, theta_deg: f64) -> FeatureMap {
        let pose = CameraPose::new(theta_deg.to_radians(), PI / 2.0, 0.0, 3.0).unwrap();
        render(field, &pose, &Intrinsics::default(), &RenderConfig::default()).unwrap().feature_map
    }

    fn mean_abs_diff(a: &FeatureMap, b: &FeatureMap) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.data().len() as f64
    }

    fn max_abs(a: &FeatureMap) -> f32 {
        a.data().iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    #[test]
    fn symmetric_template_is_mirror_ambiguous() {
        let sym = make_template(&TemplateSpec { asymmetry: 0.0, ..Default::default() }).unwrap();
        let asym = make_template(&TemplateSpec { asymmetry: 1.0, ..Default::default() }).unwrap();
        let (a, b) = (side_render(&sym, 90.0), side_render(&sym, 270.0));
        let flipped = b.flip_horizontal();
        let max_diff = a.data().iter().zip(flipped.data()).fold(0.0f32, |m, (x, y)| m.max((x - y).abs()));
        assert!(max_diff < 0.01 * max_abs(&a), "max diff {max_diff}");
        let sym_diff = mean_abs_diff(&a, &flipped);
        let asym_diff = mean_abs_diff(&side_render(&asym, 90.0), &side_render(&asym, 270.0).flip_horizontal());
        assert!(asym_diff > 10.0 * sym_diff.max(1e-6), "{asym_diff} vs {sym_diff}");
    }

    #[test]
    fn template_is_deterministic() {
        let spec = TemplateSpec { seed: 5, ..Default::default() };
        assert_eq!(make_template(&spec).unwrap(), make_template(&spec).unwrap());
        assert!(make_template(&TemplateSpec { n_parts: 1, ..spec }).is_err());
        let gray = make_template(&TemplateSpec { feature_mode: FeatureMode::GrayCopy, ..spec }).unwrap();
        assert_eq!(gray.channels(), 1);
    }

    #[test]
    fn instance_strength_contract() {
        let t = make_template(&TemplateSpec::default()).unwrap();
        assert_eq!(make_instance(&t, 1, 0.0).unwrap(), t);
        let a = make_instance(&t, 1, 0.3).unwrap();
        assert_eq!(a, make_instance(&t, 1, 0.3).unwrap());
        let b = make_instance(&t, 2, 0.3).unwrap();
        assert_ne!(a, b);
        let rms = |x: &[f32], y: &[f32]| {
            (x.iter().zip(y).map(|(p, q)| ((p - q) as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
        };
        // compare over occupied nodes only
        let occupied: Vec<usize> = (0..t.voxel_count()).filter(|&i| t.density()[i] > 0.0).collect();
        let pick = |v: &[f32], c: usize| occupied.iter().flat_map(|&i| (0..c).map(move |k| v[i * c + k])).collect::<Vec<_>>();
        let feat = rms(&pick(a.feature(), 3), &pick(t.feature(), 3));
        let col = rms(&pick(a.color(), 3), &pick(t.color(), 3));
        assert!(feat > 0.0 && feat < 0.5 * col, "feature rms {feat} colour rms {col}");
        assert!(make_instance(&t, 1, 1.5).is_err());
    }

    #[test]
    fn colour_modes_follow_perturbed_colour() {
        let spec = TemplateSpec { feature_mode: FeatureMode::ColorCopy, ..Default::default() };
        let t = make_template(&spec).unwrap();
        let inst = make_instance_for_mode(&t, 3, &Perturbation::from_strength(0.5), FeatureMode::ColorCopy).unwrap();
        assert_eq!(inst.feature(), inst.color());
    }

    #[test]
    fn degenerate_mixture_and_determinism() {
        let dist = PoseDistSpec::from_peaks(&[(0.0, 0.0, 1.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!(wrap_pi(sample_gt_pose(&dist, &mut rng).theta).abs() < 1e-12);
        }
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10).map(|_| sample_gt_pose(&PoseDistSpec::two_peaks(), &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(4), draw(4));
    }

    #[test]
    fn two_peaks_split_mass_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let near_90 = (0..n)
            .filter(|_| {
                let t = sample_gt_pose(&PoseDistSpec::two_peaks(), &mut rng).theta;
                t < PI
            })
            .count();
        let frac = near_90 as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn peak_parsing() {
        assert_eq!(PoseDistSpec::parse_peaks("90:15:0.5,270:15:0.5").unwrap(), vec![(90.0, 15.0, 0.5), (270.0, 15.0, 0.5)]);
        assert!(PoseDistSpec::parse_peaks("90:15").is_err());
        let mut bad = PoseDistSpec::two_peaks();
        bad.components[0].weight = 0.7;
        assert!(bad.validate().is_err());
        assert_eq!("gray-copy".parse::<FeatureMode>().unwrap(), FeatureMode::GrayCopy);
        assert!("rgb".parse::<FeatureMode>().is_err());
    }

    #[test]
    fn dataset_roundtrip_and_determinism() {
        let t = make_template(&TemplateSpec { dims: [16, 16, 16], ..Default::default() }).unwrap();
        let mut spec = DatasetSpec::new(4, 11, 0.2, PoseDistSpec::two_peaks());
        spec.intrinsics = Intrinsics::new(45f64.to_radians(), 24, 24).unwrap();
        spec.render.n_samples = 16;
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = make_dataset(&t, &spec, d1.path()).unwrap();
        make_dataset(&t, &spec, d2.path()).unwrap();
        for name in ["manifest.csv", "dataset.json", "00000.tfm", "00003.tfm", "00002.depth.tfm"] {
            assert_eq!(std::fs::read(d1.path().join(name)).unwrap(), std::fs::read(d2.path().join(name)).unwrap(), "{name}");
        }
        let back = LabeledDataset::load(&a.manifest).unwrap();
        assert_eq!(back, a);
        back.verify().unwrap();
        let da = FeatureMap::load(a.entries[1].depth_file()).unwrap();
        assert_eq!(da.dims(), (24, 24, 2));

        let empty = tempfile::tempdir().unwrap();
        let e = make_dataset(&t, &DatasetSpec { n: 0, ..spec }, empty.path()).unwrap();
        assert!(e.is_empty());
        assert_eq!(std::fs::read_to_string(&e.manifest).unwrap(), "file,theta,phi,gamma,r\n");
    }
}
