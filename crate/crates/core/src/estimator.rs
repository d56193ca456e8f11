//! Pose bank construction, template matching and the softmax pose distribution.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{render, FeatureField, RenderConfig};
use crate::geometry::{enumerate_grid, wrap_pi, wrap_tau, CameraPose, Intrinsics, PoseGrid};
use crate::map::{fmt_dims, read_exact, read_u32, FeatureMap};
use crate::registration::{
    estimate_scale_rotation, register_spectra, select_candidate, warp, LogPolarSpectrum, RegistrationConfig, Similarity2D,
};

pub const BANK_MAGIC: &[u8; 4] = b"TPB1";
pub const BANK_VERSION: u32 = 1;

/// Templates rendered at every bin centre of a [`PoseGrid`], in grid index order.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseBank {
    grid: PoseGrid,
    poses: Vec<CameraPose>,
    templates: Vec<FeatureMap>,
    intrinsics: Intrinsics,
    render_cfg: RenderConfig,
    depth: Vec<FeatureMap>,
    alpha: Vec<FeatureMap>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BankHeader {
    version: u32,
    grid: PoseGrid,
    intrinsics: Intrinsics,
    render: RenderConfig,
    count: usize,
    channels: usize,
    depth: bool,
}

impl PoseBank {
    /// Assembles a bank; `depth`/`alpha` are either empty or one map per template.
    pub fn from_parts(
        grid: PoseGrid,
        intrinsics: Intrinsics,
        render_cfg: RenderConfig,
        templates: Vec<FeatureMap>,
        depth: Vec<FeatureMap>,
        alpha: Vec<FeatureMap>,
    ) -> Result<Self> {
        grid.validate()?;
        intrinsics.validate()?;
        if templates.len() != grid.len() {
            return Err(Error::Validation(format!(
                "bank has {} templates for a {}x{} grid",
                templates.len(),
                grid.n_theta,
                grid.n_phi
            )));
        }
        if depth.len() != alpha.len() || !(depth.is_empty() || depth.len() == templates.len()) {
            return Err(Error::Validation("depth/alpha maps must be absent or one per template".into()));
        }
        let dims = (intrinsics.height, intrinsics.width);
        let channels = templates.first().map(|t| t.channels()).unwrap_or(0);
        for (k, t) in templates.iter().enumerate() {
            if (t.height(), t.width(), t.channels()) != (dims.0, dims.1, channels) {
                return Err(Error::Validation(format!(
                    "template {k} is {}, expected {}",
                    fmt_dims(t.dims()),
                    fmt_dims((dims.0, dims.1, channels))
                )));
            }
        }
        for (k, m) in depth.iter().chain(&alpha).enumerate() {
            if m.dims() != (dims.0, dims.1, 1) {
                return Err(Error::Validation(format!("depth/alpha map {k} is {}", fmt_dims(m.dims()))));
            }
        }
        let poses = enumerate_grid(&grid);
        Ok(Self { grid, poses, templates, intrinsics, render_cfg, depth, alpha })
    }

    pub fn grid(&self) -> &PoseGrid {
        &self.grid
    }

    pub fn poses(&self) -> &[CameraPose] {
        &self.poses
    }

    pub fn templates(&self) -> &[FeatureMap] {
        &self.templates
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn render_config(&self) -> &RenderConfig {
        &self.render_cfg
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// `(height, width, channels)` shared by all templates.
    pub fn template_dims(&self) -> (usize, usize, usize) {
        self.templates[0].dims()
    }

    pub fn has_depth(&self) -> bool {
        !self.depth.is_empty()
    }

    pub fn depth(&self, k: usize) -> Option<&FeatureMap> {
        self.depth.get(k)
    }

    pub fn alpha(&self, k: usize) -> Option<&FeatureMap> {
        self.alpha.get(k)
    }

    pub fn check_query(&self, query: &FeatureMap) -> Result<()> {
        if query.dims() != self.template_dims() {
            return Err(Error::DimensionMismatch {
                expected: fmt_dims(self.template_dims()),
                actual: fmt_dims(query.dims()),
            });
        }
        Ok(())
    }

    /// Pose implied by bin `k` and a recovered similarity: `gamma` adds the
    /// rotation, `r = r_fixed / scale`.
    pub fn pose_for(&self, k: usize, sim: &Similarity2D) -> CameraPose {
        let base = self.poses[k];
        CameraPose { gamma: wrap_pi(base.gamma + sim.rotation), r: base.r / sim.scale, ..base }
    }

    /// Bank container: magic `TPB1`, `u32` header length, JSON header, then the
    /// templates as `TFM1` blocks followed by depth and alpha blocks when present.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let header = BankHeader {
            version: BANK_VERSION,
            grid: self.grid,
            intrinsics: self.intrinsics,
            render: self.render_cfg,
            count: self.templates.len(),
            channels: self.template_dims().2,
            depth: self.has_depth(),
        };
        let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
        w.write_all(BANK_MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for m in self.templates.iter().chain(&self.depth).chain(&self.alpha) {
            m.write_to(w)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(r: &mut impl Read, context: &str) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, context, "bank magic")?;
        if &magic != BANK_MAGIC {
            return Err(Error::format(context, format!("bad magic {:?}, expected \"TPB1\"", String::from_utf8_lossy(&magic))));
        }
        let len = read_u32(r, context, "header length")? as usize;
        let mut json = vec![0u8; len];
        read_exact(r, &mut json, context, "header")?;
        let header: BankHeader =
            serde_json::from_slice(&json).map_err(|e| Error::format(context, format!("bad header: {e}")))?;
        if header.version != BANK_VERSION {
            return Err(Error::format(context, format!("unsupported bank version {}", header.version)));
        }
        if header.count != header.grid.len() {
            return Err(Error::format(context, format!("header count {} does not match the grid", header.count)));
        }
        let mut read_blocks = |n: usize, what: &str| -> Result<Vec<FeatureMap>> {
            (0..n).map(|k| FeatureMap::read_from(r, &format!("{context}: {what} {k}"))).collect()
        };
        let templates = read_blocks(header.count, "template")?;
        let (depth, alpha) = if header.depth {
            (read_blocks(header.count, "depth")?, read_blocks(header.count, "alpha")?)
        } else {
            (Vec::new(), Vec::new())
        };
        let bank = Self::from_parts(header.grid, header.intrinsics, header.render, templates, depth, alpha)
            .map_err(|e| Error::format(context, e.to_string()))?;
        if bank.template_dims().2 != header.channels {
            return Err(Error::format(context, "channel count does not match the header"));
        }
        Ok(bank)
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let mut cursor = bytes;
        let bank = Self::read_from(&mut cursor, context)?;
        if !cursor.is_empty() {
            return Err(Error::format(context, format!("{} trailing bytes", cursor.len())));
        }
        Ok(bank)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

/// Renders the field at every grid pose. Feature, depth and alpha maps are kept.
pub fn build_pose_bank(field: &FeatureField, grid: &PoseGrid, intr: &Intrinsics, cfg: &RenderConfig) -> Result<PoseBank> {
    grid.validate()?;
    let renders = enumerate_grid(grid)
        .par_iter()
        .map(|pose| render(field, pose, intr, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut templates = Vec::with_capacity(renders.len());
    let mut depth = Vec::with_capacity(renders.len());
    let mut alpha = Vec::with_capacity(renders.len());
    for out in renders {
        templates.push(out.feature_map);
        depth.push(out.depth_map);
        alpha.push(out.alpha_map);
    }
    PoseBank::from_parts(*grid, *intr, *cfg, templates, depth, alpha)
}

/// Outcome of matching a query against one template.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub index: usize,
    pub similarity: Similarity2D,
    pub mse: f64,
    pub warped: Option<FeatureMap>,
}

/// Registers template `k` onto `query`, keeping the rotation candidate with the lower MSE.
pub fn match_candidate(query: &FeatureMap, bank: &PoseBank, k: usize, reg_cfg: &RegistrationConfig) -> Result<MatchResult> {
    bank.check_query(query)?;
    let template = bank.templates.get(k).ok_or_else(|| {
        Error::InvalidArgument(format!("template index {k} out of range for a bank of {}", bank.len()))
    })?;
    let candidates = estimate_scale_rotation(template, query, reg_cfg)?;
    let (similarity, mse) = select_candidate(template, query, &candidates, reg_cfg)?;
    Ok(MatchResult { index: k, similarity, mse, warped: None })
}

/// A bank with the template spectra prepared once, for scoring many queries.
#[derive(Debug)]
pub struct PoseMatcher<'a> {
    bank: &'a PoseBank,
    cfg: RegistrationConfig,
    spectra: Vec<LogPolarSpectrum>,
}

impl<'a> PoseMatcher<'a> {
    pub fn new(bank: &'a PoseBank, cfg: &RegistrationConfig) -> Result<Self> {
        cfg.validate()?;
        let spectra = bank
            .templates
            .par_iter()
            .map(|t| LogPolarSpectrum::new(t, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { bank, cfg: *cfg, spectra })
    }

    pub fn bank(&self) -> &PoseBank {
        self.bank
    }

    pub fn config(&self) -> &RegistrationConfig {
        &self.cfg
    }

    /// Scores the query against every template, in bank order.
    pub fn score(&self, query: &FeatureMap) -> Result<Vec<MatchResult>> {
        self.bank.check_query(query)?;
        let qspec = LogPolarSpectrum::new(query, &self.cfg)?;
        (0..self.bank.len())
            .into_par_iter()
            .map(|k| self.match_prepared(query, &qspec, k))
            .collect()
    }

    fn match_prepared(&self, query: &FeatureMap, qspec: &LogPolarSpectrum, k: usize) -> Result<MatchResult> {
        let template = &self.bank.templates[k];
        let candidates = register_spectra(&self.spectra[k], qspec)?;
        let (similarity, mse) = select_candidate(template, query, &candidates, &self.cfg)?;
        Ok(MatchResult { index: k, similarity, mse, warped: None })
    }

    /// Full maximum-likelihood estimate; see [`estimate_map`].
    pub fn estimate_map(&self, query: &FeatureMap, tau: f64) -> Result<(CameraPose, PoseDistribution, MatchResult)> {
        let matches = self.score(query)?;
        finish_estimate(self.bank, query, matches, tau)
    }
}

/// Matches `query` against every bank entry; results are in bank order.
pub fn score_bank(query: &FeatureMap, bank: &PoseBank, reg_cfg: &RegistrationConfig) -> Result<Vec<MatchResult>> {
    PoseMatcher::new(bank, reg_cfg)?.score(query)
}

/// Discrete pose PDF over bank entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseDistribution {
    pub probs: Vec<f64>,
    pub temperature: f64,
}

impl PoseDistribution {
    /// Highest-probability index; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = k;
            }
        }
        best
    }

    /// Inverse-CDF draw of a bin index.
    pub fn sample_index(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.gen::<f64>();
        let mut acc = 0.0;
        for (k, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        // u landed in the round-off gap above the last partial sum
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(self.probs.len() - 1)
    }
}

/// `p(k) = exp(-e_k tau) / sum_j exp(-e_j tau)`, evaluated after subtracting the minimum error.
pub fn pose_pdf(mse: &[f64], tau: f64) -> Result<PoseDistribution> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature must be positive and finite, got {tau}")));
    }
    if mse.is_empty() {
        return Err(Error::InvalidArgument("pose_pdf needs at least one error value".into()));
    }
    if let Some(k) = mse.iter().position(|e| !e.is_finite()) {
        return Err(Error::NonFinite(format!("mse[{k}] = {}", mse[k])));
    }
    let min = mse.iter().cloned().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = mse.iter().map(|&e| (-(e - min) * tau).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(PoseDistribution { probs: weights.iter().map(|w| w / total).collect(), temperature: tau })
}

/// Draws a pose: inverse-CDF bin choice, Gaussian jitter of `bin / 6` on
/// theta (wrapped) and phi (clamped to `[0, pi]`), gamma and r from the bin's match.
pub fn sample_pose(pdf: &PoseDistribution, bank: &PoseBank, matches: &[MatchResult], rng: &mut impl Rng) -> Result<CameraPose> {
    if pdf.probs.len() != bank.len() || matches.len() != bank.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} bank entries", bank.len()),
            actual: format!("{} probabilities, {} matches", pdf.probs.len(), matches.len()),
        });
    }
    let k = pdf.sample_index(rng);
    let grid = bank.grid();
    let jitter = |step: f64, rng: &mut dyn rand::RngCore| -> f64 {
        let sigma = step.abs() / 6.0;
        if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("sigma is finite and positive").sample(rng)
        } else {
            0.0
        }
    };
    let base = bank.pose_for(k, &matches[k].similarity);
    let theta = wrap_tau(base.theta + jitter(grid.theta_step(), rng));
    let phi = (base.phi + jitter(grid.phi_step(), rng)).clamp(0.0, std::f64::consts::PI);
    Ok(CameraPose { theta, phi, ..base })
}

fn finish_estimate(
    bank: &PoseBank,
    query: &FeatureMap,
    mut matches: Vec<MatchResult>,
    tau: f64,
) -> Result<(CameraPose, PoseDistribution, MatchResult)> {
    let errors: Vec<f64> = matches.iter().map(|m| m.mse).collect();
    let pdf = pose_pdf(&errors, tau)?;
    let best = argmin(&errors);
    let mut winner = matches.swap_remove(best);
    winner.warped = Some(warp(&bank.templates[best], &winner.similarity));
    debug_assert_eq!(winner.warped.as_ref().map(|w| w.dims()), Some(query.dims()));
    Ok((bank.pose_for(best, &winner.similarity), pdf, winner))
}

/// Lowest index among the minimal values.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = k;
        }
    }
    best
}

/// Maximum-likelihood pose: the minimum-MSE bin centre with its recovered gamma and r.
/// Also returns the PDF at temperature `tau` and the winning match (with its warped template).
pub fn estimate_map(
    query: &FeatureMap,
    bank: &PoseBank,
    reg_cfg: &RegistrationConfig,
    tau: f64,
) -> Result<(CameraPose, PoseDistribution, MatchResult)> {
    let matches = score_bank(query, bank, reg_cfg)?;
    finish_estimate(bank, query, matches, tau)
}

/// Linear temperature ramp from `tau_start` to `tau_end` over `ramp_iters`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub tau_start: f64,
    pub tau_end: f64,
    pub ramp_iters: u64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self { tau_start: 1.0, tau_end: 100.0, ramp_iters: 1000 }
    }
}

impl TemperatureSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_start > 0.0) || !(self.tau_end >= self.tau_start) || self.ramp_iters == 0 {
            return Err(Error::InvalidArgument(format!(
                "schedule needs 0 < tau_start <= tau_end and ramp_iters >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn tau_at(schedule: &TemperatureSchedule, iter: u64) -> f64 {
    let t = (iter as f64 / schedule.ramp_iters as f64).min(1.0);
    schedule.tau_start + (schedule.tau_end - schedule.tau_start) * t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_field() -> FeatureField {
        let bbox = Aabb::new([-1.0; 3], [1.0; 3]).unwrap();
        FeatureField::from_fn([20, 20, 20], bbox, 3, |p| {
            let body = (p.x / 0.8).powi(2) + (p.y / 0.4).powi(2) + (p.z / 0.3).powi(2) < 1.0;
            let head = (p.x - 0.6).powi(2) + p.y.powi(2) + (p.z - 0.3).powi(2) < 0.09;
            if head {
                (20.0, [0.9, 0.1, 0.1], vec![1.0, 0.0, 0.0])
            } else if body {
                (20.0, [0.2, 0.2, 0.8], vec![0.0, if p.y > 0.0 { 1.0 } else { 0.5 }, 0.2])
            } else {
                (0.0, [0.0; 3], vec![0.0; 3])
            }
        })
        .unwrap()
    }

    fn small_bank() -> PoseBank {
        let grid = PoseGrid::narrow(3.0).with_bins(8, 2);
        let intr = Intrinsics::new(45f64.to_radians(), 64, 64).unwrap();
        build_pose_bank(&small_field(), &grid, &intr, &RenderConfig { n_samples: 32, ..Default::default() }).unwrap()
    }

    #[test]
    fn bank_roundtrip_and_rejections() {
        let bank = small_bank();
        assert_eq!(bank.len(), 16);
        let bytes = bank.to_bytes();
        let back = PoseBank::from_bytes(&bytes, "t").unwrap();
        assert_eq!(back, bank);
        assert_eq!(back.to_bytes(), bytes);
        assert!(PoseBank::from_bytes(&bytes[..bytes.len() - 1], "t").is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(PoseBank::from_bytes(&bad, "t"), Err(Error::Format { .. })));
    }

    #[test]
    fn self_match_is_exact() {
        let bank = small_bank();
        let q = bank.templates()[5].clone();
        let m = match_candidate(&q, &bank, 5, &RegistrationConfig::default()).unwrap();
        assert!(m.mse < 1e-8, "{m:?}");
        assert!((m.similarity.scale - 1.0).abs() < 0.02 && m.similarity.rotation.abs() < 0.5f64.to_radians(), "{m:?}");
    }

    #[test]
    fn zero_query_against_template_is_template_power() {
        let bank = small_bank();
        let t = &bank.templates()[3];
        let z = FeatureMap::zeros(t.height(), t.width(), t.channels());
        // the zero query has no spectrum, so go through the identity warp directly
        let e = crate::registration::warped_mse(t, &z, &Similarity2D::identity()).unwrap();
        assert!((e - t.energy() / t.data().len() as f64).abs() < 1e-12);
        assert!(matches!(match_candidate(&z, &bank, 3, &RegistrationConfig::default()), Err(Error::ZeroEnergy)));
    }

    #[test]
    fn score_bank_matches_individual_calls() {
        let bank = small_bank();
        let cfg = RegistrationConfig::default();
        let q = bank.templates()[9].clone();
        let all = score_bank(&q, &bank, &cfg).unwrap();
        for k in [0, 4, 9, 15] {
            assert_eq!(all[k], match_candidate(&q, &bank, k, &cfg).unwrap());
        }
        assert_eq!(argmin(&all.iter().map(|m| m.mse).collect::<Vec<_>>()), 9);
    }

    #[test]
    fn query_dims_are_checked() {
        let bank = small_bank();
        let err = score_bank(&FeatureMap::zeros(16, 16, 3), &bank, &RegistrationConfig::default()).unwrap_err();
        assert!(err.to_string().contains("64x64x3") && err.to_string().contains("16x16x3"), "{err}");
    }

    #[test]
    fn pdf_examples() {
        let p = pose_pdf(&[0.7, 0.7, 0.7], 3.0).unwrap();
        assert!(p.probs.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let p = pose_pdf(&[1.0, 2.0, 3.0], 1.0).unwrap();
        // direct evaluation without max-subtraction
        let z: f64 = (1..=3).map(|i| (-(i as f64)).exp()).sum();
        for (i, &v) in p.probs.iter().enumerate() {
            assert!((v - (-((i + 1) as f64)).exp() / z).abs() < 1e-15);
        }
        assert!((p.probs[0] - 0.66524).abs() < 1e-5 && (p.probs[1] - 0.24473).abs() < 1e-5);
        let p = pose_pdf(&[1.0, 2.0, 3.0], 1000.0).unwrap();
        assert!(p.probs[0] >= 1.0 - 1e-9);
        assert!(pose_pdf(&[1.0, f64::NAN], 1.0).is_err());
        assert!(pose_pdf(&[1.0], 0.0).is_err());
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        assert_eq!(argmin(&[2.0, 1.0, 1.0, 3.0]), 1);
        let p = pose_pdf(&[0.0, 0.0], 5.0).unwrap();
        assert_eq!(p.argmax(), 0);
    }

    #[test]
    fn one_hot_sampling_stays_in_bin_with_expected_jitter() {
        let bank = small_bank();
        let mut probs = vec![0.0; bank.len()];
        probs[10] = 1.0;
        let pdf = PoseDistribution { probs, temperature: 1.0 };
        let matches: Vec<MatchResult> = (0..bank.len())
            .map(|k| MatchResult { index: k, similarity: Similarity2D::new(1.25, 0.3), mse: 0.0, warped: None })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let centre = bank.poses()[10];
        let n = 10_000;
        let (mut s2_t, mut s2_p) = (0.0, 0.0);
        for _ in 0..n {
            let pose = sample_pose(&pdf, &bank, &matches, &mut rng).unwrap();
            assert!((pose.r - 3.0 / 1.25).abs() < 1e-12 && (pose.gamma - 0.3).abs() < 1e-12);
            s2_t += wrap_pi(pose.theta - centre.theta).powi(2);
            s2_p += (pose.phi - centre.phi).powi(2);
        }
        let grid = bank.grid();
        let st = (s2_t / n as f64).sqrt() / (grid.theta_step() / 6.0);
        let sp = (s2_p / n as f64).sqrt() / (grid.phi_step() / 6.0);
        assert!((st - 1.0).abs() < 0.1 && (sp - 1.0).abs() < 0.1, "{st} {sp}");
    }

    #[test]
    fn sampling_is_seeded() {
        let bank = small_bank();
        let pdf = pose_pdf(&(0..bank.len()).map(|k| k as f64 * 0.01).collect::<Vec<_>>(), 50.0).unwrap();
        let matches: Vec<MatchResult> = (0..bank.len())
            .map(|k| MatchResult { index: k, similarity: Similarity2D::identity(), mse: 0.0, warped: None })
            .collect();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| sample_pose(&pdf, &bank, &matches, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(1), draw(1));
        assert_ne!(draw(1), draw(2));
    }

    #[test]
    fn schedule_ramps_linearly() {
        let s = TemperatureSchedule { tau_start: 2.0, tau_end: 10.0, ramp_iters: 100 };
        assert_eq!(tau_at(&s, 0), 2.0);
        assert_eq!(tau_at(&s, 50), 6.0);
        assert_eq!(tau_at(&s, 100), 10.0);
        assert_eq!(tau_at(&s, 1000), 10.0);
        assert!(TemperatureSchedule { ramp_iters: 0, ..s }.validate().is_err());
    }

    #[test]
    fn estimate_map_recovers_warped_bin_centre() {
        let bank = small_bank();
        let k = 6;
        let q = warp(&bank.templates()[k], &Similarity2D::new(1.25, 30f64.to_radians()));
        let (pose, pdf, m) = estimate_map(&q, &bank, &RegistrationConfig::default(), 100.0).unwrap();
        assert_eq!(m.index, k);
        assert_eq!(pdf.argmax(), k);
        assert!((pose.r - 3.0 / 1.25).abs() < 0.03 * 3.0 / 1.25, "{pose:?}");
        assert!(wrap_pi(pose.gamma - 30f64.to_radians()).abs() < 2f64.to_radians(), "{pose:?}");
        let unwarped = bank.templates()[k].mse(&q).unwrap();
        assert!(m.mse < unwarped);
        assert_eq!(m.warped.unwrap().dims(), q.dims());
    }
}
