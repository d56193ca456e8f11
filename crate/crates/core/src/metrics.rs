//! Pose-distribution histograms, KL divergence, angular and depth errors, and dataset evaluation.

use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{PoseBank, PoseMatcher};
use crate::geometry::{wrap_pi, CameraPose};
use crate::map::FeatureMap;
use crate::registration::{warp, RegistrationConfig};
use crate::synth::LabeledDataset;

pub const KL_EPSILON: f64 = 1e-6;
pub const REPORT_SCHEMA: &str = "featpose.eval/1";
pub const ENTRY_CSV_HEADER: &str = "file,gt_theta,gt_phi,gt_gamma,gt_r,est_theta,est_phi,est_gamma,est_r,mse,theta_err_deg";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Theta,
    Phi,
}

impl Axis {
    fn value(self, pose: &CameraPose) -> f64 {
        match self {
            Axis::Theta => pose.theta,
            Axis::Phi => pose.phi,
        }
    }
}

/// Binned distribution of one pose angle over `[range.0, range.1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseHistogram {
    pub axis: Axis,
    pub range: (f64, f64),
    pub counts: Vec<u64>,
    pub probs: Vec<f64>,
    /// Values outside a non-wrapping range, counted in the nearest edge bin.
    pub clamped: u64,
}

impl PoseHistogram {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Histogram with given probabilities and no counts (for analytic references).
    pub fn from_probs(axis: Axis, range: (f64, f64), probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.len() < 2 || probs.iter().any(|p| !(*p >= 0.0)) || !(total > 0.0) {
            return Err(Error::InvalidArgument("histogram needs >= 2 non-negative probabilities with positive mass".into()));
        }
        let counts = vec![0; probs.len()];
        Ok(Self { axis, range, counts, probs: probs.iter().map(|p| p / total).collect(), clamped: 0 })
    }

    pub fn bin_width(&self) -> f64 {
        (self.range.1 - self.range.0) / self.n_bins() as f64
    }
}

/// Default azimuth binning: 24 bins over the full circle.
pub fn theta_histogram(poses: &[CameraPose]) -> PoseHistogram {
    pose_histogram(poses, Axis::Theta, 24, (0.0, TAU)).expect("static arguments are valid")
}

/// Counts poses into `n_bins` equal bins. Theta values are wrapped into the range
/// when it spans the full circle; other out-of-range values go to the nearest edge bin.
/// An empty input yields a uniform `probs`.
pub fn pose_histogram(poses: &[CameraPose], axis: Axis, n_bins: usize, range: (f64, f64)) -> Result<PoseHistogram> {
    if n_bins < 2 {
        return Err(Error::InvalidArgument(format!("n_bins must be >= 2, got {n_bins}")));
    }
    if !(range.0 < range.1) {
        return Err(Error::InvalidArgument(format!("histogram range must be increasing, got {range:?}")));
    }
    let span = range.1 - range.0;
    let wraps = axis == Axis::Theta && (span - TAU).abs() < 1e-9;
    let mut counts = vec![0u64; n_bins];
    let mut clamped = 0;
    for pose in poses {
        let mut rel = axis.value(pose) - range.0;
        if wraps {
            rel = rel.rem_euclid(TAU);
        }
        let pos = rel / span * n_bins as f64;
        let bin = if pos < 0.0 || pos >= n_bins as f64 {
            clamped += 1;
            if pos < 0.0 {
                0
            } else {
                n_bins - 1
            }
        } else {
            (pos as usize).min(n_bins - 1)
        };
        counts[bin] += 1;
    }
    if clamped > 0 {
        log::warn!("{clamped} {axis:?} values fell outside {range:?} and were clamped");
    }
    let total: u64 = counts.iter().sum();
    let probs = if total == 0 {
        vec![1.0 / n_bins as f64; n_bins]
    } else {
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    };
    Ok(PoseHistogram { axis, range, counts, probs, clamped })
}

/// `sum p_i ln(p_i / q_i)` after adding [`KL_EPSILON`] to both and renormalizing.
pub fn kl_divergence(p: &PoseHistogram, q: &PoseHistogram) -> Result<f64> {
    if p.axis != q.axis || p.n_bins() != q.n_bins() {
        return Err(Error::DimensionMismatch {
            expected: format!("{:?} with {} bins", p.axis, p.n_bins()),
            actual: format!("{:?} with {} bins", q.axis, q.n_bins()),
        });
    }
    Ok(kl_probs(&p.probs, &q.probs))
}

pub(crate) fn kl_probs(p: &[f64], q: &[f64]) -> f64 {
    let smooth = |v: &[f64]| {
        let total: f64 = v.iter().map(|x| x + KL_EPSILON).sum();
        v.iter().map(|x| (x + KL_EPSILON) / total).collect::<Vec<_>>()
    };
    let (ps, qs) = (smooth(p), smooth(q));
    ps.iter().zip(&qs).map(|(a, b)| a * (a / b).ln()).sum::<f64>().max(0.0)
}

/// Shortest arc between two angles, in degrees within `[0, 180]`.
pub fn angular_error(est: f64, gt: f64) -> f64 {
    wrap_pi(est - gt).abs().to_degrees().min(180.0)
}

/// Mean absolute difference of the per-sample mean-centred depths over `mask`,
/// divided by `dataset_std`. `None` when the mask is empty.
pub fn depth_error(pred: &FeatureMap, gt: &FeatureMap, mask: &[bool], dataset_std: f64) -> Result<Option<f64>> {
    pred.check_same_dims(gt)?;
    if pred.channels() != 1 || mask.len() != pred.data().len() {
        return Err(Error::InvalidArgument("depth maps must be single-channel and match the mask".into()));
    }
    if !(dataset_std > 0.0) {
        return Err(Error::InvalidArgument(format!("dataset_std must be > 0, got {dataset_std}")));
    }
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Ok(None);
    }
    let masked = |m: &FeatureMap| m.data().iter().zip(mask).filter(|(_, &k)| k).map(|(&v, _)| v as f64).collect::<Vec<_>>();
    let (p, g) = (masked(pred), masked(gt));
    let (pm, gm) = (p.iter().sum::<f64>() / n as f64, g.iter().sum::<f64>() / n as f64);
    let err = p.iter().zip(&g).map(|(a, b)| ((a - pm) - (b - gm)).abs()).sum::<f64>() / n as f64;
    Ok(Some(err / dataset_std))
}

/// Population std of all masked values across maps.
pub fn masked_std(maps: &[(&FeatureMap, &[bool])]) -> Option<f64> {
    let (mut n, mut sum, mut sum2) = (0usize, 0.0f64, 0.0f64);
    for (m, mask) in maps {
        for (&v, &k) in m.data().iter().zip(mask.iter()) {
            if k {
                n += 1;
                sum += v as f64;
                sum2 += (v as f64) * (v as f64);
            }
        }
    }
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    Some((sum2 / n as f64 - mean * mean).max(0.0).sqrt())
}

/// Probability mass of a wrapped Gaussian `(mu, sigma)` in each of `n_bins` equal bins over the circle.
pub fn wrapped_gaussian_bins(mu: f64, sigma: f64, n_bins: usize) -> Vec<f64> {
    let width = TAU / n_bins as f64;
    if !(sigma > 0.0) {
        let mut v = vec![0.0; n_bins];
        v[((mu.rem_euclid(TAU) / width) as usize).min(n_bins - 1)] = 1.0;
        return v;
    }
    let cdf = |x: f64| 0.5 * (1.0 + libm::erf(x / (sigma * std::f64::consts::SQRT_2)));
    // enough wraps to cover +-8 sigma
    let wraps = (8.0 * sigma / TAU).ceil() as i64 + 1;
    (0..n_bins)
        .map(|b| {
            let (lo, hi) = (b as f64 * width, (b + 1) as f64 * width);
            (-wraps..=wraps)
                .map(|k| {
                    let shift = mu + k as f64 * TAU;
                    cdf(hi - shift) - cdf(lo - shift)
                })
                .sum::<f64>()
                .max(0.0)
        })
        .collect()
}

/// Best single wrapped Gaussian for an azimuth histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mu: f64,
    pub sigma: f64,
    /// `KL(histogram || fit)`.
    pub kl: f64,
}

/// Minimizes `KL(hist || wrapped Gaussian)` over a dense `(mu, sigma)` grid,
/// then refines around the best cell.
pub fn fit_wrapped_gaussian(hist: &PoseHistogram) -> Result<GaussianFit> {
    if hist.axis != Axis::Theta || (hist.range.1 - hist.range.0 - TAU).abs() > 1e-9 || hist.range.0 != 0.0 {
        return Err(Error::InvalidArgument("wrapped-Gaussian fits need a theta histogram over [0, 2pi)".into()));
    }
    let n = hist.n_bins();
    let eval = |mu: f64, sigma: f64| kl_probs(&hist.probs, &wrapped_gaussian_bins(mu, sigma, n));
    let mut best = GaussianFit { mu: 0.0, sigma: 1.0, kl: f64::INFINITY };
    let (n_mu, n_sigma) = (360, 80);
    for i in 0..n_mu {
        let mu = TAU * i as f64 / n_mu as f64;
        for j in 0..n_sigma {
            // log-spaced from 1 degree to 4 radians
            let sigma = (1f64.to_radians().ln() + (4f64.ln() - 1f64.to_radians().ln()) * j as f64 / (n_sigma - 1) as f64).exp();
            let kl = eval(mu, sigma);
            if kl < best.kl {
                best = GaussianFit { mu, sigma, kl };
            }
        }
    }
    let (mut dmu, mut dls) = (TAU / n_mu as f64, 0.05);
    for _ in 0..30 {
        let mut moved = false;
        for (a, b) in [(dmu, 0.0), (-dmu, 0.0), (0.0, dls), (0.0, -dls)] {
            let (mu, sigma) = (best.mu + a, best.sigma * f64::exp(b));
            let kl = eval(mu, sigma);
            if kl < best.kl {
                best = GaussianFit { mu: mu.rem_euclid(TAU), sigma, kl };
                moved = true;
            }
        }
        if !moved {
            dmu *= 0.5;
            dls *= 0.5;
        }
    }
    Ok(best)
}

/// One evaluated dataset entry. Angles in radians; `file` is relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryRecord {
    pub file: String,
    pub gt: CameraPose,
    pub est: Option<CameraPose>,
    pub bin: Option<usize>,
    pub mse: Option<f64>,
    pub theta_err_deg: Option<f64>,
    pub depth_err: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub tau: f64,
    pub theta_bins: usize,
    pub phi_bins: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { tau: 100.0, theta_bins: 24, phi_bins: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub n_entries: usize,
    pub n_failed: usize,
    /// `KL(gt || estimated)` over azimuth, nats.
    pub kl_theta: Option<f64>,
    /// `KL(gt || estimated)` over elevation, bins spanning `[0, pi]`.
    pub kl_phi: Option<f64>,
    pub mean_angular_error_deg: Option<f64>,
    pub median_angular_error_deg: Option<f64>,
    /// Fraction of entries whose estimated azimuth bin equals or neighbours the gt bin.
    pub recovery_rate_1bin: Option<f64>,
    pub depth_error: Option<f64>,
    pub depth_skipped: usize,
    /// Best single wrapped-Gaussian fit to the ground-truth azimuths.
    pub single_gaussian: Option<GaussianFit>,
    pub gt_theta: PoseHistogram,
    pub est_theta: PoseHistogram,
    pub gt_phi: PoseHistogram,
    pub est_phi: PoseHistogram,
    pub entries: Vec<EntryRecord>,
}

struct Scored {
    record: EntryRecord,
    depth: Option<(FeatureMap, FeatureMap, Vec<bool>)>,
}

fn score_entry(matcher: &PoseMatcher, bank: &PoseBank, file: &Path, name: String, gt: CameraPose, tau: f64) -> Result<Scored> {
    let query = FeatureMap::load(file)?;
    let (est, _, winner) = matcher.estimate_map(&query, tau)?;
    let depth = match (bank.depth(winner.index), bank.alpha(winner.index)) {
        (Some(d), Some(a)) => {
            let da_path = crate::synth::DatasetEntry { file: file.to_path_buf(), pose: gt, seed: 0 }.depth_file();
            match FeatureMap::load(&da_path) {
                Ok(da) if da.dims() == (query.height(), query.width(), 2) => {
                    let pred = warp(d, &winner.similarity);
                    let pred_alpha = warp(a, &winner.similarity);
                    let gt_depth = da.select_channels(&[0])?;
                    let mask: Vec<bool> = da
                        .data()
                        .chunks_exact(2)
                        .zip(pred_alpha.data())
                        .map(|(g, &pa)| g[1] > 0.5 && pa > 0.5)
                        .collect();
                    Some((pred, gt_depth, mask))
                }
                _ => None,
            }
        }
        _ => None,
    };
    let err = angular_error(est.theta, gt.theta);
    Ok(Scored {
        record: EntryRecord {
            file: name,
            gt,
            est: Some(est),
            bin: Some(winner.index),
            mse: Some(winner.mse),
            theta_err_deg: Some(err),
            depth_err: None,
            error: None,
        },
        depth,
    })
}

/// Runs the maximum-likelihood estimator on every entry and aggregates the metrics.
/// Unreadable or mismatched entries are recorded with their error and skipped.
pub fn evaluate(dataset: &LabeledDataset, bank: &PoseBank, reg_cfg: &RegistrationConfig, opts: &EvalOptions) -> Result<EvalReport> {
    let matcher = PoseMatcher::new(bank, reg_cfg)?;
    let root = dataset.manifest.parent().unwrap_or(Path::new(""));
    let mut scored: Vec<Scored> = dataset
        .entries
        .par_iter()
        .map(|e| {
            let name = e.file.strip_prefix(root).unwrap_or(&e.file).display().to_string();
            score_entry(&matcher, bank, &e.file, name.clone(), e.pose, opts.tau).unwrap_or_else(|err| Scored {
                record: EntryRecord {
                    file: name,
                    gt: e.pose,
                    est: None,
                    bin: None,
                    mse: None,
                    theta_err_deg: None,
                    depth_err: None,
                    error: Some(err.to_string()),
                },
                depth: None,
            })
        })
        .collect();

    let depth_pairs: Vec<(&FeatureMap, &[bool])> =
        scored.iter().filter_map(|s| s.depth.as_ref().map(|(_, g, m)| (g, m.as_slice()))).collect();
    let dataset_std = masked_std(&depth_pairs).filter(|s| *s > 0.0);
    let mut depth_skipped = 0;
    let mut depth_errs = Vec::new();
    for s in scored.iter_mut() {
        if s.record.error.is_some() {
            continue;
        }
        let e = match (&s.depth, dataset_std) {
            (Some((pred, gt, mask)), Some(std)) => depth_error(pred, gt, mask, std)?,
            _ => None,
        };
        match e {
            Some(v) => depth_errs.push(v),
            None => depth_skipped += 1,
        }
        s.record.depth_err = e;
    }

    let entries: Vec<EntryRecord> = scored.into_iter().map(|s| s.record).collect();
    let ok: Vec<&EntryRecord> = entries.iter().filter(|e| e.error.is_none()).collect();
    let gt_poses: Vec<CameraPose> = ok.iter().map(|e| e.gt).collect();
    let est_poses: Vec<CameraPose> = ok.iter().filter_map(|e| e.est).collect();
    let theta_range = (0.0, TAU);
    let grid = bank.grid();
    let phi_range = (0.0, PI);
    let gt_theta = pose_histogram(&gt_poses, Axis::Theta, opts.theta_bins, theta_range)?;
    let est_theta = pose_histogram(&est_poses, Axis::Theta, opts.theta_bins, theta_range)?;
    let gt_phi = pose_histogram(&gt_poses, Axis::Phi, opts.phi_bins, phi_range)?;
    let est_phi = pose_histogram(&est_poses, Axis::Phi, opts.phi_bins, phi_range)?;

    let n_ok = ok.len();
    let mut errs: Vec<f64> = ok.iter().filter_map(|e| e.theta_err_deg).collect();
    errs.sort_by(f64::total_cmp);
    let mean = |v: &[f64]| if v.is_empty() { None } else { Some(v.iter().sum::<f64>() / v.len() as f64) };
    let median = if errs.is_empty() {
        None
    } else if errs.len() % 2 == 1 {
        Some(errs[errs.len() / 2])
    } else {
        Some(0.5 * (errs[errs.len() / 2 - 1] + errs[errs.len() / 2]))
    };
    let nt = grid.n_theta;
    let recovered = ok
        .iter()
        .filter_map(|e| e.est.map(|p| (grid.theta_bin_of(e.gt.theta), grid.theta_bin_of(p.theta))))
        .filter(|&(g, p)| {
            let d = g.abs_diff(p);
            d.min(nt - d) <= 1
        })
        .count();
    let have = n_ok > 0;
    Ok(EvalReport {
        schema: REPORT_SCHEMA.into(),
        n_entries: entries.len(),
        n_failed: entries.len() - n_ok,
        kl_theta: if have { Some(kl_divergence(&gt_theta, &est_theta)?) } else { None },
        kl_phi: if have { Some(kl_divergence(&gt_phi, &est_phi)?) } else { None },
        mean_angular_error_deg: mean(&errs),
        median_angular_error_deg: median,
        recovery_rate_1bin: if have { Some(recovered as f64 / n_ok as f64) } else { None },
        depth_error: mean(&depth_errs),
        depth_skipped,
        single_gaussian: if have { Some(fit_wrapped_gaussian(&gt_theta)?) } else { None },
        gt_theta,
        est_theta,
        gt_phi,
        est_phi,
        entries,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        if report.schema != REPORT_SCHEMA {
            return Err(Error::format("report", format!("unsupported schema {:?}", report.schema)));
        }
        Ok(report)
    }

    /// Per-entry CSV; angles in degrees, empty cells for failed entries.
    pub fn write_entries_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{ENTRY_CSV_HEADER}")?;
        let deg = |v: f64| v.to_degrees();
        for e in &self.entries {
            let gt = format!("{},{},{},{}", deg(e.gt.theta), deg(e.gt.phi), deg(e.gt.gamma), e.gt.r);
            let est = match e.est {
                Some(p) => format!("{},{},{},{}", deg(p.theta), deg(p.phi), deg(p.gamma), p.r),
                None => ",,,".into(),
            };
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(w, "{},{gt},{est},{},{}", e.file, opt(e.mse), opt(e.theta_err_deg))?;
        }
        Ok(())
    }
}
