use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use featpose::estimator::PoseMatcher;
use featpose::ingest::{self, PcaFit};
use featpose::metrics::{self, EvalOptions};
use featpose::synth::{self, DatasetMeta, DatasetSpec, LabeledDataset, PoseDistSpec, TemplateSpec, DATASET_META_NAME};
use featpose::{build_pose_bank, pose_pdf, read_field, sample_pose, write_field, FeatureMap, Intrinsics, PoseBank, PoseGrid, RenderConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{plot, BankArgs, EstimateArgs, EstimateMode, EvaluateArgs, IngestArgs, Preset, SynthArgs};

pub const TEMPLATE_NAME: &str = "template.tff";

fn square_intrinsics(size: usize, fov_deg: f64) -> Result<Intrinsics> {
    Ok(Intrinsics::new(fov_deg.to_radians(), size, size)?)
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mode = a.mode.into();
    let template = match &a.template {
        Some(p) => read_field(p).with_context(|| format!("reading template {}", p.display()))?,
        None => synth::make_template(&TemplateSpec { seed: a.seed, dims: [a.grid; 3], feature_mode: mode, ..TemplateSpec::default() })?,
    };
    let mut dist = if a.peaks.trim() == "uniform" {
        PoseDistSpec::uniform()
    } else {
        PoseDistSpec::from_peaks(&PoseDistSpec::parse_peaks(&a.peaks)?)
    };
    dist.phi_range = (a.phi_range.0.to_radians(), a.phi_range.1.to_radians());
    dist.gamma_std = a.gamma_std.to_radians();
    dist.r_range = a.r_range;
    dist.validate()?;
    if !(0.0..=1.0).contains(&a.strength) {
        bail!("--strength must lie in [0, 1], got {}", a.strength);
    }
    let mut spec = DatasetSpec::new(a.n, a.seed, a.strength, dist);
    if let Some(c) = a.color_strength {
        spec.perturbation.color = c;
    }
    spec.intrinsics = square_intrinsics(a.size, 45.0)?;
    spec.feature_mode = mode;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    if a.template.is_none() {
        write_field(&template, a.out.join(TEMPLATE_NAME))?;
    }
    let ds = synth::make_dataset(&template, &spec, &a.out)?;
    if a.png {
        let meta: DatasetMeta = serde_json::from_slice(&fs::read(a.out.join(DATASET_META_NAME))?)?;
        for e in &ds.entries {
            let map = FeatureMap::load(&e.file)?;
            plot::save_feature_png(&map, meta.value_range, &e.file.with_extension("png"))?;
        }
    }
    println!("synth: {} entries, seed {}, mode {}, manifest {}", ds.len(), a.seed, spec.feature_mode, ds.manifest.display());
    Ok(())
}

pub fn bank(a: &BankArgs) -> Result<()> {
    let field = read_field(&a.field).with_context(|| format!("reading field {}", a.field.display()))?;
    let mut grid = match a.preset {
        Preset::Narrow => PoseGrid::narrow(a.r),
        Preset::Shapenet => PoseGrid::full(a.r),
    };
    grid = grid.with_bins(a.n_theta.unwrap_or(grid.n_theta), a.n_phi.unwrap_or(grid.n_phi));
    let intr = square_intrinsics(a.size, a.fov)?;
    let cfg = RenderConfig { n_samples: a.samples, ..RenderConfig::default() };
    let bank = build_pose_bank(&field, &grid, &intr, &cfg)?;
    bank.save(&a.out)?;
    println!("bank: {} templates ({}x{}) at {}x{} -> {}", bank.len(), grid.n_theta, grid.n_phi, a.size, a.size, a.out.display());
    Ok(())
}

pub fn estimate(a: &EstimateArgs) -> Result<()> {
    let bank = PoseBank::load(&a.bank).with_context(|| format!("reading bank {}", a.bank.display()))?;
    let matcher = PoseMatcher::new(&bank, &a.reg.config())?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "file,bin,theta_deg,phi_deg,gamma_deg,r,mse")?;
    let mut pdf_csv = a.dump_pdf.as_ref().map(|_| String::from("file,bin,theta_deg,phi_deg,prob,mse\n"));
    for (i, path) in a.inputs.iter().enumerate() {
        let query = FeatureMap::load(path)?;
        let matches = matcher.score(&query).with_context(|| format!("matching {}", path.display()))?;
        let errors: Vec<f64> = matches.iter().map(|m| m.mse).collect();
        let pdf = pose_pdf(&errors, a.tau)?;
        let (k, pose) = match a.mode {
            EstimateMode::Argmax => {
                let k = featpose::estimator::argmin(&errors);
                (k, bank.pose_for(k, &matches[k].similarity))
            }
            EstimateMode::Sample => {
                let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(i as u64));
                let pose = sample_pose(&pdf, &bank, &matches, &mut rng)?;
                (bank.grid().index_of(&pose), pose)
            }
        };
        writeln!(
            out,
            "{},{k},{:.4},{:.4},{:.4},{:.4},{:.6e}",
            path.display(),
            pose.theta.to_degrees(),
            pose.phi.to_degrees(),
            pose.gamma.to_degrees(),
            pose.r,
            errors[k]
        )?;
        if let Some(csv) = pdf_csv.as_mut() {
            for (j, (p, e)) in pdf.probs.iter().zip(&errors).enumerate() {
                let bp = bank.poses()[j];
                csv.push_str(&format!("{},{j},{:.4},{:.4},{p:.6e},{e:.6e}\n", path.display(), bp.theta.to_degrees(), bp.phi.to_degrees()));
            }
        }
    }
    if let (Some(path), Some(csv)) = (&a.dump_pdf, pdf_csv) {
        fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn check_consistency(bank: &PoseBank, manifest: &Path) -> Result<()> {
    let meta_path = manifest.parent().unwrap_or(Path::new(".")).join(DATASET_META_NAME);
    if let Ok(bytes) = fs::read(&meta_path) {
        let meta: DatasetMeta = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", meta_path.display()))?;
        let (bi, di) = (bank.intrinsics(), meta.spec.intrinsics);
        if (bi.width, bi.height) != (di.width, di.height) || (bi.fov_y - di.fov_y).abs() > 1e-12 {
            bail!(
                "bank renders {}x{} at fov {:.3} rad but the dataset was rendered at {}x{}, fov {:.3} rad",
                bi.width,
                bi.height,
                bi.fov_y,
                di.width,
                di.height,
                di.fov_y
            );
        }
    }
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let bank = PoseBank::load(&a.bank).with_context(|| format!("reading bank {}", a.bank.display()))?;
    let dataset = LabeledDataset::load(&a.manifest)?;
    check_consistency(&bank, &a.manifest)?;
    let opts = EvalOptions { tau: a.tau, theta_bins: a.theta_bins, phi_bins: a.phi_bins };
    let report = metrics::evaluate(&dataset, &bank, &a.reg.config(), &opts)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("report.json"), report.to_json()?)?;
    let mut csv = Vec::new();
    report.write_entries_csv(&mut csv)?;
    fs::write(a.out.join("entries.csv"), csv)?;
    if !a.no_plots {
        plot::save_histogram_overlay(&report.gt_theta, &report.est_theta, &a.out.join("theta_hist.png"))?;
        plot::save_histogram_overlay(&report.gt_phi, &report.est_phi, &a.out.join("phi_hist.png"))?;
    }
    for e in report.entries.iter().filter(|e| e.error.is_some()) {
        eprintln!("warning: {}: {}", e.file, e.error.as_deref().unwrap_or_default());
    }
    let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "evaluate: {} entries ({} failed) kl_theta {} kl_phi {} recovery@1bin {} mean_err_deg {} depth_err {}",
        report.n_entries,
        report.n_failed,
        f(report.kl_theta),
        f(report.kl_phi),
        f(report.recovery_rate_1bin),
        f(report.mean_angular_error_deg),
        f(report.depth_error)
    );
    Ok(())
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    if !a.masks.is_empty() && a.masks.len() != a.inputs.len() {
        bail!("got {} masks for {} inputs", a.masks.len(), a.inputs.len());
    }
    let maps = a
        .inputs
        .iter()
        .map(|p| ingest::load_raw(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let masks = a
        .masks
        .iter()
        .map(|p| ingest::load_mask(p).with_context(|| format!("reading mask {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let mask_of = |i: usize| masks.get(i).map(|m| m.as_slice());
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let fit: Option<PcaFit> = if a.no_pca {
        None
    } else {
        let inputs: Vec<_> = maps.iter().enumerate().map(|(i, m)| (m, mask_of(i))).collect();
        Some(ingest::fit_pca(&inputs)?)
    };
    for (i, (map, path)) in maps.iter().zip(&a.inputs).enumerate() {
        let out = match &fit {
            Some(f) => f.project(map, mask_of(i))?,
            None => ingest::pass_through(map, mask_of(i))?,
        };
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("{i:05}"));
        out.save(a.out.join(format!("{stem}.tfm")))?;
    }
    match &fit {
        Some(f) => {
            fs::write(a.out.join("pca.json"), serde_json::to_vec_pretty(f)?)?;
            if f.degenerate_components > 0 {
                eprintln!("warning: {} principal component(s) had zero variance and were written as zeros", f.degenerate_components);
            }
            println!(
                "ingest: {} maps, {} -> 3 channels, explained variance {:.6}",
                maps.len(),
                f.input_channels,
                f.explained_variance
            );
        }
        None => println!("ingest: {} maps passed through", maps.len()),
    }
    Ok(())
}
