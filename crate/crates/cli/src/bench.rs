use std::fs;
use std::time::Instant;

use anyhow::{bail, Result};
use featpose::estimator::{match_candidate, PoseMatcher};
use featpose::registration::{brute_force_scale_rotation, linspace};
use featpose::synth::{make_template, TemplateSpec};
use featpose::{build_pose_bank, pose_pdf, render, sample_pose, CameraPose, Intrinsics, PoseGrid, RegistrationConfig, RenderConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::BenchArgs;

pub const BENCH_HEADER: &str = "process,config,n,repeat,min_s,median_s,max_s";

struct Row {
    process: &'static str,
    config: String,
    n: usize,
    times: Vec<f64>,
}

impl Row {
    fn median(&self) -> f64 {
        let mut t = self.times.clone();
        t.sort_by(f64::total_cmp);
        let m = t.len() / 2;
        if t.len() % 2 == 1 {
            t[m]
        } else {
            0.5 * (t[m - 1] + t[m])
        }
    }

    fn csv(&self) -> String {
        let min = self.times.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = self.times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        format!("{},{},{},{},{min:.6},{:.6},{max:.6}", self.process, self.config, self.n, self.times.len(), self.median())
    }
}

fn time<T>(repeat: usize, mut f: impl FnMut() -> Result<T>) -> Result<Vec<f64>> {
    (0..repeat)
        .map(|_| {
            let t = Instant::now();
            f()?;
            Ok(t.elapsed().as_secs_f64())
        })
        .collect()
}

pub fn run(a: &BenchArgs) -> Result<()> {
    if a.repeat == 0 {
        bail!("--repeat must be >= 1");
    }
    let field = make_template(&TemplateSpec { seed: a.seed, ..TemplateSpec::default() })?;
    let intr = Intrinsics::new(45f64.to_radians(), a.size, a.size)?;
    let rcfg = RenderConfig::default();
    let mut rows = Vec::new();

    for &(nt, np) in &a.presets {
        let grid = PoseGrid::full(3.0).with_bins(nt, np);
        let times = time(a.repeat, || Ok(build_pose_bank(&field, &grid, &intr, &rcfg)?))?;
        rows.push(Row { process: "bank_render", config: format!("{nt}x{np}"), n: nt * np, times });
    }

    let grid = PoseGrid::narrow(3.0);
    let bank = build_pose_bank(&field, &grid, &intr, &rcfg)?;
    let k = grid.index(8, 1);
    let gt = CameraPose { gamma: 20f64.to_radians(), r: 3.0 / 1.1, ..grid.pose(k) };
    let query = render(&field, &gt, &intr, &rcfg)?.feature_map;
    let reg = RegistrationConfig::default();
    let cfg = format!("{}x{}", grid.n_theta, grid.n_phi);

    let times = time(a.repeat, || Ok(PoseMatcher::new(&bank, &reg)?))?;
    rows.push(Row { process: "template_spectra", config: cfg.clone(), n: bank.len(), times });
    let times = time(a.repeat, || Ok(match_candidate(&query, &bank, k, &reg)?))?;
    let pc_median = {
        let row = Row { process: "phase_correlation", config: format!("{}px", a.size), n: 1, times };
        let m = row.median();
        rows.push(row);
        m
    };
    let matcher = PoseMatcher::new(&bank, &reg)?;
    let times = time(a.repeat, || Ok(matcher.score(&query)?))?;
    rows.push(Row { process: "scoring", config: cfg.clone(), n: bank.len(), times });
    let matches = matcher.score(&query)?;
    let errors: Vec<f64> = matches.iter().map(|m| m.mse).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let times = time(a.repeat, || {
        let pdf = pose_pdf(&errors, 100.0)?;
        Ok(sample_pose(&pdf, &bank, &matches, &mut rng)?)
    })?;
    rows.push(Row { process: "sampling", config: cfg, n: 1, times });

    if !a.skip_naive {
        let scales = linspace(0.8, 1.25, a.naive_steps);
        let rots = linspace(-45f64.to_radians(), 45f64.to_radians(), a.naive_steps);
        let template = &bank.templates()[k];
        let times = time(a.repeat, || Ok(brute_force_scale_rotation(template, &query, &scales, &rots)?))?;
        let row = Row { process: "naive_grid_search", config: format!("{0}x{0}", a.naive_steps), n: a.naive_steps * a.naive_steps, times };
        let ratio = row.median() / pc_median;
        rows.push(row);
        rows.push(Row { process: "naive_over_pc_ratio", config: format!("{}px", a.size), n: 1, times: vec![ratio] });
        eprintln!("naive grid search is {ratio:.0}x slower than phase correlation");
    }

    let mut csv = String::from(BENCH_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv());
        csv.push('\n');
    }
    match &a.out {
        Some(p) => fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
