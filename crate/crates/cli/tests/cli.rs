use std::path::Path;
use std::process::{Command, Output};

use featpose::ingest::{save_raw, PCA_COMPONENTS};
use featpose::FeatureMap;

fn featpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_featpose")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = featpose(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, seed: u64) {
    ok(&["synth", "--out", p(dir), "--n", &n.to_string(), "--seed", &seed.to_string(), "--size", "32", "--grid", "16"]);
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|path| (path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, 6, 7);
    synth(&b, 6, 7);
    let (fa, fb) = (read_dir_sorted(&a), read_dir_sorted(&b));
    assert_eq!(fa.len(), 6 * 2 + 3);
    assert_eq!(fa, fb);
}

#[test]
fn synth_zero_entries_writes_empty_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("nested/empty");
    let stdout = ok(&["synth", "--out", p(&dir), "--n", "0", "--size", "32", "--grid", "8"]);
    assert!(stdout.contains("0 entries"));
    assert_eq!(std::fs::read_to_string(dir.join("manifest.csv")).unwrap().trim(), "file,theta,phi,gamma,r");
}

#[test]
fn synth_into_uncreatable_directory_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let out = featpose(&["synth", "--out", p(&blocker.join("sub")), "--n", "1", "--size", "32", "--grid", "8"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn bank_presets_report_template_counts_and_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    synth(&ds, 0, 1);
    let field = ds.join("template.tff");
    let narrow = ok(&["bank", "--field", p(&field), "--out", p(&tmp.path().join("n1.tpb")), "--size", "16", "--samples", "16"]);
    assert!(narrow.contains("108 templates"), "{narrow}");
    ok(&["bank", "--field", p(&field), "--out", p(&tmp.path().join("n2.tpb")), "--size", "16", "--samples", "16"]);
    assert_eq!(std::fs::read(tmp.path().join("n1.tpb")).unwrap(), std::fs::read(tmp.path().join("n2.tpb")).unwrap());
    let full = ok(&[
        "bank", "--field", p(&field), "--out", p(&tmp.path().join("s.tpb")), "--preset", "shapenet", "--size", "8", "--samples", "8",
    ]);
    assert!(full.contains("648 templates"), "{full}");
}

#[test]
fn bank_rejects_a_bad_field_file() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.tff");
    std::fs::write(&bad, b"nope").unwrap();
    let out = featpose(&["bank", "--field", p(&bad), "--out", p(&tmp.path().join("b.tpb"))]);
    assert!(!out.status.success());
}

struct Pipeline {
    _tmp: tempfile::TempDir,
    ds: std::path::PathBuf,
    bank: std::path::PathBuf,
}

fn pipeline(n: usize) -> Pipeline {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    synth(&ds, n, 11);
    let bank = tmp.path().join("bank.tpb");
    ok(&["bank", "--field", p(&ds.join("template.tff")), "--out", p(&bank), "--size", "32"]);
    Pipeline { _tmp: tmp, ds, bank }
}

#[test]
fn estimate_self_render_and_sampling() {
    let pl = pipeline(2);
    let tmp = tempfile::tempdir().unwrap();
    let q = tmp.path().join("q.tfm");
    let bank = featpose::PoseBank::load(&pl.bank).unwrap();
    let k = bank.grid().index(13, 2);
    bank.templates()[k].save(&q).unwrap();

    let out = ok(&["estimate", "--bank", p(&pl.bank), p(&q)]);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1], k.to_string(), "{out}");

    let pdf = tmp.path().join("pdf.csv");
    let args = ["estimate", "--bank", p(&pl.bank), p(&q), "--mode", "sample", "--tau", "5000", "--seed", "4", "--dump-pdf", p(&pdf)];
    let (s1, s2) = (ok(&args), ok(&args));
    assert_eq!(s1, s2);
    let lines = std::fs::read_to_string(&pdf).unwrap().lines().count();
    assert_eq!(lines, 1 + bank.len());
}

#[test]
fn estimate_reports_dimension_mismatch() {
    let pl = pipeline(0);
    let tmp = tempfile::tempdir().unwrap();
    let q = tmp.path().join("q.tfm");
    FeatureMap::zeros(20, 24, 3).save(&q).unwrap();
    let out = featpose(&["estimate", "--bank", p(&pl.bank), p(&q)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("32x32x3") && err.contains("20x24x3"), "{err}");
}

#[test]
fn evaluate_is_thread_count_independent_and_round_trips() {
    let pl = pipeline(8);
    let tmp = tempfile::tempdir().unwrap();
    let (o1, o8) = (tmp.path().join("t1"), tmp.path().join("t8"));
    let manifest = pl.ds.join("manifest.csv");
    ok(&["--threads", "1", "evaluate", "--bank", p(&pl.bank), "--manifest", p(&manifest), "--out", p(&o1)]);
    ok(&["--threads", "8", "evaluate", "--bank", p(&pl.bank), "--manifest", p(&manifest), "--out", p(&o8)]);
    assert_eq!(read_dir_sorted(&o1), read_dir_sorted(&o8));
    for f in ["report.json", "entries.csv", "theta_hist.png", "phi_hist.png"] {
        assert!(o1.join(f).exists(), "{f}");
    }
    let text = std::fs::read_to_string(o1.join("report.json")).unwrap();
    let report = featpose::metrics::EvalReport::from_json(&text).unwrap();
    assert_eq!(report.n_entries, 8);
    assert_eq!(report.to_json().unwrap(), text);
}

#[test]
fn evaluate_rejects_mismatched_bank_resolution() {
    let pl = pipeline(1);
    let tmp = tempfile::tempdir().unwrap();
    let bank16 = tmp.path().join("b16.tpb");
    ok(&["bank", "--field", p(&pl.ds.join("template.tff")), "--out", p(&bank16), "--size", "16", "--samples", "8"]);
    let out = featpose(&["evaluate", "--bank", p(&bank16), "--manifest", p(&pl.ds.join("manifest.csv")), "--out", p(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("16x16"));
}

#[test]
fn ingest_pca_and_pass_through() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("a.raw");
    let data: Vec<f32> = (0..4 * 4 * 8).map(|i| ((i * 37) % 11) as f32 * 0.1 + (i % 8) as f32).collect();
    save_raw(&FeatureMap::from_vec(4, 4, 8, data).unwrap(), &raw).unwrap();
    let mask = tmp.path().join("a.mask");
    let mvals: Vec<f32> = (0..16).map(|i| if i < 12 { 1.0 } else { 0.0 }).collect();
    save_raw(&FeatureMap::from_vec(4, 4, 1, mvals).unwrap(), &mask).unwrap();
    let out_dir = tmp.path().join("out");
    let stdout = ok(&["ingest", p(&raw), "--mask", p(&mask), "--out", p(&out_dir)]);
    assert!(stdout.contains("8 -> 3"), "{stdout}");
    let map = FeatureMap::load(out_dir.join("a.tfm")).unwrap();
    assert_eq!(map.channels(), PCA_COMPONENTS);
    assert!(map.data()[12 * 3..].iter().all(|&v| v == 0.0));
    assert!(out_dir.join("pca.json").exists());

    let rgb = tmp.path().join("rgb.raw");
    let src = FeatureMap::from_vec(2, 2, 3, (0..12).map(|i| i as f32).collect()).unwrap();
    save_raw(&src, &rgb).unwrap();
    ok(&["ingest", p(&rgb), "--no-pca", "--out", p(&out_dir)]);
    assert_eq!(FeatureMap::load(out_dir.join("rgb.tfm")).unwrap(), src);

    let two = tmp.path().join("two.raw");
    save_raw(&FeatureMap::zeros(2, 2, 2), &two).unwrap();
    assert!(!featpose(&["ingest", p(&two), "--out", p(&out_dir)]).status.success());
}

#[test]
fn bench_emits_rows_with_repeat_statistics() {
    let out = ok(&["bench", "--repeat", "3", "--size", "16", "--presets", "4x2,8x4", "--naive-steps", "8"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "process,config,n,repeat,min_s,median_s,max_s");
    let row = |name: &str| lines.iter().find(|l| l.starts_with(name)).unwrap_or_else(|| panic!("{name} missing: {out}")).to_string();
    for name in ["bank_render", "phase_correlation", "scoring", "sampling", "naive_grid_search", "naive_over_pc_ratio"] {
        row(name);
    }
    let cols: Vec<f64> = row("scoring").split(',').skip(4).map(|v| v.parse().unwrap()).collect();
    assert!(cols[0] <= cols[1] && cols[1] <= cols[2]);
    assert!(row("scoring").split(',').nth(3) == Some("3"));
}
