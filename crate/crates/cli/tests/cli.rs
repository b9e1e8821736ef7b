use std::path::Path;
use std::process::{Command, Output};

use vhm_core::raster::{read_raster, write_raster, GridSpec, Raster, NODATA};

fn vhm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vhm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run vhm")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn save(dir: &Path, name: &str, g: GridSpec, v: Vec<f32>) -> String {
    let path = dir.join(name);
    write_raster(&Raster::new(g, 1, NODATA, v).unwrap(), &path).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gradcheck_passes_and_reports() {
    let out = vhm(&["gradcheck", "--seed", "7", "--eps", "1e-4"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative error"));
}

#[test]
fn unknown_flag_prints_usage_and_exits_one() {
    let out = vhm(&["eval", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(vhm(&["--help"]).status.code(), Some(0));
}

#[test]
fn eval_writes_one_overall_row() {
    let d = tempfile::tempdir().unwrap();
    let g = GridSpec::new(3, 2, 10.0, 0.0, 20.0);
    let pred = save(d.path(), "p.rstr", g, vec![10.0, 12.0, 20.0, 5.0, NODATA, 30.0]);
    let reference = save(d.path(), "r.rstr", g, vec![12.0, 12.0, 18.0, 60.0, 7.0, 31.0]);
    let mask = save(d.path(), "m.rstr", g, vec![1.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
    let out = d.path().join("out");
    let o = vhm(&["eval", "--pred", &pred, "--ref", &reference, "--mask", &mask, "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("n,mbe,mae,rmse"));
    // the 60 m reference is above the outlier cap and the nodata prediction drops out
    assert!(lines[1].starts_with("3,0,1.33333,"), "{}", lines[1]);
    assert!(out.join("residual_bins.csv").exists() && out.join("scatter.csv").exists());
}

#[test]
fn change_writes_objects_and_boxstats() {
    let d = tempfile::tempdir().unwrap();
    let fine = GridSpec::new(20, 20, 1.0, 0.0, 20.0);
    let d1: Vec<f32> = (0..400).map(|i| if i / 20 < 10 && i % 20 < 10 { -15.0 } else { 0.0 }).collect();
    let diff1m = save(d.path(), "d1.rstr", fine, d1);
    let diff10m = save(d.path(), "d10.rstr", fine.coarsened(10), vec![-14.0, 0.0, 0.5, -1.0]);
    let out = d.path().join("out");
    let o = vhm(&["change", "--diff1m", &diff1m, "--diff10m", &diff10m, "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let objects = std::fs::read_to_string(out.join("objects.csv")).unwrap();
    assert_eq!(objects.lines().nth(1), Some("1,100,100,-14,0,0,9,9"));
    let box_rows = std::fs::read_to_string(out.join("boxstats.csv")).unwrap();
    assert!(box_rows.lines().any(|l| l.starts_with("25-250,25,250,1,-14,")), "{box_rows}");
    assert!(!out.join("f1.csv").exists());
}

#[test]
fn io_errors_exit_two_and_name_the_file() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("missing.rstr");
    let o = vhm(&["eval", "--pred", p(&missing), "--ref", p(&missing), "--mask", p(&missing), "--out", p(d.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.rstr"));

    let bad = d.path().join("bad.rstr");
    std::fs::write(&bad, b"RSTX and more bytes than a header needs, surely so").unwrap();
    let o = vhm(&["eval", "--pred", p(&bad), "--ref", p(&bad), "--mask", p(&bad), "--out", p(d.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad magic"));
}

#[test]
fn validation_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    let g = GridSpec::new(4, 4, 1.0, 0.0, 4.0);
    let input = save(d.path(), "in.rstr", g, vec![1.0; 16]);
    let cfg = d.path().join("r.cfg");
    std::fs::write(&cfg, format!("input = {input}\nmode = mean\nfactor = 0\n")).unwrap();
    assert_eq!(vhm(&["resample", "--config", p(&cfg), "--out", p(d.path())]).status.code(), Some(1));

    let o = Command::new(env!("CARGO_BIN_EXE_vhm"))
        .args(["gradcheck", "--eps", "1e-4"])
        .env("VHM_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(vhm(&["gradcheck", "--eps", "-1"]).status.code(), Some(1));
}

#[test]
fn resample_pools_and_derives_terrain() {
    let d = tempfile::tempdir().unwrap();
    let g = GridSpec::new(6, 6, 1.0, 0.0, 6.0);
    let input = save(d.path(), "in.rstr", g, (0..36).map(|i| (i % 6) as f32).collect());
    let cfg = d.path().join("r.cfg");
    std::fs::write(&cfg, format!("input = {input}\nmode = max\nfactor = 3\n")).unwrap();
    let out = d.path().join("out");
    assert_eq!(vhm(&["resample", "--config", p(&cfg), "--out", p(&out)]).status.code(), Some(0));
    let pooled = read_raster(out.join("resampled.rstr")).unwrap();
    assert_eq!(pooled.data(), &[2.0, 5.0, 2.0, 5.0]);
    assert_eq!(pooled.pixel_size(), 3.0);

    std::fs::write(&cfg, format!("input = {input}\nmode = terrain\n")).unwrap();
    assert_eq!(vhm(&["resample", "--config", p(&cfg), "--out", p(&out)]).status.code(), Some(0));
    let slope = read_raster(out.join("slope.rstr")).unwrap();
    assert!((slope.get(0, 2, 2) - 45.0).abs() < 1e-4);
    let aspect = read_raster(out.join("aspect.rstr")).unwrap();
    assert!((aspect.get(0, 2, 2) - 270.0).abs() < 1e-4);
}

#[test]
fn synth_is_seeded() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("s.cfg");
    std::fs::write(&cfg, "extent = 200\nscenes_per_year = 1\noff_season_scenes = 0\nclearing_count = 2\nclearing_area_max = 800\nsmall_clearing_count = 1\n").unwrap();
    let run = |out: &str, seed: &str| {
        let o = vhm(&["synth", "--config", p(&cfg), "--out", p(&d.path().join(out)), "--seed", seed]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(d.path().join(out).join("clearings.csv")).unwrap()
    };
    assert_eq!(run("a", "4"), run("b", "4"));
    assert_ne!(run("a", "4"), run("c", "5"));
}
