use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use depthtrack::depthio::{save_depth_frame, DepthFrame};
use depthtrack_cli::{run_args, MANIFEST_NAME};
use tempfile::TempDir;

fn run(args: &[&str]) -> depthtrack_cli::RunManifest {
    run_args(args.iter().copied()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, frames: usize, extra: &[&str]) -> PathBuf {
    let out = dir.join("frames");
    let n = frames.to_string();
    let mut args = vec!["synth", "--frames", &n, "--seed", "42", "--out", p(&out)];
    args.extend_from_slice(extra);
    run(&args);
    out
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            headers
                .iter()
                .zip(rec.unwrap().iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap()
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn synth_writes_numbered_pairs() {
    let dir = TempDir::new().unwrap();
    let out = synth(dir.path(), 100, &["--sigma", "1.8"]);
    let names = files(&out);
    assert_eq!(
        names.iter().filter(|n| n.ends_with(".truth.json")).count(),
        100
    );
    assert_eq!(
        names.iter().filter(|n| n.ends_with(".mask.pgm")).count(),
        100
    );
    assert_eq!(
        names
            .iter()
            .filter(|n| n.ends_with(".pgm") && !n.ends_with(".mask.pgm"))
            .count(),
        100
    );
    assert!(names.contains(&"frame_0099.pgm".to_string()));
    let manifest = depthtrack_cli::RunManifest::load(out.join(MANIFEST_NAME)).unwrap();
    assert_eq!(manifest.command, "synth");
    assert_eq!(manifest.outputs.len(), names.len());
}

#[test]
fn synth_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        run(&[
            "synth",
            "--frames",
            "5",
            "--sigma",
            "1.8",
            "--dropout",
            "0.01",
            "--seed",
            "9",
            "--out",
            p(out),
        ]);
    }
    for name in files(&a).iter().filter(|n| n.as_str() != MANIFEST_NAME) {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn usage_errors_exit_with_status_two() {
    let bin = env!("CARGO_BIN_EXE_depthtrack");
    let dir = TempDir::new().unwrap();
    let status = |args: &[&str]| Process::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(
        status(&["synth", "--frames", "0", "--out", p(dir.path())]),
        Some(2)
    );
    assert_eq!(
        status(&[
            "track",
            "--input",
            p(dir.path()),
            "--out",
            p(dir.path()),
            "--patch",
            "4"
        ]),
        Some(2)
    );
    assert_eq!(
        status(&[
            "synth",
            "--frames",
            "1",
            "--sigma",
            "-1",
            "--out",
            p(dir.path())
        ]),
        Some(2)
    );
    assert_eq!(
        status(&["synth", "--frames", "1", "--out", p(&dir.path().join("ok"))]),
        Some(0)
    );
}

#[test]
fn zero_noise_track_run() {
    let dir = TempDir::new().unwrap();
    let frames = synth(dir.path(), 20, &[]);
    let out = dir.path().join("track");
    let manifest = run(&["track", "--input", p(&frames), "--out", p(&out)]);
    assert!(manifest.error_tallies.is_empty());
    let rows = read_csv(&out.join("track.csv"));
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r["error_code"] == "ok"));
    let mean = rows.iter().map(|r| num(r, "corner_err_mm")).sum::<f64>() / rows.len() as f64;
    assert!(mean <= 2.0, "{mean}");
}

#[test]
fn empty_frame_is_isolated() {
    let dir = TempDir::new().unwrap();
    let frames = synth(dir.path(), 3, &[]);
    let zero = DepthFrame::zeros(488, 450).unwrap();
    save_depth_frame(&zero, frames.join("frame_0001.pgm")).unwrap();
    let out = dir.path().join("track");
    let manifest = run(&["track", "--input", p(&frames), "--out", p(&out)]);
    let codes: Vec<String> = read_csv(&out.join("track.csv"))
        .iter()
        .map(|r| r["error_code"].clone())
        .collect();
    assert_eq!(codes, ["ok", "empty-frame", "ok"]);
    assert_eq!(manifest.error_tallies.get("empty-frame"), Some(&1));
}

#[test]
fn single_size_sweep_matches_track() {
    let dir = TempDir::new().unwrap();
    let frames = synth(dir.path(), 6, &["--sigma", "1.8", "--boundary-scale", "3"]);
    let sweep = dir.path().join("sweep");
    let track = dir.path().join("track");
    run(&[
        "sweep",
        "--input",
        p(&frames),
        "--out",
        p(&sweep),
        "--sizes",
        "5",
        "--repeats",
        "1",
    ]);
    run(&[
        "track",
        "--input",
        p(&frames),
        "--out",
        p(&track),
        "--patch",
        "5",
    ]);
    let s = read_csv(&sweep.join("sweep.csv"));
    let t = read_csv(&track.join("track.csv"));
    assert_eq!(s.len(), t.len());
    for (a, b) in s.iter().zip(&t) {
        assert_eq!(a["error_code"], b["error_code"]);
        assert_eq!(a["mean_corner_err_mm"], b["corner_err_mm"]);
    }
}

#[test]
fn sweep_rows_ascend_by_size() {
    let dir = TempDir::new().unwrap();
    let frames = synth(dir.path(), 3, &[]);
    let out = dir.path().join("sweep");
    run(&[
        "sweep",
        "--input",
        p(&frames),
        "--out",
        p(&out),
        "--sizes",
        "9,1,5",
        "--repeats",
        "1",
    ]);
    let sizes: Vec<usize> = read_csv(&out.join("sweep.csv"))
        .iter()
        .map(|r| r["patch_size"].parse().unwrap())
        .collect();
    assert_eq!(sizes, [1, 1, 1, 5, 5, 5, 9, 9, 9]);
    let summary = read_csv(&out.join("sweep_summary.csv"));
    assert_eq!(summary.len(), 3);
}

#[test]
fn randerr_on_constant_and_short_series() {
    let dir = TempDir::new().unwrap();
    let frames = synth(dir.path(), 1, &["--trajectory", "static"]);
    fs::copy(frames.join("frame_0000.pgm"), frames.join("frame_0001.pgm")).unwrap();
    let out = dir.path().join("re");
    run(&["randerr", "--input", p(&frames), "--out", p(&out)]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("randerr.json")).unwrap()).unwrap();
    assert_eq!(report["mean_mm"], 0.0);
    assert_eq!(report["max_mm"], 0.0);

    fs::remove_file(frames.join("frame_0001.pgm")).unwrap();
    assert!(run_args(["randerr", "--input", p(&frames), "--out", p(&out)]).is_err());
}

#[test]
fn baseline_comparison_table() {
    let dir = TempDir::new().unwrap();
    let frames = synth(dir.path(), 2, &["--no-arm"]);
    let out = dir.path().join("bl");
    run(&[
        "baseline",
        "--input",
        p(&frames),
        "--out",
        p(&out),
        "--method",
        "icp,ransac,tracker",
    ]);
    let rows = read_csv(&out.join("baseline.csv"));
    assert_eq!(rows.len(), 6);
    for r in &rows {
        match r["method"].as_str() {
            "icp" => assert!(num(r, "accuracy_value") < 1.0 && r["accuracy_kind"] == "mm"),
            "ransac" => assert!(num(r, "accuracy_value") >= 0.99 && r["accuracy_kind"] == "dice"),
            // nothing reaches the bottom edge without the arm
            "tracker" => assert_eq!(r["error_code"], "no-target"),
            m => panic!("{m}"),
        }
    }
}

/// Replaces the named columns with empty strings.
fn masked(path: &Path, timing: &[&str]) -> String {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    let mut text = headers.iter().collect::<Vec<_>>().join(",");
    for rec in r.records() {
        let rec = rec.unwrap();
        let cells: Vec<&str> = headers
            .iter()
            .zip(rec.iter())
            .map(|(h, v)| if timing.contains(&h) { "" } else { v })
            .collect();
        text.push('\n');
        text.push_str(&cells.join(","));
    }
    text
}

#[test]
fn rerun_reproduces_track_output() {
    let dir = TempDir::new().unwrap();
    let frames = synth(dir.path(), 4, &["--sigma", "1.8"]);
    let first = dir.path().join("t1");
    let second = dir.path().join("t2");
    run(&[
        "track",
        "--input",
        p(&frames),
        "--out",
        p(&first),
        "--epsilon",
        "2.5",
    ]);
    let manifest = first.join(MANIFEST_NAME);
    run(&["rerun", p(&manifest), "--out", p(&second)]);
    assert_eq!(
        masked(&first.join("track.csv"), &["latency_ms"]),
        masked(&second.join("track.csv"), &["latency_ms"])
    );
    let m = depthtrack_cli::RunManifest::load(second.join(MANIFEST_NAME)).unwrap();
    assert_eq!(m.config["tracker"]["simplify_epsilon"], 2.5);
}
