use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use selfcontact::camera::Camera;
use selfcontact::io;
use selfcontact::signal::ContactTimeline;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_selfcontact"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, seed: &str, scenario: &str) -> PathBuf {
    let out = dir.join("synth");
    let o = run(&["synth", "--seed", seed, "--scenario", scenario, "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn refine(syn: &Path, signal: &Path, out: &Path, extra: &[&str]) -> Output {
    let file = |name: &str| syn.join(name).to_str().unwrap().to_string();
    let mut args: Vec<String> = vec![
        "refine".into(),
        "--poses".into(),
        file("poses.json"),
        "--keypoints".into(),
        file("keypoints.json"),
        "--camera".into(),
        file("camera.json"),
        "--model".into(),
        file("model.json"),
        "--signal".into(),
        s(signal).into(),
        "--out".into(),
        s(out).into(),
    ];
    args.extend(extra.iter().map(|x| x.to_string()));
    bin().args(&args).output().expect("binary runs")
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), "3", "hand_to_head:right");
    for f in ["model.json", "camera.json", "gt_poses.json", "poses.json", "keypoints.json", "signal.csv", "frame_times.csv", "truth_timeline.json", "script.json"] {
        assert!(syn.join(f).is_file(), "{}", f);
    }

    let det = dir.path().join("detect");
    let o = run(&["detect", "--signal", s(&syn.join("signal.csv")), "--frame-times", s(&syn.join("frame_times.csv")), "--out", s(&det)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let tl: ContactTimeline = io::read_json(det.join("timeline.json")).unwrap();
    let times = io::read_frame_times(syn.join("frame_times.csv")).unwrap();
    assert_eq!(tl.frame_flags.len(), times.len());
    assert!(tl.frame_flags.iter().any(|f| *f));
    assert!(fs::read_to_string(det.join("signal.svg")).unwrap().starts_with("<svg"));

    let refd = dir.path().join("refine");
    let o = refine(&syn, &det.join("timeline.json"), &refd, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let refined = io::read_poses(refd.join("refined_poses.json")).unwrap();
    assert_eq!(refined, io::read_poses(refd.join("refined_poses.csv")).unwrap());
    assert!(refd.join("diagnostics.json").is_file());

    let ev = dir.path().join("eval");
    let o = run(&[
        "eval",
        "--est",
        s(&refd.join("refined_poses.json")),
        "--gt",
        s(&syn.join("gt_poses.json")),
        "--baseline",
        s(&syn.join("poses.json")),
        "--out",
        s(&ev),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["metrics.json", "frames.csv", "baseline_metrics.json", "baseline_frames.csv", "errors.svg"] {
        assert!(ev.join(f).is_file(), "{}", f);
    }
    let rows = fs::read_to_string(ev.join("frames.csv")).unwrap().lines().count();
    assert_eq!(rows, refined.len() + 1);
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), "4", "hand_to_torso:left");
    let ev = dir.path().join("eval");
    let gt = syn.join("gt_poses.json");
    let o = run(&["eval", "--est", s(&gt), "--gt", s(&gt), "--out", s(&ev)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: selfcontact::metrics::MetricsReport = io::read_json(ev.join("metrics.json")).unwrap();
    assert!(report.pa_v2v_mm <= 1e-6);
    assert_eq!(report.detection_rate_percent, Some(100.0));
}

#[test]
fn refine_accepts_a_trace_and_smoothing() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), "5", "hand_to_hand:left");
    let out = dir.path().join("refine");
    let o = refine(&syn, &syn.join("signal.csv"), &out, &["--smooth", "--threads", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("timeline.json").is_file());
    let diag = fs::read_to_string(out.join("diagnostics.json")).unwrap();
    assert!(diag.contains("\"smoothed\": true"));
}

#[test]
fn all_false_timeline_leaves_body_pose() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), "6", "hand_to_arm:right");
    let poses = io::read_poses(syn.join("poses.json")).unwrap();
    let tl = ContactTimeline { intervals: vec![], frame_rate: 30.0, frame_flags: vec![false; poses.len()] };
    let tl_path = dir.path().join("none.json");
    fs::write(&tl_path, io::to_json(&tl).unwrap()).unwrap();
    let out = dir.path().join("refine");
    let o = refine(&syn, &tl_path, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let refined = io::read_poses(out.join("refined_poses.json")).unwrap();
    for (a, b) in refined.iter().zip(&poses) {
        assert_eq!(a.body_pose, b.body_pose);
        assert_eq!(a.global_orient, refined[0].global_orient);
        assert_eq!(a.translation, refined[0].translation);
    }
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for (dir, threads) in [(a.path(), "1"), (b.path(), "4")] {
        let syn = synth(dir, "9", "hand_to_head:left");
        let out = dir.join("refine");
        let o = refine(&syn, &syn.join("signal.csv"), &out, &["--threads", threads]);
        assert!(o.status.success(), "{}", stderr(&o));
        outs.push((syn, out));
    }
    for name in ["poses.json", "signal.csv", "keypoints.json", "gt_poses.json"] {
        assert_eq!(fs::read(outs[0].0.join(name)).unwrap(), fs::read(outs[1].0.join(name)).unwrap(), "{}", name);
    }
    for name in ["refined_poses.json", "refined_poses.csv", "diagnostics.json", "timeline.json"] {
        assert_eq!(fs::read(outs[0].1.join(name)).unwrap(), fs::read(outs[1].1.join(name)).unwrap(), "{}", name);
    }
}

#[test]
fn empty_signal_is_insufficient_data() {
    let dir = tempfile::tempdir().unwrap();
    let sig = dir.path().join("empty.csv");
    fs::write(&sig, "").unwrap();
    let out = dir.path().join("detect");
    let o = run(&["detect", "--signal", s(&sig), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("InsufficientData"));
    assert!(!out.exists());
}

#[test]
fn malformed_row_names_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let sig = dir.path().join("bad.csv");
    fs::write(&sig, "time_s,impedance_ohm\n0.0,100\n0.002,abc\n0.004,100\n").unwrap();
    let o = run(&["detect", "--signal", s(&sig), "--out", s(&dir.path().join("d"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn missing_ground_truth_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), "2", "hand_to_head:right");
    let missing = dir.path().join("nowhere").join("gt.json");
    let o = run(&["eval", "--est", s(&syn.join("poses.json")), "--gt", s(&missing), "--out", s(&dir.path().join("e"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(s(&missing)));
}

#[test]
fn config_errors_exit_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"refinement": {"learning_rate": -1.0}}"#).unwrap();
    let o = run(&["--config", s(&cfg), "synth", "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    fs::write(&cfg, r#"{"refinment": {}}"#).unwrap();
    let o = run(&["--config", s(&cfg), "synth", "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("refinment"));

    let toml = dir.path().join("cfg.toml");
    fs::write(&toml, "seed = 4\n[refinement]\nmax_iterations = 0\n").unwrap();
    let o = run(&["--config", s(&toml), "synth", "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(4));

    let o = run(&["synth", "--scenario", "hand_to_knee:left", "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(4));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn frame_count_mismatch_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), "8", "hand_to_head:right");
    let tl = ContactTimeline { intervals: vec![], frame_rate: 30.0, frame_flags: vec![false; 7] };
    let tl_path = dir.path().join("short.json");
    fs::write(&tl_path, io::to_json(&tl).unwrap()).unwrap();
    let out = dir.path().join("refine");
    let o = refine(&syn, &tl_path, &out, &[]);
    assert_eq!(o.status.code(), Some(4));
    assert!(!out.exists());
}

#[test]
fn camera_behind_body_is_numerical_and_keeps_old_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), "8", "hand_to_head:right");
    let out = dir.path().join("refine");
    let o = refine(&syn, &syn.join("truth_timeline.json"), &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let before = fs::read(out.join("refined_poses.json")).unwrap();

    let mut cam: Camera = io::read_camera(syn.join("camera.json")).unwrap();
    cam.translation[2] = -cam.translation[2];
    fs::write(syn.join("camera.json"), io::to_json(&cam).unwrap()).unwrap();
    let o = refine(&syn, &syn.join("truth_timeline.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert_eq!(fs::read(out.join("refined_poses.json")).unwrap(), before);
    let stray: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with(".selfcontact"))
        .collect();
    assert!(stray.is_empty());
}
