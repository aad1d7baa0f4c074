//! File formats: impedance traces and pose tables as CSV, everything
//! structured as JSON, configuration as JSON or TOML.
//!
//! Readers validate what they parse; CSV errors name the offending line.
//! Writers are deterministic: the same value always yields the same bytes.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::body::{BodyModel, BodyModelFile, PoseParams};
use crate::camera::{Camera, Keypoints2D};
use crate::error::{Error, Result};
use crate::metrics::FrameMetrics;
use crate::signal::{BioimpedanceTrace, ContactTimeline, Sample};

pub const TRACE_HEADER: [&str; 2] = ["time_s", "impedance_ohm"];
pub const FRAME_TIMES_HEADER: &str = "time_s";

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn parse_json<T: DeserializeOwned>(text: &str, label: &str) -> Result<T> {
    if text.trim().is_empty() {
        return Err(Error::InsufficientData(format!("{}: empty file", label)));
    }
    serde_json::from_str(text).map_err(|e| Error::parse(label, format!("line {}: {}", e.line(), e)))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    parse_json(&read_text(path)?, &path.display().to_string())
}

/// Reads a configuration file: TOML for a `.toml` extension, JSON otherwise.
pub fn read_config<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let label = path.display().to_string();
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", label, e)))
    } else {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: line {}: {}", label, e.line(), e)))
    }
}

/// Data rows of a CSV text as `(line number, fields)`, after checking the
/// header.
fn csv_rows(text: &str, label: &str, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    if text.trim().is_empty() {
        return Err(Error::InsufficientData(format!("{}: empty file", label)));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let csv_error = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line());
        match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::parse(
                label,
                format!("line {}: expected {} fields, found {}", line, expected_len, len),
            ),
            _ => Error::parse(label, format!("line {}: {}", line, e)),
        }
    };
    let got = reader.headers().map_err(csv_error)?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(Error::parse(
            label,
            format!("line 1: expected header `{}`, found `{}`", header.join(","), got.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line()) as usize;
        rows.push((line, record.iter().map(str::to_string).collect()));
    }
    Ok(rows)
}

fn number(field: &str, line: usize, column: &str, label: &str) -> Result<f64> {
    let x: f64 = field
        .parse()
        .map_err(|_| Error::parse(label, format!("line {}: {} `{}` is not a number", line, column, field)))?;
    if !x.is_finite() {
        return Err(Error::parse(label, format!("line {}: {} is not finite", line, column)));
    }
    Ok(x)
}

/// Parses a `time_s,impedance_ohm` CSV.
pub fn parse_trace_csv(text: &str, label: &str) -> Result<BioimpedanceTrace> {
    let rows = csv_rows(text, label, &TRACE_HEADER)?;
    if rows.is_empty() {
        return Err(Error::InsufficientData(format!("{}: no samples", label)));
    }
    let mut samples = Vec::with_capacity(rows.len());
    for (n, f) in &rows {
        let time = number(&f[0], *n, TRACE_HEADER[0], label)?;
        let magnitude = number(&f[1], *n, TRACE_HEADER[1], label)?;
        if magnitude <= 0.0 {
            return Err(Error::parse(label, format!("line {}: impedance must be positive", n)));
        }
        if let Some(prev) = samples.last().map(|s: &Sample| s.time) {
            if time <= prev {
                return Err(Error::parse(label, format!("line {}: time does not increase", n)));
            }
        }
        samples.push(Sample { time, magnitude });
    }
    BioimpedanceTrace::new(samples)
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<BioimpedanceTrace> {
    let path = path.as_ref();
    parse_trace_csv(&read_text(path)?, &path.display().to_string())
}

pub fn trace_to_csv(trace: &BioimpedanceTrace) -> String {
    let mut out = TRACE_HEADER.join(",");
    out.push('\n');
    for s in trace.samples() {
        out.push_str(&format!("{},{}\n", s.time, s.magnitude));
    }
    out
}

/// Parses a one-column `time_s` CSV of frame timestamps.
pub fn parse_frame_times(text: &str, label: &str) -> Result<Vec<f64>> {
    let rows = csv_rows(text, label, &[FRAME_TIMES_HEADER])?;
    let mut out: Vec<f64> = Vec::with_capacity(rows.len());
    for (n, f) in &rows {
        let t = number(&f[0], *n, FRAME_TIMES_HEADER, label)?;
        if out.last().is_some_and(|&p| t <= p) {
            return Err(Error::parse(label, format!("line {}: time does not increase", n)));
        }
        out.push(t);
    }
    Ok(out)
}

pub fn read_frame_times(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    parse_frame_times(&read_text(path)?, &path.display().to_string())
}

pub fn read_timeline(path: impl AsRef<Path>) -> Result<ContactTimeline> {
    let path = path.as_ref();
    let tl: ContactTimeline = read_json(path)?;
    ContactTimeline::new(tl.intervals.clone(), tl.frame_rate, 0)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    Ok(tl)
}

pub fn read_body_model(path: impl AsRef<Path>) -> Result<BodyModel> {
    BodyModel::from_file(read_json::<BodyModelFile>(path)?)
}

pub fn body_model_to_json(model: &BodyModel) -> Result<String> {
    to_json(&model.to_file())
}

pub fn read_camera(path: impl AsRef<Path>) -> Result<Camera> {
    let path = path.as_ref();
    let cam: Camera = read_json(path)?;
    cam.validate().map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    Ok(cam)
}

pub fn read_keypoints(path: impl AsRef<Path>) -> Result<Vec<Keypoints2D>> {
    let path = path.as_ref();
    let frames: Vec<Keypoints2D> = read_json(path)?;
    for (i, k) in frames.iter().enumerate() {
        k.validate()
            .map_err(|e| Error::parse(path.display().to_string(), format!("frame {}: {}", i, e)))?;
    }
    Ok(frames)
}

/// Column names of the pose table for a body pose of `pose_dim` values.
pub fn pose_header(pose_dim: usize) -> Vec<String> {
    (0..pose_dim)
        .map(|i| format!("body_pose_{}", i))
        .chain((0..3).map(|i| format!("global_orient_{}", i)))
        .chain((0..3).map(|i| format!("translation_{}", i)))
        .collect()
}

pub fn poses_to_csv(poses: &[PoseParams]) -> String {
    let dim = poses.first().map_or(0, |p| p.body_pose.len());
    let mut out = pose_header(dim).join(",");
    out.push('\n');
    for p in poses {
        let row: Vec<String> = p.to_flat().iter().map(|x| x.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parses a pose table; the body-pose width is taken from the header.
pub fn parse_poses_csv(text: &str, label: &str) -> Result<Vec<PoseParams>> {
    let head = text.lines().next().unwrap_or("");
    if head.trim().is_empty() {
        return Err(Error::InsufficientData(format!("{}: empty file", label)));
    }
    let width = head.split(',').count();
    if width < 6 {
        return Err(Error::parse(label, "line 1: pose header needs at least 6 columns"));
    }
    let header = pose_header(width - 6);
    let names: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = csv_rows(text, label, &names)?;
    rows.iter()
        .map(|(n, f)| {
            let flat = f
                .iter()
                .zip(&names)
                .map(|(x, c)| number(x, *n, c, label))
                .collect::<Result<Vec<f64>>>()?;
            PoseParams::from_flat(&flat, width - 6)
        })
        .collect()
}

/// Reads a pose sequence: CSV for a `.csv` extension, JSON otherwise.
pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<PoseParams>> {
    let path = path.as_ref();
    let label = path.display().to_string();
    let poses = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        parse_poses_csv(&read_text(path)?, &label)?
    } else {
        read_json::<Vec<PoseParams>>(path)?
    };
    for (i, p) in poses.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::parse(&label, format!("frame {}: non-finite pose value", i)));
        }
    }
    Ok(poses)
}

/// One row per frame; joint columns follow the order of the first frame.
pub fn frame_metrics_to_csv(frames: &[FrameMetrics]) -> String {
    let joints: Vec<String> = frames
        .first()
        .map(|f| f.joint_errors_mm.keys().cloned().collect())
        .unwrap_or_default();
    let mut header = vec!["frame".to_string(), "pa_v2v_mm".to_string()];
    header.extend(joints.iter().map(|j| format!("{}_mm", j)));
    header.extend(
        ["gt_pairs", "min_pair_distance_mm", "mean_pair_distance_mm", "detected"]
            .iter()
            .map(|s| s.to_string()),
    );
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut out = header.join(",");
    out.push('\n');
    for f in frames {
        let mut row = vec![f.frame.to_string(), f.pa_v2v_mm.to_string()];
        row.extend(joints.iter().map(|j| opt(f.joint_errors_mm.get(j).copied())));
        row.push(f.gt_pairs.to_string());
        row.push(opt(f.min_pair_distance_mm));
        row.push(opt(f.mean_pair_distance_mm));
        row.push(f.detected.map(|d| d.to_string()).unwrap_or_default());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
