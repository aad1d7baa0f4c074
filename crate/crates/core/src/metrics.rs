//! Evaluation against ground truth: Procrustes-aligned arm vertex error,
//! arm joint errors, and contact reconstruction statistics.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, SVD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::{ArmJoint, BodyModel, PoseParams, Region, Side, Vec3};
use crate::error::{Error, Result};

/// Similarity transform `y = scale * rotation * x + translation`.
#[derive(Clone, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Similarity {
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.scale * (self.rotation * x) + self.translation
    }
}

/// Least-squares similarity mapping `source` onto `target` (Umeyama's
/// closed form). The rotation is proper.
pub fn procrustes_align(source: &[Vec3], target: &[Vec3]) -> Result<Similarity> {
    if source.len() != target.len() {
        return Err(Error::DegenerateAlignment(format!(
            "point counts differ: {} vs {}",
            source.len(),
            target.len()
        )));
    }
    let n = source.len();
    if n < 3 {
        return Err(Error::DegenerateAlignment(format!("need at least 3 points, got {}", n)));
    }
    let inv = 1.0 / n as f64;
    let mu_x = source.iter().sum::<Vec3>() * inv;
    let mu_y = target.iter().sum::<Vec3>() * inv;
    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    let mut var_x = 0.0;
    for (x, y) in source.iter().zip(target) {
        let dx = x - mu_x;
        let dy = y - mu_y;
        cov += dy * dx.transpose();
        spread += dx * dx.transpose();
        var_x += dx.norm_squared();
    }
    cov *= inv;
    var_x *= inv;

    let sv = spread.symmetric_eigenvalues();
    let mut ev: Vec<f64> = sv.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::DegenerateAlignment("source points are collinear or coincident".into()));
    }

    let svd = SVD::new(cov, true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    // Singular values come unsorted; a reflection is undone on the smallest.
    let d = svd.singular_values;
    let mut sdiag = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        let smallest = (0..3).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap_or(2);
        sdiag[(smallest, smallest)] = -1.0;
    }
    let rotation = u * sdiag * v_t;
    let trace_ds: f64 = (0..3).map(|i| d[i] * sdiag[(i, i)]).sum();
    let scale = trace_ds / var_x;
    let translation = mu_y - scale * (rotation * mu_x);
    Ok(Similarity {
        scale,
        rotation,
        translation,
    })
}

/// Mean residual in millimeters after aligning `est` to `gt` over `region`.
pub fn pa_v2v(est: &[Vec3], gt: &[Vec3], region: &[usize]) -> Result<f64> {
    let (src, dst): (Vec<Vec3>, Vec<Vec3>) = region.iter().map(|&v| (est[v], gt[v])).unzip();
    let sim = procrustes_align(&src, &dst)?;
    let total: f64 = src.iter().zip(&dst).map(|(x, y)| (sim.apply(x) - y).norm()).sum();
    Ok(1000.0 * total / src.len() as f64)
}

/// Per-joint Euclidean distance in millimeters.
pub fn joint_errors(est: &[Vec3], gt: &[Vec3]) -> Vec<f64> {
    est.iter().zip(gt).map(|(a, b)| 1000.0 * (a - b).norm()).collect()
}

/// A ground-truth contact: a hand vertex and a vertex it may touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexPair {
    pub hand_vertex: usize,
    pub target_vertex: usize,
}

/// Hand/target vertex pairs within `threshold` meters. Hand-to-hand pairs
/// are reported once.
pub fn gt_contact_pairs(vertices: &[Vec3], model: &BodyModel, threshold: f64) -> Vec<VertexPair> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for side in Side::BOTH {
        let targets = model.target_vertices(side);
        for &h in model.region(Region::hand(side)) {
            for &t in &targets {
                if (vertices[h] - vertices[t]).norm() <= threshold && seen.insert((h.min(t), h.max(t))) {
                    out.push(VertexPair {
                        hand_vertex: h,
                        target_vertex: t,
                    });
                }
            }
        }
    }
    out.sort();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// Ground-truth pair distance, meters.
    pub gt_contact_threshold: f64,
    /// Estimate pair distance counted as a reconstructed contact, meters.
    pub detection_threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            gt_contact_threshold: 0.010,
            detection_threshold: 0.005,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gt_contact_threshold >= 0.0 && self.detection_threshold >= 0.0) {
            return Err(Error::Config("metrics thresholds must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub pa_v2v_mm: f64,
    pub joint_errors_mm: BTreeMap<String, f64>,
    pub gt_pairs: usize,
    /// Over the ground-truth pairs evaluated on the estimate, millimeters.
    pub min_pair_distance_mm: Option<f64>,
    pub mean_pair_distance_mm: Option<f64>,
    pub detected: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean over all frames.
    pub pa_v2v_mm: f64,
    /// Mean over ground-truth contact frames.
    pub contact_pa_v2v_mm: Option<f64>,
    pub joint_errors_mm: BTreeMap<String, f64>,
    pub detection_rate_percent: Option<f64>,
    pub v_distance_mm: Option<f64>,
    pub frames: usize,
    pub contact_frames: usize,
}

/// Vertices of both arms and hands.
pub fn arm_region(model: &BodyModel) -> Vec<usize> {
    let mut out: Vec<usize> = Side::BOTH
        .iter()
        .flat_map(|s| {
            model
                .region(Region::arm(*s))
                .iter()
                .chain(model.region(Region::hand(*s)))
                .copied()
        })
        .collect();
    out.sort_unstable();
    out
}

fn arm_joints(model: &BodyModel) -> Result<Vec<(String, usize)>> {
    let mut out = Vec::new();
    for side in Side::BOTH {
        for aj in ArmJoint::ALL {
            out.push((aj.key(side), model.arm_joint(side, aj)?));
        }
    }
    Ok(out)
}

/// Metrics of one frame.
pub fn frame_metrics(
    frame: usize,
    est: &PoseParams,
    gt: &PoseParams,
    model: &BodyModel,
    cfg: &MetricsConfig,
) -> Result<FrameMetrics> {
    let est_posed = model.forward_kinematics(est)?;
    let gt_posed = model.forward_kinematics(gt)?;
    let n = model.num_vertices();
    let ev: Vec<Vec3> = (0..n).map(|v| est_posed.skin_vertex(model, v)).collect();
    let gv: Vec<Vec3> = (0..n).map(|v| gt_posed.skin_vertex(model, v)).collect();

    let region = arm_region(model);
    let (src, dst): (Vec<Vec3>, Vec<Vec3>) = region.iter().map(|&v| (ev[v], gv[v])).unzip();
    let sim = procrustes_align(&src, &dst)?;
    let pa = 1000.0 * src.iter().zip(&dst).map(|(x, y)| (sim.apply(x) - y).norm()).sum::<f64>()
        / src.len() as f64;

    let joints = arm_joints(model)?;
    let est_j: Vec<Vec3> = joints.iter().map(|(_, j)| sim.apply(&est_posed.positions[*j])).collect();
    let gt_j: Vec<Vec3> = joints.iter().map(|(_, j)| gt_posed.positions[*j]).collect();
    let joint_errors_mm = joints
        .iter()
        .map(|(k, _)| k.clone())
        .zip(joint_errors(&est_j, &gt_j))
        .collect();

    let pairs = gt_contact_pairs(&gv, model, cfg.gt_contact_threshold);
    let (min_d, mean_d, detected) = if pairs.is_empty() {
        (None, None, None)
    } else {
        let d: Vec<f64> = pairs
            .iter()
            .map(|p| (ev[p.hand_vertex] - ev[p.target_vertex]).norm())
            .collect();
        let min = d.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        (Some(1000.0 * min), Some(1000.0 * mean), Some(min <= cfg.detection_threshold))
    };
    Ok(FrameMetrics {
        frame,
        pa_v2v_mm: pa,
        joint_errors_mm,
        gt_pairs: pairs.len(),
        min_pair_distance_mm: min_d,
        mean_pair_distance_mm: mean_d,
        detected,
    })
}

/// Aggregates per-frame metrics.
pub fn summarize(frames: &[FrameMetrics]) -> MetricsReport {
    let n = frames.len();
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            None
        } else {
            Some(xs.iter().sum::<f64>() / xs.len() as f64)
        }
    };
    let all_pa: Vec<f64> = frames.iter().map(|f| f.pa_v2v_mm).collect();
    let contact: Vec<&FrameMetrics> = frames.iter().filter(|f| f.detected.is_some()).collect();
    let contact_pa: Vec<f64> = contact.iter().map(|f| f.pa_v2v_mm).collect();
    let v_dist: Vec<f64> = contact.iter().filter_map(|f| f.mean_pair_distance_mm).collect();
    let hits = contact.iter().filter(|f| f.detected == Some(true)).count();
    let mut joint_errors_mm = BTreeMap::new();
    if let Some(first) = frames.first() {
        for key in first.joint_errors_mm.keys() {
            let vals: Vec<f64> = frames.iter().map(|f| f.joint_errors_mm[key]).collect();
            joint_errors_mm.insert(key.clone(), mean(&vals).unwrap_or(0.0));
        }
    }
    MetricsReport {
        pa_v2v_mm: mean(&all_pa).unwrap_or(0.0),
        contact_pa_v2v_mm: mean(&contact_pa),
        joint_errors_mm,
        detection_rate_percent: (!contact.is_empty())
            .then(|| 100.0 * hits as f64 / contact.len() as f64),
        v_distance_mm: mean(&v_dist),
        frames: n,
        contact_frames: contact.len(),
    }
}

/// Detection rate (percent) and V-distance (mm) over ground-truth contact
/// frames; `None` when the ground truth has no contact.
pub fn contact_metrics(
    est: &[PoseParams],
    gt: &[PoseParams],
    model: &BodyModel,
    cfg: &MetricsConfig,
) -> Result<(Option<f64>, Option<f64>)> {
    let report = evaluate_sequence(est, gt, model, cfg)?.0;
    Ok((report.detection_rate_percent, report.v_distance_mm))
}

/// Per-frame metrics and their summary. Frames are scored in parallel.
pub fn evaluate_sequence(
    est: &[PoseParams],
    gt: &[PoseParams],
    model: &BodyModel,
    cfg: &MetricsConfig,
) -> Result<(MetricsReport, Vec<FrameMetrics>)> {
    cfg.validate()?;
    if est.len() != gt.len() {
        return Err(Error::Config(format!(
            "sequence lengths differ: {} estimated, {} ground truth",
            est.len(),
            gt.len()
        )));
    }
    let frames: Vec<FrameMetrics> = est
        .par_iter()
        .zip(gt.par_iter())
        .enumerate()
        .map(|(i, (e, g))| frame_metrics(i, e, g, model, cfg))
        .collect::<Result<_>>()?;
    Ok((summarize(&frames), frames))
}
