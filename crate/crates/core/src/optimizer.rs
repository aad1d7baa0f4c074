//! Contact-aware refinement of the arms of a single frame.
//!
//! For a frame flagged as in contact, the closest hand/target vertex pairs
//! are selected once from the input mesh, the arms to optimize are chosen
//! from the hand distances, and masked gradient steps are taken on
//!
//! ```text
//! L = L_2D + lambda_contact * (lambda_cons * L_cons + lambda_pen * L_pen + L_prox)
//! ```
//!
//! until every pair is within the contact tolerance on each camera axis and
//! no pair penetrates deeper than the penetration tolerance, or the
//! iteration budget is spent. All contact terms are evaluated in the camera
//! frame.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::{BodyModel, Backprop, PoseGradient, PoseParams, Region, Side, Vec3};
use crate::camera::{
    arm_joint_names, global_init, reprojection_term, Camera, GemanMcClure, GlobalInit,
    GlobalInitConfig, Keypoint, Keypoints2D,
};
use crate::error::{Error, Result};
use crate::so3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinementConfig {
    /// Scale applied to the depth difference when ranking candidate pairs.
    pub pair_z_weight: f64,
    /// Per-axis weights of the proximity term, camera x, y, z.
    pub loss_weights: [f64; 3],
    pub lambda_contact: f64,
    pub lambda_consistency: f64,
    pub lambda_penetration: f64,
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Meters, per camera axis.
    pub contact_tolerance: f64,
    /// Deepest penetration along the frozen target normal that still counts
    /// as contact, meters.
    pub penetration_tolerance: f64,
    pub arm_activation_ratio: f64,
    /// Meters.
    pub multi_region_margin: f64,
    /// Geman-McClure scale of the 2D term, pixels.
    pub robust_sigma: f64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            pair_z_weight: 0.25,
            loss_weights: [1.0, 1.0, 4.0],
            lambda_contact: 1.0,
            lambda_consistency: 1.0,
            lambda_penetration: 1e3,
            learning_rate: 1e-5,
            max_iterations: 1000,
            contact_tolerance: 0.005,
            penetration_tolerance: 0.002,
            arm_activation_ratio: 0.5,
            multi_region_margin: 0.02,
            robust_sigma: 100.0,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pair_z_weight", self.pair_z_weight),
            ("loss_weights[0]", self.loss_weights[0]),
            ("loss_weights[1]", self.loss_weights[1]),
            ("loss_weights[2]", self.loss_weights[2]),
            ("lambda_contact", self.lambda_contact),
            ("lambda_consistency", self.lambda_consistency),
            ("lambda_penetration", self.lambda_penetration),
            ("learning_rate", self.learning_rate),
            ("contact_tolerance", self.contact_tolerance),
            ("penetration_tolerance", self.penetration_tolerance),
            ("arm_activation_ratio", self.arm_activation_ratio),
            ("multi_region_margin", self.multi_region_margin),
            ("robust_sigma", self.robust_sigma),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("refinement.{} must be positive", name)));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("refinement.max_iterations must be positive".into()));
        }
        Ok(())
    }

    fn robust(&self) -> GemanMcClure {
        GemanMcClure {
            sigma: self.robust_sigma,
        }
    }
}

/// One hand/target vertex pair, frozen at selection. Positions and the
/// target normal are in the camera frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactPair {
    pub hand: Side,
    pub hand_vertex: usize,
    pub target_vertex: usize,
    pub region: Region,
    pub initial_hand: [f64; 3],
    pub initial_target: [f64; 3],
    pub target_normal: [f64; 3],
    /// Weighted distance at selection, meters.
    pub distance: f64,
}

impl ContactPair {
    fn initial_hand(&self) -> Vec3 {
        Vec3::from(self.initial_hand)
    }

    fn normal(&self) -> Vec3 {
        Vec3::from(self.target_normal)
    }
}

/// Pairs of one hand. The first pair is the globally closest one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactPairSet {
    pub hand: Side,
    pub pairs: Vec<ContactPair>,
}

impl ContactPairSet {
    /// Weighted distance of the closest pair, `+inf` when empty.
    pub fn distance(&self) -> f64 {
        self.pairs.first().map_or(f64::INFINITY, |p| p.distance)
    }
}

/// Euclidean norm of `(dx, dy, z_weight * dz)` for camera-frame points.
pub fn weighted_pair_distance(v: &Vec3, u: &Vec3, z_weight: f64) -> f64 {
    let d = v - u;
    let dz = z_weight * d.z;
    (d.x * d.x + d.y * d.y + dz * dz).sqrt()
}

/// Closest `(distance, hand vertex, target vertex)` between two camera-frame
/// point sets. Exact ties go to the lowest hand index, then the lowest
/// target index. Targets are swept in x order so that candidates further
/// than the current best along x are never visited.
fn closest_between(hand: &[(usize, Vec3)], targets: &[(usize, Vec3)], z_weight: f64) -> Option<(f64, usize, usize)> {
    let mut sorted: Vec<(usize, Vec3)> = targets.to_vec();
    sorted.sort_by(|a, b| a.1.x.total_cmp(&b.1.x).then(a.0.cmp(&b.0)));
    let mut best: Option<(f64, usize, usize)> = None;
    let better = |cand: (f64, usize, usize), best: &Option<(f64, usize, usize)>| match best {
        None => true,
        Some(b) => cand.0 < b.0 || (cand.0 == b.0 && (cand.1, cand.2) < (b.1, b.2)),
    };
    for &(hi, hp) in hand {
        let start = sorted.partition_point(|t| t.1.x < hp.x);
        for &(ti, tp) in &sorted[start..] {
            if let Some(b) = best {
                if tp.x - hp.x > b.0 {
                    break;
                }
            }
            let cand = (weighted_pair_distance(&hp, &tp, z_weight), hi, ti);
            if better(cand, &best) {
                best = Some(cand);
            }
        }
        for &(ti, tp) in sorted[..start].iter().rev() {
            if let Some(b) = best {
                if hp.x - tp.x > b.0 {
                    break;
                }
            }
            let cand = (weighted_pair_distance(&hp, &tp, z_weight), hi, ti);
            if better(cand, &best) {
                best = Some(cand);
            }
        }
    }
    best
}

/// Selects the closest pair of `hand` plus the closest pair of every other
/// target region within `multi_region_margin` of it. `vertices` and
/// `normals` are the posed mesh in world coordinates.
pub fn select_contact_pairs(
    model: &BodyModel,
    vertices: &[Vec3],
    normals: &[Vec3],
    hand: Side,
    camera: &Camera,
    cfg: &RefinementConfig,
) -> ContactPairSet {
    let to_cam = |idx: &[usize]| -> Vec<(usize, Vec3)> {
        idx.iter().map(|&v| (v, camera.to_camera(&vertices[v]))).collect()
    };
    let hand_pts = to_cam(model.region(Region::hand(hand)));
    let mut per_region: Vec<(Region, (f64, usize, usize))> = Vec::new();
    for region in Region::targets_of(hand) {
        let targets = to_cam(model.region(region));
        if let Some(best) = closest_between(&hand_pts, &targets, cfg.pair_z_weight) {
            per_region.push((region, best));
        }
    }
    per_region.sort_by(|a, b| {
        let (x, y) = (a.1, b.1);
        x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2)))
    });
    let Some(&(_, global)) = per_region.first() else {
        return ContactPairSet {
            hand,
            pairs: Vec::new(),
        };
    };
    let pairs = per_region
        .iter()
        .filter(|(_, best)| best.0 <= global.0 + cfg.multi_region_margin)
        .map(|&(region, (distance, hv, tv))| {
            let h = camera.to_camera(&vertices[hv]);
            let t = camera.to_camera(&vertices[tv]);
            let n = camera.rotation_matrix() * normals[tv];
            ContactPair {
                hand,
                hand_vertex: hv,
                target_vertex: tv,
                region,
                initial_hand: [h.x, h.y, h.z],
                initial_target: [t.x, t.y, t.z],
                target_normal: [n.x, n.y, n.z],
                distance,
            }
        })
        .collect();
    ContactPairSet { hand, pairs }
}

/// Both arms when the hand distances differ by at most `ratio` times the
/// smaller one, otherwise the closer arm. A hand without candidates has
/// infinite distance.
pub fn select_active_arms(d_left: f64, d_right: f64, ratio: f64) -> Vec<Side> {
    if !d_left.is_finite() && !d_right.is_finite() {
        return Vec::new();
    }
    if (d_left - d_right).abs() <= ratio * d_left.min(d_right) {
        vec![Side::Left, Side::Right]
    } else if d_left < d_right {
        vec![Side::Left]
    } else {
        vec![Side::Right]
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `sum_d w_d |v_d - u_d|` and its gradient with respect to `v`.
pub fn pair_proximity(v: &Vec3, u: &Vec3, weights: &[f64; 3]) -> (f64, Vec3) {
    let d = v - u;
    let value = weights[0] * d.x.abs() + weights[1] * d.y.abs() + weights[2] * d.z.abs();
    let grad = Vec3::new(weights[0] * sign(d.x), weights[1] * sign(d.y), weights[2] * sign(d.z));
    (value, grad)
}

/// Squared in-plane deviation from the initial position and its gradient.
pub fn pair_consistency(v: &Vec3, initial: &Vec3) -> (f64, Vec3) {
    let dx = v.x - initial.x;
    let dy = v.y - initial.y;
    (dx * dx + dy * dy, Vec3::new(2.0 * dx, 2.0 * dy, 0.0))
}

/// Penetration depth of `v` behind the plane through `u` with normal `n`.
pub fn penetration_depth(v: &Vec3, u: &Vec3, n: &Vec3) -> f64 {
    (-(v - u).dot(n)).max(0.0)
}

/// Quadratic barrier on the penetration depth and its gradient with respect
/// to `v`.
pub fn pair_penetration(v: &Vec3, u: &Vec3, n: &Vec3) -> (f64, Vec3) {
    let p = penetration_depth(v, u, n);
    (p * p, -2.0 * p * n)
}

fn pair_points(pairs: &[ContactPair], vertices_cam: &[Vec3]) -> Vec<(Vec3, Vec3)> {
    pairs
        .iter()
        .map(|p| (vertices_cam[p.hand_vertex], vertices_cam[p.target_vertex]))
        .collect()
}

/// Proximity loss over all pairs, evaluated on camera-frame vertices.
pub fn loss_proximity(pairs: &[ContactPair], vertices_cam: &[Vec3], cfg: &RefinementConfig) -> f64 {
    pair_points(pairs, vertices_cam)
        .iter()
        .map(|(v, u)| pair_proximity(v, u, &cfg.loss_weights).0)
        .sum()
}

/// Consistency loss over all pairs, evaluated on camera-frame vertices.
pub fn loss_consistency(pairs: &[ContactPair], vertices_cam: &[Vec3]) -> f64 {
    pairs
        .iter()
        .map(|p| pair_consistency(&vertices_cam[p.hand_vertex], &p.initial_hand()).0)
        .sum()
}

/// Penetration loss over all pairs, evaluated on camera-frame vertices.
pub fn loss_interpenetration(pairs: &[ContactPair], vertices_cam: &[Vec3]) -> f64 {
    pair_points(pairs, vertices_cam)
        .iter()
        .zip(pairs)
        .map(|((v, u), p)| pair_penetration(v, u, &p.normal()).0)
        .sum()
}

/// Per-axis absolute gaps of each pair.
pub fn pair_gaps(pairs: &[ContactPair], vertices_cam: &[Vec3]) -> Vec<[f64; 3]> {
    pair_points(pairs, vertices_cam)
        .iter()
        .map(|(v, u)| {
            let d = v - u;
            [d.x.abs(), d.y.abs(), d.z.abs()]
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub reprojection: f64,
    pub proximity: f64,
    pub consistency: f64,
    pub penetration: f64,
    pub total: f64,
}

/// Everything the loss of one frame depends on besides the pose.
pub struct FrameProblem<'a> {
    model: &'a BodyModel,
    camera: &'a Camera,
    observed: Vec<(usize, Keypoint)>,
    pairs: Vec<ContactPair>,
    cfg: &'a RefinementConfig,
}

impl<'a> FrameProblem<'a> {
    /// The 2D term covers shoulder, elbow and wrist of the active arms; the
    /// contact terms cover the given pairs.
    pub fn new(
        model: &'a BodyModel,
        camera: &'a Camera,
        keypoints: &Keypoints2D,
        arms: &[Side],
        pairs: Vec<ContactPair>,
        cfg: &'a RefinementConfig,
    ) -> Self {
        let observed = keypoints.resolve(model, &arm_joint_names(arms));
        FrameProblem {
            model,
            camera,
            observed,
            pairs,
            cfg,
        }
    }

    pub fn pairs(&self) -> &[ContactPair] {
        &self.pairs
    }

    fn pair_positions(&self, posed: &crate::body::Posed) -> Vec<(Vec3, Vec3)> {
        self.pairs
            .iter()
            .map(|p| {
                (
                    self.camera.to_camera(&posed.skin_vertex(self.model, p.hand_vertex)),
                    self.camera.to_camera(&posed.skin_vertex(self.model, p.target_vertex)),
                )
            })
            .collect()
    }

    fn evaluate(&self, pose: &PoseParams, want_grad: bool) -> Result<(LossTerms, Option<PoseGradient>)> {
        let posed = self.model.forward_kinematics(pose)?;
        let mut bp = want_grad.then(|| Backprop::new(self.model, &posed));
        let reprojection = reprojection_term(self.camera, &posed, &self.observed, self.cfg.robust(), bp.as_mut())?;

        let lc = self.cfg.lambda_contact;
        let (mut prox, mut cons, mut pen) = (0.0, 0.0, 0.0);
        for (pair, (v, u)) in self.pairs.iter().zip(self.pair_positions(&posed)) {
            let (lp, gp) = pair_proximity(&v, &u, &self.cfg.loss_weights);
            let (ls, gs) = pair_consistency(&v, &pair.initial_hand());
            let (ln, gn) = pair_penetration(&v, &u, &pair.normal());
            prox += lp;
            cons += ls;
            pen += ln;
            if let Some(bp) = bp.as_mut() {
                let ws = self.cfg.lambda_consistency;
                let wn = self.cfg.lambda_penetration;
                let g_hand = lc * (gp + ws * gs + wn * gn);
                let g_target = -lc * (gp + wn * gn);
                bp.add_vertex(pair.hand_vertex, &self.camera.grad_to_world(&g_hand));
                bp.add_vertex(pair.target_vertex, &self.camera.grad_to_world(&g_target));
            }
        }
        let total = reprojection
            + lc * (self.cfg.lambda_consistency * cons + self.cfg.lambda_penetration * pen + prox);
        let terms = LossTerms {
            reprojection,
            proximity: prox,
            consistency: cons,
            penetration: pen,
            total,
        };
        Ok((terms, bp.map(Backprop::finish)))
    }

    pub fn loss(&self, pose: &PoseParams) -> Result<LossTerms> {
        Ok(self.evaluate(pose, false)?.0)
    }

    /// Loss and its exact gradient with respect to every pose parameter.
    pub fn loss_and_gradient(&self, pose: &PoseParams) -> Result<(LossTerms, PoseGradient)> {
        let (terms, grad) = self.evaluate(pose, true)?;
        Ok((terms, grad.expect("gradient requested")))
    }

    pub fn gaps(&self, pose: &PoseParams) -> Result<Vec<[f64; 3]>> {
        let posed = self.model.forward_kinematics(pose)?;
        Ok(self
            .pair_positions(&posed)
            .iter()
            .map(|(v, u)| {
                let d = v - u;
                [d.x.abs(), d.y.abs(), d.z.abs()]
            })
            .collect())
    }

    /// Penetration depth of each pair against its frozen target normal.
    pub fn penetrations(&self, pose: &PoseParams) -> Result<Vec<f64>> {
        let posed = self.model.forward_kinematics(pose)?;
        Ok(self
            .pairs
            .iter()
            .zip(self.pair_positions(&posed))
            .map(|(p, (v, u))| penetration_depth(&v, &u, &p.normal()))
            .collect())
    }
}

/// Composite loss of a frame.
pub fn total_loss(pose: &PoseParams, problem: &FrameProblem<'_>) -> Result<f64> {
    Ok(problem.loss(pose)?.total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub pose: PoseParams,
    /// `None` for frames without contact, which are not optimized.
    pub converged: Option<bool>,
    pub iterations: usize,
    pub active_arms: Vec<Side>,
    pub pairs: Vec<ContactPair>,
    /// Per pair, per camera axis, meters.
    pub gaps: Vec<[f64; 3]>,
    pub loss: Option<LossTerms>,
    /// Set when the frame was abandoned and the input pose returned.
    pub diagnostic: Option<String>,
}

impl FrameResult {
    fn unchanged(pose: &PoseParams) -> Self {
        FrameResult {
            pose: pose.clone(),
            converged: None,
            iterations: 0,
            active_arms: Vec::new(),
            pairs: Vec::new(),
            gaps: Vec::new(),
            loss: None,
            diagnostic: None,
        }
    }

    fn aborted(pose: &PoseParams, converged: Option<bool>, message: String) -> Self {
        FrameResult {
            converged,
            diagnostic: Some(message),
            ..FrameResult::unchanged(pose)
        }
    }

    pub fn max_gap(&self) -> f64 {
        self.gaps.iter().flatten().fold(0.0, |a, b| a.max(*b))
    }
}

/// Pairs for both hands and the arms to optimize, from the input pose.
pub fn plan_frame(
    model: &BodyModel,
    pose: &PoseParams,
    camera: &Camera,
    cfg: &RefinementConfig,
) -> Result<(Vec<Side>, Vec<ContactPair>)> {
    let posed = model.forward_kinematics(pose)?;
    let n = model.num_vertices();
    let vertices: Vec<Vec3> = (0..n).map(|v| posed.skin_vertex(model, v)).collect();
    let normals: Vec<Vec3> = (0..n).map(|v| posed.skin_normal(model, v)).collect();
    let left = select_contact_pairs(model, &vertices, &normals, Side::Left, camera, cfg);
    let right = select_contact_pairs(model, &vertices, &normals, Side::Right, camera, cfg);
    let arms = select_active_arms(left.distance(), right.distance(), cfg.arm_activation_ratio);
    let mut pairs = Vec::new();
    for set in [left, right] {
        if arms.contains(&set.hand) {
            pairs.extend(set.pairs);
        }
    }
    Ok((arms, pairs))
}

/// Refines the active arms of one frame. Frames without contact, and frames
/// whose optimization fails numerically, return `pose_in` unchanged.
pub fn refine_frame(
    pose_in: &PoseParams,
    contact: bool,
    keypoints: &Keypoints2D,
    camera: &Camera,
    model: &BodyModel,
    cfg: &RefinementConfig,
) -> Result<FrameResult> {
    cfg.validate()?;
    model.check_pose(pose_in)?;
    if !contact {
        return Ok(FrameResult::unchanged(pose_in));
    }
    let (arms, pairs) = plan_frame(model, pose_in, camera, cfg)?;
    if arms.is_empty() {
        return Ok(FrameResult::aborted(pose_in, Some(false), "no contact candidates".into()));
    }
    let mask = model.arm_mask(&arms)?;
    let indices: Vec<usize> = mask.indices().collect();
    let problem = FrameProblem::new(model, camera, keypoints, &arms, pairs, cfg);
    let tol = cfg.contact_tolerance;

    let mut pose = pose_in.clone();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let (gaps, depths) = match problem.gaps(&pose).and_then(|g| Ok((g, problem.penetrations(&pose)?))) {
            Ok(g) => g,
            Err(e) => return Ok(FrameResult::aborted(pose_in, Some(false), e.to_string())),
        };
        if gaps.iter().flatten().all(|g| *g <= tol) && depths.iter().all(|d| *d <= cfg.penetration_tolerance) {
            converged = true;
            break;
        }
        if iterations == cfg.max_iterations {
            break;
        }
        let (terms, grad) = match problem.loss_and_gradient(&pose) {
            Ok(r) => r,
            Err(e) => return Ok(FrameResult::aborted(pose_in, Some(false), e.to_string())),
        };
        if !terms.total.is_finite() || !grad.is_finite() {
            return Ok(FrameResult::aborted(
                pose_in,
                Some(false),
                format!("non-finite loss or gradient at iteration {}", iterations),
            ));
        }
        for &i in &indices {
            pose.body_pose[i] -= cfg.learning_rate * grad.body_pose[i];
        }
        iterations += 1;
    }

    for &side in &arms {
        for aj in crate::body::ArmJoint::ALL {
            let j = model.arm_joint(side, aj)?;
            let r = pose.joint_rotation(j);
            if r.norm() >= std::f64::consts::PI {
                pose.set_joint_rotation(j, &so3::canonicalize(&r));
            }
        }
    }
    if !pose.is_finite() {
        return Ok(FrameResult::aborted(pose_in, Some(false), "non-finite pose".into()));
    }
    let gaps = problem.gaps(&pose)?;
    let loss = problem.loss(&pose)?;
    Ok(FrameResult {
        pose,
        converged: Some(converged),
        iterations,
        active_arms: arms,
        pairs: problem.pairs,
        gaps,
        loss: Some(loss),
        diagnostic: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub init: GlobalInit,
    pub frames: Vec<FrameResult>,
}

impl SequenceResult {
    pub fn poses(&self) -> Vec<PoseParams> {
        self.frames.iter().map(|f| f.pose.clone()).collect()
    }
}

/// Fits the global placement on frame 0, shares it with every frame, and
/// refines each frame independently. Frames run in parallel; results do not
/// depend on scheduling.
pub fn refine_sequence(
    poses: &[PoseParams],
    flags: &[bool],
    keypoints: &[Keypoints2D],
    camera: &Camera,
    model: &BodyModel,
    cfg: &RefinementConfig,
) -> Result<SequenceResult> {
    cfg.validate()?;
    if poses.len() != flags.len() || poses.len() != keypoints.len() {
        return Err(Error::Config(format!(
            "frame counts differ: {} poses, {} flags, {} keypoint frames",
            poses.len(),
            flags.len(),
            keypoints.len()
        )));
    }
    if poses.is_empty() {
        return Err(Error::InsufficientData("empty pose sequence".into()));
    }
    let init = global_init(camera, model, &poses[0], &keypoints[0], cfg.robust(), GlobalInitConfig::default())?;
    let shared: Vec<PoseParams> = poses
        .iter()
        .map(|p| PoseParams {
            body_pose: p.body_pose.clone(),
            global_orient: init.pose.global_orient,
            translation: init.pose.translation,
        })
        .collect();
    let frames = shared
        .par_iter()
        .zip(flags.par_iter())
        .zip(keypoints.par_iter())
        .map(|((pose, &flag), kp)| {
            refine_frame(pose, flag, kp, camera, model, cfg)
                .unwrap_or_else(|e| FrameResult::aborted(pose, flag.then_some(false), e.to_string()))
        })
        .collect();
    Ok(SequenceResult { init, frames })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mm(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z) * 1e-3
    }

    #[test]
    fn weighted_distance_examples() {
        let o = Vec3::zeros();
        assert_relative_eq!(weighted_pair_distance(&mm(3.0, 4.0, 0.0), &o, 0.25), 0.005, epsilon = 1e-15);
        assert_relative_eq!(weighted_pair_distance(&mm(0.0, 0.0, 40.0), &o, 0.25), 0.010, epsilon = 1e-15);
        assert_relative_eq!(weighted_pair_distance(&mm(3.0, 4.0, 12.0), &o, 0.25), 34f64.sqrt() * 1e-3, epsilon = 1e-15);
    }

    #[test]
    fn activation_examples() {
        assert_eq!(select_active_arms(0.010, 0.014, 0.5), vec![Side::Left, Side::Right]);
        assert_eq!(select_active_arms(0.010, 0.016, 0.5), vec![Side::Left]);
        assert_eq!(select_active_arms(0.016, 0.010, 0.5), vec![Side::Right]);
        assert_eq!(select_active_arms(0.02, 0.02, 0.5), vec![Side::Left, Side::Right]);
        assert_eq!(select_active_arms(0.01, f64::INFINITY, 0.5), vec![Side::Left]);
        assert!(select_active_arms(f64::INFINITY, f64::INFINITY, 0.5).is_empty());
    }

    #[test]
    fn per_pair_terms() {
        let (v, u) = (mm(1.0, 2.0, 3.0), Vec3::zeros());
        assert_relative_eq!(pair_proximity(&v, &u, &[1.0, 1.0, 4.0]).0, 0.015, epsilon = 1e-15);
        assert_eq!(pair_proximity(&u, &u, &[1.0, 1.0, 4.0]), (0.0, Vec3::zeros()));
        assert_relative_eq!(pair_consistency(&mm(3.0, 4.0, 50.0), &Vec3::zeros()).0, 2.5e-5, epsilon = 1e-18);
        assert_eq!(pair_consistency(&mm(0.0, 0.0, 10.0), &Vec3::zeros()).0, 0.0);
        let n = Vec3::z();
        assert_eq!(pair_penetration(&mm(0.0, 0.0, 1.0), &u, &n).0, 0.0);
        assert_relative_eq!(pair_penetration(&mm(0.0, 0.0, -2.0), &u, &n).0, 4e-6, epsilon = 1e-18);
        assert_relative_eq!(pair_penetration(&mm(0.0, 0.0, -4.0), &u, &n).0, 16e-6, epsilon = 1e-18);
    }

    #[test]
    fn config_defaults_validate() {
        assert!(RefinementConfig::default().validate().is_ok());
        let bad = RefinementConfig { learning_rate: 0.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
