//! Articulated body: kinematic tree, linear blend skinning, region labels,
//! and reverse-mode differentiation of posed points with respect to the pose.
//!
//! Joint `0` is the root. Every other joint `j` has a parent with a smaller
//! index and owns body-pose slots `3*(j-1)..3*j`; the root is driven by the
//! global orientation and translation instead.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3;

pub type Vec3 = Vector3<f64>;

/// Number of body-pose parameters for the standard 22-joint layout.
pub const POSE_DIM: usize = 63;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    LeftHand,
    RightHand,
    LeftArm,
    RightArm,
    Head,
    Torso,
    LowerBody,
}

impl Region {
    pub const ALL: [Region; 7] = [
        Region::LeftHand,
        Region::RightHand,
        Region::LeftArm,
        Region::RightArm,
        Region::Head,
        Region::Torso,
        Region::LowerBody,
    ];

    pub fn hand(side: Side) -> Region {
        match side {
            Side::Left => Region::LeftHand,
            Side::Right => Region::RightHand,
        }
    }

    pub fn arm(side: Side) -> Region {
        match side {
            Side::Left => Region::LeftArm,
            Side::Right => Region::RightArm,
        }
    }

    /// Regions a hand may touch: upper body minus its own arm and hand.
    pub fn targets_of(side: Side) -> [Region; 4] {
        [
            Region::Head,
            Region::Torso,
            Region::arm(side.opposite()),
            Region::hand(side.opposite()),
        ]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::LeftHand => "left_hand",
            Region::RightHand => "right_hand",
            Region::LeftArm => "left_arm",
            Region::RightArm => "right_arm",
            Region::Head => "head",
            Region::Torso => "torso",
            Region::LowerBody => "lower_body",
        }
    }
}

/// The three joints per arm whose rotations are refined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmJoint {
    Shoulder,
    Elbow,
    Wrist,
}

impl ArmJoint {
    pub const ALL: [ArmJoint; 3] = [ArmJoint::Shoulder, ArmJoint::Elbow, ArmJoint::Wrist];

    pub fn key(self, side: Side) -> String {
        let j = match self {
            ArmJoint::Shoulder => "shoulder",
            ArmJoint::Elbow => "elbow",
            ArmJoint::Wrist => "wrist",
        };
        format!("{}_{}", side.as_str(), j)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest offset from the parent joint, meters. For the root this is its
    /// rest position.
    pub offset: [f64; 3],
}

/// On-disk layout of a body model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BodyModelFile {
    pub joints: Vec<Joint>,
    pub vertices: Vec<[f64; 3]>,
    /// Rest-pose outward normals; estimated from region centroids when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normals: Option<Vec<[f64; 3]>>,
    /// Sparse skinning weights per vertex, as `(joint, weight)` pairs.
    pub weights: Vec<Vec<(usize, f64)>>,
    pub regions: BTreeMap<Region, Vec<usize>>,
    pub joint_name_index: BTreeMap<String, usize>,
}

/// Immutable articulated body model.
#[derive(Clone, Debug)]
pub struct BodyModel {
    joints: Vec<Joint>,
    template: Vec<Vec3>,
    normals: Vec<Vec3>,
    weights: Vec<Vec<(usize, f64)>>,
    regions: BTreeMap<Region, Vec<usize>>,
    region_of: Vec<Region>,
    joint_name_index: BTreeMap<String, usize>,
    rest_joints: Vec<Vec3>,
}

impl BodyModel {
    pub fn from_file(file: BodyModelFile) -> Result<Self> {
        let BodyModelFile {
            joints,
            vertices,
            normals,
            weights,
            regions,
            joint_name_index,
        } = file;

        if joints.is_empty() {
            return Err(Error::ModelMismatch("model has no joints".into()));
        }
        for (j, joint) in joints.iter().enumerate() {
            match (j, joint.parent) {
                (0, None) => {}
                (0, Some(_)) => {
                    return Err(Error::ModelMismatch("joint 0 must be the root".into()))
                }
                (_, None) => {
                    return Err(Error::ModelMismatch(format!(
                        "joint {} ({}) has no parent; only one root allowed",
                        j, joint.name
                    )))
                }
                (_, Some(p)) if p >= j => {
                    return Err(Error::ModelMismatch(format!(
                        "joint {} ({}) has parent {} not preceding it",
                        j, joint.name, p
                    )))
                }
                _ => {}
            }
            if joint.offset.iter().any(|x| !x.is_finite()) {
                return Err(Error::ModelMismatch(format!("joint {} offset not finite", j)));
            }
        }

        let n = vertices.len();
        if weights.len() != n {
            return Err(Error::ModelMismatch(format!(
                "{} vertices but {} weight rows",
                n,
                weights.len()
            )));
        }
        for (v, row) in weights.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::ModelMismatch(format!("vertex {} has no weights", v)));
            }
            let mut sum = 0.0;
            for &(j, w) in row {
                if j >= joints.len() {
                    return Err(Error::ModelMismatch(format!(
                        "vertex {} weights unknown joint {}",
                        v, j
                    )));
                }
                if !(w >= 0.0) {
                    return Err(Error::ModelMismatch(format!("vertex {} has negative weight", v)));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::ModelMismatch(format!(
                    "vertex {} weights sum to {}",
                    v, sum
                )));
            }
        }

        let mut region_of: Vec<Option<Region>> = vec![None; n];
        for (&region, idx) in &regions {
            for &v in idx {
                if v >= n {
                    return Err(Error::ModelMismatch(format!(
                        "region {} references vertex {}",
                        region.as_str(),
                        v
                    )));
                }
                if let Some(prev) = region_of[v] {
                    return Err(Error::ModelMismatch(format!(
                        "vertex {} in both {} and {}",
                        v,
                        prev.as_str(),
                        region.as_str()
                    )));
                }
                region_of[v] = Some(region);
            }
        }
        let region_of = region_of
            .into_iter()
            .enumerate()
            .map(|(v, r)| {
                r.ok_or_else(|| Error::ModelMismatch(format!("vertex {} not in any region", v)))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut regions = regions;
        for r in Region::ALL {
            regions.entry(r).or_default();
        }

        for (name, &j) in &joint_name_index {
            if j >= joints.len() {
                return Err(Error::ModelMismatch(format!(
                    "joint_name_index {} -> {} out of range",
                    name, j
                )));
            }
        }

        let template: Vec<Vec3> = vertices.iter().map(|p| Vec3::from(*p)).collect();
        if template.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::ModelMismatch("template vertex not finite".into()));
        }

        let mut rest_joints: Vec<Vec3> = Vec::with_capacity(joints.len());
        for joint in &joints {
            let base = joint.parent.map(|p| rest_joints[p]).unwrap_or_else(Vec3::zeros);
            rest_joints.push(base + Vec3::from(joint.offset));
        }

        let normals = match normals {
            Some(ns) => {
                if ns.len() != n {
                    return Err(Error::ModelMismatch(format!(
                        "{} normals for {} vertices",
                        ns.len(),
                        n
                    )));
                }
                ns.iter()
                    .map(|x| {
                        let v = Vec3::from(*x);
                        let len = v.norm();
                        if len > 0.0 && len.is_finite() {
                            Ok(v / len)
                        } else {
                            Err(Error::ModelMismatch("zero-length normal".into()))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            None => centroid_normals(&template, &regions, n),
        };

        Ok(BodyModel {
            joints,
            template,
            normals,
            weights,
            regions,
            region_of,
            joint_name_index,
            rest_joints,
        })
    }

    pub fn to_file(&self) -> BodyModelFile {
        BodyModelFile {
            joints: self.joints.clone(),
            vertices: self.template.iter().map(|p| [p.x, p.y, p.z]).collect(),
            normals: Some(self.normals.iter().map(|p| [p.x, p.y, p.z]).collect()),
            weights: self.weights.clone(),
            regions: self.regions.clone(),
            joint_name_index: self.joint_name_index.clone(),
        }
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.template.len()
    }

    /// Body-pose length: three components per non-root joint.
    pub fn pose_dim(&self) -> usize {
        3 * (self.joints.len() - 1)
    }

    pub fn template(&self) -> &[Vec3] {
        &self.template
    }

    pub fn rest_normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn weights(&self, v: usize) -> &[(usize, f64)] {
        &self.weights[v]
    }

    pub fn rest_joints(&self) -> &[Vec3] {
        &self.rest_joints
    }

    pub fn region(&self, r: Region) -> &[usize] {
        self.regions.get(&r).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn region_of(&self, v: usize) -> Region {
        self.region_of[v]
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_name_index
            .get(name)
            .copied()
            .or_else(|| self.joints.iter().position(|j| j.name == name))
    }

    pub fn joint_name_index(&self) -> &BTreeMap<String, usize> {
        &self.joint_name_index
    }

    /// Joint index of an arm joint, read from the model's name index.
    pub fn arm_joint(&self, side: Side, joint: ArmJoint) -> Result<usize> {
        let key = joint.key(side);
        self.joint_name_index
            .get(&key)
            .copied()
            .ok_or_else(|| Error::ModelMismatch(format!("joint_name_index lacks {}", key)))
    }

    /// Whether `ancestor` lies on the path from `joint` to the root
    /// (a joint counts as its own ancestor).
    pub fn is_ancestor(&self, ancestor: usize, mut joint: usize) -> bool {
        loop {
            if joint == ancestor {
                return true;
            }
            match self.joints[joint].parent {
                Some(p) => joint = p,
                None => return false,
            }
        }
    }

    pub fn check_pose(&self, pose: &PoseParams) -> Result<()> {
        if pose.body_pose.len() != self.pose_dim() {
            return Err(Error::ModelMismatch(format!(
                "pose has {} body components, model expects {}",
                pose.body_pose.len(),
                self.pose_dim()
            )));
        }
        if !pose.is_finite() {
            return Err(Error::InvalidInput("pose contains non-finite values".into()));
        }
        Ok(())
    }

    /// World transforms of every joint.
    pub fn forward_kinematics(&self, pose: &PoseParams) -> Result<Posed> {
        self.check_pose(pose)?;
        let nj = self.joints.len();
        let mut local = Vec::with_capacity(nj);
        let mut rotations: Vec<Matrix3<f64>> = Vec::with_capacity(nj);
        let mut positions: Vec<Vec3> = Vec::with_capacity(nj);
        for (j, joint) in self.joints.iter().enumerate() {
            let r = pose.joint_rotation(j);
            let rot_local = so3::exp(&r);
            let offset = Vec3::from(joint.offset);
            match joint.parent {
                None => {
                    rotations.push(rot_local);
                    positions.push(offset + pose.translation_vec());
                }
                Some(p) => {
                    let parent_rot = rotations[p];
                    positions.push(positions[p] + parent_rot * offset);
                    rotations.push(parent_rot * rot_local);
                }
            }
            local.push(r);
        }
        Ok(Posed {
            local,
            rotations,
            positions,
        })
    }

    /// Linear blend skinning of every vertex.
    pub fn skin_vertices(&self, pose: &PoseParams) -> Result<Vec<Vec3>> {
        let posed = self.forward_kinematics(pose)?;
        Ok((0..self.template.len())
            .map(|v| posed.skin_vertex(self, v))
            .collect())
    }

    /// Joint positions only.
    pub fn joint_positions(&self, pose: &PoseParams) -> Result<Vec<Vec3>> {
        Ok(self.forward_kinematics(pose)?.positions)
    }

    /// Binary mask over the body pose selecting shoulder, elbow and wrist of
    /// the requested arms.
    pub fn arm_mask(&self, arms: &[Side]) -> Result<ArmMask> {
        if arms.is_empty() {
            return Err(Error::InvalidInput("arm mask needs at least one arm".into()));
        }
        let mut bits = vec![false; self.pose_dim()];
        for &side in arms {
            for aj in ArmJoint::ALL {
                let j = self.arm_joint(side, aj)?;
                if j == 0 {
                    return Err(Error::ModelMismatch(format!(
                        "{} mapped to the root joint",
                        aj.key(side)
                    )));
                }
                for c in 0..3 {
                    bits[3 * (j - 1) + c] = true;
                }
            }
        }
        Ok(ArmMask { bits })
    }

    /// Candidate contact targets for a hand: head, torso, and the opposite
    /// arm and hand. Sorted ascending.
    pub fn target_vertices(&self, hand: Side) -> Vec<usize> {
        let mut out: Vec<usize> = Region::targets_of(hand)
            .iter()
            .flat_map(|r| self.region(*r).iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

fn centroid_normals(template: &[Vec3], regions: &BTreeMap<Region, Vec<usize>>, n: usize) -> Vec<Vec3> {
    let mut normals = vec![Vec3::y(); n];
    for idx in regions.values() {
        if idx.is_empty() {
            continue;
        }
        let c = idx.iter().map(|&v| template[v]).sum::<Vec3>() / idx.len() as f64;
        for &v in idx {
            let d = template[v] - c;
            let len = d.norm();
            if len > 0.0 {
                normals[v] = d / len;
            }
        }
    }
    normals
}

/// Body pose, global orientation, and translation. Angles are axis-angle in
/// radians, translation in meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub body_pose: Vec<f64>,
    pub global_orient: [f64; 3],
    pub translation: [f64; 3],
}

impl PoseParams {
    pub fn zero(pose_dim: usize) -> Self {
        PoseParams {
            body_pose: vec![0.0; pose_dim],
            global_orient: [0.0; 3],
            translation: [0.0; 3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.body_pose
            .iter()
            .chain(self.global_orient.iter())
            .chain(self.translation.iter())
            .all(|x| x.is_finite())
    }

    /// Axis-angle of joint `j`; joint 0 is the global orientation.
    pub fn joint_rotation(&self, j: usize) -> Vec3 {
        if j == 0 {
            Vec3::from(self.global_orient)
        } else {
            let s = 3 * (j - 1);
            Vec3::new(self.body_pose[s], self.body_pose[s + 1], self.body_pose[s + 2])
        }
    }

    pub fn set_joint_rotation(&mut self, j: usize, r: &Vec3) {
        if j == 0 {
            self.global_orient = [r.x, r.y, r.z];
        } else {
            let s = 3 * (j - 1);
            self.body_pose[s..s + 3].copy_from_slice(r.as_slice());
        }
    }

    pub fn translation_vec(&self) -> Vec3 {
        Vec3::from(self.translation)
    }

    /// Flat `[body_pose, global_orient, translation]` vector.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.body_pose.clone();
        out.extend_from_slice(&self.global_orient);
        out.extend_from_slice(&self.translation);
        out
    }

    pub fn from_flat(flat: &[f64], pose_dim: usize) -> Result<Self> {
        if flat.len() != pose_dim + 6 {
            return Err(Error::ModelMismatch(format!(
                "flat pose has {} values, expected {}",
                flat.len(),
                pose_dim + 6
            )));
        }
        Ok(PoseParams {
            body_pose: flat[..pose_dim].to_vec(),
            global_orient: [flat[pose_dim], flat[pose_dim + 1], flat[pose_dim + 2]],
            translation: [flat[pose_dim + 3], flat[pose_dim + 4], flat[pose_dim + 5]],
        })
    }
}

/// Binary mask over the body-pose vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArmMask {
    bits: Vec<bool>,
}

impl ArmMask {
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }

    /// Elementwise product with a gradient-shaped vector.
    pub fn apply(&self, grad: &[f64]) -> Vec<f64> {
        grad.iter()
            .zip(&self.bits)
            .map(|(g, &b)| if b { *g } else { 0.0 })
            .collect()
    }
}

/// Result of forward kinematics.
#[derive(Clone, Debug)]
pub struct Posed {
    /// Local axis-angle per joint (joint 0: global orientation).
    pub local: Vec<Vec3>,
    /// World rotation per joint.
    pub rotations: Vec<Matrix3<f64>>,
    /// World position per joint.
    pub positions: Vec<Vec3>,
}

impl Posed {
    /// Image of the rest-pose point `x` when rigidly attached to joint `k`.
    #[inline]
    pub fn rigid_image(&self, model: &BodyModel, k: usize, x: &Vec3) -> Vec3 {
        self.rotations[k] * (x - model.rest_joints[k]) + self.positions[k]
    }

    /// Skinned position of vertex `v`. Written as a correction on the
    /// template so the zero pose reproduces it exactly.
    pub fn skin_vertex(&self, model: &BodyModel, v: usize) -> Vec3 {
        let rest = model.template[v];
        let mut delta = Vec3::zeros();
        for &(k, w) in &model.weights[v] {
            let local = rest - model.rest_joints[k];
            let moved = (self.rotations[k] - Matrix3::identity()) * local
                + (self.positions[k] - model.rest_joints[k]);
            delta += w * moved;
        }
        rest + delta
    }

    /// Blended world rotation of a vertex's rest normal.
    pub fn skin_normal(&self, model: &BodyModel, v: usize) -> Vec3 {
        let n = model.normals[v];
        let mut out = Vec3::zeros();
        for &(k, w) in &model.weights[v] {
            out += w * (self.rotations[k] * n);
        }
        let len = out.norm();
        if len > 0.0 {
            out / len
        } else {
            n
        }
    }
}

/// Gradient of a scalar with respect to every pose parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseGradient {
    pub body_pose: Vec<f64>,
    pub global_orient: Vec3,
    pub translation: Vec3,
}

impl PoseGradient {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.body_pose.clone();
        out.extend_from_slice(self.global_orient.as_slice());
        out.extend_from_slice(self.translation.as_slice());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|x| x.is_finite())
    }
}

/// Reverse-mode accumulator. Callers push `dL/dp` for posed points (joints
/// or skinned vertices); [`Backprop::finish`] turns the forces and moments
/// collected per joint frame into `dL/dtheta`.
///
/// A point `p` rigidly carried by joint `k` moves under a change of joint
/// `j`'s axis-angle component `c` (for `j` an ancestor of `k`) as
/// `(A_parent(j) J_l(r_j) e_c) x (p - t_j)`. Summing `p x g` and `g` over
/// each subtree gives the torque about every joint in one backward sweep.
pub struct Backprop<'a> {
    model: &'a BodyModel,
    posed: &'a Posed,
    force: Vec<Vec3>,
    moment: Vec<Vec3>,
}

impl<'a> Backprop<'a> {
    pub fn new(model: &'a BodyModel, posed: &'a Posed) -> Self {
        let nj = model.num_joints();
        Backprop {
            model,
            posed,
            force: vec![Vec3::zeros(); nj],
            moment: vec![Vec3::zeros(); nj],
        }
    }

    #[inline]
    fn push(&mut self, k: usize, p: &Vec3, g: &Vec3) {
        self.force[k] += g;
        self.moment[k] += p.cross(g);
    }

    /// Adds `dL/dp` for the world position of joint `j`.
    pub fn add_joint(&mut self, j: usize, grad: &Vec3) {
        let p = self.posed.positions[j];
        self.push(j, &p, grad);
    }

    /// Adds `dL/dv` for the skinned world position of vertex `v`.
    pub fn add_vertex(&mut self, v: usize, grad: &Vec3) {
        let rest = self.model.template[v];
        for &(k, w) in &self.model.weights[v] {
            let p = self.posed.rigid_image(self.model, k, &rest);
            self.push(k, &p, &(w * grad));
        }
    }

    pub fn finish(mut self) -> PoseGradient {
        let nj = self.model.num_joints();
        let mut body_pose = vec![0.0; self.model.pose_dim()];
        let mut global_orient = Vec3::zeros();
        for j in (0..nj).rev() {
            let torque = self.moment[j] - self.posed.positions[j].cross(&self.force[j]);
            let r = self.posed.local[j];
            let axes = match self.model.joints[j].parent {
                Some(p) => self.posed.rotations[p] * so3::left_jacobian(&r),
                None => so3::left_jacobian(&r),
            };
            let g = axes.transpose() * torque;
            match self.model.joints[j].parent {
                Some(p) => {
                    body_pose[3 * (j - 1)..3 * j].copy_from_slice(g.as_slice());
                    let (f, m) = (self.force[j], self.moment[j]);
                    self.force[p] += f;
                    self.moment[p] += m;
                }
                None => global_orient = g,
            }
        }
        PoseGradient {
            body_pose,
            global_orient,
            translation: self.force[0],
        }
    }
}
