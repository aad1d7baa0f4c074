//! Pinhole camera, keypoint reprojection loss, and first-frame global
//! initialization.
//!
//! Camera frame convention: `+x` right, `+y` down, `+z` pointing away from
//! the camera. Every per-axis weight in the optimizer refers to this frame.

use std::collections::BTreeMap;

use nalgebra::{Matrix2x3, Matrix3, Matrix6, Vector2, Vector6};
use serde::{Deserialize, Serialize};

use crate::body::{Backprop, BodyModel, PoseParams, Posed, Vec3};
use crate::error::{Error, Result};
use crate::so3;

/// Points closer than this to the camera plane cannot be projected.
pub const Z_MIN: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// `(fx, fy)` in pixels.
    pub focal: [f64; 2],
    /// `(cx, cy)` in pixels.
    pub principal: [f64; 2],
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    /// World-to-camera translation, meters.
    pub translation: [f64; 3],
    /// `(width, height)` in pixels.
    pub image_size: [u32; 2],
}

impl Camera {
    /// Camera at `center` (world) looking along world `-z` with image `y`
    /// pointing down world `-y`; i.e. facing a body that faces `+z`.
    pub fn frontal(focal: f64, image_size: [u32; 2], center: Vec3) -> Camera {
        let r = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let t = -(r * center);
        Camera {
            focal: [focal, focal],
            principal: [image_size[0] as f64 / 2.0, image_size[1] as f64 / 2.0],
            rotation: [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]],
            translation: [t.x, t.y, t.z],
            image_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal[0] > 0.0 && self.focal[1] > 0.0) {
            return Err(Error::InvalidInput("camera focal lengths must be positive".into()));
        }
        let r = self.rotation_matrix();
        let err = (r * r.transpose() - Matrix3::identity()).abs().max();
        if err > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput("camera rotation is not a proper rotation".into()));
        }
        let all = self
            .principal
            .iter()
            .chain(self.translation.iter())
            .chain(self.rotation.iter().flatten());
        if all.into_iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("camera has non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix() * p + Vec3::from(self.translation)
    }

    /// Converts a camera-frame gradient into a world-frame one.
    pub fn grad_to_world(&self, g: &Vec3) -> Vec3 {
        self.rotation_matrix().transpose() * g
    }

    /// Projects a camera-frame point.
    pub fn project_camera(&self, pc: &Vec3) -> Result<Vector2<f64>> {
        if !(pc.z > Z_MIN) {
            return Err(Error::BehindCamera { depth: pc.z });
        }
        Ok(Vector2::new(
            self.focal[0] * pc.x / pc.z + self.principal[0],
            self.focal[1] * pc.y / pc.z + self.principal[1],
        ))
    }

    /// `d(u, v) / d(camera point)`.
    pub fn projection_jacobian(&self, pc: &Vec3) -> Matrix2x3<f64> {
        let iz = 1.0 / pc.z;
        let (fx, fy) = (self.focal[0], self.focal[1]);
        Matrix2x3::new(
            fx * iz,
            0.0,
            -fx * pc.x * iz * iz,
            0.0,
            fy * iz,
            -fy * pc.y * iz * iz,
        )
    }

    /// Projects world points to pixels.
    pub fn project(&self, points: &[Vec3]) -> Result<Vec<Vector2<f64>>> {
        points.iter().map(|p| self.project_camera(&self.to_camera(p))).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
}

/// 2D observations for one frame, keyed by model joint name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Keypoints2D {
    pub joints: BTreeMap<String, Keypoint>,
}

impl Keypoints2D {
    pub fn validate(&self) -> Result<()> {
        for (name, k) in &self.joints {
            if !(0.0..=1.0).contains(&k.confidence) {
                return Err(Error::InvalidInput(format!(
                    "keypoint {} confidence {} outside [0, 1]",
                    name, k.confidence
                )));
            }
            if !(k.u.is_finite() && k.v.is_finite()) {
                return Err(Error::InvalidInput(format!("keypoint {} not finite", name)));
            }
        }
        Ok(())
    }

    /// `(joint index, keypoint)` for the requested joint names present here.
    pub fn resolve(&self, model: &BodyModel, names: &[String]) -> Vec<(usize, Keypoint)> {
        names
            .iter()
            .filter_map(|n| {
                let k = self.joints.get(n)?;
                let j = model.joint_index(n)?;
                Some((j, *k))
            })
            .collect()
    }

    /// Every keypoint whose name maps to a model joint.
    pub fn resolve_all(&self, model: &BodyModel) -> Vec<(usize, Keypoint)> {
        self.joints
            .iter()
            .filter_map(|(n, k)| Some((model.joint_index(n)?, *k)))
            .collect()
    }
}

/// Geman-McClure penalty on a squared residual: `s^2 r^2 / (s^2 + r^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GemanMcClure {
    /// Scale in pixels.
    pub sigma: f64,
}

impl Default for GemanMcClure {
    fn default() -> Self {
        GemanMcClure { sigma: 100.0 }
    }
}

impl GemanMcClure {
    pub fn rho(&self, sq: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        s2 * sq / (s2 + sq)
    }

    /// `d rho / d(sq)`.
    pub fn drho(&self, sq: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        let d = s2 + sq;
        s2 * s2 / (d * d)
    }
}

/// Confidence-weighted robust reprojection error of the given joints. When
/// `grad` is provided, `dL/d(joint position)` is pushed into it.
pub fn reprojection_term(
    camera: &Camera,
    posed: &Posed,
    observed: &[(usize, Keypoint)],
    robust: GemanMcClure,
    mut grad: Option<&mut Backprop<'_>>,
) -> Result<f64> {
    let mut total = 0.0;
    for &(j, k) in observed {
        if k.confidence == 0.0 {
            continue;
        }
        let pc = camera.to_camera(&posed.positions[j]);
        let uv = camera.project_camera(&pc)?;
        let r = uv - Vector2::new(k.u, k.v);
        let sq = r.norm_squared();
        total += k.confidence * robust.rho(sq);
        if let Some(bp) = grad.as_deref_mut() {
            let dr = r * (2.0 * k.confidence * robust.drho(sq));
            let g_cam = camera.projection_jacobian(&pc).transpose() * dr;
            bp.add_joint(j, &camera.grad_to_world(&g_cam));
        }
    }
    Ok(total)
}

/// Names of the shoulder, elbow and wrist of the given arms.
pub fn arm_joint_names(arms: &[crate::body::Side]) -> Vec<String> {
    arms.iter()
        .flat_map(|s| crate::body::ArmJoint::ALL.iter().map(move |j| j.key(*s)))
        .collect()
}

/// 2D loss over the named arm joints.
pub fn loss_2d(
    camera: &Camera,
    model: &BodyModel,
    pose: &PoseParams,
    keypoints: &Keypoints2D,
    arm_joints: &[String],
    robust: GemanMcClure,
) -> Result<f64> {
    let posed = model.forward_kinematics(pose)?;
    let observed = keypoints.resolve(model, arm_joints);
    reprojection_term(camera, &posed, &observed, robust, None)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalInitConfig {
    pub max_iterations: usize,
    /// Stop once a step changes no parameter by more than this.
    pub step_tolerance: f64,
}

impl Default for GlobalInitConfig {
    fn default() -> Self {
        GlobalInitConfig {
            max_iterations: 200,
            step_tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalInit {
    pub pose: PoseParams,
    pub converged: bool,
    pub iterations: usize,
    pub loss: f64,
}

/// Fits translation and global orientation to the keypoints of one frame,
/// leaving the body pose untouched. Only joints outside the arm chains are
/// used when at least three of them are observed. Levenberg-Marquardt with
/// iteratively reweighted Gauss-Newton steps on the robust reprojection loss.
pub fn global_init(
    camera: &Camera,
    model: &BodyModel,
    pose: &PoseParams,
    keypoints: &Keypoints2D,
    robust: GemanMcClure,
    cfg: GlobalInitConfig,
) -> Result<GlobalInit> {
    model.check_pose(pose)?;
    let confident: Vec<(usize, Keypoint)> = keypoints
        .resolve_all(model)
        .into_iter()
        .filter(|(_, k)| k.confidence > 0.0)
        .collect();
    let shoulders: Vec<usize> = crate::body::Side::BOTH
        .iter()
        .filter_map(|s| model.arm_joint(*s, crate::body::ArmJoint::Shoulder).ok())
        .collect();
    let trunk: Vec<(usize, Keypoint)> = confident
        .iter()
        .filter(|(j, _)| !shoulders.iter().any(|&s| model.is_ancestor(s, *j)))
        .copied()
        .collect();
    // Arm joints carry the pose error; fit the trunk when it is observed.
    let observed = if trunk.len() >= 3 { trunk } else { confident };
    if observed.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "global init needs at least 3 confident keypoints, got {}",
            observed.len()
        )));
    }

    let eval = |p: &PoseParams| -> Result<f64> {
        let posed = model.forward_kinematics(p)?;
        reprojection_term(camera, &posed, &observed, robust, None)
    };

    let mut current = pose.clone();
    let mut loss = eval(&current)?;
    let mut damping = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let rc = camera.rotation_matrix();

    while iterations < cfg.max_iterations {
        iterations += 1;
        let posed = model.forward_kinematics(&current)?;
        let go = Vec3::from(current.global_orient);
        let jl = so3::left_jacobian(&go);
        let root = posed.positions[0];
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for &(j, k) in &observed {
            let p = posed.positions[j];
            let pc = camera.to_camera(&p);
            let uv = camera.project_camera(&pc)?;
            let r = uv - Vector2::new(k.u, k.v);
            let w = k.confidence * robust.drho(r.norm_squared());
            // d p / d(orient, translation)
            let dp_dgo = -so3::skew(&(p - root)) * jl;
            let juv = camera.projection_jacobian(&pc) * rc;
            let mut jac = nalgebra::Matrix2x6::<f64>::zeros();
            jac.fixed_view_mut::<2, 3>(0, 0).copy_from(&(juv * dp_dgo));
            jac.fixed_view_mut::<2, 3>(0, 3).copy_from(&juv);
            h += w * jac.transpose() * jac;
            g += w * jac.transpose() * r;
        }
        if g.norm() == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..20 {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += damping * h[(i, i)].max(1e-9);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                damping *= 10.0;
                continue;
            };
            let mut candidate = current.clone();
            for c in 0..3 {
                candidate.global_orient[c] += step[c];
                candidate.translation[c] += step[3 + c];
            }
            match eval(&candidate) {
                Ok(l) if l <= loss => {
                    let small = step.amax() < cfg.step_tolerance;
                    current = candidate;
                    loss = l;
                    damping = (damping / 3.0).max(1e-12);
                    accepted = true;
                    if small {
                        converged = true;
                    }
                    break;
                }
                _ => damping *= 4.0,
            }
        }
        if !accepted {
            // No descent direction left at any damping: a local minimum.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    let go = so3::canonicalize(&Vec3::from(current.global_orient));
    current.global_orient = [go.x, go.y, go.z];
    current.body_pose.clone_from(&pose.body_pose);
    Ok(GlobalInit {
        pose: current,
        converged,
        iterations,
        loss,
    })
}
