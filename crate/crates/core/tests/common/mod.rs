#![allow(dead_code)]

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selfcontact::body::{ArmJoint, BodyModel, PoseParams, Side, POSE_DIM};
use selfcontact::camera::{Camera, Keypoint, Keypoints2D};
use selfcontact::capsule::capsule_person;
use selfcontact::synth::{rest_pose, standard_camera};

pub fn model() -> &'static BodyModel {
    static MODEL: OnceLock<BodyModel> = OnceLock::new();
    MODEL.get_or_init(capsule_person)
}

pub fn camera() -> Camera {
    standard_camera()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rest pose with every joint jittered by up to `body` radians and the arm
/// joints by up to `arm` radians.
pub fn random_pose(rng: &mut ChaCha8Rng, body: f64, arm: f64) -> PoseParams {
    let model = model();
    let mut p = rest_pose(model).unwrap();
    for x in p.body_pose.iter_mut() {
        *x += rng.random_range(-body..=body);
    }
    for side in Side::BOTH {
        for aj in ArmJoint::ALL {
            let j = model.arm_joint(side, aj).unwrap();
            let mut r = p.joint_rotation(j);
            for c in 0..3 {
                r[c] += rng.random_range(-arm..=arm);
            }
            p.set_joint_rotation(j, &r);
        }
    }
    for c in 0..3 {
        p.global_orient[c] = rng.random_range(-0.2..=0.2);
        p.translation[c] = rng.random_range(-0.1..=0.1);
    }
    assert_eq!(p.body_pose.len(), POSE_DIM);
    p
}

/// Exact projections of every joint of `pose`, confidence 1.
pub fn keypoints_of(pose: &PoseParams, camera: &Camera) -> Keypoints2D {
    let model = model();
    let joints = model.joint_positions(pose).unwrap();
    let mut kp = Keypoints2D::default();
    for (j, joint) in model.joints().iter().enumerate() {
        let uv = camera.project(&[joints[j]]).unwrap()[0];
        kp.joints.insert(joint.name.clone(), Keypoint { u: uv.x, v: uv.y, confidence: 1.0 });
    }
    kp
}

/// Central differences of `f` over the flat pose vector.
pub fn fd_gradient(pose: &PoseParams, h: f64, f: impl Fn(&PoseParams) -> f64) -> Vec<f64> {
    let dim = pose.body_pose.len();
    let flat = pose.to_flat();
    (0..flat.len())
        .map(|i| {
            let mut a = flat.clone();
            let mut b = flat.clone();
            a[i] += h;
            b[i] -= h;
            let fa = f(&PoseParams::from_flat(&a, dim).unwrap());
            let fb = f(&PoseParams::from_flat(&b, dim).unwrap());
            (fa - fb) / (2.0 * h)
        })
        .collect()
}

/// Largest componentwise relative error. Components far below the gradient
/// scale are compared against that scale instead of their own size.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6 * scale).max(1e-300))
        .fold(0.0, f64::max)
}

/// Fixed-seed proptest configuration without regression files, so runs are
/// reproducible.
pub fn prop_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        rng_seed: proptest::test_runner::RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..Default::default()
    }
}
