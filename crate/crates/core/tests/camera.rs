mod common;

use nalgebra::Vector2;
use proptest::prelude::*;
use selfcontact::body::{Backprop, Side, Vec3};
use selfcontact::camera::*;

use common::{camera, fd_gradient, keypoints_of, max_relative_error, model, prop_config, random_pose, rng};

#[test]
fn projection_arithmetic_example() {
    let cam = Camera {
        focal: [1000.0, 1000.0],
        principal: [500.0, 500.0],
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0; 3],
        image_size: [1000, 1000],
    };
    assert_eq!(cam.project(&[Vec3::new(0.1, 0.0, 1.0)]).unwrap()[0], Vector2::new(600.0, 500.0));
    for z in [0.5, 3.0, 40.0] {
        assert_eq!(cam.project(&[Vec3::new(0.0, 0.0, z)]).unwrap()[0], Vector2::new(500.0, 500.0));
    }
}

#[test]
fn global_init_recovers_plane_translation() {
    let m = model();
    let cam = camera();
    let truth = random_pose(&mut rng(4), 0.1, 0.3);
    let kp = keypoints_of(&truth, &cam);
    let mut start = truth.clone();
    start.translation[0] += 0.1;
    let fit = global_init(&cam, m, &start, &kp, GemanMcClure::default(), GlobalInitConfig::default()).unwrap();
    let err = (fit.pose.translation_vec() - truth.translation_vec()).norm();
    assert!(err <= 0.005, "translation error {} m", err);
}

proptest! {
    #![proptest_config(prop_config(48))]

    #[test]
    fn zero_confidence_keypoints_change_nothing(
        seed in any::<u64>(),
        drop in proptest::collection::vec(any::<bool>(), 64),
        extra in proptest::collection::vec((-500f64..2000.0, -500f64..2000.0), 1..10),
    ) {
        let m = model();
        let cam = camera();
        let mut r = rng(seed);
        let pose = random_pose(&mut r, 0.3, 0.8);
        let mut kp = keypoints_of(&random_pose(&mut r, 0.3, 0.8), &cam);
        let all: Vec<String> = m.joints().iter().map(|j| j.name.clone()).collect();
        let missing: Vec<String> = all.iter().zip(drop.iter().cycle()).filter(|(_, d)| **d).map(|(n, _)| n.clone()).collect();
        for n in &missing {
            kp.joints.remove(n);
        }
        let mut names = arm_joint_names(&[Side::Left, Side::Right]);
        names.extend(all.iter().cloned());
        names.push("not_a_joint".into());
        let base = loss_2d(&cam, m, &pose, &kp, &names, GemanMcClure::default()).unwrap();
        let mut more = kp.clone();
        for (i, (u, v)) in extra.iter().enumerate() {
            let key = if i % 2 == 0 || missing.is_empty() {
                format!("extra_{}", i)
            } else {
                missing[i % missing.len()].clone()
            };
            more.joints.insert(key, Keypoint { u: *u, v: *v, confidence: 0.0 });
        }
        more.joints.insert("not_a_joint".into(), Keypoint { u: 1.0, v: 2.0, confidence: 0.0 });
        let with_extra = loss_2d(&cam, m, &pose, &more, &names, GemanMcClure::default()).unwrap();
        prop_assert_eq!(with_extra.to_bits(), base.to_bits());
    }

    #[test]
    fn loss_2d_gradient_matches_finite_differences(seed in any::<u64>(), sigma in 20f64..200.0) {
        let m = model();
        let cam = camera();
        let mut r = rng(seed);
        let pose = random_pose(&mut r, 0.3, 0.8);
        let kp = keypoints_of(&random_pose(&mut r, 0.2, 0.5), &cam);
        let robust = GemanMcClure { sigma };
        let names = arm_joint_names(&[Side::Left, Side::Right]);
        let observed = kp.resolve(m, &names);
        let posed = m.forward_kinematics(&pose).unwrap();
        let mut bp = Backprop::new(m, &posed);
        reprojection_term(&cam, &posed, &observed, robust, Some(&mut bp)).unwrap();
        let analytic = bp.finish().to_flat();
        let numeric = fd_gradient(&pose, 1e-5, |p| loss_2d(&cam, m, p, &kp, &names, robust).unwrap());
        let err = max_relative_error(&analytic, &numeric);
        prop_assert!(err <= 1e-4, "{}", err);
    }

    #[test]
    fn global_init_keeps_body_pose_bits(seed in any::<u64>()) {
        let m = model();
        let cam = camera();
        let mut r = rng(seed);
        let pose = random_pose(&mut r, 0.3, 0.8);
        let kp = keypoints_of(&random_pose(&mut r, 0.3, 0.8), &cam);
        let fit = global_init(&cam, m, &pose, &kp, GemanMcClure::default(), GlobalInitConfig::default()).unwrap();
        let same = fit.pose.body_pose.iter().zip(&pose.body_pose).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }
}
