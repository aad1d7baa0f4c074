//! Deterministic synthetic data: impedance traces with planted contacts,
//! scripted self-contact motions, and estimator-style arm perturbations.
//!
//! Everything is driven by explicit seeds through ChaCha8, so the same
//! script always yields bit-identical output.

use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::body::{ArmJoint, BodyModel, PoseParams, Region, Side, Vec3};
use crate::camera::{Camera, Keypoint, Keypoints2D};
use crate::error::{Error, Result};
use crate::signal::{BioimpedanceTrace, ContactTimeline, Interval, Sample};

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma.max(0.0)).expect("finite nonnegative sigma")
}

/// `3x^2 - 2x^3` on `[0, 1]`, clamped outside.
pub fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

// ---------------------------------------------------------------------------
// Signals

/// A planted drop. The magnitude starts falling at `onset`, reaches
/// `1 - drop_fraction` of the baseline after `transition_ms`, and is back at
/// the baseline exactly at `offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalEvent {
    pub onset: f64,
    pub offset: f64,
    pub drop_fraction: f64,
    pub transition_ms: f64,
}

impl SignalEvent {
    /// Fraction of the full drop applied at time `t`.
    pub fn level(&self, t: f64) -> f64 {
        let tr = self.transition_ms / 1000.0;
        smoothstep((t - self.onset) / tr).min(smoothstep((self.offset - t) / tr))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalScript {
    /// Seconds.
    pub duration: f64,
    /// Sensor rate, Hz.
    pub sample_rate: f64,
    /// Timing jitter as a fraction of the sample period.
    #[serde(default)]
    pub jitter: f64,
    /// Ohms.
    pub baseline: f64,
    /// Ohms.
    pub drift_amplitude: f64,
    /// Seconds.
    pub drift_period: f64,
    /// Ohms.
    pub noise_sigma: f64,
    /// Contacts; these make up the ground truth.
    pub events: Vec<SignalEvent>,
    /// Shallow non-contact dips (posture changes, electrode shifts).
    #[serde(default)]
    pub dips: Vec<SignalEvent>,
    /// Frame rate of the ground-truth frame flags, Hz.
    pub frame_rate: f64,
    pub seed: u64,
}

impl SignalScript {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("duration", self.duration),
            ("sample_rate", self.sample_rate),
            ("baseline", self.baseline),
            ("drift_period", self.drift_period),
            ("frame_rate", self.frame_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("signal script {} must be positive", name)));
            }
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return Err(Error::Config("signal script jitter must lie in [0, 0.5)".into()));
        }
        if self.noise_sigma < 0.0 || self.drift_amplitude < 0.0 {
            return Err(Error::Config("signal script noise and drift must be nonnegative".into()));
        }
        for set in [&self.events, &self.dips] {
            for (i, e) in set.iter().enumerate() {
                if !(e.drop_fraction > 0.0 && e.drop_fraction < 1.0) {
                    return Err(Error::Config(format!("event {} drop fraction outside (0, 1)", i)));
                }
                if !(e.transition_ms > 0.0) || e.offset - e.onset < 2.0 * e.transition_ms / 1000.0 {
                    return Err(Error::Config(format!("event {} shorter than its transitions", i)));
                }
            }
        }
        let mut all: Vec<&SignalEvent> = self.events.iter().chain(&self.dips).collect();
        all.sort_by(|a, b| a.onset.total_cmp(&b.onset));
        for w in all.windows(2) {
            if w[1].onset < w[0].offset {
                return Err(Error::Config("signal events overlap".into()));
            }
        }
        Ok(())
    }

    /// Baseline including drift, before drops and noise.
    pub fn local_baseline(&self, t: f64) -> f64 {
        let phase = (self.seed % 6283) as f64 / 1000.0;
        self.baseline
            + self.drift_amplitude * (2.0 * std::f64::consts::PI * t / self.drift_period + phase).sin()
    }

    /// Noise-free magnitude at time `t`.
    pub fn clean_magnitude(&self, t: f64) -> f64 {
        let level: f64 = self
            .events
            .iter()
            .chain(&self.dips)
            .map(|e| e.drop_fraction * e.level(t))
            .sum();
        self.local_baseline(t) * (1.0 - level)
    }
}

/// Samples the script and returns the trace with its ground-truth timeline.
pub fn gen_signal(script: &SignalScript) -> Result<(BioimpedanceTrace, ContactTimeline)> {
    script.validate()?;
    let mut rng = rng_for(script.seed, 1);
    let noise = normal(script.noise_sigma);
    let period = 1.0 / script.sample_rate;
    let n = (script.duration * script.sample_rate).floor() as usize + 1;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let jitter: f64 = if script.jitter > 0.0 && i > 0 && i + 1 < n {
            rng.random_range(-script.jitter..script.jitter) * period
        } else {
            0.0
        };
        let t = i as f64 * period + jitter;
        let eps = if script.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let m = (script.clean_magnitude(t) + eps).max(1e-6);
        samples.push(Sample { time: t, magnitude: m });
    }
    let trace = BioimpedanceTrace::new(samples)?.with_nominal_rate(script.sample_rate);
    let mut intervals: Vec<Interval> = script
        .events
        .iter()
        .map(|e| Interval {
            onset: e.onset,
            offset: e.offset,
        })
        .collect();
    intervals.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    let frames = (script.duration * script.frame_rate + 1e-9).floor() as usize + 1;
    let truth = ContactTimeline::new(intervals, script.frame_rate, frames)?;
    Ok((trace, truth))
}

/// Sensor-level settings shared by generated traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalParams {
    pub sample_rate: f64,
    pub jitter: f64,
    pub baseline: f64,
    /// Fraction of the baseline.
    pub drift_fraction: f64,
    pub drift_period: f64,
    /// Fraction of the baseline.
    pub noise_fraction: f64,
    pub drop_fraction: f64,
    pub transition_ms: f64,
}

impl Default for SignalParams {
    fn default() -> Self {
        SignalParams {
            sample_rate: 500.0,
            jitter: 0.1,
            baseline: 1000.0,
            drift_fraction: 0.005,
            drift_period: 15.0,
            noise_fraction: 0.002,
            drop_fraction: 0.25,
            transition_ms: 50.0,
        }
    }
}

/// Fixed-seed detector corpus: regular traces with several contacts, then
/// adversarial traces containing only shallow dips. Returns each script
/// with a flag marking the adversarial ones.
pub fn detector_corpus(seed: u64, total: usize, adversarial: usize) -> Vec<(SignalScript, bool)> {
    let mut rng = rng_for(seed, 2);
    let mut out = Vec::with_capacity(total);
    for k in 0..total {
        let is_adv = k >= total - adversarial.min(total);
        let duration = rng.random_range(12.0..24.0);
        let baseline = rng.random_range(400.0..2000.0);
        let base_drop = rng.random_range(0.10..0.40);
        let mut events = Vec::new();
        let mut dips = Vec::new();
        let mut t = rng.random_range(1.0..2.5);
        let target = if is_adv { rng.random_range(3..7) } else { rng.random_range(1..6) };
        while events.len() + dips.len() < target {
            let len = rng.random_range(0.3..3.0);
            if t + len > duration - 1.0 {
                break;
            }
            let transition_ms = rng.random_range(40.0..60.0);
            if is_adv {
                dips.push(SignalEvent {
                    onset: t,
                    offset: t + len,
                    drop_fraction: rng.random_range(0.005..0.015),
                    transition_ms,
                });
            } else {
                let drop: f64 = base_drop * rng.random_range(0.85..1.15);
                let drop = drop.max(0.10);
                events.push(SignalEvent {
                    onset: t,
                    offset: t + len,
                    drop_fraction: drop,
                    transition_ms,
                });
            }
            t += len + rng.random_range(0.6..3.0);
        }
        out.push((
            SignalScript {
                duration,
                sample_rate: 500.0,
                jitter: 0.1,
                baseline,
                drift_amplitude: 0.005 * baseline,
                drift_period: rng.random_range(8.0..20.0),
                noise_sigma: 0.002 * baseline,
                events,
                dips,
                frame_rate: 30.0,
                seed: seed.wrapping_mul(1000).wrapping_add(k as u64),
            },
            is_adv,
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Small least-squares helpers

/// Damped Gauss-Newton on `f` with a central-difference Jacobian.
fn levenberg_marquardt(x0: &[f64], f: &dyn Fn(&[f64]) -> Vec<f64>, max_iter: usize) -> (Vec<f64>, f64) {
    let cost = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let mut x = x0.to_vec();
    let mut r = f(&x);
    let mut c = cost(&r);
    let mut mu = 1e-3;
    let h = 1e-6;
    for _ in 0..max_iter {
        let m = r.len();
        let n = x.len();
        let mut jac = DMatrix::<f64>::zeros(m, n);
        for k in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let (rp, rm) = (f(&xp), f(&xm));
            for i in 0..m {
                jac[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * rv;
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += mu * (1.0 + jtj[(k, k)]);
            }
            let Some(step) = a.lu().solve(&(-&jtr)) else {
                mu *= 10.0;
                continue;
            };
            let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rn = f(&xn);
            let cn = cost(&rn);
            if cn < c {
                let done = step.amax() < 1e-12;
                x = xn;
                r = rn;
                c = cn;
                mu = (mu * 0.3).max(1e-12);
                improved = !done;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (x, c)
}

fn arm_joints(model: &BodyModel, side: Side) -> Result<[usize; 3]> {
    Ok([
        model.arm_joint(side, ArmJoint::Shoulder)?,
        model.arm_joint(side, ArmJoint::Elbow)?,
        model.arm_joint(side, ArmJoint::Wrist)?,
    ])
}

fn set_arm(pose: &mut PoseParams, joints: &[usize], x: &[f64]) {
    for (k, &j) in joints.iter().enumerate() {
        pose.set_joint_rotation(j, &Vec3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2]));
    }
}

fn get_arm(pose: &PoseParams, joints: &[usize]) -> Vec<f64> {
    joints
        .iter()
        .flat_map(|&j| {
            let r = pose.joint_rotation(j);
            [r.x, r.y, r.z]
        })
        .collect()
}

/// Axis-angle rotating unit vector `a` onto unit vector `b`.
fn rotation_between(a: &Vec3, b: &Vec3) -> Vec3 {
    let axis = a.cross(b);
    let s = axis.norm();
    let c = a.dot(b);
    if s < 1e-12 {
        return Vec3::zeros();
    }
    axis / s * s.atan2(c)
}

fn side_sign(side: Side) -> f64 {
    match side {
        Side::Left => 1.0,
        Side::Right => -1.0,
    }
}

// ---------------------------------------------------------------------------
// Motions

/// Arms hanging at the sides with slightly bent elbows.
pub fn rest_pose(model: &BodyModel) -> Result<PoseParams> {
    let mut pose = PoseParams::zero(model.pose_dim());
    for side in Side::BOTH {
        let s = side_sign(side);
        let [sh, el, _] = arm_joints(model, side)?;
        pose.set_joint_rotation(sh, &Vec3::new(0.0, 0.0, -s * 75f64.to_radians()));
        pose.set_joint_rotation(el, &Vec3::new(0.0, -s * 0.25, 0.0));
    }
    Ok(pose)
}

/// Vertex at the middle of a hand's palm.
pub fn palm_vertex(model: &BodyModel, side: Side) -> Result<usize> {
    let hand = model.region(Region::hand(side));
    let palm: Vec<usize> = hand
        .iter()
        .copied()
        .filter(|&v| model.rest_normals()[v].y < -0.9)
        .collect();
    let pts = if palm.is_empty() { hand.to_vec() } else { palm };
    let centroid = pts.iter().map(|&v| model.template()[v]).sum::<Vec3>() / pts.len() as f64;
    pts.into_iter()
        .min_by(|&a, &b| {
            let da = (model.template()[a] - centroid).norm();
            let db = (model.template()[b] - centroid).norm();
            da.total_cmp(&db).then(a.cmp(&b))
        })
        .ok_or_else(|| Error::ModelMismatch("hand region is empty".into()))
}

/// Self-contact scenarios of the refinement corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "hand")]
pub enum Scenario {
    HandToHead(Side),
    HandToTorso(Side),
    HandToHand(Side),
    HandToArm(Side),
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::HandToHead(Side::Left),
        Scenario::HandToTorso(Side::Right),
        Scenario::HandToHand(Side::Left),
        Scenario::HandToArm(Side::Right),
        Scenario::HandToHead(Side::Right),
        Scenario::HandToTorso(Side::Left),
        Scenario::HandToHand(Side::Right),
        Scenario::HandToArm(Side::Left),
    ];

    pub fn hand(self) -> Side {
        match self {
            Scenario::HandToHead(s)
            | Scenario::HandToTorso(s)
            | Scenario::HandToHand(s)
            | Scenario::HandToArm(s) => s,
        }
    }

    pub fn region(self) -> Region {
        match self {
            Scenario::HandToHead(_) => Region::Head,
            Scenario::HandToTorso(_) => Region::Torso,
            Scenario::HandToHand(s) => Region::hand(s.opposite()),
            Scenario::HandToArm(s) => Region::arm(s.opposite()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyPose {
    pub frame: usize,
    pub pose: PoseParams,
}

/// Frames `first..=last` in which `hand` touches `region`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactSpan {
    pub first: usize,
    pub last: usize,
    pub hand: Side,
    pub region: Region,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionScript {
    pub frame_rate: f64,
    pub frames: usize,
    /// Ordered by frame; poses between keys are interpolated linearly in
    /// axis-angle space.
    pub keys: Vec<KeyPose>,
    pub contacts: Vec<ContactSpan>,
    /// Std of the induced wrist displacement along the camera axis, meters.
    pub sigma_z: f64,
    /// Std of the induced wrist displacement along each image-plane axis,
    /// meters.
    pub sigma_xy: f64,
    /// Std of the wrist rotation noise, radians.
    #[serde(default)]
    pub sigma_wrist: f64,
    /// Std of the keypoint noise, pixels.
    pub pixel_noise: f64,
    pub camera: Camera,
    pub seed: u64,
}

impl MotionScript {
    pub fn validate(&self, model: &BodyModel) -> Result<()> {
        if self.frames == 0 || !(self.frame_rate > 0.0) {
            return Err(Error::Config("motion script needs frames and a positive frame rate".into()));
        }
        for (name, v) in [
            ("sigma_z", self.sigma_z),
            ("sigma_xy", self.sigma_xy),
            ("sigma_wrist", self.sigma_wrist),
            ("pixel_noise", self.pixel_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("motion script {} must be nonnegative", name)));
            }
        }
        if self.keys.is_empty() {
            return Err(Error::Config("motion script has no key poses".into()));
        }
        for w in self.keys.windows(2) {
            if w[1].frame <= w[0].frame {
                return Err(Error::Config("key poses must have increasing frames".into()));
            }
        }
        for k in &self.keys {
            model.check_pose(&k.pose)?;
        }
        for c in &self.contacts {
            if c.first > c.last || c.last >= self.frames {
                return Err(Error::Config("contact span outside the sequence".into()));
            }
        }
        self.camera.validate()
    }

    /// Ground-truth pose of `frame`.
    pub fn pose_at(&self, frame: usize) -> PoseParams {
        let keys = &self.keys;
        if frame <= keys[0].frame {
            return keys[0].pose.clone();
        }
        let last = &keys[keys.len() - 1];
        if frame >= last.frame {
            return last.pose.clone();
        }
        let i = keys.partition_point(|k| k.frame <= frame) - 1;
        let (a, b) = (&keys[i], &keys[i + 1]);
        if frame == a.frame || a.pose == b.pose {
            return a.pose.clone();
        }
        let s = (frame - a.frame) as f64 / (b.frame - a.frame) as f64;
        let fa = a.pose.to_flat();
        let fb = b.pose.to_flat();
        let flat: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| x + s * (y - x)).collect();
        PoseParams::from_flat(&flat, a.pose.body_pose.len()).expect("same layout")
    }

    pub fn contact_flags(&self) -> Vec<bool> {
        (0..self.frames)
            .map(|f| self.contacts.iter().any(|c| (c.first..=c.last).contains(&f)))
            .collect()
    }
}

/// Ground truth, perturbed estimate, and observations of a scripted motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSample {
    pub gt: Vec<PoseParams>,
    pub perturbed: Vec<PoseParams>,
    pub keypoints: Vec<Keypoints2D>,
    pub camera: Camera,
    pub contact_flags: Vec<bool>,
}

/// Smallest distance between two vertex sets of one mesh.
pub fn region_gap(vertices: &[Vec3], a: &[usize], b: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for &i in a {
        for &j in b {
            best = best.min((vertices[i] - vertices[j]).norm());
        }
    }
    best
}

fn wrist_in_camera(model: &BodyModel, pose: &PoseParams, camera: &Camera, wrist: usize) -> Result<Vec3> {
    let posed = model.forward_kinematics(pose)?;
    Ok(camera.to_camera(&posed.positions[wrist]))
}

/// Moves the shoulder and elbow of `side` so the wrist shifts by `d`
/// (camera frame). Fails with `ScriptInfeasible` when the arm cannot reach
/// the displaced wrist position to within 0.1 mm.
pub fn displace_wrist(model: &BodyModel, pose: &mut PoseParams, camera: &Camera, side: Side, d: &Vec3) -> Result<()> {
    if *d == Vec3::zeros() {
        return Ok(());
    }
    let [sh, el, wr] = arm_joints(model, side)?;
    let joints = [sh, el];
    let goal = wrist_in_camera(model, pose, camera, wr)? + d;
    let base = pose.clone();
    let f = |x: &[f64]| -> Vec<f64> {
        let mut p = base.clone();
        set_arm(&mut p, &joints, x);
        match wrist_in_camera(model, &p, camera, wr) {
            Ok(w) => (w - goal).iter().map(|v| 1000.0 * v).collect(),
            Err(_) => vec![f64::INFINITY; 3],
        }
    };
    let (x, cost) = levenberg_marquardt(&get_arm(pose, &joints), &f, 100);
    if !(cost.sqrt() <= 0.1) {
        return Err(Error::ScriptInfeasible(format!(
            "{} wrist cannot move by ({:.1}, {:.1}, {:.1}) mm",
            side.as_str(),
            1000.0 * d.x,
            1000.0 * d.y,
            1000.0 * d.z
        )));
    }
    set_arm(pose, &joints, &x);
    Ok(())
}

const MAX_REDRAWS: usize = 20;

/// Renders the script: interpolated ground truth, per-frame perturbation of
/// both arms, and noisy keypoints of every joint.
pub fn gen_motion(script: &MotionScript, model: &BodyModel) -> Result<MotionSample> {
    script.validate(model)?;
    let gt: Vec<PoseParams> = (0..script.frames).map(|f| script.pose_at(f)).collect();

    for c in &script.contacts {
        let hand = model.region(Region::hand(c.hand));
        let target = model.region(c.region);
        for f in c.first..=c.last {
            let v = model.skin_vertices(&gt[f])?;
            let gap = region_gap(&v, hand, target);
            if gap > 0.002 {
                return Err(Error::ScriptInfeasible(format!(
                    "frame {}: {} hand is {:.1} mm from {}",
                    f,
                    c.hand.as_str(),
                    gap * 1000.0,
                    c.region.as_str()
                )));
            }
        }
    }

    let mut rng = rng_for(script.seed, 3);
    let n_xy = normal(script.sigma_xy);
    let n_z = normal(script.sigma_z);
    let n_w = normal(script.sigma_wrist);
    let n_px = normal(script.pixel_noise);
    let mut perturbed = Vec::with_capacity(gt.len());
    let mut keypoints = Vec::with_capacity(gt.len());
    for pose in &gt {
        let mut p = pose.clone();
        for side in Side::BOTH {
            // Unreachable displacements are redrawn from the same stream.
            let mut tries = 0;
            loop {
                let d = Vec3::new(
                    if script.sigma_xy > 0.0 { n_xy.sample(&mut rng) } else { 0.0 },
                    if script.sigma_xy > 0.0 { n_xy.sample(&mut rng) } else { 0.0 },
                    if script.sigma_z > 0.0 { n_z.sample(&mut rng) } else { 0.0 },
                );
                let mut q = p.clone();
                match displace_wrist(model, &mut q, &script.camera, side, &d) {
                    Ok(()) => {
                        p = q;
                        break;
                    }
                    Err(Error::ScriptInfeasible(_)) if tries < MAX_REDRAWS => tries += 1,
                    Err(e) => return Err(e),
                }
            }
            if script.sigma_wrist > 0.0 {
                let wr = model.arm_joint(side, ArmJoint::Wrist)?;
                let noise = Vec3::new(n_w.sample(&mut rng), n_w.sample(&mut rng), n_w.sample(&mut rng));
                let r = p.joint_rotation(wr) + noise;
                p.set_joint_rotation(wr, &r);
            }
        }
        perturbed.push(p);

        let joints = model.joint_positions(pose)?;
        let mut kp = Keypoints2D::default();
        for (j, joint) in model.joints().iter().enumerate() {
            let uv = script.camera.project_camera(&script.camera.to_camera(&joints[j]))?;
            let noise = if script.pixel_noise > 0.0 {
                Vector2::new(n_px.sample(&mut rng), n_px.sample(&mut rng))
            } else {
                Vector2::zeros()
            };
            kp.joints.insert(
                joint.name.clone(),
                Keypoint {
                    u: uv.x + noise.x,
                    v: uv.y + noise.y,
                    confidence: 1.0,
                },
            );
        }
        keypoints.push(kp);
    }
    Ok(MotionSample {
        gt,
        perturbed,
        keypoints,
        camera: script.camera.clone(),
        contact_flags: script.contact_flags(),
    })
}

/// Camera used by the generated corpora: 1500 px focal length, 3 m in front
/// of the body, looking at the chest.
pub fn standard_camera() -> Camera {
    Camera::frontal(1500.0, [1280, 1440], Vec3::new(0.0, 0.2, 3.0))
}

/// Parameters of a generated contact sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceSpec {
    pub scenario: Scenario,
    pub frames: usize,
    pub frame_rate: f64,
    pub contact_start: usize,
    pub contact_frames: usize,
    pub sigma_z: f64,
    pub sigma_xy: f64,
    pub sigma_wrist: f64,
    pub pixel_noise: f64,
    pub seed: u64,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        SequenceSpec {
            scenario: Scenario::HandToHead(Side::Left),
            frames: 90,
            frame_rate: 30.0,
            contact_start: 30,
            contact_frames: 30,
            sigma_z: 0.06,
            sigma_xy: 0.015,
            sigma_wrist: 0.05,
            pixel_noise: 2.0,
            seed: 0,
        }
    }
}

/// Arm of `side` held in front of the chest, forearm across the body and
/// hand pointing forward.
fn presenting_arm(model: &BodyModel, base: &PoseParams, side: Side) -> Result<PoseParams> {
    let s = side_sign(side);
    let joints = arm_joints(model, side)?;
    let [_, el, wr] = joints;
    let elbow_goal = Vec3::new(s * 0.25, 0.20, 0.10);
    let wrist_goal = Vec3::new(s * 0.06, 0.24, 0.30);
    let tip_goal = wrist_goal + Vec3::new(-s * 0.04, 0.0, 0.16);
    let mut start = base.clone();
    set_arm(&mut start, &joints, &[0.0, 0.0, -s * 1.0, 0.0, -s * 1.4, 0.0, 0.0, -s * 0.8, 0.0]);
    let x0 = get_arm(&start, &joints);
    let f = |x: &[f64]| -> Vec<f64> {
        let mut p = start.clone();
        set_arm(&mut p, &joints, x);
        let posed = model.forward_kinematics(&p).expect("valid pose");
        let tip = posed.positions[wr] + posed.rotations[wr] * Vec3::new(s * 0.17, 0.0, 0.0);
        let mut r = Vec::with_capacity(18);
        r.extend((posed.positions[el] - elbow_goal).iter().map(|v| 100.0 * v));
        r.extend((posed.positions[wr] - wrist_goal).iter().map(|v| 100.0 * v));
        r.extend((tip - tip_goal).iter().map(|v| 50.0 * v));
        r.extend(x.iter().zip(&x0).map(|(a, b)| 0.05 * (a - b)));
        r
    };
    let (x, _) = levenberg_marquardt(&x0, &f, 200);
    let mut out = start;
    set_arm(&mut out, &joints, &x);
    Ok(out)
}

/// Candidate target vertices a hand can plausibly reach with its palm.
fn target_candidates(
    model: &BodyModel,
    scenario: Scenario,
    v: &[Vec3],
    n: &[Vec3],
    shoulder: &Vec3,
) -> Result<Vec<usize>> {
    let s = side_sign(scenario.hand());
    let other_elbow = model.arm_joint(scenario.hand().opposite(), ArmJoint::Elbow)?;
    Ok(model
        .region(scenario.region())
        .iter()
        .copied()
        .filter(|&i| {
            let (p, nn) = (v[i], n[i]);
            let toward = (shoulder - p).normalize();
            match scenario {
                Scenario::HandToHead(_) => nn.z > 0.35 && nn.x * s > -0.2 && nn.y < 0.5,
                Scenario::HandToTorso(_) => nn.z > 0.75 && (0.1..0.4).contains(&p.y),
                Scenario::HandToArm(_) => {
                    nn.dot(&toward) > 0.3
                        && model.weights(i).iter().any(|&(k, w)| k == other_elbow && w > 0.99)
                }
                Scenario::HandToHand(_) => nn.dot(&toward) > 0.3,
            }
        })
        .collect())
}

/// Arm pose of `side` placing its palm vertex at `goal` with the palm
/// facing along `-facing`.
fn solve_touch(
    model: &BodyModel,
    base: &PoseParams,
    side: Side,
    goal: &Vec3,
    facing: &Vec3,
    guesses: &[Vec<f64>],
) -> Result<(PoseParams, f64)> {
    let joints = arm_joints(model, side)?;
    let palm = palm_vertex(model, side)?;
    let mut best: Option<(PoseParams, f64)> = None;
    for x0 in guesses {
        let f = |x: &[f64]| -> Vec<f64> {
            let mut p = base.clone();
            set_arm(&mut p, &joints, x);
            let posed = model.forward_kinematics(&p).expect("valid pose");
            let v = posed.skin_vertex(model, palm);
            let n = posed.skin_normal(model, palm);
            let mut r = Vec::with_capacity(15);
            r.extend((v - goal).iter().map(|d| 1000.0 * d));
            r.extend((n + facing).iter().map(|d| 5.0 * d));
            r.extend(x.iter().zip(x0).map(|(a, b)| 0.2 * (a - b)));
            r
        };
        let (x, _) = levenberg_marquardt(x0, &f, 300);
        let mut p = base.clone();
        set_arm(&mut p, &joints, &x);
        let err = (model.forward_kinematics(&p)?.skin_vertex(model, palm) - goal).norm();
        if best.as_ref().is_none_or(|b| err < b.1) {
            best = Some((p, err));
        }
    }
    best.ok_or_else(|| Error::ScriptInfeasible("no initial guesses".into()))
}

fn touch_guesses(side: Side, goal: &Vec3, shoulder: &Vec3) -> Vec<Vec<f64>> {
    let s = side_sign(side);
    let dir = (goal - shoulder).normalize();
    let mut out = Vec::new();
    for (down, bend) in [(0.35, 1.2), (0.6, 1.8), (0.2, 0.6), (0.8, 2.3)] {
        let aim = (dir + Vec3::new(0.0, -down, 0.1)).normalize();
        let sh = rotation_between(&Vec3::new(s, 0.0, 0.0), &aim);
        out.push(vec![sh.x, sh.y, sh.z, 0.0, -s * bend, 0.0, 0.0, 0.0, 0.0]);
    }
    out
}

/// Builds the key poses of a single-contact sequence: rest, hover, near,
/// held contact, near, hover, rest.
pub fn build_motion_script(model: &BodyModel, spec: &SequenceSpec) -> Result<MotionScript> {
    let hand = spec.hand();
    let first = spec.contact_start;
    let last = first + spec.contact_frames.max(1) - 1;
    if first < 9 || last + 9 >= spec.frames {
        return Err(Error::Config(
            "contact span must leave at least 9 frames on both sides".into(),
        ));
    }
    let mut rng = rng_for(spec.seed, 4);
    let rest = rest_pose(model)?;
    let mut base = rest.clone();
    if matches!(spec.scenario, Scenario::HandToHand(_) | Scenario::HandToArm(_)) {
        base = presenting_arm(model, &base, hand.opposite())?;
    }
    let posed = model.forward_kinematics(&base)?;
    let nv = model.num_vertices();
    let verts: Vec<Vec3> = (0..nv).map(|v| posed.skin_vertex(model, v)).collect();
    let norms: Vec<Vec3> = (0..nv).map(|v| posed.skin_normal(model, v)).collect();
    let shoulder = posed.positions[model.arm_joint(hand, ArmJoint::Shoulder)?];
    let mut candidates = target_candidates(model, spec.scenario, &verts, &norms, &shoulder)?;
    if candidates.is_empty() {
        return Err(Error::ScriptInfeasible(format!(
            "no reachable targets in {}",
            spec.scenario.region().as_str()
        )));
    }

    let mut last_problem = format!(
        "could not place the {} hand on the {}",
        hand.as_str(),
        spec.scenario.region().as_str()
    );
    for _ in 0..16 {
        if candidates.is_empty() {
            break;
        }
        let pick = candidates.swap_remove(rng.random_range(0..candidates.len()));
        let goal = verts[pick] + norms[pick] * 0.001;
        let guesses = touch_guesses(hand, &goal, &shoulder);
        let (contact_pose, err) = solve_touch(model, &base, hand, &goal, &norms[pick], &guesses)?;
        let v = model.skin_vertices(&contact_pose)?;
        let gap = region_gap(&v, model.region(Region::hand(hand)), model.region(spec.scenario.region()));
        if err >= 3e-4 || gap > 0.0015 || hand_penetrates(model, &contact_pose, hand)? {
            continue;
        }
        let joints = arm_joints(model, hand)?;
        let x_contact = get_arm(&contact_pose, &joints);
        let offset_pose = |dist: f64| -> Result<PoseParams> {
            let goal = verts[pick] + norms[pick] * dist;
            let (p, _) = solve_touch(model, &base, hand, &goal, &norms[pick], std::slice::from_ref(&x_contact))?;
            Ok(p)
        };
        let near = offset_pose(0.025)?;
        let hover = offset_pose(0.06)?;
        let keys = vec![
            KeyPose { frame: 0, pose: rest.clone() },
            KeyPose { frame: first - 8, pose: hover.clone() },
            KeyPose { frame: first - 1, pose: near.clone() },
            KeyPose { frame: first, pose: contact_pose.clone() },
            KeyPose { frame: last, pose: contact_pose },
            KeyPose { frame: last + 1, pose: near },
            KeyPose { frame: last + 8, pose: hover },
            KeyPose { frame: spec.frames - 1, pose: rest.clone() },
        ];
        let script = MotionScript {
            frame_rate: spec.frame_rate,
            frames: spec.frames,
            keys,
            contacts: vec![ContactSpan {
                first,
                last,
                hand,
                region: spec.scenario.region(),
            }],
            sigma_z: spec.sigma_z,
            sigma_xy: spec.sigma_xy,
            sigma_wrist: spec.sigma_wrist,
            pixel_noise: spec.pixel_noise,
            camera: standard_camera(),
            seed: spec.seed,
        };
        match clearance_violation(model, &script)? {
            None => return Ok(script),
            Some(problem) => last_problem = problem,
        }
    }
    Err(Error::ScriptInfeasible(last_problem))
}

/// First frame outside every contact span in which a hand comes within
/// [`NO_CONTACT_CLEARANCE`] of its targets.
fn clearance_violation(model: &BodyModel, script: &MotionScript) -> Result<Option<String>> {
    let flags = script.contact_flags();
    for (f, &flag) in flags.iter().enumerate() {
        if flag {
            continue;
        }
        let v = model.skin_vertices(&script.pose_at(f))?;
        for side in Side::BOTH {
            let gap = region_gap(&v, model.region(Region::hand(side)), &model.target_vertices(side));
            if gap <= NO_CONTACT_CLEARANCE {
                return Ok(Some(format!(
                    "frame {} outside the contact span has the {} hand {:.1} mm from the body",
                    f,
                    side.as_str(),
                    gap * 1000.0
                )));
            }
        }
    }
    Ok(None)
}

/// Minimum hand-to-body distance of frames outside contact spans, meters.
pub const NO_CONTACT_CLEARANCE: f64 = 0.012;

impl SequenceSpec {
    pub fn hand(&self) -> Side {
        self.scenario.hand()
    }
}

/// Whether some hand vertex lies more than 3 mm behind the surface of its
/// nearest target vertex.
fn hand_penetrates(model: &BodyModel, pose: &PoseParams, hand: Side) -> Result<bool> {
    let posed = model.forward_kinematics(pose)?;
    let targets: Vec<(Vec3, Vec3)> = model
        .target_vertices(hand)
        .into_iter()
        .map(|t| (posed.skin_vertex(model, t), posed.skin_normal(model, t)))
        .collect();
    for &h in model.region(Region::hand(hand)) {
        let v = posed.skin_vertex(model, h);
        let nearest = targets
            .iter()
            .min_by(|a, b| (v - a.0).norm().total_cmp(&(v - b.0).norm()));
        if let Some((p, n)) = nearest {
            if (v - p).dot(n) < -0.003 {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Impedance script whose contacts cover exactly the contact frames of a
/// motion script.
pub fn signal_for_motion(script: &MotionScript, params: &SignalParams) -> SignalScript {
    let fr = script.frame_rate;
    let events = script
        .contacts
        .iter()
        .map(|c| SignalEvent {
            onset: (c.first as f64 - 0.5) / fr,
            offset: (c.last as f64 + 0.5) / fr,
            drop_fraction: params.drop_fraction,
            transition_ms: params.transition_ms,
        })
        .collect();
    SignalScript {
        duration: (script.frames - 1) as f64 / fr,
        sample_rate: params.sample_rate,
        jitter: params.jitter,
        baseline: params.baseline,
        drift_amplitude: params.drift_fraction * params.baseline,
        drift_period: params.drift_period,
        noise_sigma: params.noise_fraction * params.baseline,
        events,
        dips: Vec::new(),
        frame_rate: fr,
        seed: script.seed,
    }
}

/// Fixed-seed refinement corpus cycling through every scenario.
pub fn refinement_corpus(model: &BodyModel, seed: u64, count: usize, sigma_z: f64, sigma_xy: f64) -> Result<Vec<MotionScript>> {
    let mut rng = rng_for(seed, 5);
    (0..count)
        .map(|k| {
            let spec = SequenceSpec {
                scenario: Scenario::ALL[k % Scenario::ALL.len()],
                contact_start: rng.random_range(25..35),
                contact_frames: rng.random_range(24..36),
                sigma_z,
                sigma_xy,
                seed: seed.wrapping_mul(7919).wrapping_add(k as u64),
                ..SequenceSpec::default()
            };
            build_motion_script(model, &spec)
        })
        .collect()
}
