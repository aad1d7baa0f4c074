//! A procedurally built "capsule person": 22 joints in the standard
//! body-joint order, an ellipsoid head, ring-sampled torso and limbs, and
//! box hands. Deterministic; every call returns the same model.
//!
//! Axes: `+y` up, `+z` forward (the direction the body faces), `+x` toward
//! the body's left. The rest pose is a T-pose with palms facing down.

use std::collections::BTreeMap;

use crate::body::{BodyModel, BodyModelFile, Joint, Region, Vec3};

const JOINTS: [(&str, Option<usize>, [f64; 3]); 22] = [
    ("pelvis", None, [0.0, 0.0, 0.0]),
    ("left_hip", Some(0), [0.08, -0.08, 0.0]),
    ("right_hip", Some(0), [-0.08, -0.08, 0.0]),
    ("spine1", Some(0), [0.0, 0.10, -0.01]),
    ("left_knee", Some(1), [0.01, -0.38, 0.0]),
    ("right_knee", Some(2), [-0.01, -0.38, 0.0]),
    ("spine2", Some(3), [0.0, 0.13, 0.0]),
    ("left_ankle", Some(4), [0.0, -0.40, -0.03]),
    ("right_ankle", Some(5), [0.0, -0.40, -0.03]),
    ("spine3", Some(6), [0.0, 0.06, 0.01]),
    ("left_foot", Some(7), [0.0, -0.06, 0.12]),
    ("right_foot", Some(8), [0.0, -0.06, 0.12]),
    ("neck", Some(9), [0.0, 0.21, -0.02]),
    ("left_collar", Some(9), [0.07, 0.12, -0.01]),
    ("right_collar", Some(9), [-0.07, 0.12, -0.01]),
    ("head", Some(12), [0.0, 0.09, 0.04]),
    ("left_shoulder", Some(13), [0.11, 0.03, -0.01]),
    ("right_shoulder", Some(14), [-0.11, 0.03, -0.01]),
    ("left_elbow", Some(16), [0.26, 0.0, 0.0]),
    ("right_elbow", Some(17), [-0.26, 0.0, 0.0]),
    ("left_wrist", Some(18), [0.25, 0.0, 0.0]),
    ("right_wrist", Some(19), [-0.25, 0.0, 0.0]),
];

struct Builder {
    vertices: Vec<[f64; 3]>,
    normals: Vec<[f64; 3]>,
    weights: Vec<Vec<(usize, f64)>>,
    regions: BTreeMap<Region, Vec<usize>>,
}

impl Builder {
    fn push(&mut self, region: Region, p: Vec3, n: Vec3, w: Vec<(usize, f64)>) {
        let w: Vec<(usize, f64)> = w.into_iter().filter(|(_, x)| *x > 0.0).collect();
        let idx = self.vertices.len();
        self.vertices.push([p.x, p.y, p.z]);
        let n = n.normalize();
        self.normals.push([n.x, n.y, n.z]);
        self.weights.push(w);
        self.regions.entry(region).or_default().push(idx);
    }
}

fn rest_positions() -> Vec<Vec3> {
    let mut out: Vec<Vec3> = Vec::new();
    for (_, parent, off) in JOINTS.iter() {
        let base = parent.map(|p| out[p]).unwrap_or_else(Vec3::zeros);
        out.push(base + Vec3::from(*off));
    }
    out
}

fn ramp(t: f64, lo: f64, hi: f64) -> f64 {
    ((t - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Points on a tube around segment `a -> b`, returned with outward normals.
fn tube(a: Vec3, b: Vec3, radius: f64, rings: usize, around: usize, phase: f64) -> Vec<(f64, Vec3, Vec3)> {
    let axis = (b - a).normalize();
    let helper = if axis.y.abs() < 0.9 { Vec3::y() } else { Vec3::z() };
    let u = axis.cross(&helper).normalize();
    let v = axis.cross(&u);
    let mut out = Vec::with_capacity(rings * around);
    for i in 0..rings {
        let t = (i as f64 + 0.5) / rings as f64;
        let c = a + (b - a) * t;
        for k in 0..around {
            let ang = 2.0 * std::f64::consts::PI * (k as f64 + phase * (i % 2) as f64) / around as f64;
            let n = u * ang.cos() + v * ang.sin();
            out.push((t, c + n * radius, n));
        }
    }
    out
}

/// Builds the standard capsule person (1056 vertices).
pub fn capsule_person() -> BodyModel {
    capsule_person_at(1.0)
}

/// Builds the capsule person with the linear sampling density scaled by `density`.
pub fn capsule_person_at(density: f64) -> BodyModel {
    let sc = |n: usize| ((n as f64 * density).round() as usize).max(2);
    let rest = rest_positions();
    let idx = |name: &str| JOINTS.iter().position(|j| j.0 == name).unwrap();
    let mut b = Builder {
        vertices: Vec::new(),
        normals: Vec::new(),
        weights: Vec::new(),
        regions: BTreeMap::new(),
    };

    // Head: ellipsoid sampled on a Fibonacci lattice.
    let head = idx("head");
    let hc = rest[head] + Vec3::new(0.0, 0.07, 0.01);
    let radii = Vec3::new(0.075, 0.11, 0.09);
    let n_head = sc(170);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    for i in 0..n_head {
        let y = 1.0 - 2.0 * (i as f64 + 0.5) / n_head as f64;
        let r = (1.0 - y * y).sqrt();
        let th = golden * i as f64;
        let s = Vec3::new(r * th.cos(), y, r * th.sin());
        let p = hc + s.component_mul(&radii);
        let n = s.component_div(&radii);
        b.push(Region::Head, p, n, vec![(head, 1.0)]);
    }

    // Torso: elliptic rings from the pelvis to the shoulders, plus a neck.
    let spine: Vec<(usize, f64)> = ["pelvis", "spine1", "spine2", "spine3", "neck"]
        .iter()
        .map(|n| (idx(n), rest[idx(n)].y))
        .collect();
    let (lc, rc) = (idx("left_collar"), idx("right_collar"));
    let rings = sc(11);
    let around = sc(18);
    for i in 0..rings {
        let y = -0.02 + 0.48 * i as f64 / (rings - 1) as f64;
        let top = ramp(y, 0.30, 0.46);
        let rx = 0.14 + 0.03 * ramp(y, 0.15, 0.40) - 0.05 * top * top;
        let rz = 0.10 + 0.01 * ramp(y, 0.15, 0.35) - 0.02 * top;
        for k in 0..around {
            let ang = 2.0 * std::f64::consts::PI * (k as f64 + 0.5 * (i % 2) as f64) / around as f64;
            let (s, c) = ang.sin_cos();
            let p = Vec3::new(rx * c, y, rz * s);
            let n = Vec3::new(c / rx, 0.0, s / rz);
            // Blend between the two spine joints bracketing this height.
            let mut w: Vec<(usize, f64)> = Vec::new();
            let mut seg = 0;
            while seg + 2 < spine.len() && y > spine[seg + 1].1 {
                seg += 1;
            }
            let t = ramp(y, spine[seg].1, spine[seg + 1].1);
            w.push((spine[seg].0, 1.0 - t));
            w.push((spine[seg + 1].0, t));
            // Upper lateral torso follows the collars.
            let lateral = ramp(c.abs(), 0.5, 0.9) * ramp(y, 0.30, 0.42) * 0.6;
            if lateral > 0.0 {
                for e in w.iter_mut() {
                    e.1 *= 1.0 - lateral;
                }
                w.push((if c > 0.0 { lc } else { rc }, lateral));
            }
            b.push(Region::Torso, p, n, w);
        }
    }
    let neck = idx("neck");
    for (t, p, n) in tube(rest[neck] + Vec3::new(0.0, -0.02, 0.0), rest[head], 0.055, sc(2), sc(12), 0.5) {
        b.push(Region::Torso, p, n, vec![(neck, 1.0 - 0.5 * t), (head, 0.5 * t)]);
    }

    // Arms: upper arm and forearm tubes, box hands.
    for side in ["left", "right"] {
        let sgn = if side == "left" { 1.0 } else { -1.0 };
        let sh = idx(&format!("{side}_shoulder"));
        let el = idx(&format!("{side}_elbow"));
        let wr = idx(&format!("{side}_wrist"));
        let collar = idx(&format!("{side}_collar"));
        let arm = if side == "left" { Region::LeftArm } else { Region::RightArm };
        let hand = if side == "left" { Region::LeftHand } else { Region::RightHand };

        for (t, p, n) in tube(rest[sh], rest[el], 0.045, sc(6), sc(10), 0.5) {
            let w_el = 0.5 * ramp(t, 0.75, 1.0);
            let w_col = 0.3 * ramp(0.25 - t, 0.0, 0.25);
            b.push(arm, p, n, vec![(sh, 1.0 - w_el - w_col), (el, w_el), (collar, w_col)]);
        }
        for (t, p, n) in tube(rest[el], rest[wr], 0.037, sc(6), sc(10), 0.5) {
            let w_sh = 0.5 * ramp(0.25 - t, 0.0, 0.25);
            let w_wr = 0.5 * ramp(t, 0.8, 1.0);
            b.push(arm, p, n, vec![(el, 1.0 - w_sh - w_wr), (sh, w_sh), (wr, w_wr)]);
        }

        // Hand box: length along the arm axis, width along z, thin along y.
        let (len, wid, thick) = (0.17, 0.085, 0.03);
        let x0 = 0.01;
        let (nl, nw, nt) = (sc(9), sc(5), sc(2));
        let origin = rest[wr];
        let mut emit = |u: f64, v: f64, s: f64, n: Vec3| {
            let local = Vec3::new(sgn * (x0 + u * len), (s - 0.5) * thick, (v - 0.5) * wid);
            let p = origin + local;
            let n = Vec3::new(sgn * n.x, n.y, n.z);
            b.push(hand, p, n, vec![(wr, 1.0)]);
        };
        let grid = |k: usize, m: usize| (k as f64 + 0.5) / m as f64;
        // palm (-y) and back (+y)
        for i in 0..nl {
            for j in 0..nw {
                emit(grid(i, nl), grid(j, nw), 0.0, Vec3::new(0.0, -1.0, 0.0));
                emit(grid(i, nl), grid(j, nw), 1.0, Vec3::new(0.0, 1.0, 0.0));
            }
        }
        // sides (±z) and fingertip end (+x)
        for i in 0..nl {
            for s in 0..nt {
                emit(grid(i, nl), 0.0, grid(s, nt), Vec3::new(0.0, 0.0, -1.0));
                emit(grid(i, nl), 1.0, grid(s, nt), Vec3::new(0.0, 0.0, 1.0));
            }
        }
        for j in 0..nw {
            for s in 0..nt {
                emit(1.0, grid(j, nw), grid(s, nt), Vec3::new(1.0, 0.0, 0.0));
            }
        }
    }

    // Lower body: thighs, shanks, feet.
    for side in ["left", "right"] {
        let hip = idx(&format!("{side}_hip"));
        let knee = idx(&format!("{side}_knee"));
        let ankle = idx(&format!("{side}_ankle"));
        let foot = idx(&format!("{side}_foot"));
        for (t, p, n) in tube(rest[hip], rest[knee], 0.075, 4, 8, 0.5) {
            let w = 0.5 * ramp(t, 0.8, 1.0);
            b.push(Region::LowerBody, p, n, vec![(hip, 1.0 - w), (knee, w)]);
        }
        for (t, p, n) in tube(rest[knee], rest[ankle], 0.05, 4, 8, 0.5) {
            let w = 0.5 * ramp(0.2 - t, 0.0, 0.2);
            b.push(Region::LowerBody, p, n, vec![(knee, 1.0 - w), (hip, w)]);
        }
        for (_, p, n) in tube(rest[ankle], rest[foot] + Vec3::new(0.0, 0.0, 0.05), 0.035, 2, 6, 0.5) {
            b.push(Region::LowerBody, p, n, vec![(ankle, 1.0)]);
        }
    }

    let joints = JOINTS
        .iter()
        .map(|(name, parent, offset)| Joint {
            name: (*name).to_string(),
            parent: *parent,
            offset: *offset,
        })
        .collect();
    let mut joint_name_index = BTreeMap::new();
    for name in [
        "left_shoulder",
        "right_shoulder",
        "left_elbow",
        "right_elbow",
        "left_wrist",
        "right_wrist",
    ] {
        joint_name_index.insert(name.to_string(), idx(name));
    }

    BodyModel::from_file(BodyModelFile {
        joints,
        vertices: b.vertices,
        normals: Some(b.normals),
        weights: b.weights,
        regions: b.regions,
        joint_name_index,
    })
    .expect("capsule person is a valid model")
}
