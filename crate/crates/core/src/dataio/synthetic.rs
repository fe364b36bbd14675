//! Synthetic multi-format action clips.
//!
//! Every class is a family of periodic joint-angle trajectories driving one
//! shared articulated body. A clip is rendered into each registered
//! convention by evaluating the body's landmarks at the convention's joint
//! anchors, so all formats of a record depict the same motion.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::TAU;

use ndarray::Array4;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{derive_rng, SequenceRecord};
use crate::conventions::{ConventionRegistry, SkeletonConvention};

type Vec3 = [f64; 3];

const FPS: f64 = 30.0;

// angle channels
const TORSO_PITCH: usize = 0;
const HEAD_PITCH: usize = 1;
const SHOULDER_PITCH: [usize; 2] = [2, 3];
const SHOULDER_ROLL: [usize; 2] = [4, 5];
const ELBOW: [usize; 2] = [6, 7];
const HIP: [usize; 2] = [8, 9];
const KNEE: [usize; 2] = [10, 11];
const BOB: usize = 12;
const GRIP: usize = 13;
const CHANNELS: usize = 14;

/// Layout knobs for [`generate_synthetic_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub persons: usize,
    /// Every `test_every`-th clip of a class (1-based) is tagged `test`.
    pub test_every: usize,
    /// Per-format observation noise in meters.
    pub observation_noise: f64,
}

impl SyntheticSpec {
    pub fn new(n_classes: usize, n_per_class: usize) -> Self {
        Self {
            n_classes,
            n_per_class,
            min_frames: 40,
            max_frames: 64,
            persons: 2,
            test_every: 3,
            observation_noise: 0.005,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Oscillator {
    base: f64,
    amp: f64,
    freq: f64,
    phase: f64,
}

impl Oscillator {
    fn at(&self, seconds: f64) -> f64 {
        self.base + self.amp * (TAU * self.freq * seconds + self.phase).sin()
    }
}

fn class_motion(seed: u64, class: usize) -> Vec<Oscillator> {
    let mut rng = derive_rng(seed, "class", class as u64);
    let mut osc = Vec::with_capacity(CHANNELS);
    let mut active = 0;
    for ch in 0..CHANNELS {
        let on = rng.random_bool(0.5) || (ch == CHANNELS - 1 && active < 2);
        active += usize::from(on);
        let (base, amp) = match ch {
            BOB => (0.0, if on { rng.random_range(0.02..0.08) } else { 0.0 }),
            GRIP => (rng.random_range(0.0..0.8), if on { rng.random_range(0.1..0.4) } else { 0.0 }),
            c if ELBOW.contains(&c) || KNEE.contains(&c) => {
                (rng.random_range(0.1..0.9), if on { rng.random_range(0.3..0.9) } else { 0.0 })
            }
            _ => (rng.random_range(-0.3..0.3), if on { rng.random_range(0.3..1.0) } else { 0.0 }),
        };
        osc.push(Oscillator {
            base,
            amp,
            freq: rng.random_range(0.4..1.6),
            phase: rng.random_range(0.0..TAU),
        });
    }
    osc
}

fn rot_x(v: Vec3, a: f64) -> Vec3 {
    let (s, c) = a.sin_cos();
    [v[0], v[1] * c - v[2] * s, v[1] * s + v[2] * c]
}

fn rot_y(v: Vec3, a: f64) -> Vec3 {
    let (s, c) = a.sin_cos();
    [v[0] * c + v[2] * s, v[1], -v[0] * s + v[2] * c]
}

fn rot_z(v: Vec3, a: f64) -> Vec3 {
    let (s, c) = a.sin_cos();
    [v[0] * c - v[1] * s, v[0] * s + v[1] * c, v[2]]
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn lerp(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
}

/// Named landmarks of the shared body at one instant, body frame
/// (x lateral to the left, y up, z forward).
fn body_landmarks(ch: &[f64; CHANNELS]) -> HashMap<String, Vec3> {
    let mut lm: HashMap<String, Vec3> = HashMap::new();
    let pelvis = [0.0, 1.0 + ch[BOB], 0.0];
    let torso = |off: Vec3| add(pelvis, rot_x(off, ch[TORSO_PITCH]));
    let head_frame = |off: Vec3| rot_x(rot_x(off, ch[HEAD_PITCH]), ch[TORSO_PITCH]);
    let neck = torso([0.0, 0.55, 0.0]);
    lm.insert(String::from("pelvis"), pelvis);
    lm.insert(String::from("spine_low"), torso([0.0, 0.1, 0.0]));
    lm.insert(String::from("spine_mid"), torso([0.0, 0.25, 0.0]));
    lm.insert(String::from("chest"), torso([0.0, 0.4, 0.0]));
    lm.insert(String::from("neck"), neck);
    lm.insert(String::from("head"), add(neck, head_frame([0.0, 0.12, 0.0])));
    lm.insert(String::from("head_top"), add(neck, head_frame([0.0, 0.24, 0.0])));
    lm.insert(String::from("jaw"), add(neck, head_frame([0.0, 0.06, 0.06])));
    lm.insert(String::from("nose"), add(neck, head_frame([0.0, 0.13, 0.1])));
    lm.insert(String::from("eye_l"), add(neck, head_frame([0.035, 0.16, 0.08])));
    lm.insert(String::from("eye_r"), add(neck, head_frame([-0.035, 0.16, 0.08])));

    for (side, sign) in [(0usize, 1.0f64), (1, -1.0)] {
        let suffix = if side == 0 { "_l" } else { "_r" };
        let name = |base: &str| format!("{base}{suffix}");
        // arm
        let shoulder = torso([sign * 0.18, 0.47, 0.0]);
        lm.insert(name("clavicle"), torso([sign * 0.08, 0.48, 0.0]));
        lm.insert(name("shoulder"), shoulder);
        let arm = |v: Vec3| rot_x(rot_z(rot_x(v, -ch[SHOULDER_PITCH[side]]), sign * ch[SHOULDER_ROLL[side]]), ch[TORSO_PITCH]);
        let elbow = add(shoulder, arm([0.0, -0.28, 0.0]));
        let fore = |v: Vec3| arm(rot_x(v, -ch[ELBOW[side]]));
        let wrist = add(elbow, fore([0.0, -0.25, 0.0]));
        lm.insert(name("elbow"), elbow);
        lm.insert(name("wrist"), wrist);
        let curl = ch[GRIP].clamp(0.0, 1.0) * 1.2;
        let fingers: [(&str, Vec3, f64); 5] = [
            ("thumb", [sign * 0.025, -0.03, 0.02], 0.05),
            ("index", [sign * 0.02, -0.09, 0.0], 0.08),
            ("middle", [0.0, -0.095, 0.0], 0.085),
            ("ring", [-sign * 0.02, -0.09, 0.0], 0.08),
            ("pinky", [-sign * 0.035, -0.085, 0.0], 0.06),
        ];
        for (finger, off, len) in fingers {
            let base = add(wrist, fore(off));
            let tip = add(base, fore(rot_x([0.0, -len, 0.0], -curl)));
            lm.insert(name(&format!("{finger}_base")), base);
            lm.insert(name(&format!("{finger}_tip")), tip);
        }
        lm.insert(name("hand"), lm[&name("middle_base")]);

        // leg
        let hip = add(pelvis, [sign * 0.1, -0.05, 0.0]);
        let thigh = |v: Vec3| rot_x(v, -ch[HIP[side]]);
        let knee = add(hip, thigh([0.0, -0.42, 0.0]));
        let shin = |v: Vec3| thigh(rot_x(v, ch[KNEE[side]]));
        let ankle = add(knee, shin([0.0, -0.42, 0.0]));
        lm.insert(name("hip"), hip);
        lm.insert(name("knee"), knee);
        lm.insert(name("ankle"), ankle);
        lm.insert(name("heel"), add(ankle, [0.0, -0.05, -0.05]));
        lm.insert(name("foot"), add(ankle, [0.0, -0.07, 0.12]));
        lm.insert(name("toe"), add(ankle, [0.0, -0.07, 0.18]));
    }
    lm
}

/// Resolves a joint anchor expression (`name` or `a|b|alpha`).
fn resolve_anchor(expr: &str, lm: &HashMap<String, Vec3>) -> Option<Vec3> {
    let parts: Vec<&str> = expr.split('|').map(str::trim).collect();
    match parts.as_slice() {
        [one] => lm.get(*one).copied(),
        [a, b, t] => {
            let t: f64 = t.parse().ok()?;
            Some(lerp(*lm.get(*a)?, *lm.get(*b)?, t))
        }
        _ => None,
    }
}

fn joint_positions(conv: &SkeletonConvention, lm: &HashMap<String, Vec3>, sorted_names: &[String]) -> Vec<Vec3> {
    (0..conv.joint_count)
        .map(|i| {
            conv.anchors
                .get(i)
                .and_then(|a| resolve_anchor(a, lm))
                // conventions without anchors are spread over the landmark set
                .unwrap_or_else(|| lm[&sorted_names[i * sorted_names.len() / conv.joint_count]])
        })
        .collect()
}

/// Generates `n_classes * n_per_class` records, each rendered in every
/// registered convention. Deterministic in `seed`.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec, registry: &ConventionRegistry, seed: u64) -> Vec<SequenceRecord> {
    let motions: Vec<Vec<Oscillator>> = (0..spec.n_classes).map(|c| class_motion(seed, c)).collect();
    let mut sorted_names: Vec<String> = body_landmarks(&[0.0; CHANNELS]).into_keys().collect();
    sorted_names.sort_unstable();
    let persons = spec.persons.max(1);
    let mut records = Vec::with_capacity(spec.n_classes * spec.n_per_class);
    for i in 0..spec.n_per_class {
        for (class, motion) in motions.iter().enumerate() {
            let sample_id = format!("c{class:03}_s{i:04}");
            let mut rng = derive_rng(seed, &sample_id, 0);
            let frames = rng.random_range(spec.min_frames..=spec.max_frames.max(spec.min_frames));
            let jitter: Vec<Oscillator> = motion
                .iter()
                .map(|o| Oscillator {
                    base: o.base + rng.random_range(-0.05..0.05),
                    amp: o.amp * rng.random_range(0.85..1.15),
                    freq: o.freq * rng.random_range(0.9..1.1),
                    phase: o.phase + rng.random_range(-0.3..0.3),
                })
                .collect();
            let yaw = rng.random_range(-0.3..0.3);
            let scale = rng.random_range(0.9..1.1);
            let offset = [rng.random_range(-0.5..0.5), 0.0, rng.random_range(2.5..3.5)];

            let per_frame: Vec<HashMap<String, Vec3>> = (0..frames)
                .map(|t| {
                    let secs = t as f64 / FPS;
                    let mut ch = [0.0; CHANNELS];
                    for (k, o) in jitter.iter().enumerate() {
                        ch[k] = o.at(secs);
                    }
                    let mut lm = body_landmarks(&ch);
                    for p in lm.values_mut() {
                        let r = rot_y(*p, yaw);
                        *p = [r[0] * scale + offset[0], r[1] * scale, r[2] * scale + offset[2]];
                    }
                    lm
                })
                .collect();

            let mut formats = BTreeMap::new();
            for conv in registry.iter() {
                let mut noise_rng = derive_rng(seed, &sample_id, 1 + conv.name.len() as u64 * 131 + conv.joint_count as u64);
                let normal = Normal::new(0.0, spec.observation_noise.max(0.0)).expect("finite sigma");
                let mut arr = Array4::<f32>::zeros((3, conv.joint_count, frames, persons));
                for (t, lm) in per_frame.iter().enumerate() {
                    for (v, pos) in joint_positions(conv, lm, &sorted_names).into_iter().enumerate() {
                        for c in 0..3 {
                            let noise = if spec.observation_noise > 0.0 { normal.sample(&mut noise_rng) } else { 0.0 };
                            arr[[c, v, t, 0]] = (pos[c] + noise) as f32;
                        }
                    }
                }
                formats.insert(conv.name.clone(), arr);
            }
            let split = if spec.test_every > 0 && (i + 1) % spec.test_every == 0 { "test" } else { "train" };
            records.push(SequenceRecord {
                sample_id,
                formats,
                label: class,
                split: split.to_string(),
            });
        }
    }
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    records
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cardinality_and_formats() {
        let reg = ConventionRegistry::builtin();
        let recs = generate_synthetic_dataset(&SyntheticSpec::new(3, 20), &reg, 7);
        assert_eq!(recs.len(), 60);
        for r in &recs {
            assert_eq!(r.formats.len(), 4);
            r.validate().unwrap();
            for (name, arr) in &r.formats {
                assert_eq!(arr.dim().1, reg.require(name).unwrap().joint_count);
                assert!(arr.iter().all(|x| x.is_finite()));
            }
        }
        let per_split = |s: &str| recs.iter().filter(|r| r.split == s).count();
        assert_eq!(per_split("train") + per_split("test"), 60);
    }

    #[test]
    fn train_test_split_ratio() {
        let reg = ConventionRegistry::builtin();
        let recs = generate_synthetic_dataset(&SyntheticSpec::new(3, 30), &reg, 1);
        assert_eq!(recs.iter().filter(|r| r.split == "train").count(), 60);
        assert_eq!(recs.iter().filter(|r| r.split == "test").count(), 30);
    }

    #[test]
    fn deterministic_per_seed() {
        let reg = ConventionRegistry::builtin();
        let a = generate_synthetic_dataset(&SyntheticSpec::new(2, 3), &reg, 11);
        let b = generate_synthetic_dataset(&SyntheticSpec::new(2, 3), &reg, 11);
        assert_eq!(a, b);
        let c = generate_synthetic_dataset(&SyntheticSpec::new(2, 3), &reg, 12);
        assert_ne!(a, c);
    }

    #[test]
    fn formats_depict_same_motion() {
        // kinect and smpl both anchor a joint at the pelvis landmark
        let reg = ConventionRegistry::builtin();
        let mut spec = SyntheticSpec::new(2, 1);
        spec.observation_noise = 0.0;
        let recs = generate_synthetic_dataset(&spec, &reg, 5);
        for r in &recs {
            let k = &r.formats["kinectv2"];
            let s = &r.formats["smpl"];
            for t in 0..k.dim().2 {
                for c in 0..3 {
                    assert_eq!(k[[c, 0, t, 0]], s[[c, 0, t, 0]]);
                }
            }
            // second person slot is empty
            assert!(k.slice(ndarray::s![.., .., .., 1]).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn bone_lengths_stay_rigid() {
        let reg = ConventionRegistry::builtin();
        let mut spec = SyntheticSpec::new(2, 1);
        spec.observation_noise = 0.0;
        let rec = &generate_synthetic_dataset(&spec, &reg, 3)[0];
        let k = &rec.formats["kinectv2"];
        let conv = reg.require("kinectv2").unwrap();
        let (e, w) = (conv.joint_index("elbow_left").unwrap(), conv.joint_index("wrist_left").unwrap());
        let len = |t: usize| ((0..3).map(|c| (k[[c, e, t, 0]] - k[[c, w, t, 0]]).powi(2)).sum::<f32>()).sqrt();
        let l0 = len(0);
        for t in 1..k.dim().2 {
            assert!((len(t) - l0).abs() < 1e-4);
        }
    }

    #[test]
    fn anchorless_convention_still_renders() {
        let conv = SkeletonConvention {
            name: "bare".into(),
            joint_count: 5,
            center_joint: 0,
            joint_names: (0..5).map(|i| format!("j{i}")).collect(),
            edges: (1..5).map(|i| [i - 1, i]).collect(),
            swap_map: (0..5).collect(),
            anchors: vec![],
        };
        let reg = ConventionRegistry::new().register(conv).unwrap();
        let recs = generate_synthetic_dataset(&SyntheticSpec::new(2, 2), &reg, 0);
        assert_eq!(recs[0].formats["bare"].dim().1, 5);
    }
}
