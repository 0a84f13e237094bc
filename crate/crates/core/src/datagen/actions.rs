//! Procedural action sequences.
//!
//! Each action is a named set of per-bone rotation curves: a static base
//! posture that makes the action recognizable plus cyclic oscillators
//! (gait swings, sway, bobbing). Curves are keyframed at authoring time
//! and sampled with spherical interpolation, wrapping cyclically.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{UnitQuaternion, Vector3};

use crate::datagen::axis_angle;
use crate::error::{ensure, Result};
use crate::skeleton::{Skeleton, Species};

/// A cyclic per-bone rotation track, keyed on normalized cycle time.
#[derive(Debug, Clone)]
pub struct RotationCurve {
    /// (cycle position in [0,1), rotation), sorted by position, nonempty.
    keys: Vec<(f64, UnitQuaternion<f64>)>,
}

impl RotationCurve {
    pub fn constant(q: UnitQuaternion<f64>) -> Self {
        RotationCurve { keys: vec![(0.0, q)] }
    }

    pub fn from_keys(keys: Vec<(f64, UnitQuaternion<f64>)>) -> Self {
        debug_assert!(!keys.is_empty());
        debug_assert!(keys.windows(2).all(|w| w[0].0 < w[1].0));
        RotationCurve { keys }
    }

    /// Samples the curve at cycle position `u` in [0,1), slerping between
    /// the surrounding keys and wrapping the final segment to the first key.
    pub fn sample(&self, u: f64) -> UnitQuaternion<f64> {
        let n = self.keys.len();
        if n == 1 {
            return self.keys[0].1;
        }
        let idx = match self
            .keys
            .binary_search_by(|k| k.0.partial_cmp(&u).unwrap())
        {
            Ok(i) => i,
            Err(0) => n - 1, // u before the first key wraps to the last segment
            Err(i) => i - 1,
        };
        let (u0, q0) = self.keys[idx];
        let (u1, q1, span) = if idx + 1 < n {
            let (u1, q1) = self.keys[idx + 1];
            (u1, q1, u1 - u0)
        } else {
            let (u1, q1) = self.keys[0];
            (u1 + 1.0, q1, self.keys[0].0 + 1.0 - u0)
        };
        let _ = u1;
        let mut s = (u - u0) / span;
        if s < 0.0 {
            s += 1.0 / span; // wrapped lookup from before the first key
        }
        let q = q0.try_slerp(&q1, s.clamp(0.0, 1.0), 1e-12).unwrap_or(q0);
        UnitQuaternion::new_normalize(q.into_inner())
    }
}

/// A named animation: one rotation curve per bone plus a duration.
#[derive(Debug, Clone)]
pub struct ActionSequence {
    pub name: String,
    /// Cycle length in seconds.
    pub duration: f64,
    /// One curve per bone, in skeleton bone order.
    pub channels: Vec<RotationCurve>,
}

impl ActionSequence {
    pub fn validate(&self, bone_count: usize) -> Result<()> {
        ensure!(self.duration > 0.0, "action '{}' has non-positive duration", self.name);
        ensure!(
            self.channels.len() == bone_count,
            "action '{}' has {} channels for {} bones",
            self.name,
            self.channels.len(),
            bone_count
        );
        Ok(())
    }

    /// Per-bone rotations at absolute time `t_sec`, looping cyclically.
    pub fn pose_at(&self, t_sec: f64) -> Vec<UnitQuaternion<f64>> {
        let u = (t_sec / self.duration).rem_euclid(1.0);
        self.channels.iter().map(|c| c.sample(u)).collect()
    }
}

/// Canonical action names per species, in catalog order.
pub fn canonical_action_names(species: Species) -> &'static [&'static str] {
    match species {
        Species::Macaque => &[
            "Attack",
            "Climb Down",
            "Climb Right",
            "Climb Up",
            "Climb Left",
            "Hit Left",
            "Hit Right",
            "Idle",
            "Jump Forward",
            "Jump Inplace",
            "Jump Run",
            "Run",
            "Sitting",
            "Turn Left",
            "Turn Right",
            "Walk",
        ],
        Species::Horse => &[
            "Attack",
            "Buck",
            "Death",
            "Eat",
            "Falling",
            "Gallop",
            "Idle",
            "Jump",
            "Jump Run",
            "Sleep",
            "Swim",
            "Walk",
        ],
    }
}

fn pitch(a: f64) -> UnitQuaternion<f64> {
    axis_angle(Vector3::x(), a)
}

fn yaw(a: f64) -> UnitQuaternion<f64> {
    axis_angle(Vector3::y(), a)
}

fn roll(a: f64) -> UnitQuaternion<f64> {
    axis_angle(Vector3::z(), a)
}

fn ident() -> UnitQuaternion<f64> {
    UnitQuaternion::identity()
}

/// One smooth pulse per cycle, zero at the cycle boundary.
fn bump(u: f64) -> f64 {
    let s = (PI * u).sin();
    s * s
}

const KEYS_PER_CYCLE: usize = 24;

/// Samples a motion closure into keyframed curves for every bone.
fn build(
    skeleton: &Skeleton,
    name: &str,
    duration: f64,
    motion: impl Fn(&str, f64) -> UnitQuaternion<f64>,
) -> ActionSequence {
    let channels = skeleton
        .bones
        .iter()
        .map(|bone| {
            let keys: Vec<(f64, UnitQuaternion<f64>)> = (0..KEYS_PER_CYCLE)
                .map(|i| {
                    let u = i as f64 / KEYS_PER_CYCLE as f64;
                    (u, motion(&bone.name, u))
                })
                .collect();
            RotationCurve::from_keys(keys)
        })
        .collect();
    ActionSequence {
        name: name.to_string(),
        duration,
        channels,
    }
}

/// The canonical procedural animation set for a skeleton's species.
pub fn action_catalog(skeleton: &Skeleton) -> Vec<ActionSequence> {
    match skeleton.species {
        Species::Macaque => macaque_catalog(skeleton),
        Species::Horse => horse_catalog(skeleton),
    }
}

fn macaque_tail_depth(name: &str) -> Option<f64> {
    let order = [
        "Tail Top",
        "Tail Upper",
        "Tail Upper Middle",
        "Tail Middle",
        "Tail Lower Middle",
        "Tail Lower",
        "Tail End",
    ];
    order.iter().position(|&n| n == name).map(|i| i as f64)
}

/// Quadruped trot cycle utility for the macaque rig: diagonal limb pairs in
/// phase, flexion trailing the swing by a quarter cycle, spine bounce at
/// twice the stride frequency.
fn macaque_gait(name: &str, u: f64, amp: f64, freq: f64, crouch: f64) -> UnitQuaternion<f64> {
    let w = TAU * freq * u;
    match name {
        "Left Humerus" => pitch(amp * w.sin() - 0.3 * crouch),
        "Right Humerus" => pitch(amp * (w + PI).sin() - 0.3 * crouch),
        "Left Forearm" => pitch(0.6 * amp * (w - FRAC_PI_2).sin() + 0.8 * crouch),
        "Right Forearm" => pitch(0.6 * amp * (w + PI - FRAC_PI_2).sin() + 0.8 * crouch),
        "Left Hand" => pitch(0.25 * amp * (w + FRAC_PI_2).sin()),
        "Right Hand" => pitch(0.25 * amp * (w + PI + FRAC_PI_2).sin()),
        "Left Thigh" => pitch(amp * (w + PI).sin() - 0.5 * crouch),
        "Right Thigh" => pitch(amp * w.sin() - 0.5 * crouch),
        "Left Knee" => pitch(0.6 * amp * (w + PI - FRAC_PI_2).sin() + crouch),
        "Right Knee" => pitch(0.6 * amp * (w - FRAC_PI_2).sin() + crouch),
        "Left Ankle" => pitch(0.3 * amp * (w + PI).sin() - 0.4 * crouch),
        "Right Ankle" => pitch(0.3 * amp * w.sin() - 0.4 * crouch),
        "Left Foot" => pitch(0.2 * amp * (w + PI + FRAC_PI_2).sin()),
        "Right Foot" => pitch(0.2 * amp * (w + FRAC_PI_2).sin()),
        "Spine Top" | "Spine Middle" | "Spine Bottom" => pitch(0.08 * amp * (2.0 * w).sin()),
        "Neck" => pitch(0.08 * (2.0 * w).sin()),
        t => match macaque_tail_depth(t) {
            Some(d) => yaw(0.22 * (w - 0.8 * d).sin()) * pitch(0.08 * (w - 0.8 * d).cos()),
            None => ident(),
        },
    }
}

fn macaque_catalog(s: &Skeleton) -> Vec<ActionSequence> {
    let mut out = Vec::new();

    out.push(build(s, "Attack", 6.0, |n, u| {
        let base = match n {
            "Nose" => pitch(-0.9),
            "Left Humerus" | "Right Humerus" => pitch(1.1),
            "Left Forearm" | "Right Forearm" => pitch(0.5),
            "Neck" => pitch(-0.35),
            "Spine Top" => pitch(-0.2),
            _ => ident(),
        };
        let strike = match n {
            "Left Humerus" => pitch(0.55 * (TAU * u).sin()),
            "Right Humerus" => pitch(0.55 * (TAU * u + PI).sin()),
            "Nose" => pitch(0.22 * bump(u)),
            _ => ident(),
        };
        base * strike * macaque_gait(n, u, 0.12, 1.0, 0.2)
    }));

    out.push(build(s, "Climb Down", 5.0, |n, u| {
        let base = match n {
            "Nose" => pitch(1.25),
            _ => ident(),
        };
        base * macaque_gait(n, u, 0.5, 2.0, 0.45)
    }));

    out.push(build(s, "Climb Right", 5.0, |n, u| {
        let base = match n {
            "Nose" => roll(-1.05) * yaw(0.4),
            _ => ident(),
        };
        base * macaque_gait(n, u, 0.5, 2.0, 0.45)
    }));

    out.push(build(s, "Climb Up", 5.0, |n, u| {
        let base = match n {
            "Nose" => pitch(-1.25),
            _ => ident(),
        };
        base * macaque_gait(n, u, 0.5, 2.0, 0.45)
    }));

    out.push(build(s, "Climb Left", 5.0, |n, u| {
        let base = match n {
            "Nose" => roll(1.05) * yaw(-0.4),
            _ => ident(),
        };
        base * macaque_gait(n, u, 0.5, 2.0, 0.45)
    }));

    out.push(build(s, "Hit Left", 3.0, |n, u| {
        let base = match n {
            "Nose" => yaw(0.2),
            "Right Humerus" => pitch(0.3),
            _ => ident(),
        };
        let swing = match n {
            "Left Humerus" => pitch(1.35 * bump(u)) * yaw(0.4 * bump(u)),
            "Left Forearm" => pitch(0.8 * bump(u)),
            "Spine Top" => yaw(0.25 * (TAU * u).sin()),
            _ => ident(),
        };
        base * swing * macaque_gait(n, u, 0.06, 1.0, 0.25)
    }));

    out.push(build(s, "Hit Right", 6.0, |n, u| {
        let base = match n {
            "Nose" => yaw(-0.2),
            "Left Humerus" => pitch(0.3),
            _ => ident(),
        };
        let swing = match n {
            "Right Humerus" => pitch(1.35 * bump(u)) * yaw(-0.4 * bump(u)),
            "Right Forearm" => pitch(0.8 * bump(u)),
            "Spine Top" => yaw(-0.25 * (TAU * u).sin()),
            _ => ident(),
        };
        base * swing * macaque_gait(n, u, 0.06, 1.0, 0.25)
    }));

    out.push(build(s, "Idle", 8.0, |n, u| {
        let sway = match n {
            "Neck" => yaw(0.12 * (TAU * u).sin()) * pitch(0.05 * (2.0 * TAU * u).sin()),
            "Spine Middle" => roll(0.04 * (TAU * u).sin()),
            _ => ident(),
        };
        sway * macaque_gait(n, u, 0.04, 1.0, 0.15)
    }));

    out.push(build(s, "Jump Forward", 4.0, |n, u| {
        let base = match n {
            "Nose" => pitch(-0.35),
            "Left Thigh" | "Right Thigh" => pitch(-0.6),
            "Left Knee" | "Right Knee" => pitch(1.0),
            "Left Humerus" | "Right Humerus" => pitch(0.7),
            _ => ident(),
        };
        let arc = match n {
            "Nose" => pitch(0.5 * (TAU * u).sin()),
            "Left Thigh" | "Right Thigh" => pitch(0.7 * bump(u)),
            "Left Knee" | "Right Knee" => pitch(-0.8 * bump(u)),
            _ => ident(),
        };
        base * arc * macaque_gait(n, u, 0.05, 1.0, 0.1)
    }));

    out.push(build(s, "Jump Inplace", 8.0, |n, u| {
        let base = match n {
            "Left Thigh" | "Right Thigh" => pitch(-1.05),
            "Left Knee" | "Right Knee" => pitch(1.4),
            "Left Humerus" | "Right Humerus" => pitch(-0.7),
            "Left Forearm" | "Right Forearm" => pitch(1.0),
            "Spine Top" | "Spine Middle" | "Spine Bottom" => pitch(0.28),
            _ => ident(),
        };
        let hop = match n {
            "Left Thigh" | "Right Thigh" => pitch(0.5 * bump(u)),
            "Left Knee" | "Right Knee" => pitch(-0.7 * bump(u)),
            "Spine Middle" => pitch(-0.15 * bump(u)),
            _ => ident(),
        };
        base * hop
    }));

    out.push(build(s, "Jump Run", 4.0, |n, u| {
        let base = match n {
            "Nose" => pitch(-0.2),
            "Left Humerus" | "Right Humerus" => pitch(-0.85),
            "Left Thigh" | "Right Thigh" => pitch(0.8),
            "Spine Top" | "Spine Middle" | "Spine Bottom" => pitch(-0.14),
            _ => ident(),
        };
        base * macaque_gait(n, u, 0.75, 1.5, 0.0)
    }));

    out.push(build(s, "Run", 5.0, |n, u| {
        let base = match n {
            "Nose" => pitch(0.12),
            _ => ident(),
        };
        base * macaque_gait(n, u, 0.8, 2.0, 0.3)
    }));

    out.push(build(s, "Sitting", 8.0, |n, u| {
        let base = match n {
            "Nose" => pitch(-1.35),
            "Left Thigh" | "Right Thigh" => pitch(1.3),
            "Left Knee" | "Right Knee" => pitch(1.5),
            "Left Humerus" | "Right Humerus" => pitch(0.9),
            "Left Forearm" | "Right Forearm" => pitch(0.4),
            "Neck" => pitch(0.5),
            _ => ident(),
        };
        let sway = match n {
            "Spine Middle" => roll(0.05 * (TAU * u).sin()),
            "Neck" => yaw(0.08 * (TAU * u).cos()),
            _ => ident(),
        };
        base * sway
    }));

    out.push(build(s, "Turn Left", 4.0, |n, u| {
        let turn = match n {
            "Nose" => yaw(1.6 * u),
            _ => ident(),
        };
        turn * macaque_gait(n, u, 0.3, 2.0, 0.2)
    }));

    out.push(build(s, "Turn Right", 8.0, |n, u| {
        let turn = match n {
            "Nose" => yaw(-1.6 * u),
            _ => ident(),
        };
        turn * macaque_gait(n, u, 0.3, 4.0, 0.2)
    }));

    out.push(build(s, "Walk", 9.0, |n, u| {
        macaque_gait(n, u, 0.45, 2.0, 0.1)
    }));

    debug_assert_eq!(
        out.iter().map(|a| a.name.as_str()).collect::<Vec<_>>(),
        canonical_action_names(Species::Macaque)
    );
    out
}

fn horse_tail_depth(name: &str) -> Option<f64> {
    ["Tail Top", "Tail Middle", "Tail Low", "Tail End"]
        .iter()
        .position(|&n| n == name)
        .map(|i| i as f64)
}

/// Four-beat limb cycle for the horse rig; `phases` fixes the relative
/// timing of (near fore, off fore, near hind, off hind).
fn horse_gait(
    name: &str,
    u: f64,
    amp: f64,
    freq: f64,
    phases: (f64, f64, f64, f64),
) -> UnitQuaternion<f64> {
    let w = TAU * freq * u;
    let (nf, of, nh, oh) = phases;
    match name {
        "Right Upperarm" => pitch(amp * (w + nf).sin()),
        "Left Upperarm" => pitch(amp * (w + of).sin()),
        "Right Forearm" => pitch(0.55 * amp * (w + nf - FRAC_PI_2).sin() + 0.1),
        "Left Forearm" => pitch(0.55 * amp * (w + of - FRAC_PI_2).sin() + 0.1),
        "Right Foreankle" => pitch(0.4 * amp * (w + nf + FRAC_PI_2).sin()),
        "Left Foreankle" => pitch(0.4 * amp * (w + of + FRAC_PI_2).sin()),
        "Right Thigh" => pitch(amp * (w + nh).sin()),
        "Left Thigh" => pitch(amp * (w + oh).sin()),
        "Right Calf" => pitch(0.55 * amp * (w + nh - FRAC_PI_2).sin() - 0.1),
        "Left Calf" => pitch(0.55 * amp * (w + oh - FRAC_PI_2).sin() - 0.1),
        "Right Backarm" => pitch(0.4 * amp * (w + nh + FRAC_PI_2).sin()),
        "Left Backarm" => pitch(0.4 * amp * (w + oh + FRAC_PI_2).sin()),
        "Spine Middle" | "Spine Top" => pitch(0.06 * amp * (2.0 * w).sin()),
        "Head" => pitch(0.06 * (2.0 * w).sin()),
        t => match horse_tail_depth(t) {
            Some(d) => yaw(0.2 * (w - 0.9 * d).sin()),
            None => ident(),
        },
    }
}

const TROT: (f64, f64, f64, f64) = (0.0, PI, PI, 0.0);
const WALK4: (f64, f64, f64, f64) = (0.0, PI, FRAC_PI_2, PI + FRAC_PI_2);

fn horse_catalog(s: &Skeleton) -> Vec<ActionSequence> {
    let mut out = Vec::new();

    out.push(build(s, "Attack", 5.0, |n, u| {
        let base = match n {
            "Nose" => pitch(-1.1),
            "Right Upperarm" | "Left Upperarm" => pitch(1.0),
            "Right Forearm" | "Left Forearm" => pitch(0.7),
            _ => ident(),
        };
        let strike = match n {
            "Right Upperarm" => pitch(0.5 * (2.0 * TAU * u).sin()),
            "Left Upperarm" => pitch(0.5 * (2.0 * TAU * u + PI).sin()),
            _ => ident(),
        };
        base * strike
    }));

    out.push(build(s, "Buck", 4.0, |n, u| {
        let base = match n {
            "Nose" => pitch(0.7),
            "Head" | "Neck Top" => pitch(0.25),
            _ => ident(),
        };
        let kick = match n {
            "Right Thigh" | "Left Thigh" => pitch(1.15 * bump(u)),
            "Right Calf" | "Left Calf" => pitch(-0.6 * bump(u)),
            "Right Backarm" | "Left Backarm" => pitch(-0.5 * bump(u)),
            _ => ident(),
        };
        base * kick * horse_gait(n, u, 0.08, 1.0, TROT)
    }));

    out.push(build(s, "Death", 4.0, |n, u| {
        let base = match n {
            "Nose" => roll(1.5),
            "Right Upperarm" | "Left Upperarm" | "Right Thigh" | "Left Thigh" => pitch(0.35),
            "Right Forearm" | "Left Forearm" | "Right Calf" | "Left Calf" => pitch(0.25),
            "Head" => pitch(-0.2),
            _ => ident(),
        };
        let twitch = match n {
            "Right Forearm" | "Left Calf" => pitch(0.05 * (3.0 * TAU * u).sin()),
            _ => ident(),
        };
        base * twitch
    }));

    out.push(build(s, "Eat", 8.0, |n, u| {
        let base = match n {
            "Head" => pitch(-0.55),
            "Neck Top" => pitch(-0.45),
            "Neck Middle" => pitch(-0.35),
            "Neck Low" => pitch(-0.2),
            _ => ident(),
        };
        let chew = match n {
            "Head" => pitch(0.07 * (4.0 * TAU * u).sin()),
            _ => ident(),
        };
        base * chew * horse_gait(n, u, 0.04, 1.0, WALK4)
    }));

    out.push(build(s, "Falling", 3.0, |n, u| {
        let base = match n {
            "Nose" => pitch(-0.8) * roll(0.45),
            "Spine Top" | "Spine Middle" => pitch(0.2),
            _ => ident(),
        };
        base * horse_gait(n, u, 0.65, 2.0, (0.0, 2.0, 4.0, 1.0))
    }));

    out.push(build(s, "Gallop", 6.0, |n, u| {
        let base = match n {
            "Head" | "Neck Top" => pitch(-0.18),
            _ => ident(),
        };
        base * horse_gait(n, u, 0.85, 2.0, (0.0, 0.7, PI, PI + 0.7))
    }));

    out.push(build(s, "Idle", 9.0, |n, u| {
        let sway = match n {
            "Head" => yaw(0.12 * (TAU * u).sin()),
            "Neck Middle" => pitch(0.04 * (TAU * u).cos()),
            _ => ident(),
        };
        sway * horse_gait(n, u, 0.03, 1.0, WALK4)
    }));

    out.push(build(s, "Jump", 4.0, |n, u| {
        let base = match n {
            "Nose" => pitch(-0.4),
            "Right Upperarm" | "Left Upperarm" => pitch(0.95),
            "Right Forearm" | "Left Forearm" => pitch(1.1),
            "Right Thigh" | "Left Thigh" => pitch(0.65),
            "Spine Middle" => pitch(-0.12),
            _ => ident(),
        };
        let arc = match n {
            "Nose" => pitch(0.45 * (TAU * u).sin()),
            _ => ident(),
        };
        base * arc
    }));

    out.push(build(s, "Jump Run", 5.0, |n, u| {
        let base = match n {
            "Nose" => pitch(-0.15),
            "Right Upperarm" | "Left Upperarm" => pitch(-0.5),
            "Right Thigh" | "Left Thigh" => pitch(0.5),
            _ => ident(),
        };
        base * horse_gait(n, u, 1.0, 1.5, (0.0, 0.6, PI, PI + 0.6))
    }));

    out.push(build(s, "Sleep", 9.0, |n, u| {
        let base = match n {
            "Nose" => roll(-1.4),
            "Head" | "Neck Top" | "Neck Middle" => pitch(0.3),
            "Right Upperarm" | "Left Upperarm" | "Right Thigh" | "Left Thigh" => pitch(0.8),
            "Right Forearm" | "Left Forearm" | "Right Calf" | "Left Calf" => pitch(0.9),
            _ => ident(),
        };
        let breathe = match n {
            "Spine Middle" => pitch(0.03 * (TAU * u).sin()),
            _ => ident(),
        };
        base * breathe
    }));

    out.push(build(s, "Swim", 7.0, |n, u| {
        let base = match n {
            "Nose" => pitch(0.28),
            "Head" | "Neck Top" => pitch(-0.3),
            t if horse_tail_depth(t).is_some() => pitch(0.3),
            _ => ident(),
        };
        base * horse_gait(n, u, 0.55, 2.5, (0.0, FRAC_PI_2, PI, PI + FRAC_PI_2))
    }));

    out.push(build(s, "Walk", 9.0, |n, u| {
        horse_gait(n, u, 0.5, 2.0, WALK4)
    }));

    debug_assert_eq!(
        out.iter().map(|a| a.name.as_str()).collect::<Vec<_>>(),
        canonical_action_names(Species::Horse)
    );
    out
}
