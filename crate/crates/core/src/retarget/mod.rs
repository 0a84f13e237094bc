//! Pose retargeting: convert a matched deep 3D pose into per-bone
//! rotations on a target skeleton via twist-free shortest-arc solving,
//! then verify by forward-kinematics reconstruction.

pub mod tone;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::lookup::LookupTable;
use crate::skeleton::{
    forward_kinematics, shortest_arc, Pose3D, PoseAngles, Skeleton,
};

/// A solved retarget: the angles, their FK reconstruction, and the
/// per-keypoint reconstruction error against the matched deep pose.
#[derive(Debug, Clone)]
pub struct RetargetResult {
    pub angles: PoseAngles,
    pub reconstructed: Pose3D,
    /// Euclidean error per keypoint, unit-cube units.
    pub residual: Vec<f64>,
    /// Table entry the lifted pose matched.
    pub matched_index: usize,
    pub matched_action: String,
}

/// Recovers per-bone rotations that reproduce `deep_pose` on `skeleton`.
///
/// Bones are traversed root-first. Each bone receives the minimal
/// (shortest-arc, twist-free) rotation taking its rest direction, expressed
/// in the parent's accumulated frame, onto the observed bone direction.
/// The global scale is the median ratio of observed to rest bone lengths;
/// antiparallel directions rotate half a turn about a fixed perpendicular
/// axis rather than failing.
pub fn solve_angles(skeleton: &Skeleton, deep_pose: &Pose3D) -> Result<PoseAngles> {
    let n = skeleton.bone_count();
    ensure!(
        deep_pose.len() == n,
        "pose has {} keypoints for {} bones",
        deep_pose.len(),
        n
    );
    ensure!(deep_pose.is_finite(), "pose contains non-finite coordinates");

    // Global scale from observed bone lengths.
    let mut ratios = Vec::with_capacity(n - 1);
    for (i, bone) in skeleton.bones.iter().enumerate().skip(1) {
        let parent = bone.parent.expect("non-root bone has a parent");
        let observed = deep_pose.coords[i] - deep_pose.coords[parent];
        let len = observed.norm();
        if len < 1e-12 {
            return Err(Error::SingularBone(bone.name.clone()));
        }
        ratios.push(len / bone.rest_offset_vec().norm());
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let root_scale = if ratios.len() % 2 == 1 {
        ratios[ratios.len() / 2]
    } else {
        0.5 * (ratios[ratios.len() / 2 - 1] + ratios[ratios.len() / 2])
    };

    let mut rotations = vec![UnitQuaternion::identity(); n];
    let mut accumulated = vec![UnitQuaternion::identity(); n];
    for (i, bone) in skeleton.bones.iter().enumerate().skip(1) {
        let parent = bone.parent.expect("non-root bone has a parent");
        let observed = (deep_pose.coords[i] - deep_pose.coords[parent]).normalize();
        let rest_local = bone.rest_offset_vec().normalize();
        // Pull the observed direction into the parent's accumulated frame.
        let target_local = accumulated[parent].inverse() * observed;
        let rotation = shortest_arc(&rest_local, &target_local);
        rotations[i] = rotation;
        accumulated[i] = accumulated[parent] * rotation;
    }

    Ok(PoseAngles {
        rotations,
        root_translation: deep_pose.coords[0],
        root_scale,
    })
}

/// Completes a lifted soft pose into a deep pose via the lookup table and
/// retargets it: nearest-neighbor match, angle solve, FK reconstruction,
/// and per-keypoint residuals against the matched pose.
pub fn retarget(
    skeleton: &Skeleton,
    lifted_soft: &[[f64; 3]],
    table: &LookupTable,
) -> Result<RetargetResult> {
    ensure!(!table.is_empty(), "retarget requires a non-empty table");
    let matched = table.query_linear(lifted_soft)?;
    retarget_matched(skeleton, &matched)
}

/// Retargets an already-matched query result; callers choose the query
/// route (linear scan or accelerated index) themselves.
pub fn retarget_matched(
    skeleton: &Skeleton,
    matched: &crate::lookup::QueryResult,
) -> Result<RetargetResult> {
    let deep = Pose3D::from_rows(&matched.deep);
    let angles = solve_angles(skeleton, &deep)?;
    let reconstructed = forward_kinematics(skeleton, &angles)?;
    let residual = reconstructed
        .coords
        .iter()
        .zip(&deep.coords)
        .map(|(a, b)| (a - b).norm())
        .collect();
    Ok(RetargetResult {
        angles,
        reconstructed,
        residual,
        matched_index: matched.index,
        matched_action: matched.action.clone(),
    })
}

/// Summary statistics over per-keypoint residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub mean: f64,
    pub max: f64,
    pub keypoints: usize,
}

impl ResidualStats {
    pub fn from_residuals(residual: &[f64]) -> Self {
        let mean = residual.iter().sum::<f64>() / residual.len().max(1) as f64;
        let max = residual.iter().cloned().fold(0.0, f64::max);
        ResidualStats {
            mean,
            max,
            keypoints: residual.len(),
        }
    }
}

/// Export record consumable by external engines: quaternions as
/// [w, x, y, z] per bone, in skeleton bone order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetargetExport {
    pub skeleton_hash: String,
    pub rotations: Vec<[f64; 4]>,
    pub root_translation: [f64; 3],
    pub root_scale: f64,
    pub residual_stats: ResidualStats,
    pub matched_index: usize,
    pub matched_action: String,
}

impl RetargetExport {
    pub fn new(result: &RetargetResult, skeleton_hash: &str) -> Self {
        RetargetExport {
            skeleton_hash: skeleton_hash.to_string(),
            rotations: result
                .angles
                .rotations
                .iter()
                .map(|q| [q.w, q.i, q.j, q.k])
                .collect(),
            root_translation: [
                result.angles.root_translation.x,
                result.angles.root_translation.y,
                result.angles.root_translation.z,
            ],
            root_scale: result.angles.root_scale,
            residual_stats: ResidualStats::from_residuals(&result.residual),
            matched_index: result.matched_index,
            matched_action: result.matched_action.clone(),
        }
    }
}

/// Random twist-free pose angles: every rotation is a shortest arc from
/// the bone's rest direction, so angle recovery is exact. Used by tests
/// and the verification suite.
pub fn random_twist_free_angles(
    skeleton: &Skeleton,
    rng: &mut impl rand::Rng,
    max_deflection: f64,
) -> PoseAngles {
    let mut rotations = vec![UnitQuaternion::identity(); skeleton.bone_count()];
    for (i, bone) in skeleton.bones.iter().enumerate().skip(1) {
        let rest = bone.rest_offset_vec().normalize();
        // Perturb the rest direction inside a cone and take the shortest arc.
        let jitter = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let axis = rest.cross(&jitter);
        if axis.norm() < 1e-9 {
            continue;
        }
        let angle = rng.random_range(0.0..max_deflection);
        let target = nalgebra::UnitQuaternion::from_axis_angle(
            &nalgebra::Unit::new_normalize(axis),
            angle,
        ) * rest;
        rotations[i] = shortest_arc(&rest, &target);
    }
    PoseAngles {
        rotations,
        root_translation: Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ),
        root_scale: rng.random_range(0.5..2.0),
    }
}
