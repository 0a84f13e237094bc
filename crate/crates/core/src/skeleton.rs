//! Species skeletons: bone hierarchies, rest poses, keypoint naming and
//! forward kinematics.
//!
//! A skeleton is an ordered, topologically sorted list of bones (root first,
//! every parent index smaller than its child's). Keypoints and bones coincide:
//! the position of bone `i` is the keypoint `i`. The `soft_subset` lists the
//! bones that standard 2D detectors can see; the full bone list adds spine
//! and tail keypoints that rigged avatars need.

use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Format version of skeleton definition files.
pub const SKELETON_FORMAT_VERSION: u32 = 1;

const MACAQUE_JSON: &str = include_str!("../data/skeleton_macaque.json");
const HORSE_JSON: &str = include_str!("../data/skeleton_horse.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    Macaque,
    Horse,
}

impl Species {
    pub const ALL: [Species; 2] = [Species::Macaque, Species::Horse];

    pub fn name(self) -> &'static str {
        match self {
            Species::Macaque => "macaque",
            Species::Horse => "horse",
        }
    }
}

impl std::fmt::Display for Species {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Species {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "macaque" => Ok(Species::Macaque),
            "horse" => Ok(Species::Horse),
            other => Err(Error::Contract(format!("unknown species '{other}'"))),
        }
    }
}

/// One bone of a skeleton. The bone's tip is the keypoint it names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bone {
    pub name: String,
    /// Index of the parent bone; `None` only for the root.
    pub parent: Option<usize>,
    /// Offset from the parent joint in rest pose, unit-cube length units.
    pub rest_offset: [f64; 3],
}

impl Bone {
    pub fn rest_offset_vec(&self) -> Vector3<f64> {
        Vector3::from(self.rest_offset)
    }
}

/// A species skeleton: bones in topological order plus the soft-subset
/// index map into the full bone list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Skeleton {
    pub species: Species,
    pub bones: Vec<Bone>,
    pub soft_subset: Vec<usize>,
}

/// On-disk schema of a skeleton definition file.
#[derive(Debug, Serialize, Deserialize)]
struct SkeletonFile {
    version: u32,
    species: Species,
    bones: Vec<Bone>,
    soft_subset: Vec<usize>,
}

impl Skeleton {
    /// Number of deep keypoints (`k_d`).
    pub fn bone_count(&self) -> usize {
        self.bones.len()
    }

    /// Number of soft keypoints (`k_s`).
    pub fn soft_count(&self) -> usize {
        self.soft_subset.len()
    }

    pub fn keypoint_names(&self) -> Vec<&str> {
        self.bones.iter().map(|b| b.name.as_str()).collect()
    }

    pub fn bone_index(&self, name: &str) -> Option<usize> {
        self.bones.iter().position(|b| b.name == name)
    }

    /// Keypoint positions of the rest pose (identity rotations, unit scale,
    /// root at the origin).
    pub fn rest_pose(&self) -> Pose3D {
        forward_kinematics(self, &PoseAngles::identity(self.bone_count()))
            .expect("identity angles always match the skeleton")
    }

    /// Checks the structural invariants: topological order, nonzero bone
    /// lengths, strictly increasing unique soft-subset indices.
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.bones.is_empty(), "skeleton has no bones");
        ensure!(
            self.bones[0].parent.is_none(),
            "bone 0 must be the root (no parent)"
        );
        for (i, bone) in self.bones.iter().enumerate() {
            match bone.parent {
                None => ensure!(i == 0, "bone {i} '{}' has no parent but is not first", bone.name),
                Some(p) => {
                    ensure!(
                        p < i,
                        "bone {i} '{}' has parent {p} >= its own index",
                        bone.name
                    );
                    ensure!(
                        bone.rest_offset_vec().norm() > 0.0,
                        "bone {i} '{}' has zero-length rest offset",
                        bone.name
                    );
                }
            }
        }
        let k = self.bone_count();
        for w in self.soft_subset.windows(2) {
            ensure!(
                w[0] < w[1],
                "soft subset indices must be strictly increasing ({} before {})",
                w[0],
                w[1]
            );
        }
        if let Some(&last) = self.soft_subset.last() {
            ensure!(last < k, "soft index {last} out of range for {k} bones");
        }
        ensure!(!self.soft_subset.is_empty(), "soft subset is empty");
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Skeleton> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: SkeletonFile =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if file.version != SKELETON_FORMAT_VERSION {
            return Err(Error::Version {
                found: file.version,
                expected: SKELETON_FORMAT_VERSION,
            });
        }
        let skeleton = Skeleton {
            species: file.species,
            bones: file.bones,
            soft_subset: file.soft_subset,
        };
        skeleton.validate()?;
        Ok(skeleton)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = SkeletonFile {
            version: SKELETON_FORMAT_VERSION,
            species: self.species,
            bones: self.bones.clone(),
            soft_subset: self.soft_subset.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::format(path, e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Canonical JSON of this skeleton, as written by [`Skeleton::save`].
    pub fn to_canonical_json(&self) -> String {
        let file = SkeletonFile {
            version: SKELETON_FORMAT_VERSION,
            species: self.species,
            bones: self.bones.clone(),
            soft_subset: self.soft_subset.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("skeleton serializes");
        text.push('\n');
        text
    }
}

/// Per-bone rotations plus the root placement that position a skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseAngles {
    /// One unit quaternion per bone, in bone order.
    pub rotations: Vec<UnitQuaternion<f64>>,
    pub root_translation: Vector3<f64>,
    pub root_scale: f64,
}

impl PoseAngles {
    pub fn identity(bone_count: usize) -> Self {
        PoseAngles {
            rotations: vec![UnitQuaternion::identity(); bone_count],
            root_translation: Vector3::zeros(),
            root_scale: 1.0,
        }
    }

    /// Accepts rotation matrices at the API boundary; each is renormalized
    /// into a unit quaternion on ingest.
    pub fn from_matrices(
        matrices: &[Matrix3<f64>],
        root_translation: Vector3<f64>,
        root_scale: f64,
    ) -> Result<Self> {
        ensure!(root_scale > 0.0, "root_scale must be positive, got {root_scale}");
        let rotations = matrices
            .iter()
            .map(|m| UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix(m)))
            .collect();
        Ok(PoseAngles {
            rotations,
            root_translation,
            root_scale,
        })
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.root_scale > 0.0,
            "root_scale must be positive, got {}",
            self.root_scale
        );
        for (i, q) in self.rotations.iter().enumerate() {
            let norm = q.as_ref().norm();
            ensure!(
                (norm - 1.0).abs() < 1e-9,
                "rotation {i} is not unit (norm {norm})"
            );
        }
        Ok(())
    }
}

/// World coordinates of every deep keypoint, one row per bone.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3D {
    pub coords: Vec<Vector3<f64>>,
}

impl Pose3D {
    pub fn new(coords: Vec<Vector3<f64>>) -> Self {
        Pose3D { coords }
    }

    pub fn from_rows(rows: &[[f64; 3]]) -> Self {
        Pose3D {
            coords: rows.iter().map(|r| Vector3::from(*r)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn to_rows(&self) -> Vec<[f64; 3]> {
        self.coords.iter().map(|v| [v.x, v.y, v.z]).collect()
    }

    /// Row-major flattening, `k * 3` scalars.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.coords.len() * 3);
        for v in &self.coords {
            out.extend_from_slice(&[v.x, v.y, v.z]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.coords
            .iter()
            .all(|v| v.x.is_finite() && v.y.is_finite() && v.z.is_finite())
    }
}

/// Returns the canonical skeleton for a species, rest pose included.
pub fn species_skeleton(species: Species) -> Skeleton {
    static MACAQUE: OnceLock<Skeleton> = OnceLock::new();
    static HORSE: OnceLock<Skeleton> = OnceLock::new();
    let cached = match species {
        Species::Macaque => MACAQUE.get_or_init(|| parse_embedded(MACAQUE_JSON)),
        Species::Horse => HORSE.get_or_init(|| parse_embedded(HORSE_JSON)),
    };
    cached.clone()
}

fn parse_embedded(text: &str) -> Skeleton {
    let file: SkeletonFile = serde_json::from_str(text).expect("embedded skeleton parses");
    assert_eq!(file.version, SKELETON_FORMAT_VERSION);
    let skeleton = Skeleton {
        species: file.species,
        bones: file.bones,
        soft_subset: file.soft_subset,
    };
    skeleton.validate().expect("embedded skeleton is valid");
    skeleton
}

/// Detector-side keypoint names paired with the deep bone index they map to.
///
/// The pairing is a bijection between the external detector's keypoint set
/// and the skeleton's soft subset.
pub fn soft_correspondence(species: Species) -> Vec<(&'static str, usize)> {
    match species {
        Species::Macaque => vec![
            ("Nose", 0),
            ("Left Shoulder", 2),
            ("Right Shoulder", 3),
            ("Left Elbow", 6),
            ("Right Elbow", 7),
            ("Left Wrist", 8),
            ("Right Wrist", 9),
            ("Left Hip", 13),
            ("Right Hip", 14),
            ("Left Knee", 15),
            ("Right Knee", 16),
            ("Left Ankle", 17),
            ("Right Ankle", 18),
        ],
        Species::Horse => vec![
            ("Nose", 0),
            ("Head", 1),
            ("Mid shoulder", 4),
            ("Nearknee", 7),
            ("Nearfrontfetlock", 8),
            ("Nearfrontfoot", 9),
            ("Offknee", 12),
            ("Offfrontfetlock", 13),
            ("Offfrontfoot", 14),
            ("Ischium", 18),
            ("Nearhindhock", 21),
            ("Nearhindfetlock", 22),
            ("Nearhindfoot", 23),
            ("Offhindhock", 26),
            ("Offhindfetlock", 27),
            ("Offhindfoot", 28),
        ],
    }
}

/// Positions every keypoint from per-bone rotations.
///
/// Bone `i` sits at `parent position + scale * (accumulated rotation of the
/// chain down to and including bone i) * rest_offset(i)`; the root sits at
/// `root_translation` and its own rotation seeds the accumulation.
pub fn forward_kinematics(skeleton: &Skeleton, angles: &PoseAngles) -> Result<Pose3D> {
    let n = skeleton.bone_count();
    ensure!(
        angles.rotations.len() == n,
        "angles have {} rotations for {} bones",
        angles.rotations.len(),
        n
    );
    ensure!(
        angles.root_scale > 0.0,
        "root_scale must be positive, got {}",
        angles.root_scale
    );

    let mut accumulated: Vec<UnitQuaternion<f64>> = Vec::with_capacity(n);
    let mut coords: Vec<Vector3<f64>> = Vec::with_capacity(n);
    for (i, bone) in skeleton.bones.iter().enumerate() {
        match bone.parent {
            None => {
                accumulated.push(angles.rotations[i]);
                coords.push(angles.root_translation);
            }
            Some(p) => {
                let global = accumulated[p] * angles.rotations[i];
                let pos = coords[p] + angles.root_scale * (global * bone.rest_offset_vec());
                accumulated.push(global);
                coords.push(pos);
            }
        }
    }
    Ok(Pose3D::new(coords))
}

/// Selects the soft-subset rows of a deep pose, order preserved.
pub fn soft_projection(skeleton: &Skeleton, pose: &Pose3D) -> Result<Vec<Vector3<f64>>> {
    ensure!(
        pose.len() == skeleton.bone_count(),
        "pose has {} rows for {} bones",
        pose.len(),
        skeleton.bone_count()
    );
    Ok(skeleton
        .soft_subset
        .iter()
        .map(|&i| pose.coords[i])
        .collect())
}

/// The minimal rotation taking direction `from` to direction `to`.
///
/// Antiparallel inputs rotate half a turn about a fixed axis perpendicular
/// to `from` (the axis least aligned with it), so the result is always
/// defined and deterministic.
pub fn shortest_arc(from: &Vector3<f64>, to: &Vector3<f64>) -> UnitQuaternion<f64> {
    let from = Unit::new_normalize(*from);
    let to = Unit::new_normalize(*to);
    match UnitQuaternion::rotation_between_axis(&from, &to) {
        Some(q) => q,
        None => {
            // Antiparallel: pick the world axis least aligned with `from`.
            let abs = from.map(f64::abs);
            let pick = if abs.x <= abs.y && abs.x <= abs.z {
                Vector3::x()
            } else if abs.y <= abs.z {
                Vector3::y()
            } else {
                Vector3::z()
            };
            let axis = Unit::new_normalize(from.cross(&pick));
            UnitQuaternion::from_axis_angle(&axis, std::f64::consts::PI)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain3() -> Skeleton {
        Skeleton {
            species: Species::Macaque,
            bones: vec![
                Bone {
                    name: "a".into(),
                    parent: None,
                    rest_offset: [0.0, 0.0, 0.0],
                },
                Bone {
                    name: "b".into(),
                    parent: Some(0),
                    rest_offset: [1.0, 0.0, 0.0],
                },
                Bone {
                    name: "c".into(),
                    parent: Some(1),
                    rest_offset: [0.0, 1.0, 0.0],
                },
            ],
            soft_subset: vec![0, 1, 2],
        }
    }

    fn random_unit_quat(rng: &mut impl Rng) -> UnitQuaternion<f64> {
        let axis = Unit::new_normalize(Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        UnitQuaternion::from_axis_angle(&axis, rng.random_range(-3.0..3.0))
    }

    #[test]
    fn macaque_skeleton_counts() {
        let s = species_skeleton(Species::Macaque);
        assert_eq!(s.bone_count(), 29);
        assert_eq!(s.soft_count(), 13);
        s.validate().unwrap();
    }

    #[test]
    fn horse_skeleton_counts() {
        let s = species_skeleton(Species::Horse);
        assert_eq!(s.bone_count(), 33);
        assert_eq!(s.soft_count(), 16);
        s.validate().unwrap();
    }

    #[test]
    fn macaque_tail_end_present_but_not_soft() {
        let s = species_skeleton(Species::Macaque);
        let idx = s.bone_index("Tail End").expect("Tail End exists");
        assert!(!s.soft_subset.contains(&idx));
    }

    #[test]
    fn soft_correspondence_is_bijection_onto_subset() {
        for species in Species::ALL {
            let s = species_skeleton(species);
            let corr = soft_correspondence(species);
            assert_eq!(corr.len(), s.soft_count());
            let mut indices: Vec<usize> = corr.iter().map(|&(_, i)| i).collect();
            indices.sort_unstable();
            indices.dedup();
            assert_eq!(indices, s.soft_subset, "{species}: indices cover the subset");
            let mut names: Vec<&str> = corr.iter().map(|&(n, _)| n).collect();
            names.sort_unstable();
            names.dedup();
            assert_eq!(names.len(), corr.len(), "{species}: detector names unique");
        }
    }

    #[test]
    fn fk_identity_gives_rest_pose() {
        let s = species_skeleton(Species::Macaque);
        let pose = forward_kinematics(&s, &PoseAngles::identity(s.bone_count())).unwrap();
        // Rest positions accumulate raw offsets down each chain.
        let mut expect = vec![Vector3::zeros(); s.bone_count()];
        for (i, bone) in s.bones.iter().enumerate() {
            if let Some(p) = bone.parent {
                expect[i] = expect[p] + bone.rest_offset_vec();
            }
        }
        for (got, want) in pose.coords.iter().zip(&expect) {
            assert!((got - want).norm() < 1e-12);
        }
    }

    #[test]
    fn fk_single_bone_quarter_turn() {
        let s = Skeleton {
            species: Species::Macaque,
            bones: vec![
                Bone {
                    name: "root".into(),
                    parent: None,
                    rest_offset: [0.0, 0.0, 0.0],
                },
                Bone {
                    name: "tip".into(),
                    parent: Some(0),
                    rest_offset: [1.0, 0.0, 0.0],
                },
            ],
            soft_subset: vec![0, 1],
        };
        let mut angles = PoseAngles::identity(2);
        angles.rotations[1] =
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let pose = forward_kinematics(&s, &angles).unwrap();
        assert!((pose.coords[1] - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn fk_matches_matrix_chain_oracle() {
        // Independent evaluation: accumulate 3x3 rotation matrices down the
        // chain and apply them to offsets, never touching quaternion FK.
        let s = chain3();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let mut angles = PoseAngles::identity(3);
            for r in angles.rotations.iter_mut() {
                *r = random_unit_quat(&mut rng);
            }
            angles.root_translation =
                Vector3::new(rng.random_range(-2.0..2.0), 0.3, rng.random_range(-2.0..2.0));
            angles.root_scale = rng.random_range(0.5..2.0);

            let pose = forward_kinematics(&s, &angles).unwrap();

            let mats: Vec<Matrix3<f64>> =
                angles.rotations.iter().map(|q| q.to_rotation_matrix().into_inner()).collect();
            let mut globals: Vec<Matrix3<f64>> = Vec::new();
            let mut pos: Vec<Vector3<f64>> = Vec::new();
            for (i, bone) in s.bones.iter().enumerate() {
                match bone.parent {
                    None => {
                        globals.push(mats[i]);
                        pos.push(angles.root_translation);
                    }
                    Some(p) => {
                        let g = globals[p] * mats[i];
                        pos.push(pos[p] + angles.root_scale * (g * bone.rest_offset_vec()));
                        globals.push(g);
                    }
                }
            }
            for (got, want) in pose.coords.iter().zip(&pos) {
                assert!((got - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn fk_root_rotation_equivariance() {
        let s = species_skeleton(Species::Horse);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut angles = PoseAngles::identity(s.bone_count());
        for r in angles.rotations.iter_mut().skip(1) {
            *r = random_unit_quat(&mut rng);
        }
        let base = forward_kinematics(&s, &angles).unwrap();

        let rot = random_unit_quat(&mut rng);
        let mut rotated = angles.clone();
        rotated.rotations[0] = rot * rotated.rotations[0];
        let moved = forward_kinematics(&s, &rotated).unwrap();

        let root = base.coords[0];
        for (a, b) in base.coords.iter().zip(&moved.coords) {
            let want = root + rot * (a - root);
            assert!((b - want).norm() < 1e-9);
        }
    }

    #[test]
    fn fk_scale_about_root() {
        let s = species_skeleton(Species::Macaque);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut angles = PoseAngles::identity(s.bone_count());
        for r in angles.rotations.iter_mut() {
            *r = random_unit_quat(&mut rng);
        }
        angles.root_translation = Vector3::new(0.4, -0.2, 1.1);
        let unit = forward_kinematics(&s, &angles).unwrap();

        let mut scaled = angles.clone();
        scaled.root_scale = 3.25;
        let big = forward_kinematics(&s, &scaled).unwrap();

        let root = angles.root_translation;
        for (a, b) in unit.coords.iter().zip(&big.coords) {
            let want = root + 3.25 * (a - root);
            assert!((b - want).norm() < 1e-9);
        }
    }

    #[test]
    fn fk_rejects_length_mismatch() {
        let s = species_skeleton(Species::Macaque);
        let err = forward_kinematics(&s, &PoseAngles::identity(5)).unwrap_err();
        assert_eq!(err.code(), "contract");
    }

    #[test]
    fn soft_projection_selects_rows_in_order() {
        let s = species_skeleton(Species::Macaque);
        let pose = Pose3D::new(
            (0..s.bone_count())
                .map(|i| Vector3::new(i as f64, 2.0 * i as f64, -(i as f64)))
                .collect(),
        );
        let soft = soft_projection(&s, &pose).unwrap();
        assert_eq!(soft.len(), 13);
        for (r, &idx) in soft.iter().zip(&s.soft_subset) {
            assert_eq!(r.x, idx as f64);
        }
    }

    #[test]
    fn soft_projection_full_subset_is_identity() {
        let s = chain3();
        let pose = Pose3D::from_rows(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]]);
        let soft = soft_projection(&s, &pose).unwrap();
        assert_eq!(soft, pose.coords);
    }

    #[test]
    fn soft_projection_commutes_with_per_point_transform() {
        let s = species_skeleton(Species::Horse);
        let rest = s.rest_pose();
        let rot = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 0.7);
        let transformed = Pose3D::new(rest.coords.iter().map(|p| rot * p).collect());

        let select_then_map: Vec<_> = soft_projection(&s, &rest)
            .unwrap()
            .into_iter()
            .map(|p| rot * p)
            .collect();
        let map_then_select = soft_projection(&s, &transformed).unwrap();
        for (a, b) in select_then_map.iter().zip(&map_then_select) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn horse_rest_pose_soft_rows_match_rest_positions() {
        let s = species_skeleton(Species::Horse);
        let rest = s.rest_pose();
        let soft = soft_projection(&s, &rest).unwrap();
        assert_eq!(soft.len(), 16);
        for (row, &(_, idx)) in soft.iter().zip(&soft_correspondence(Species::Horse)) {
            assert_eq!(*row, rest.coords[idx]);
        }
    }

    #[test]
    fn bone_lengths_plausible() {
        for species in Species::ALL {
            let s = species_skeleton(species);
            for bone in s.bones.iter().skip(1) {
                let len = bone.rest_offset_vec().norm();
                assert!(
                    (0.02..=0.35).contains(&len),
                    "{species} bone '{}' length {len}",
                    bone.name
                );
            }
        }
    }

    #[test]
    fn from_matrices_normalizes_on_ingest() {
        // Slightly perturbed rotation matrix still ingests as a unit quaternion.
        let q = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.9);
        let mut m = q.to_rotation_matrix().into_inner();
        m[(0, 0)] += 1e-7;
        let angles = PoseAngles::from_matrices(&[m], Vector3::zeros(), 1.0).unwrap();
        angles.validate().unwrap();
        assert!(angles.rotations[0].angle_to(&q) < 1e-5);
    }

    #[test]
    fn shortest_arc_antiparallel_is_half_turn() {
        let a = Vector3::new(0.0, 1.0, 0.0);
        let q = shortest_arc(&a, &-a);
        assert!(((q * a) + a).norm() < 1e-12);
        assert!((q.angle() - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn skeleton_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("skel.json");
        let s = species_skeleton(Species::Macaque);
        s.save(&path).unwrap();
        let loaded = Skeleton::load(&path).unwrap();
        assert_eq!(loaded.bones.len(), s.bones.len());
        assert_eq!(loaded.soft_subset, s.soft_subset);
        assert_eq!(loaded.keypoint_names(), s.keypoint_names());
    }

    #[test]
    fn skeleton_load_rejects_bad_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("skel.json");
        let mut text = species_skeleton(Species::Horse).to_canonical_json();
        text = text.replace("\"version\": 1", "\"version\": 99");
        std::fs::write(&path, text).unwrap();
        let err = Skeleton::load(&path).unwrap_err();
        assert_eq!(err.code(), "version");
    }
}
