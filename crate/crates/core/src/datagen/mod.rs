//! Synthetic dataset generation: animate a skeleton through action
//! sequences, orbit a camera around it, project keypoints to 2D, and
//! normalize both the 2D soft keypoints and the 3D deep pose.

pub mod actions;

use nalgebra::{Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::skeleton::{forward_kinematics, Pose3D, PoseAngles, Skeleton, Species};
pub use actions::{action_catalog, canonical_action_names, ActionSequence, RotationCurve};

/// A pinhole camera looking at the subject origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub position: Vector3<f64>,
    pub target: Vector3<f64>,
    /// Vertical field of view, radians.
    pub fov_y: f64,
    /// (width, height) in pixels.
    pub image_size: (u32, u32),
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (self.position - self.target).norm() > 0.0,
            "camera position equals target"
        );
        ensure!(
            self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI,
            "fov_y {} out of (0, pi)",
            self.fov_y
        );
        ensure!(
            self.image_size.0 > 0 && self.image_size.1 > 0,
            "image size must be positive"
        );
        Ok(())
    }

    /// Orthonormal look-at basis (right, up, forward), y-up world.
    fn basis(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let forward = (self.target - self.position).normalize();
        let mut world_up = Vector3::y();
        if forward.cross(&world_up).norm() < 1e-9 {
            world_up = Vector3::z();
        }
        let right = world_up.cross(&forward).normalize();
        let up = forward.cross(&right);
        (right, up, forward)
    }

    /// Focal length in pixels derived from `fov_y` and the image height.
    pub fn focal_px(&self) -> f64 {
        0.5 * self.image_size.1 as f64 / (0.5 * self.fov_y).tan()
    }
}

/// Serializable camera snapshot stored with each dataset record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraMeta {
    pub position: [f64; 3],
    pub target: [f64; 3],
    pub fov_y: f64,
    pub image_size: [u32; 2],
}

impl From<&Camera> for CameraMeta {
    fn from(c: &Camera) -> Self {
        CameraMeta {
            position: [c.position.x, c.position.y, c.position.z],
            target: [c.target.x, c.target.y, c.target.z],
            fov_y: c.fov_y,
            image_size: [c.image_size.0, c.image_size.1],
        }
    }
}

impl From<&CameraMeta> for Camera {
    fn from(m: &CameraMeta) -> Self {
        Camera {
            position: Vector3::from(m.position),
            target: Vector3::from(m.target),
            fov_y: m.fov_y,
            image_size: (m.image_size[0], m.image_size[1]),
        }
    }
}

/// Camera orbit parameters: a spherical spiral around the subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitConfig {
    pub radius_range: (f64, f64),
    /// Elevation above the horizontal plane, radians.
    pub elevation_range: (f64, f64),
    /// Full azimuth revolutions over one action capture.
    pub revolutions: f64,
}

/// Generation parameters for one dataset run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    /// Animation sampling rate, frames per second.
    pub fps: f64,
    /// Total records to emit across all actions.
    pub target_count: usize,
    /// Uniform subject scale range applied per frame.
    pub scale_range: (f64, f64),
    pub orbit: OrbitConfig,
    /// Rendered image size in pixels (width, height).
    pub image_size: (u32, u32),
}

impl GenConfig {
    /// Defaults for a species: 8000 macaque records, 6000 horse records,
    /// 10 fps sampling.
    pub fn for_species(species: Species) -> Self {
        GenConfig {
            seed: 0,
            fps: 10.0,
            target_count: match species {
                Species::Macaque => 8000,
                Species::Horse => 6000,
            },
            scale_range: (0.8, 1.2),
            orbit: OrbitConfig {
                radius_range: (4.0, 6.0),
                elevation_range: (-0.35, 0.75),
                revolutions: 1.0,
            },
            image_size: (1280, 720),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.fps > 0.0, "fps must be positive");
        ensure!(self.target_count > 0, "target_count must be positive");
        ensure!(
            self.scale_range.0 > 0.0 && self.scale_range.1 >= self.scale_range.0,
            "scale_range must be positive and ordered"
        );
        ensure!(
            self.orbit.radius_range.0 > 0.0
                && self.orbit.radius_range.1 >= self.orbit.radius_range.0,
            "radius_range must be positive and ordered"
        );
        ensure!(
            self.orbit.elevation_range.0 <= self.orbit.elevation_range.1
                && self.orbit.elevation_range.0 > -std::f64::consts::FRAC_PI_2
                && self.orbit.elevation_range.1 < std::f64::consts::FRAC_PI_2,
            "elevation_range must stay inside (-pi/2, pi/2)"
        );
        ensure!(
            self.image_size.0 >= self.image_size.1 && self.image_size.1 > 0,
            "image must be landscape or square so the vertical fov is binding"
        );
        Ok(())
    }
}

/// One synthesized frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: u64,
    pub species: Species,
    pub action: String,
    pub frame_index: u32,
    /// Soft keypoints, normalized to [0,1] with aspect preserved.
    pub k2d_norm: Vec<[f64; 2]>,
    /// Deep keypoints, normalized into the unit cube.
    pub k3d_norm: Vec<[f64; 3]>,
    pub camera: CameraMeta,
    pub subject_scale: f64,
}

impl DatasetRecord {
    /// Range checks on the normalized coordinates; the dataset lint pass.
    pub fn validate(&self) -> Result<()> {
        const TOL: f64 = 1e-9;
        ensure!(!self.k2d_norm.is_empty(), "record {} has no 2D keypoints", self.id);
        ensure!(!self.k3d_norm.is_empty(), "record {} has no 3D keypoints", self.id);
        let mut max2 = f64::NEG_INFINITY;
        let mut min2 = f64::INFINITY;
        for p in &self.k2d_norm {
            for &c in p {
                ensure!(
                    (-TOL..=1.0 + TOL).contains(&c),
                    "record {}: 2D coordinate {c} outside [0,1]",
                    self.id
                );
                max2 = max2.max(c);
                min2 = min2.min(c);
            }
        }
        ensure!(
            (max2 - 1.0).abs() <= TOL && min2.abs() <= TOL,
            "record {}: dominant 2D axis does not span [0,1]",
            self.id
        );
        for p in &self.k3d_norm {
            for &c in p {
                ensure!(
                    (-TOL..=1.0 + TOL).contains(&c),
                    "record {}: 3D coordinate {c} outside [0,1]",
                    self.id
                );
            }
        }
        Ok(())
    }
}

/// Margin applied when fitting the field of view around the subject.
const FOV_MARGIN: f64 = 1.1;

/// Per-frame RNG stream keyed by (seed, action, frame) so generation order
/// and parallelism never change the output.
pub fn frame_rng(seed: u64, action_index: usize, frame_index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(action_index as u64).to_le_bytes());
    key[16..24].copy_from_slice(&frame_index.to_le_bytes());
    key[24..32].copy_from_slice(b"posedata");
    ChaCha8Rng::from_seed(key)
}

/// Places the camera on a spherical spiral at normalized trajectory time
/// `t`, always facing the origin, with the field of view fitted so a
/// subject inside `subject_radius` of the origin stays fully visible.
///
/// Elevation and radius are drawn from the configured ranges using the
/// frame's RNG stream; azimuth advances linearly with `t`.
pub fn orbit_camera(
    config: &GenConfig,
    t: f64,
    rng: &mut impl Rng,
    subject_radius: f64,
) -> Result<Camera> {
    ensure!((0.0..=1.0).contains(&t), "t {t} outside [0,1]");
    ensure!(subject_radius > 0.0, "subject_radius must be positive");
    let azimuth = 2.0 * std::f64::consts::PI * config.orbit.revolutions * t;
    let elevation = rng.random_range(config.orbit.elevation_range.0..=config.orbit.elevation_range.1);
    let radius = rng.random_range(config.orbit.radius_range.0..=config.orbit.radius_range.1);

    let position = radius
        * Vector3::new(
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
            elevation.cos() * azimuth.cos(),
        );
    // Angular radius of the subject's bounding sphere, with margin.
    let ratio = (FOV_MARGIN * subject_radius / radius).min(0.999);
    let fov_y = 2.0 * ratio.asin();
    let camera = Camera {
        position,
        target: Vector3::zeros(),
        fov_y,
        image_size: config.image_size,
    };
    camera.validate()?;
    Ok(camera)
}

/// Standard pinhole projection of every pose keypoint into pixel space.
///
/// Points are transformed into the camera's look-at frame, then mapped as
/// `u = f * x/z + cx`, `v = f * y/z + cy` with the focal length derived
/// from the vertical field of view and image height.
pub fn project(camera: &Camera, pose: &Pose3D) -> Result<Vec<[f64; 2]>> {
    camera.validate()?;
    let (right, up, forward) = camera.basis();
    let f = camera.focal_px();
    let cx = 0.5 * camera.image_size.0 as f64;
    let cy = 0.5 * camera.image_size.1 as f64;

    let mut out = Vec::with_capacity(pose.len());
    for (i, p) in pose.coords.iter().enumerate() {
        let d = p - camera.position;
        let z = d.dot(&forward);
        if z <= 1e-9 {
            return Err(Error::DegenerateProjection { index: i, depth: z });
        }
        let x = d.dot(&right);
        let y = d.dot(&up);
        out.push([f * x / z + cx, f * y / z + cy]);
    }
    Ok(out)
}

/// Normalizes 2D points into [0,1]: per-axis minimum subtracted, both axes
/// divided by the single larger extent so aspect ratio is preserved and the
/// dominant axis spans exactly [0,1].
pub fn normalize2d(raw: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    ensure!(raw.len() >= 2, "need at least 2 points, got {}", raw.len());
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in raw {
        for a in 0..2 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    let extent = (max[0] - min[0]).max(max[1] - min[1]);
    if extent <= 0.0 || !extent.is_finite() {
        return Err(Error::DegenerateExtent);
    }
    Ok(raw
        .iter()
        .map(|p| [(p[0] - min[0]) / extent, (p[1] - min[1]) / extent])
        .collect())
}

/// Normalizes a 3D pose into the unit cube: per-axis minimum subtracted,
/// all axes divided by the largest per-axis extent (uniform scale).
pub fn normalize3d(pose: &Pose3D) -> Result<Vec<[f64; 3]>> {
    ensure!(!pose.is_empty(), "empty pose");
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for p in &pose.coords {
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    let extent = (max[0] - min[0]).max(max[1] - min[1]).max(max[2] - min[2]);
    if extent <= 0.0 || !extent.is_finite() {
        return Err(Error::DegenerateExtent);
    }
    Ok(pose
        .coords
        .iter()
        .map(|p| {
            [
                (p.x - min[0]) / extent,
                (p.y - min[1]) / extent,
                (p.z - min[2]) / extent,
            ]
        })
        .collect())
}

/// Splits `total` across actions proportionally to duration, summing to
/// `total` exactly (largest-remainder apportionment).
fn apportion(total: usize, durations: &[f64]) -> Vec<usize> {
    let sum: f64 = durations.iter().sum();
    let shares: Vec<f64> = durations.iter().map(|d| total as f64 * d / sum).collect();
    let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..durations.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = shares[a] - shares[a].floor();
        let rb = shares[b] - shares[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in 0..total - assigned {
        counts[order[i % order.len()]] += 1;
    }
    counts
}

/// Generates the full dataset: every action sampled at `fps` until its
/// duration-proportional share of `target_count` is met. Deterministic
/// given the seed; frames that fail to project or normalize are skipped
/// with a warning and replaced by later frames of the same action.
pub fn generate(
    config: &GenConfig,
    skeleton: &Skeleton,
    actions: &[ActionSequence],
) -> Result<Vec<DatasetRecord>> {
    config.validate()?;
    skeleton.validate()?;
    ensure!(!actions.is_empty(), "no actions supplied");
    let canonical = canonical_action_names(skeleton.species);
    ensure!(
        actions.len() == canonical.len()
            && actions
                .iter()
                .zip(canonical)
                .all(|(a, &name)| a.name == name),
        "actions must cover the canonical {} set for {}",
        canonical.len(),
        skeleton.species
    );
    for action in actions {
        action.validate(skeleton.bone_count())?;
    }

    let durations: Vec<f64> = actions.iter().map(|a| a.duration).collect();
    let quotas = apportion(config.target_count, &durations);

    let mut records = Vec::with_capacity(config.target_count);
    let mut next_id = 0u64;
    for (action_index, (action, &quota)) in actions.iter().zip(&quotas).enumerate() {
        let mut emitted = 0usize;
        let mut frame = 0u64;
        while emitted < quota {
            match synth_frame(
                config, skeleton, action, action_index, frame, quota, next_id,
            ) {
                Ok(record) => {
                    records.push(record);
                    emitted += 1;
                    next_id += 1;
                }
                Err(e) => {
                    log::warn!(
                        "skipping {} frame {frame}: {e}",
                        action.name
                    );
                }
            }
            frame += 1;
        }
    }
    Ok(records)
}

fn synth_frame(
    config: &GenConfig,
    skeleton: &Skeleton,
    action: &ActionSequence,
    action_index: usize,
    frame: u64,
    quota: usize,
    id: u64,
) -> Result<DatasetRecord> {
    let mut rng = frame_rng(config.seed, action_index, frame);
    let subject_scale = rng.random_range(config.scale_range.0..=config.scale_range.1);

    let t_anim = frame as f64 / config.fps;
    let angles = PoseAngles {
        rotations: action.pose_at(t_anim),
        root_translation: Vector3::zeros(),
        root_scale: 1.0,
    };
    let pose = forward_kinematics(skeleton, &angles)?;
    let scaled = Pose3D::new(pose.coords.iter().map(|p| subject_scale * p).collect());

    let orbit_t = if quota > 1 {
        (frame as f64 / (quota - 1) as f64).min(1.0)
    } else {
        0.0
    };
    let bound = scaled
        .coords
        .iter()
        .map(|p| p.norm())
        .fold(0.0f64, f64::max)
        .max(1e-6);
    let camera = orbit_camera(config, orbit_t, &mut rng, bound)?;

    let pixels = project(&camera, &scaled)?;
    let soft_px: Vec<[f64; 2]> = skeleton.soft_subset.iter().map(|&i| pixels[i]).collect();
    let k2d_norm = normalize2d(&soft_px)?;
    let k3d_norm = normalize3d(&scaled)?;

    let record = DatasetRecord {
        id,
        species: skeleton.species,
        action: action.name.clone(),
        frame_index: frame as u32,
        k2d_norm,
        k3d_norm,
        camera: CameraMeta::from(&camera),
        subject_scale,
    };
    record.validate()?;
    Ok(record)
}

/// Per-action spread of the normalized 3D coordinates: one row per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpread {
    pub action: String,
    /// Standard deviation per axis, computed per keypoint across the
    /// action's frames and averaged over keypoints.
    pub sigma: [f64; 3],
    pub frames: usize,
}

/// Summarizes per-action coordinate spread over a dataset.
pub fn variance_report(records: &[DatasetRecord]) -> Result<Vec<ActionSpread>> {
    ensure!(!records.is_empty(), "empty dataset");
    let mut actions: Vec<&str> = Vec::new();
    for r in records {
        if !actions.contains(&r.action.as_str()) {
            actions.push(&r.action);
        }
    }
    let mut report = Vec::with_capacity(actions.len());
    for name in actions {
        let frames: Vec<&DatasetRecord> =
            records.iter().filter(|r| r.action == name).collect();
        let n = frames.len();
        let k = frames[0].k3d_norm.len();
        let mut sigma = [0.0f64; 3];
        for j in 0..k {
            for a in 0..3 {
                let mean: f64 =
                    frames.iter().map(|r| r.k3d_norm[j][a]).sum::<f64>() / n as f64;
                let var: f64 = frames
                    .iter()
                    .map(|r| (r.k3d_norm[j][a] - mean).powi(2))
                    .sum::<f64>()
                    / n as f64;
                sigma[a] += var.sqrt();
            }
        }
        for s in sigma.iter_mut() {
            *s /= k as f64;
        }
        report.push(ActionSpread {
            action: name.to_string(),
            sigma,
            frames: n,
        });
    }
    Ok(report)
}

/// Rotation by `angle` about `axis` — shorthand used across the action
/// catalog and tests.
pub(crate) fn axis_angle(axis: Vector3<f64>, angle: f64) -> nalgebra::UnitQuaternion<f64> {
    nalgebra::UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle)
}
