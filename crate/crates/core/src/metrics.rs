//! Evaluation metrics for lifted poses: MSE, PDJ, and per-variant
//! comparison reports.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::lifter::{forward_many, LiftSample, LifterModel};

/// Mean of squared component differences over all samples, keypoints and
/// axes.
pub fn mse(pred: &[Vec<[f64; 3]>], gt: &[Vec<[f64; 3]>]) -> Result<f64> {
    ensure!(
        pred.len() == gt.len() && !pred.is_empty(),
        "mse: {} predictions vs {} ground truths",
        pred.len(),
        gt.len()
    );
    let mut acc = 0.0;
    let mut n = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        ensure!(
            p.len() == g.len() && !p.is_empty(),
            "mse: keypoint counts differ ({} vs {})",
            p.len(),
            g.len()
        );
        for (a, b) in p.iter().zip(g) {
            for c in 0..3 {
                let d = a[c] - b[c];
                acc += d * d;
            }
        }
        n += p.len() * 3;
    }
    Ok(acc / n as f64)
}

/// Diagonal of the axis-aligned 3D bounding box of a pose.
pub fn bbox_diag3(pose: &[[f64; 3]]) -> f64 {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for p in pose {
        for c in 0..3 {
            min[c] = min[c].min(p[c]);
            max[c] = max[c].max(p[c]);
        }
    }
    let mut acc = 0.0;
    for c in 0..3 {
        let e = max[c] - min[c];
        acc += e * e;
    }
    acc.sqrt()
}

/// Fraction of (sample, keypoint) pairs whose prediction lies within
/// `x * d` of the ground truth, where `d` is the per-sample bounding-box
/// diagonal.
pub fn pdj(
    pred: &[Vec<[f64; 3]>],
    gt: &[Vec<[f64; 3]>],
    bbox_diag: &[f64],
    x: f64,
) -> Result<f64> {
    ensure!(
        pred.len() == gt.len() && pred.len() == bbox_diag.len() && !pred.is_empty(),
        "pdj: mismatched lengths ({}, {}, {})",
        pred.len(),
        gt.len(),
        bbox_diag.len()
    );
    ensure!(x > 0.0, "pdj threshold fraction must be positive, got {x}");
    let mut hits = 0usize;
    let mut total = 0usize;
    for ((p, g), &d) in pred.iter().zip(gt).zip(bbox_diag) {
        ensure!(d > 0.0, "pdj: non-positive bounding-box diagonal {d}");
        ensure!(
            p.len() == g.len() && !p.is_empty(),
            "pdj: keypoint counts differ"
        );
        let limit = x * d;
        for (a, b) in p.iter().zip(g) {
            let dist = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2))
                .sqrt();
            if dist <= limit {
                hits += 1;
            }
            total += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// One comparison row: a model variant and its metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub variant: String,
    pub mse: f64,
    pub pdj_02: f64,
    pub pdj_005: f64,
}

/// Metrics for a set of model variants on one evaluation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_id: String,
    pub split: String,
    /// Bounding boxes are taken from the 3D ground-truth poses.
    pub bbox_space: String,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,mse,pdj@0.2,pdj@0.05\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.4},{:.4}\n",
                r.variant, r.mse, r.pdj_02, r.pdj_005
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.variant.len())
            .max()
            .unwrap_or(7)
            .max(7);
        let mut out = format!(
            "{:<width$}  {:>9}  {:>8}  {:>9}\n",
            "variant", "MSE", "PDJ@0.2", "PDJ@0.05"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:>9.6}  {:>8.4}  {:>9.4}\n",
                r.variant, r.mse, r.pdj_02, r.pdj_005
            ));
        }
        out
    }
}

/// Runs every variant on the evaluation samples and assembles the report.
pub fn evaluate(
    variants: &[(String, &LifterModel)],
    samples: &[LiftSample],
    dataset_id: &str,
    split: &str,
) -> Result<EvalReport> {
    ensure!(!variants.is_empty(), "no model variants supplied");
    ensure!(!samples.is_empty(), "no evaluation samples supplied");
    for (name, model) in variants {
        ensure!(
            model.config.k_s == samples[0].k2d.len(),
            "variant '{name}' expects {} keypoints, samples have {}",
            model.config.k_s,
            samples[0].k2d.len()
        );
    }
    let inputs: Vec<Vec<[f64; 2]>> = samples.iter().map(|s| s.k2d.clone()).collect();
    let gts: Vec<Vec<[f64; 3]>> = samples.iter().map(|s| s.target.clone()).collect();
    let diags: Vec<f64> = gts.iter().map(|g| bbox_diag3(g)).collect();

    let mut rows = Vec::with_capacity(variants.len());
    for (name, model) in variants {
        let preds = forward_many(model, &inputs)?;
        let row = EvalRow {
            variant: name.clone(),
            mse: mse(&preds, &gts)?,
            pdj_02: pdj(&preds, &gts, &diags, 0.2)?,
            pdj_005: pdj(&preds, &gts, &diags, 0.05)?,
        };
        ensure!(
            row.pdj_02 >= row.pdj_005,
            "pdj@0.2 below pdj@0.05 for '{name}'"
        );
        rows.push(row);
    }
    Ok(EvalReport {
        dataset_id: dataset_id.to_string(),
        split: split.to_string(),
        bbox_space: "3d".to_string(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_poses(n: usize, k: usize, seed: u64) -> Vec<Vec<[f64; 3]>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                (0..k)
                    .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn mse_zero_on_equal_and_uniform_offset() {
        let a = random_poses(3, 5, 1);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let b: Vec<Vec<[f64; 3]>> = a
            .iter()
            .map(|pose| pose.iter().map(|p| [p[0] + 0.2, p[1] + 0.2, p[2] + 0.2]).collect())
            .collect();
        assert!((mse(&a, &b).unwrap() - 0.04).abs() < 1e-12);
    }

    #[test]
    fn mse_matches_scalar_loop_and_is_symmetric() {
        let a = random_poses(4, 6, 2);
        let b = random_poses(4, 6, 3);
        let mut acc = 0.0;
        let mut n = 0;
        for i in 0..4 {
            for j in 0..6 {
                for c in 0..3 {
                    let d = a[i][j][c] - b[i][j][c];
                    acc += d * d;
                    n += 1;
                }
            }
        }
        let want = acc / n as f64;
        assert!((mse(&a, &b).unwrap() - want).abs() < 1e-12);
        assert!((mse(&b, &a).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn pdj_perfect_and_threshold_straddle() {
        let gt = vec![vec![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]];
        let d = bbox_diag3(&gt[0]);
        assert!((pdj(&gt, &gt, &[d], 0.05).unwrap() - 1.0).abs() < 1e-15);

        // Single keypoint displaced by exactly 0.1 * d.
        let gt1 = vec![vec![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]];
        let mut pred = gt1.clone();
        pred[0][0][0] += 0.1 * d;
        assert!((pdj(&pred, &gt1, &[d], 0.2).unwrap() - 1.0).abs() < 1e-15);
        assert!((pdj(&pred, &gt1, &[d], 0.05).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pdj_matches_counting_oracle_and_is_monotone() {
        let gt = random_poses(10, 8, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pred: Vec<Vec<[f64; 3]>> = gt
            .iter()
            .map(|pose| {
                pose.iter()
                    .map(|p| {
                        std::array::from_fn(|c| p[c] + rng.random_range(-0.3..0.3))
                    })
                    .collect()
            })
            .collect();
        let diags: Vec<f64> = gt.iter().map(|g| bbox_diag3(g)).collect();

        let mut prev = 0.0;
        for &x in &[0.01, 0.05, 0.1, 0.2, 0.5, 1.0] {
            let got = pdj(&pred, &gt, &diags, x).unwrap();
            // Exhaustive per-joint count.
            let mut hits = 0;
            let mut total = 0;
            for i in 0..gt.len() {
                for j in 0..gt[i].len() {
                    let d: f64 = (0..3)
                        .map(|c| (pred[i][j][c] - gt[i][j][c]).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    if d <= x * diags[i] {
                        hits += 1;
                    }
                    total += 1;
                }
            }
            assert!((got - hits as f64 / total as f64).abs() < 1e-15);
            assert!(got >= prev, "pdj not monotone at x={x}");
            prev = got;
        }
    }

    #[test]
    fn pdj_invariant_under_rigid_transform() {
        use nalgebra::{UnitQuaternion, Vector3};
        let gt = random_poses(5, 7, 9);
        let pred = random_poses(5, 7, 10);
        let diags: Vec<f64> = gt.iter().map(|g| bbox_diag3(g)).collect();
        let base = pdj(&pred, &gt, &diags, 0.2).unwrap();

        let rot = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 0.9);
        let shift = Vector3::new(3.0, -1.0, 0.5);
        let map = |poses: &[Vec<[f64; 3]>]| -> Vec<Vec<[f64; 3]>> {
            poses
                .iter()
                .map(|pose| {
                    pose.iter()
                        .map(|p| {
                            let v = rot * Vector3::new(p[0], p[1], p[2]) + shift;
                            [v.x, v.y, v.z]
                        })
                        .collect()
                })
                .collect()
        };
        let gt2 = map(&gt);
        let pred2 = map(&pred);
        let diags2: Vec<f64> = gt2.iter().map(|g| bbox_diag3(g)).collect();
        let moved = pdj(&pred2, &gt2, &diags2, 0.2).unwrap();
        assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn pdj_rejects_bad_diag() {
        let gt = random_poses(1, 3, 12);
        let err = pdj(&gt, &gt, &[0.0], 0.2).unwrap_err();
        assert_eq!(err.code(), "contract");
    }

    #[test]
    fn evaluate_identical_variants_identical_rows() {
        use crate::lifter::LifterConfig;
        let config = LifterConfig {
            k_s: 3,
            token_dim: 8,
            heads: 2,
            hidden_dim: 16,
            epochs: 1,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 12,
        };
        let model = LifterModel::init(config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let samples: Vec<LiftSample> = (0..10)
            .map(|_| LiftSample {
                k2d: (0..3)
                    .map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
                    .collect(),
                target: (0..3)
                    .map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0)))
                    .collect(),
            })
            .collect();
        let report = evaluate(
            &[("a".to_string(), &model), ("b".to_string(), &model)],
            &samples,
            "toy",
            "all",
        )
        .unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].mse, report.rows[1].mse);
        assert_eq!(report.rows[0].pdj_02, report.rows[1].pdj_02);
        assert!(report.rows[0].pdj_02 >= report.rows[0].pdj_005);
        let csv = report.to_csv();
        assert!(csv.lines().count() == 3);
        assert!(report.to_text().contains("PDJ@0.2"));
    }
}
