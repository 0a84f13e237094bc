//! The deep-pose lookup table: stores every normalized deep 3D pose from a
//! dataset and answers nearest-neighbor queries from soft 3D poses, plus
//! PCA/k-means structure analysis over the stored poses.

pub mod analysis;
pub mod kdtree;

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::DatasetRecord;
use crate::error::{ensure, Error, Result};
use analysis::{kmeans, pca};
use kdtree::{dist2, KdTree};

/// Table file format version.
pub const TABLE_FORMAT_VERSION: u32 = 1;

/// One stored pose with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    /// Deep pose, k_d x 3, unit-cube normalized.
    pub deep: Vec<[f64; 3]>,
    pub action: String,
    pub frame_index: u32,
    pub source_id: u64,
}

/// All deep poses of a dataset, queryable by soft-subset distance.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    pub entries: Vec<TableEntry>,
    /// Indices of the soft keypoints within each deep pose.
    pub soft_subset: Vec<usize>,
}

/// Nearest-neighbor answer.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub index: usize,
    pub distance: f64,
    pub deep: Vec<[f64; 3]>,
    pub action: String,
}

impl LookupTable {
    /// Builds a table from dataset records, one entry per record in order.
    pub fn build(records: &[DatasetRecord], soft_subset: &[usize]) -> Result<LookupTable> {
        ensure!(!records.is_empty(), "cannot build a table from no records");
        ensure!(!soft_subset.is_empty(), "soft subset is empty");
        let k_d = records[0].k3d_norm.len();
        ensure!(
            soft_subset.iter().all(|&i| i < k_d),
            "soft subset index out of range for {k_d} keypoints"
        );
        let mut entries = Vec::with_capacity(records.len());
        for r in records {
            ensure!(
                r.k3d_norm.len() == k_d,
                "record {} has {} keypoints, expected {k_d}",
                r.id,
                r.k3d_norm.len()
            );
            entries.push(TableEntry {
                deep: r.k3d_norm.clone(),
                action: r.action.clone(),
                frame_index: r.frame_index,
                source_id: r.id,
            });
        }
        Ok(LookupTable {
            entries,
            soft_subset: soft_subset.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn k_d(&self) -> usize {
        self.entries.first().map(|e| e.deep.len()).unwrap_or(0)
    }

    /// Flattened soft-subset coordinates of entry `i` (k_s * 3 scalars).
    pub fn soft_vector(&self, i: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.soft_subset.len() * 3);
        for &idx in &self.soft_subset {
            out.extend_from_slice(&self.entries[i].deep[idx]);
        }
        out
    }

    /// Flattened full deep pose of entry `i` (k_d * 3 scalars).
    pub fn deep_vector(&self, i: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.k_d() * 3);
        for p in &self.entries[i].deep {
            out.extend_from_slice(p);
        }
        out
    }

    fn flatten_query(&self, soft_pose: &[[f64; 3]]) -> Result<Vec<f64>> {
        ensure!(!self.entries.is_empty(), "query on empty table");
        ensure!(
            soft_pose.len() == self.soft_subset.len(),
            "query has {} keypoints, table expects {}",
            soft_pose.len(),
            self.soft_subset.len()
        );
        let mut q = Vec::with_capacity(soft_pose.len() * 3);
        for p in soft_pose {
            ensure!(p.iter().all(|c| c.is_finite()), "query contains non-finite values");
            q.extend_from_slice(p);
        }
        Ok(q)
    }

    /// Reference nearest-neighbor query: exhaustive scan over all entries,
    /// Euclidean distance on flattened soft-subset coordinates, ties broken
    /// by lowest entry index.
    pub fn query_linear(&self, soft_pose: &[[f64; 3]]) -> Result<QueryResult> {
        let q = self.flatten_query(soft_pose)?;
        let mut best = (usize::MAX, f64::INFINITY);
        for i in 0..self.entries.len() {
            let d2 = dist2(&q, &self.soft_vector(i));
            if d2 < best.1 || (d2 == best.1 && i < best.0) {
                best = (i, d2);
            }
        }
        Ok(self.result_for(best.0, best.1))
    }

    fn result_for(&self, index: usize, d2: f64) -> QueryResult {
        let entry = &self.entries[index];
        QueryResult {
            index,
            distance: d2.sqrt(),
            deep: entry.deep.clone(),
            action: entry.action.clone(),
        }
    }

    /// Builds the accelerated nearest-neighbor index over the soft vectors.
    pub fn index(&self) -> SoftIndex<'_> {
        let dim = self.soft_subset.len() * 3;
        let mut points = Vec::with_capacity(self.len() * dim);
        for i in 0..self.len() {
            points.extend_from_slice(&self.soft_vector(i));
        }
        SoftIndex {
            table: self,
            tree: KdTree::new(points, dim),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        ensure!(!self.is_empty(), "refusing to save an empty table");
        let header = TableHeader {
            version: TABLE_FORMAT_VERSION,
            k_d: self.k_d(),
            soft_subset: self.soft_subset.clone(),
            entry_count: self.len(),
        };
        let mut out = serde_json::to_string(&header)
            .map_err(|e| Error::format(path, e.to_string()))?;
        out.push('\n');
        for e in &self.entries {
            out.push_str(
                &serde_json::to_string(e).map_err(|er| Error::format(path, er.to_string()))?,
            );
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<LookupTable> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::format(path, "empty table file"))?
            .map_err(|e| Error::io(path, e))?;
        let header: TableHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::format(path, e.to_string()))?;
        if header.version != TABLE_FORMAT_VERSION {
            return Err(Error::Version {
                found: header.version,
                expected: TABLE_FORMAT_VERSION,
            });
        }
        let mut entries = Vec::with_capacity(header.entry_count);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TableEntry = serde_json::from_str(&line)
                .map_err(|e| Error::format(path, format!("entry {}: {e}", i + 1)))?;
            if entry.deep.len() != header.k_d {
                return Err(Error::format(
                    path,
                    format!(
                        "entry {} has {} keypoints, header declares {}",
                        i + 1,
                        entry.deep.len(),
                        header.k_d
                    ),
                ));
            }
            entries.push(entry);
        }
        if entries.len() != header.entry_count {
            return Err(Error::format(
                path,
                format!(
                    "header declares {} entries, file has {}",
                    header.entry_count,
                    entries.len()
                ),
            ));
        }
        let table = LookupTable {
            entries,
            soft_subset: header.soft_subset,
        };
        ensure!(!table.is_empty(), "table file has no entries");
        Ok(table)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TableHeader {
    version: u32,
    k_d: usize,
    soft_subset: Vec<usize>,
    entry_count: usize,
}

/// Accelerated nearest-neighbor index; results are exactly those of
/// [`LookupTable::query_linear`].
pub struct SoftIndex<'a> {
    table: &'a LookupTable,
    tree: KdTree,
}

impl SoftIndex<'_> {
    pub fn query(&self, soft_pose: &[[f64; 3]]) -> Result<QueryResult> {
        let q = self.table.flatten_query(soft_pose)?;
        let (index, d2) = self.tree.nearest(&q);
        Ok(self.table.result_for(index, d2))
    }
}

/// Per-cluster composition summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub size: usize,
    pub majority_action: String,
    /// Fraction of the cluster belonging to the majority action.
    pub purity: f64,
}

/// k-means clustering of the full deep poses, with a 2-component PCA
/// projection per entry for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub clusters: Vec<ClusterSummary>,
    pub projection: Vec<[f64; 2]>,
    pub inertia: f64,
}

impl ClusterReport {
    /// CSV consumable by plotting tools: entry id, cluster, action, pc1, pc2.
    pub fn to_csv(&self, table: &LookupTable) -> String {
        let mut out = String::from("entry_id,cluster,action,pc1,pc2\n");
        for (i, entry) in table.entries.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6}\n",
                entry.source_id,
                self.assignments[i],
                entry.action,
                self.projection[i][0],
                self.projection[i][1]
            ));
        }
        out
    }
}

/// Runs PCA on the table's flattened deep poses.
pub fn table_pca(table: &LookupTable, n_components: usize) -> Result<(analysis::Pca, Vec<Vec<f64>>)> {
    ensure!(table.len() >= 2, "pca needs at least 2 entries");
    let points: Vec<Vec<f64>> = (0..table.len()).map(|i| table.deep_vector(i)).collect();
    pca(&points, n_components)
}

/// Clusters the table's deep poses into `k` groups and reports per-cluster
/// majority-action purity alongside the 2D PCA projection.
pub fn cluster_table(table: &LookupTable, k: usize, seed: u64) -> Result<ClusterReport> {
    ensure!(
        table.len() >= k,
        "k = {k} exceeds the {} table entries",
        table.len()
    );
    let points: Vec<Vec<f64>> = (0..table.len()).map(|i| table.deep_vector(i)).collect();
    let km = kmeans(&points, k, seed)?;
    let (_, proj2) = pca(&points, 2)?;
    let projection: Vec<[f64; 2]> = proj2
        .iter()
        .map(|p| [p[0], *p.get(1).unwrap_or(&0.0)])
        .collect();

    let mut clusters = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<usize> = (0..table.len()).filter(|&i| km.assignments[i] == c).collect();
        let mut counts: Vec<(String, usize)> = Vec::new();
        for &i in &members {
            let action = &table.entries[i].action;
            match counts.iter_mut().find(|(a, _)| a == action) {
                Some((_, n)) => *n += 1,
                None => counts.push((action.clone(), 1)),
            }
        }
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let (majority_action, majority) = counts
            .first()
            .cloned()
            .unwrap_or_else(|| (String::from("none"), 0));
        let purity = if members.is_empty() {
            0.0
        } else {
            majority as f64 / members.len() as f64
        };
        clusters.push(ClusterSummary {
            cluster: c,
            size: members.len(),
            majority_action,
            purity,
        });
    }
    Ok(ClusterReport {
        k,
        assignments: km.assignments,
        clusters,
        projection,
        inertia: km.inertia,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{action_catalog, generate, GenConfig};
    use crate::skeleton::{species_skeleton, Species};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_table(count: usize, seed: u64) -> LookupTable {
        let skeleton = species_skeleton(Species::Macaque);
        let mut config = GenConfig::for_species(Species::Macaque);
        config.target_count = count;
        config.seed = seed;
        let records = generate(&config, &skeleton, &action_catalog(&skeleton)).unwrap();
        LookupTable::build(&records, &skeleton.soft_subset).unwrap()
    }

    #[test]
    fn build_preserves_count_and_order() {
        let skeleton = species_skeleton(Species::Macaque);
        let mut config = GenConfig::for_species(Species::Macaque);
        config.target_count = 64;
        let records = generate(&config, &skeleton, &action_catalog(&skeleton)).unwrap();
        let table = LookupTable::build(&records, &skeleton.soft_subset).unwrap();
        assert_eq!(table.len(), 64);
        for (entry, record) in table.entries.iter().zip(&records) {
            assert_eq!(entry.deep, record.k3d_norm);
            assert_eq!(entry.source_id, record.id);
        }
    }

    #[test]
    fn build_rejects_empty_input() {
        let err = LookupTable::build(&[], &[0, 1]).unwrap_err();
        assert_eq!(err.code(), "contract");
    }

    #[test]
    fn exact_match_query_returns_zero_distance() {
        let table = small_table(80, 5);
        for i in [0usize, 17, 79] {
            let soft: Vec<[f64; 3]> = table
                .soft_subset
                .iter()
                .map(|&idx| table.entries[i].deep[idx])
                .collect();
            let result = table.query_linear(&soft).unwrap();
            assert_eq!(result.index, i);
            assert_eq!(result.distance, 0.0);
        }
    }

    #[test]
    fn two_entry_hand_computed_distances() {
        let make_record = |id: u64, v: f64| DatasetRecord {
            id,
            species: Species::Macaque,
            action: format!("a{id}"),
            frame_index: 0,
            k2d_norm: vec![[0.0, 0.0], [1.0, 1.0]],
            k3d_norm: vec![[v, 0.0, 0.0], [0.0, v, 0.0]],
            camera: crate::datagen::CameraMeta {
                position: [0.0, 0.0, -5.0],
                target: [0.0, 0.0, 0.0],
                fov_y: 1.0,
                image_size: [64, 64],
            },
            subject_scale: 1.0,
        };
        let records = vec![make_record(0, 0.0), make_record(1, 1.0)];
        let table = LookupTable::build(&records, &[0, 1]).unwrap();
        // Query at v = 0.4: distance to entry 0 is sqrt(2 * 0.4^2), to
        // entry 1 is sqrt(2 * 0.6^2); entry 0 is nearer.
        let q = vec![[0.4, 0.0, 0.0], [0.0, 0.4, 0.0]];
        let r = table.query_linear(&q).unwrap();
        assert_eq!(r.index, 0);
        assert!((r.distance - (2.0f64 * 0.16).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn index_agrees_with_linear_scan_exactly() {
        let table = small_table(400, 9);
        let index = table.index();
        let k_s = table.soft_subset.len();
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..500 {
            let q: Vec<[f64; 3]> = (0..k_s)
                .map(|_| std::array::from_fn(|_| rng.random_range(-0.1..1.1)))
                .collect();
            let lin = table.query_linear(&q).unwrap();
            let acc = index.query(&q).unwrap();
            assert_eq!(lin.index, acc.index);
            assert_eq!(lin.distance, acc.distance);
        }
        // Self-queries: every entry finds itself at distance zero.
        for i in 0..table.len() {
            let soft: Vec<[f64; 3]> = table
                .soft_subset
                .iter()
                .map(|&idx| table.entries[i].deep[idx])
                .collect();
            let acc = index.query(&soft).unwrap();
            assert_eq!(acc.distance, 0.0);
            let lin = table.query_linear(&soft).unwrap();
            assert_eq!(acc.index, lin.index);
        }
    }

    #[test]
    fn query_rejects_dimension_mismatch_and_empty() {
        let table = small_table(10, 2);
        let err = table.query_linear(&[[0.0; 3]; 4]).unwrap_err();
        assert_eq!(err.code(), "contract");
    }

    #[test]
    fn table_file_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.jsonl");
        let table = small_table(60, 13);
        table.save(&path).unwrap();
        let loaded = LookupTable::load(&path).unwrap();
        assert_eq!(loaded, table);
    }

    #[test]
    fn table_load_rejects_version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.jsonl");
        let table = small_table(5, 1);
        table.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let patched = text.replacen("\"version\":1", "\"version\":7", 1);
        std::fs::write(&path, patched).unwrap();
        let err = LookupTable::load(&path).unwrap_err();
        assert_eq!(err.code(), "version");
    }

    #[test]
    fn cluster_report_covers_entries_with_valid_purity() {
        let table = small_table(320, 21);
        let report = cluster_table(&table, 6, 4).unwrap();
        assert_eq!(report.assignments.len(), table.len());
        assert_eq!(report.clusters.len(), 6);
        let total: usize = report.clusters.iter().map(|c| c.size).sum();
        assert_eq!(total, table.len());
        for c in &report.clusters {
            assert!((0.0..=1.0).contains(&c.purity));
        }
        let csv = report.to_csv(&table);
        assert_eq!(csv.lines().count(), table.len() + 1);
        assert!(csv.starts_with("entry_id,cluster,action,pc1,pc2"));
    }
}
