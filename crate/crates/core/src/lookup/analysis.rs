//! Principal component analysis and k-means clustering over flattened
//! pose vectors.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};
use crate::lookup::kdtree::dist2;

/// Principal components of a point set.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Orthonormal components, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Population variance captured by each component.
    pub explained_variance: Vec<f64>,
    /// Set when fewer than the requested components carry positive variance.
    pub rank_deficient: bool,
}

impl Pca {
    pub fn project(&self, point: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(point.iter().zip(&self.mean))
                    .map(|(w, (x, m))| w * (x - m))
                    .sum()
            })
            .collect()
    }
}

/// PCA via the symmetric eigendecomposition of the population covariance.
/// Component signs are fixed so each component's largest-magnitude
/// coordinate is positive. Returns the analysis and per-point projections.
pub fn pca(points: &[Vec<f64>], n_components: usize) -> Result<(Pca, Vec<Vec<f64>>)> {
    ensure!(points.len() >= 2, "pca needs at least 2 points, got {}", points.len());
    ensure!(n_components >= 1, "n_components must be at least 1");
    let dim = points[0].len();
    ensure!(dim >= 1, "points must have at least one coordinate");
    ensure!(
        points.iter().all(|p| p.len() == dim),
        "inconsistent point dimensions"
    );
    let n = points.len() as f64;
    let keep = n_components.min(dim);

    let mut mean = vec![0.0f64; dim];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for p in points {
        let centered = DVector::from_iterator(dim, p.iter().zip(&mean).map(|(v, m)| v - m));
        cov.ger(1.0 / n, &centered, &centered, 1.0);
    }

    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut components = Vec::with_capacity(keep);
    let mut explained = Vec::with_capacity(keep);
    let mut positive = 0usize;
    for &i in order.iter().take(keep) {
        let col = eig.eigenvectors.column(i);
        let mut comp: Vec<f64> = col.iter().cloned().collect();
        // Canonical sign: the largest-magnitude coordinate is positive.
        let lead = comp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if comp[lead] < 0.0 {
            comp.iter_mut().for_each(|v| *v = -*v);
        }
        let var = eig.eigenvalues[i].max(0.0);
        if var > 1e-12 {
            positive += 1;
        }
        components.push(comp);
        explained.push(var);
    }

    let analysis = Pca {
        mean,
        components,
        explained_variance: explained,
        rank_deficient: positive < n_components,
    };
    let projections = points.iter().map(|p| analysis.project(p)).collect();
    Ok((analysis, projections))
}

/// k-means clustering result.
#[derive(Debug, Clone)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every assignment phase; non-increasing.
    pub inertia_history: Vec<f64>,
}

const MAX_ITERS: usize = 300;

/// Lloyd's algorithm with seeded k-means++ initialization. Converges when
/// assignments stop changing or after 300 iterations. Ties (equidistant
/// centroids) resolve to the lowest centroid index; empty clusters are
/// re-seeded with the point farthest from its centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    ensure!(k >= 1, "k must be at least 1");
    ensure!(
        points.len() >= k,
        "k = {k} exceeds the {} available points",
        points.len()
    );
    let dim = points[0].len();
    ensure!(
        points.iter().all(|p| p.len() == dim),
        "inconsistent point dimensions"
    );
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x6b6d_6561_6e73));

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)].clone());
    let mut min_d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = min_d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining points coincide with a centroid; pick uniformly.
            rng.random_range(0..n)
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in min_d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        centroids.push(points[next].clone());
        let last = centroids.last().unwrap();
        for (d, p) in min_d2.iter_mut().zip(points) {
            let cand = dist2(p, last);
            if cand < *d {
                *d = cand;
            }
        }
    }

    let mut assignments = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        // Assignment phase.
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let mut best = (0usize, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d2 = dist2(p, centroid);
                if d2 < best.1 {
                    best = (c, d2);
                }
            }
            inertia += best.1;
            if assignments[i] != best.0 {
                assignments[i] = best.0;
                changed = true;
            }
        }
        history.push(inertia);
        if (!changed && iterations > 1) || iterations >= MAX_ITERS {
            return Ok(KMeans {
                assignments,
                centroids,
                inertia,
                iterations,
                inertia_history: history,
            });
        }

        // Update phase.
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0f64; dim]; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed with the point farthest from its centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = dist2(&points[a], &centroids[assignments[a]]);
                        let db = dist2(&points[b], &centroids[assignments[b]]);
                        da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                    })
                    .unwrap();
                centroids[c] = points[far].clone();
            } else {
                for (s, slot) in sums[c].iter().zip(centroids[c].iter_mut()) {
                    *slot = s / counts[c] as f64;
                }
            }
        }
    }
}
