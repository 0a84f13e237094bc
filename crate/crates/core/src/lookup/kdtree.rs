//! Exact k-d tree for nearest-neighbor queries over flattened pose vectors.
//!
//! Splits on the axis of largest spread at the median. Query results are
//! identical to an exhaustive scan, including the tie rule (lowest entry
//! index wins): subtrees are pruned only when their plane distance strictly
//! exceeds the current best, and candidate distances are computed with the
//! same sequential accumulation the scan uses.

const LEAF_SIZE: usize = 16;

#[derive(Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug)]
pub struct KdTree {
    dim: usize,
    /// Point coordinates, re-ordered during build; row i belongs to ids[i].
    points: Vec<f64>,
    ids: Vec<u32>,
    root: Node,
}

/// Squared Euclidean distance with fixed left-to-right accumulation.
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

impl KdTree {
    /// Builds a tree over `n` points of dimension `dim`, stored row-major.
    pub fn new(points: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0 && points.len() % dim == 0);
        let n = points.len() / dim;
        assert!(n > 0);
        let mut order: Vec<u32> = (0..n as u32).collect();
        let root = build(&points, dim, &mut order, 0, n);
        // Re-pack points into traversal order for contiguous leaf scans.
        let mut packed = Vec::with_capacity(points.len());
        for &id in &order {
            packed.extend_from_slice(&points[id as usize * dim..(id as usize + 1) * dim]);
        }
        KdTree {
            dim,
            points: packed,
            ids: order,
            root,
        }
    }

    /// Returns (entry id, squared distance) of the nearest point; among
    /// equidistant points the lowest id wins.
    pub fn nearest(&self, query: &[f64]) -> (usize, f64) {
        assert_eq!(query.len(), self.dim);
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(&self.root, query, &mut best);
        best
    }

    fn search(&self, node: &Node, query: &[f64], best: &mut (usize, f64)) {
        match node {
            Node::Leaf { start, end } => {
                for i in *start..*end {
                    let row = &self.points[i * self.dim..(i + 1) * self.dim];
                    let d2 = dist2(query, row);
                    let id = self.ids[i] as usize;
                    if d2 < best.1 || (d2 == best.1 && id < best.0) {
                        *best = (id, d2);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[*axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, best);
                if diff * diff <= best.1 {
                    self.search(far, query, best);
                }
            }
        }
    }
}

fn build(points: &[f64], dim: usize, order: &mut [u32], start: usize, end: usize) -> Node {
    let n = end - start;
    if n <= LEAF_SIZE {
        return Node::Leaf { start, end };
    }
    // Axis of largest spread over this slice.
    let mut axis = 0;
    let mut best_spread = -1.0;
    for a in 0..dim {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &id in order.iter() {
            let v = points[id as usize * dim + a];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let spread = hi - lo;
        if spread > best_spread {
            best_spread = spread;
            axis = a;
        }
    }
    if best_spread <= 0.0 {
        // All points identical on every axis: keep as one leaf.
        return Node::Leaf { start, end };
    }
    let mid = n / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        let va = points[a as usize * dim + axis];
        let vb = points[b as usize * dim + axis];
        va.partial_cmp(&vb).unwrap().then(a.cmp(&b))
    });
    let value = points[order[mid] as usize * dim + axis];
    let (left_slice, right_slice) = order.split_at_mut(mid);
    let left = build(points, dim, left_slice, start, start + mid);
    let right = build(points, dim, right_slice, start + mid, end);
    Node::Split {
        axis,
        value,
        left: Box::new(left),
        right: Box::new(right),
    }
}
