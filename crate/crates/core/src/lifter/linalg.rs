//! Minimal dense f64 matrix used by the lifter network.
//!
//! Row-major storage. Matrix products parallelize over output rows in
//! fixed chunks, so results are bit-identical regardless of thread count:
//! every output row is an independent sequential reduction.

use rayon::prelude::*;

/// Work threshold (multiply-adds) below which products stay single-threaded.
const PAR_FLOP_THRESHOLD: usize = 1 << 16;
const PAR_ROW_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Reinterprets the buffer with a new shape of equal element count.
    pub fn reshaped(mut self, rows: usize, cols: usize) -> Mat {
        assert_eq!(self.rows * self.cols, rows * cols);
        self.rows = rows;
        self.cols = cols;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * other`; inner loop runs over contiguous rows of `other`.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Mat::zeros(m, n);
        let work = m * k * n;
        let kernel = |i: usize, out_row: &mut [f64]| {
            let a_row = self.row(i);
            for (kk, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(kk);
                for j in 0..n {
                    out_row[j] += a * b_row[j];
                }
            }
        };
        run_rows(&mut out, work, kernel);
        out
    }

    /// `self^T * other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows);
        let (m, k, n) = (self.cols, self.rows, other.cols);
        let mut out = Mat::zeros(m, n);
        let work = m * k * n;
        let kernel = |i: usize, out_row: &mut [f64]| {
            for r in 0..k {
                let a = self.at(r, i);
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(r);
                for j in 0..n {
                    out_row[j] += a * b_row[j];
                }
            }
        };
        run_rows(&mut out, work, kernel);
        out
    }

    /// `self * other^T`; both operands are read along contiguous rows.
    pub fn matmul_t(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols);
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = Mat::zeros(m, n);
        let work = m * k * n;
        let kernel = |i: usize, out_row: &mut [f64]| {
            let a_row = self.row(i);
            for (j, slot) in out_row.iter_mut().enumerate() {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for c in 0..k {
                    acc += a_row[c] * b_row[c];
                }
                *slot = acc;
            }
        };
        run_rows(&mut out, work, kernel);
        out
    }

    /// Adds `bias` (a 1 x cols matrix) to every row.
    pub fn add_row_broadcast(&mut self, bias: &Mat) {
        assert_eq!(bias.rows, 1);
        assert_eq!(bias.cols, self.cols);
        for i in 0..self.rows {
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
    }

    /// Column sums as a 1 x cols matrix.
    pub fn col_sums(&self) -> Mat {
        let mut out = Mat::zeros(1, self.cols);
        for i in 0..self.rows {
            let row = self.row(i);
            for (o, v) in out.data.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.data.iter_mut() {
            *v *= s;
        }
    }
}

fn run_rows(out: &mut Mat, work: usize, kernel: impl Fn(usize, &mut [f64]) + Sync) {
    let cols = out.cols;
    if work < PAR_FLOP_THRESHOLD || out.rows < 2 * PAR_ROW_CHUNK {
        for (i, row) in out.data.chunks_mut(cols).enumerate() {
            kernel(i, row);
        }
    } else {
        out.data
            .par_chunks_mut(PAR_ROW_CHUNK * cols)
            .enumerate()
            .for_each(|(chunk_idx, chunk)| {
                for (r, row) in chunk.chunks_mut(cols).enumerate() {
                    kernel(chunk_idx * PAR_ROW_CHUNK + r, row);
                }
            });
    }
}

/// Smooth GELU nonlinearity (tanh form).
#[inline]
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

/// Exact derivative of [`gelu`].
#[inline]
pub fn gelu_prime(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    const A: f64 = 0.044715;
    let t = (C * (x + A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}

/// In-place softmax over a row, numerically stabilized by the row max.
pub fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
