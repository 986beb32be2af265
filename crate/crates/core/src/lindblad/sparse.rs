//! Compressed-row complex matrices, just enough for jump operators.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Complex, DMatrix, DVector};

pub type C64 = Complex<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, row_ptr: vec![0; dim + 1], cols: Vec::new(), vals: Vec::new() }
    }

    /// Duplicate entries are summed; exact zeros are dropped.
    pub fn from_triplets(dim: usize, mut entries: Vec<(usize, usize, C64)>) -> Self {
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; dim + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals: Vec<C64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            assert!(r < dim && c < dim, "triplet ({r},{c}) outside {dim}x{dim}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { dim, row_ptr, cols, vals }.pruned()
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let entries = values.iter().enumerate().map(|(i, &v)| (i, i, C64::new(v, 0.0))).collect();
        Self::from_triplets(values.len(), entries)
    }

    fn pruned(self) -> Self {
        let keep = self.triplets().filter(|t| t.2 != C64::new(0.0, 0.0)).collect::<Vec<_>>();
        if keep.len() == self.vals.len() {
            return self;
        }
        Self::from_triplets(self.dim, keep)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k]))
        })
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.dim, self.triplets().map(|(r, c, v)| (c, r, v.conj())).collect())
    }

    pub fn scaled(&self, s: C64) -> Self {
        Self::from_triplets(self.dim, self.triplets().map(|(r, c, v)| (r, c, v * s)).collect())
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: C64, other: &Self, b: C64) -> Self {
        assert_eq!(self.dim, other.dim);
        let entries = self
            .triplets()
            .map(|(r, c, v)| (r, c, v * a))
            .chain(other.triplets().map(|(r, c, v)| (r, c, v * b)))
            .collect();
        Self::from_triplets(self.dim, entries)
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut entries = Vec::new();
        let mut acc = vec![C64::new(0.0, 0.0); self.dim];
        let mut touched = Vec::new();
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let (mid, v) = (self.cols[k], self.vals[k]);
                for j in other.row_ptr[mid]..other.row_ptr[mid + 1] {
                    let c = other.cols[j];
                    if acc[c] == C64::new(0.0, 0.0) {
                        touched.push(c);
                    }
                    acc[c] += v * other.vals[j];
                }
            }
            for &c in &touched {
                entries.push((r, c, acc[c]));
                acc[c] = C64::new(0.0, 0.0);
            }
            touched.clear();
        }
        Self::from_triplets(self.dim, entries)
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn mul_vec(&self, v: &DVector<C64>) -> DVector<C64> {
        let mut out = DVector::zeros(self.dim);
        self.row_kernel(v.as_slice(), out.as_mut_slice());
        out
    }

    fn row_kernel(&self, x: &[C64], y: &mut [C64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let mut s = C64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *out = s;
        }
    }

    /// `self * m` for a dense square matrix.
    pub fn mul_dense(&self, m: &DMatrix<C64>) -> DMatrix<C64> {
        let mut out = DMatrix::zeros(self.dim, m.ncols());
        self.mul_dense_into(m, &mut out);
        out
    }

    pub fn mul_dense_into(&self, m: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        assert_eq!(m.nrows(), self.dim);
        let n = self.dim;
        for c in 0..m.ncols() {
            let x = &m.as_slice()[c * n..(c + 1) * n];
            let y = &mut out.as_mut_slice()[c * n..(c + 1) * n];
            self.row_kernel(x, y);
        }
    }

    /// `m * self^+`, accumulated column by column.
    pub fn dense_mul_adjoint_into(&self, m: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        assert_eq!(m.ncols(), self.dim);
        let n = m.nrows();
        let src = m.as_slice();
        let dst = out.as_mut_slice();
        for j in 0..self.dim {
            let col = &mut dst[j * n..(j + 1) * n];
            col.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            for k in self.row_ptr[j]..self.row_ptr[j + 1] {
                let w = self.vals[k].conj();
                let from = &src[self.cols[k] * n..(self.cols[k] + 1) * n];
                for (o, x) in col.iter_mut().zip(from) {
                    *o += *x * w;
                }
            }
        }
    }

    /// tr(self * m) without forming the product.
    pub fn trace_product(&self, m: &DMatrix<C64>) -> C64 {
        self.triplets().map(|(r, c, v)| v * m[(c, r)]).sum()
    }
}
