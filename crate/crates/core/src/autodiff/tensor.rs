use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`. Vectors are `1 x n` or `n x 1`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}x{}, {:?})", self.rows, self.cols, self.data)
    }
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "from_vec",
                lhs: (rows, cols),
                rhs: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn column_vector(data: Vec<f64>) -> Self {
        Self {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![x],
        }
    }

    pub fn filled(rows: usize, cols: usize, x: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![x; rows * cols],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, x: f64) {
        self.data[r * self.cols + c] = x;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        matmul_acc(self, other, &mut out);
        Ok(out)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `out += a * b`.
pub(crate) fn matmul_acc(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let (m, k) = a.shape();
    let n = b.cols;
    for i in 0..m {
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a.data[i * k + p];
            if x == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, y) in out_row.iter_mut().zip(b_row) {
                *o += x * y;
            }
        }
    }
}

/// `out += a * b^T`.
pub(crate) fn matmul_bt_acc(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let (m, k) = a.shape();
    let n = b.rows;
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b.data[j * k..(j + 1) * k];
            out.data[i * n + j] += a_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out += a^T * b`.
pub(crate) fn matmul_at_acc(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let (m, k) = a.shape();
    let n = b.cols;
    for i in 0..m {
        let b_row = &b.data[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a.data[i * k + p];
            if x == 0.0 {
                continue;
            }
            let out_row = &mut out.data[p * n..(p + 1) * n];
            for (o, y) in out_row.iter_mut().zip(b_row) {
                *o += x * y;
            }
        }
    }
}

/// Constant sparse matrix in compressed-row form (one-hot features, normalized
/// adjacency).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl SparseMatrix {
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut entries = Vec::new();
        row_ptr.push(0);
        for mut r in rows.iter().cloned() {
            r.sort_by_key(|e| e.0);
            debug_assert!(r.iter().all(|e| e.0 < cols));
            entries.extend(r);
            row_ptr.push(entries.len());
        }
        Self {
            rows: rows.len(),
            cols,
            row_ptr,
            entries,
        }
    }

    /// Keeps the non-zero entries of a dense tensor.
    pub fn from_dense(t: &Tensor) -> Self {
        let rows = (0..t.rows())
            .map(|r| {
                t.row(r)
                    .iter()
                    .enumerate()
                    .filter(|(_, x)| **x != 0.0)
                    .map(|(c, x)| (c, *x))
                    .collect()
            })
            .collect();
        Self::from_rows(t.cols(), rows)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.entries[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for &(c, x) in self.row(r) {
                t.set(r, c, x);
            }
        }
        t
    }

    /// `out += self * b`.
    pub(crate) fn mul_acc(&self, b: &Tensor, out: &mut Tensor) {
        let n = b.cols;
        for r in 0..self.rows {
            for &(c, x) in self.row(r) {
                let src = &b.data[c * n..(c + 1) * n];
                let dst = &mut out.data[r * n..(r + 1) * n];
                for (o, y) in dst.iter_mut().zip(src) {
                    *o += x * y;
                }
            }
        }
    }

    /// `out += self^T * b`.
    pub(crate) fn mul_t_acc(&self, b: &Tensor, out: &mut Tensor) {
        let n = b.cols;
        for r in 0..self.rows {
            let src = &b.data[r * n..(r + 1) * n];
            for &(c, x) in self.row(r) {
                let dst = &mut out.data[c * n..(c + 1) * n];
                for (o, y) in dst.iter_mut().zip(src) {
                    *o += x * y;
                }
            }
        }
    }
}
