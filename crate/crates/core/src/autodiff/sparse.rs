use crate::autodiff::tensor::Tensor;
use crate::error::{MgmError, Result};
use crate::par;

/// Sparse matrix in compressed-row form, with its transpose kept alongside
/// for the backward pass of [`spmm`](crate::autodiff::Tape::spmm).
///
/// Entries are stored sorted by `(row, col)`, so every row reduction runs in
/// a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
    t_row_ptr: Vec<usize>,
    t_col_idx: Vec<usize>,
    t_vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, weight)` triples; repeated coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(MgmError::Shape(format!("sparse matrix {rows}x{cols}")));
        }
        let mut entries = Vec::with_capacity(triplets.len());
        for &(r, c, w) in triplets {
            if r >= rows || c >= cols {
                return Err(MgmError::Shape(format!(
                    "entry ({r}, {c}) outside {rows}x{cols}"
                )));
            }
            if !w.is_finite() {
                return Err(MgmError::Domain(format!("non-finite weight at ({r}, {c})")));
            }
            entries.push((r, c, w));
        }
        entries.sort_by_key(|a| (a.0, a.1));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (r, c, w) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += w,
                _ => merged.push((r, c, w)),
            }
        }
        let (row_ptr, col_idx, vals) = compress(rows, merged.iter().copied());
        let mut transposed: Vec<(usize, usize, f64)> =
            merged.iter().map(|&(r, c, w)| (c, r, w)).collect();
        transposed.sort_by_key(|a| (a.0, a.1));
        let (t_row_ptr, t_col_idx, t_vals) = compress(cols, transposed.into_iter());
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            vals,
            t_row_ptr,
            t_col_idx,
            t_vals,
        })
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        SparseMatrix::from_triplets(n, n, &t).expect("identity is valid")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out.push((r, self.col_idx[k], self.vals[k]));
            }
        }
        out
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]];
        match span.binary_search(&c) {
            Ok(k) => self.vals[self.row_ptr[r] + k],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.vals[self.row_ptr[r]..self.row_ptr[r + 1]].iter().sum())
            .collect()
    }

    pub fn densify(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for (r, c, w) in self.triplets() {
            t.set(r, c, w);
        }
        t
    }

    /// `self × x`.
    pub fn matmul_dense(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.cols {
            return Err(MgmError::Shape(format!(
                "spmm: adjacency is {}x{}, features have {} rows",
                self.rows,
                self.cols,
                x.rows()
            )));
        }
        Ok(csr_times(self.rows, &self.row_ptr, &self.col_idx, &self.vals, x))
    }

    /// `selfᵀ × x`.
    pub fn transpose_matmul_dense(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.rows {
            return Err(MgmError::Shape(format!(
                "spmmᵀ: adjacency is {}x{}, operand has {} rows",
                self.rows,
                self.cols,
                x.rows()
            )));
        }
        Ok(csr_times(self.cols, &self.t_row_ptr, &self.t_col_idx, &self.t_vals, x))
    }
}

fn compress(
    rows: usize,
    sorted: impl Iterator<Item = (usize, usize, f64)>,
) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let mut row_ptr = vec![0usize; rows + 1];
    let mut col_idx = Vec::new();
    let mut vals = Vec::new();
    for (r, c, w) in sorted {
        row_ptr[r + 1] += 1;
        col_idx.push(c);
        vals.push(w);
    }
    for r in 0..rows {
        row_ptr[r + 1] += row_ptr[r];
    }
    (row_ptr, col_idx, vals)
}

fn csr_times(out_rows: usize, row_ptr: &[usize], col_idx: &[usize], vals: &[f64], x: &Tensor) -> Tensor {
    let f = x.cols();
    let xd = x.data();
    let mut out = vec![0.0; out_rows * f];
    par::for_each_row(&mut out, f, |r, row| {
        for k in row_ptr[r]..row_ptr[r + 1] {
            let w = vals[k];
            let src = &xd[col_idx[k] * f..(col_idx[k] + 1) * f];
            for (o, s) in row.iter_mut().zip(src) {
                *o += w * s;
            }
        }
    });
    Tensor::matrix(out_rows, f, out)
}
