//! Dense matrix kernels shared by the tape and the numeric code paths.

use crate::autodiff::tensor::Tensor;
use crate::par;

/// `a (m×k) × b (k×n)`; callers check shapes.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    par::for_each_row(&mut out, n, |i, row| {
        for p in 0..k {
            let s = ad[i * k + p];
            if s == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += s * bv;
            }
        }
    });
    Tensor::matrix(m, n, out)
}

/// `a (m×k) × bᵀ` where `b` is `n×k`.
pub fn matmul_bt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    par::for_each_row(&mut out, n, |i, row| {
        let ar = &ad[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let br = &bd[j * k..(j + 1) * k];
            *o = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    });
    Tensor::matrix(m, n, out)
}

/// `aᵀ × b` where `a` is `m×k` and `b` is `m×n`.
pub fn matmul_at(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; k * n];
    par::for_each_row(&mut out, n, |p, row| {
        for i in 0..m {
            let s = ad[i * k + p];
            if s == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&bd[i * n..(i + 1) * n]) {
                *o += s * bv;
            }
        }
    });
    Tensor::matrix(k, n, out)
}

/// Row-wise softmax; entries with `mask[i] == false` get probability 0.
pub fn softmax_rows(x: &Tensor, mask: Option<&[bool]>) -> Tensor {
    let c = x.cols();
    let xd = x.data();
    let mut out = vec![0.0; x.len()];
    par::for_each_row(&mut out, c, |i, row| {
        let src = &xd[i * c..(i + 1) * c];
        let keep = |j: usize| mask.is_none_or(|m| m[i * c + j]);
        let max = (0..c).filter(|&j| keep(j)).map(|j| src[j]).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return;
        }
        let mut total = 0.0;
        for j in 0..c {
            if keep(j) {
                let e = (src[j] - max).exp();
                row[j] = e;
                total += e;
            }
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    });
    Tensor::matrix(x.rows(), c, out)
}

/// Row-wise log-softmax; masked entries are reported as 0.
pub fn log_softmax_rows(x: &Tensor, mask: Option<&[bool]>) -> Tensor {
    let c = x.cols();
    let xd = x.data();
    let mut out = vec![0.0; x.len()];
    par::for_each_row(&mut out, c, |i, row| {
        let src = &xd[i * c..(i + 1) * c];
        let keep = |j: usize| mask.is_none_or(|m| m[i * c + j]);
        let max = (0..c).filter(|&j| keep(j)).map(|j| src[j]).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return;
        }
        // the arg-max term contributes exactly 1; ln_1p keeps tiny losses exact
        let top = (0..c).find(|&j| keep(j) && src[j] == max).unwrap_or(0);
        let rest: f64 = (0..c)
            .filter(|&j| keep(j) && j != top)
            .map(|j| (src[j] - max).exp())
            .sum();
        let lse = rest.ln_1p();
        for j in 0..c {
            if keep(j) {
                row[j] = (src[j] - max) - lse;
            }
        }
    });
    Tensor::matrix(x.rows(), c, out)
}

/// Rows scaled to unit Euclidean norm (norms floored at `NORM_FLOOR`).
pub fn normalize_rows(x: &Tensor) -> (Tensor, Vec<f64>) {
    let c = x.cols();
    let norms: Vec<f64> = (0..x.rows())
        .map(|i| x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR))
        .collect();
    let xd = x.data();
    let mut out = vec![0.0; x.len()];
    par::for_each_row(&mut out, c, |i, row| {
        for (o, v) in row.iter_mut().zip(&xd[i * c..(i + 1) * c]) {
            *o = v / norms[i];
        }
    });
    (Tensor::matrix(x.rows(), c, out), norms)
}

pub const NORM_FLOOR: f64 = 1e-12;
