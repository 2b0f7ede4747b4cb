//! Small dense linear algebra on tangent matrices (d ≤ 3).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// A d×d derivative matrix `D_x f` or a product of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentMatrix(pub DMatrix<f64>);

impl TangentMatrix {
    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let d = rows.len();
        Self(DMatrix::from_fn(d, rows[0].len(), |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Vec<f64> {
        singular_values(&self.0)
    }

    /// Operator 2-norm.
    pub fn norm(&self) -> f64 {
        self.singular_values().first().copied().unwrap_or(0.0)
    }

    pub fn mul(&self, rhs: &TangentMatrix) -> TangentMatrix {
        TangentMatrix(&self.0 * &rhs.0)
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|i| (0..v.len()).map(|j| self.0[(i, j)] * v[j]).sum()).collect()
    }
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 1 && m.ncols() == 1 {
        return vec![m[(0, 0)].abs()];
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// All k-element subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// k-th compound matrix: the matrix of k×k minors, which represents `∧^k M`
/// in the orthonormal basis `e_I` of wedge products. Compounds multiply:
/// `C_k(AB) = C_k(A) C_k(B)`.
pub fn compound(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let rows = subsets(m.nrows(), k);
    let cols = subsets(m.ncols(), k);
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        let sub = DMatrix::from_fn(k, k, |a, b| m[(rows[i][a], cols[j][b])]);
        sub.determinant()
    })
}

/// One Householder QR step `A = Q R` with `R` having a nonnegative diagonal.
pub fn qr_positive(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..r.nrows() {
        if r[(i, i)] < 0.0 {
            for j in 0..r.ncols() {
                r[(i, j)] = -r[(i, j)];
            }
            for j in 0..q.nrows() {
                q[(j, i)] = -q[(j, i)];
            }
        }
    }
    (q, r)
}

/// Fixed-size storage for `d ≤ 3` matrices; entries past `d` are unused.
pub type Mat3 = [[f64; 3]; 3];

pub fn to_dmatrix(m: &Mat3, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| m[i][j])
}

pub fn to_tangent(m: &Mat3, d: usize) -> TangentMatrix {
    TangentMatrix(to_dmatrix(m, d))
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..m.nrows().min(3) {
        for j in 0..m.ncols().min(3) {
            out[i][j] = m[(i, j)];
        }
    }
    out
}

pub fn mul3(a: &Mat3, b: &Mat3, d: usize) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..d {
        for j in 0..d {
            out[i][j] = (0..d).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn sub3(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][j] - b[i][j];
        }
    }
    out
}

pub fn apply3(a: &Mat3, v: &[f64; 3], d: usize) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..d {
        out[i] = (0..d).map(|k| a[i][k] * v[k]).sum();
    }
    out
}

pub fn inverse3(a: &Mat3, d: usize) -> Mat3 {
    match d {
        1 => {
            let mut out = [[0.0; 3]; 3];
            out[0][0] = 1.0 / a[0][0];
            out
        }
        2 => {
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            let mut out = [[0.0; 3]; 3];
            out[0][0] = a[1][1] / det;
            out[0][1] = -a[0][1] / det;
            out[1][0] = -a[1][0] / det;
            out[1][1] = a[0][0] / det;
            out
        }
        _ => from_dmatrix(&to_dmatrix(a, d).try_inverse().unwrap_or_else(|| DMatrix::from_element(d, d, f64::NAN))),
    }
}

/// Operator 2-norm; closed form for `d ≤ 2`.
pub fn op_norm(a: &Mat3, d: usize) -> f64 {
    match d {
        1 => a[0][0].abs(),
        2 => {
            let f2 = a[0][0].powi(2) + a[0][1].powi(2) + a[1][0].powi(2) + a[1][1].powi(2);
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            let disc = (f2 * f2 - 4.0 * det * det).max(0.0).sqrt();
            (0.5 * (f2 + disc)).sqrt()
        }
        _ => spectral_norm(&to_dmatrix(a, d)),
    }
}

pub fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compound_top_grade_is_determinant() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.5, -1.0, 3.0, 0.0, 0.2, 0.1, 1.0]);
        let c = compound(&m, 3);
        assert!((c[(0, 0)] - m.determinant()).abs() < 1e-12);
        assert_eq!(compound(&m, 2).nrows(), 3);
    }

    #[test]
    fn compound_is_multiplicative() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.5, -1.0, 1.0, 0.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(3, 3, &[0.3, 0.0, 1.0, 1.0, 1.0, 0.0, -2.0, 0.5, 1.0]);
        let lhs = compound(&(&a * &b), 2);
        let rhs = compound(&a, 2) * compound(&b, 2);
        assert!((lhs - rhs).abs().max() < 1e-12);
    }

    #[test]
    fn qr_reconstructs_with_positive_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let (q, r) = qr_positive(&a);
        assert!((&q * &r - &a).abs().max() < 1e-14);
        assert!(r[(0, 0)] > 0.0 && r[(1, 1)] > 0.0);
    }
}
