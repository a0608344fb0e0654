//! Fixed-capacity small vectors and matrices (dimension ≤ 3) used on the hot
//! path. Only the leading `n` entries are meaningful; the rest stay zero.

use nalgebra::DMatrix;

use crate::field::MAX_DIM;

pub type Vec3 = [f64; MAX_DIM];
pub type Mat3 = [[f64; MAX_DIM]; MAX_DIM];

pub const ZERO_VEC: Vec3 = [0.0; MAX_DIM];
pub const ZERO_MAT: Mat3 = [[0.0; MAX_DIM]; MAX_DIM];

pub fn identity(n: usize) -> Mat3 {
    let mut m = ZERO_MAT;
    for (i, row) in m.iter_mut().enumerate().take(n) {
        row[i] = 1.0;
    }
    m
}

pub fn vec_from_slice(x: &[f64]) -> Vec3 {
    let mut v = ZERO_VEC;
    v[..x.len()].copy_from_slice(x);
    v
}

pub fn det(n: usize, m: &Mat3) -> f64 {
    match n {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        3 => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        _ => panic!("unsupported dimension {n}"),
    }
}

/// Solves `m x = b` by Cramer's rule. Returns `None` when `|det m|` is below
/// `min_det`.
pub fn solve(n: usize, m: &Mat3, b: &Vec3, min_det: f64) -> Option<Vec3> {
    let d = det(n, m);
    if !(d.abs() > min_det) {
        return None;
    }
    let mut x = ZERO_VEC;
    for (col, xc) in x.iter_mut().enumerate().take(n) {
        let mut mc = *m;
        for row in 0..n {
            mc[row][col] = b[row];
        }
        *xc = det(n, &mc) / d;
    }
    Some(x)
}

pub fn mat_mul(n: usize, a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = ZERO_MAT;
    for i in 0..n {
        for j in 0..n {
            c[i][j] = (0..n).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn norm(n: usize, v: &Vec3) -> f64 {
    v[..n].iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn to_dmatrix(n: usize, m: &Mat3) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| m[i][j])
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_symmetric_eigenvalue(n: usize, m: &Mat3) -> f64 {
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[i][j] + m[j][i]));
    sym.symmetric_eigenvalues().min()
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn max_symmetric_eigenvalue(n: usize, m: &Mat3) -> f64 {
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[i][j] + m[j][i]));
    sym.symmetric_eigenvalues().max()
}

/// Ratio of largest to smallest singular value (infinite when singular).
pub fn condition_number(n: usize, m: &Mat3) -> f64 {
    let sv = to_dmatrix(n, m).singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cramer_solves_small_systems() {
        let m = [[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]];
        let x = [1.0, -2.0, 0.5];
        let b = [
            (0..3).map(|k| m[0][k] * x[k]).sum(),
            (0..3).map(|k| m[1][k] * x[k]).sum(),
            (0..3).map(|k| m[2][k] * x[k]).sum(),
        ];
        let got = solve(3, &m, &b, 1e-14).unwrap();
        for k in 0..3 {
            assert!((got[k] - x[k]).abs() < 1e-13);
        }
        assert!(solve(2, &[[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0; 3]], &b, 1e-14).is_none());
    }

    #[test]
    fn eigen_and_condition() {
        let m = [[4.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0; 3]];
        assert!((min_symmetric_eigenvalue(2, &m) - 1.0).abs() < 1e-14);
        assert!((condition_number(2, &m) - 4.0).abs() < 1e-12);
        assert_eq!(det(2, &m), 4.0);
    }
}
