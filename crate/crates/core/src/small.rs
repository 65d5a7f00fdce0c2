//! Closed-form 2×2 / 3×3 matrix helpers used at every lattice node.
//!
//! Matrices are always stored as 3×3 arrays; only the leading `dim × dim`
//! block is meaningful.

use crate::lattice::{sym_count, sym_index};

pub type Mat = [[f64; 3]; 3];

pub const ZERO: Mat = [[0.0; 3]; 3];

pub fn identity(dim: usize) -> Mat {
    let mut m = ZERO;
    for (i, row) in m.iter_mut().enumerate().take(dim) {
        row[i] = 1.0;
    }
    m
}

#[inline]
pub fn unpack_sym(packed: &[f64], dim: usize) -> Mat {
    let mut m = ZERO;
    for i in 0..dim {
        for j in 0..dim {
            m[i][j] = packed[sym_index(i, j, dim)];
        }
    }
    m
}

#[inline]
pub fn pack_sym(m: &Mat, dim: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), sym_count(dim));
    for i in 0..dim {
        for j in i..dim {
            out[sym_index(i, j, dim)] = m[i][j];
        }
    }
}

#[inline]
pub fn det(m: &Mat, dim: usize) -> f64 {
    if dim == 2 {
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    } else {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

/// Cofactor inverse; returns the determinant alongside.
#[inline]
pub fn inverse(m: &Mat, dim: usize) -> (Mat, f64) {
    let d = det(m, dim);
    let mut inv = ZERO;
    if dim == 2 {
        inv[0][0] = m[1][1] / d;
        inv[0][1] = -m[0][1] / d;
        inv[1][0] = -m[1][0] / d;
        inv[1][1] = m[0][0] / d;
    } else {
        inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / d;
        inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / d;
        inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / d;
        inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / d;
        inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / d;
        inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / d;
        inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / d;
        inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / d;
        inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / d;
    }
    (inv, d)
}

pub fn mul(a: &Mat, b: &Mat, dim: usize) -> Mat {
    let mut c = ZERO;
    for i in 0..dim {
        for j in 0..dim {
            c[i][j] = (0..dim).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn transpose(a: &Mat) -> Mat {
    let mut t = ZERO;
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

/// Eigenvalues of a symmetric matrix, ascending (first `dim` entries valid).
pub fn sym_eigenvalues(m: &Mat, dim: usize) -> [f64; 3] {
    if dim == 2 {
        let q = 0.5 * (m[0][0] + m[1][1]);
        let d = (0.25 * (m[0][0] - m[1][1]).powi(2) + m[0][1] * m[0][1]).sqrt();
        return [q - d, q + d, 0.0];
    }
    let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    if p1 == 0.0 {
        let mut e = [m[0][0], m[1][1], m[2][2]];
        e.sort_by(f64::total_cmp);
        return e;
    }
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = *m;
    for (i, row) in b.iter_mut().enumerate() {
        row[i] -= q;
        for v in row.iter_mut() {
            *v /= p;
        }
    }
    let r = (det(&b, 3) / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let hi = q + 2.0 * p * phi.cos();
    let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let mid = 3.0 * q - hi - lo;
    [lo, mid, hi]
}

/// Lower Cholesky factor of an SPD matrix.
pub fn cholesky(m: &Mat, dim: usize) -> Option<Mat> {
    let mut l = ZERO;
    for i in 0..dim {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = m[i][i] - s;
                if !(d > 0.0) {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (m[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

/// Inverse of a lower-triangular matrix.
pub fn lower_inverse(l: &Mat, dim: usize) -> Mat {
    let mut inv = ZERO;
    for i in 0..dim {
        inv[i][i] = 1.0 / l[i][i];
        for j in 0..i {
            let s: f64 = (j..i).map(|k| l[i][k] * inv[k][j]).sum();
            inv[i][j] = -s / l[i][i];
        }
    }
    inv
}

/// Eigenvalues of the pencil `(g, h)`, i.e. of `h^{-1} g`, ascending.
pub fn generalized_eigenvalues(g: &Mat, h: &Mat, dim: usize) -> Option<[f64; 3]> {
    let l = cholesky(h, dim)?;
    let li = lower_inverse(&l, dim);
    let m = mul(&mul(&li, g, dim), &transpose(&li), dim);
    // symmetrize away rounding before the closed-form solve
    let mut s = m;
    for i in 0..dim {
        for j in 0..dim {
            s[i][j] = 0.5 * (m[i][j] + m[j][i]);
        }
    }
    Some(sym_eigenvalues(&s, dim))
}
