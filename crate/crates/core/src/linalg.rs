//! Small dense complex matrix helpers for per-bin covariance work.
//!
//! Matrices are row-major `n x n` slices of `Complex64`.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

pub fn trace(m: &[C64], n: usize) -> C64 {
    (0..n).map(|i| m[i * n + i]).sum()
}

/// Frobenius norm.
pub fn fro_norm(m: &[C64]) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn matmul(a: &[C64], b: &[C64], n: usize) -> Vec<C64> {
    let mut out = vec![ZERO; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

pub fn matvec(a: &[C64], x: &[C64], n: usize) -> Vec<C64> {
    (0..n)
        .map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum())
        .collect()
}

/// `x^H y`
pub fn inner(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// Outer product `v v^H`.
pub fn outer(v: &[C64]) -> Vec<C64> {
    let n = v.len();
    let mut out = vec![ZERO; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = v[i] * v[j].conj();
        }
    }
    out
}

/// Inverse of a Hermitian positive-definite matrix. 3x3 uses the closed-form
/// adjugate, every other size goes through Cholesky.
pub fn invert_hermitian(m: &[C64], n: usize) -> Result<Vec<C64>> {
    if m.len() != n * n {
        return Err(Error::Shape(format!(
            "{} entries for {n}x{n} matrix",
            m.len()
        )));
    }
    if n == 3 {
        invert_3x3(m)
    } else {
        invert_cholesky(m, n)
    }
}

fn invert_3x3(m: &[C64]) -> Result<Vec<C64>> {
    let a = |i: usize, j: usize| m[i * 3 + j];
    let cof = [
        a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1),
        a(1, 2) * a(2, 0) - a(1, 0) * a(2, 2),
        a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0),
        a(0, 2) * a(2, 1) - a(0, 1) * a(2, 2),
        a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0),
        a(0, 1) * a(2, 0) - a(0, 0) * a(2, 1),
        a(0, 1) * a(1, 2) - a(0, 2) * a(1, 1),
        a(0, 2) * a(1, 0) - a(0, 0) * a(1, 2),
        a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0),
    ];
    let det = a(0, 0) * cof[0] + a(0, 1) * cof[1] + a(0, 2) * cof[2];
    let scale = fro_norm(m).powi(3);
    if det.norm() <= 1e-300 || det.norm() <= scale * 1e-15 {
        return Err(Error::Numerical(format!("singular 3x3 matrix (det {det})")));
    }
    // inverse = adj / det, adj = cofactor transpose
    let mut inv = vec![ZERO; 9];
    for i in 0..3 {
        for j in 0..3 {
            inv[i * 3 + j] = cof[j * 3 + i] / det;
        }
    }
    Ok(inv)
}

/// Lower-triangular Cholesky factor of a Hermitian positive-definite matrix.
pub fn cholesky(m: &[C64], n: usize) -> Result<Vec<C64>> {
    let mut l = vec![ZERO; n * n];
    for j in 0..n {
        let mut d = m[j * n + j].re;
        for k in 0..j {
            d -= l[j * n + k].norm_sqr();
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::Numerical(format!(
                "matrix not positive definite at pivot {j}"
            )));
        }
        let djj = d.sqrt();
        l[j * n + j] = C64::new(djj, 0.0);
        for i in j + 1..n {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k].conj();
            }
            l[i * n + j] = s / djj;
        }
    }
    Ok(l)
}

fn invert_cholesky(m: &[C64], n: usize) -> Result<Vec<C64>> {
    let l = cholesky(m, n)?;
    let mut inv = vec![ZERO; n * n];
    let mut e = vec![ZERO; n];
    for col in 0..n {
        e.iter_mut().for_each(|v| *v = ZERO);
        e[col] = ONE;
        // forward: L y = e
        let mut y = vec![ZERO; n];
        for i in 0..n {
            let mut s = e[i];
            for k in 0..i {
                s -= l[i * n + k] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        // backward: L^H x = y
        let mut x = vec![ZERO; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[k * n + i].conj() * x[k];
            }
            x[i] = s / l[i * n + i].conj();
        }
        for i in 0..n {
            inv[i * n + col] = x[i];
        }
    }
    Ok(inv)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &[C64], n: usize) -> Vec<f64> {
    let mat = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        nalgebra::Complex::new(m[i * n + j].re, m[i * n + j].im)
    });
    let mut ev: Vec<f64> = mat.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}
