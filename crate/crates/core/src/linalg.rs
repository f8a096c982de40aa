//! Dense complex matrix helpers shared by the other modules.

use ndarray::{Array1, Array2, Zip};
use ndarray_linalg::{Eigh, SVD, UPLO};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Mat = Array2<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn eye(n: usize) -> Mat {
    Array2::eye(n)
}

pub fn zeros(n: usize) -> Mat {
    Array2::zeros((n, n))
}

pub fn dagger(a: &Mat) -> Mat {
    a.t().mapv(|z| z.conj())
}

pub fn commutator(a: &Mat, b: &Mat) -> Mat {
    a.dot(b) - b.dot(a)
}

pub fn trace(a: &Mat) -> C64 {
    a.diag().sum()
}

pub fn max_abs(a: &Mat) -> f64 {
    a.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

pub fn frobenius(a: &Mat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest singular value.
pub fn op_norm(a: &Mat) -> Result<f64> {
    if a.is_empty() {
        return Ok(0.0);
    }
    let (_, s, _) = a.svd(false, false)?;
    Ok(s.iter().cloned().fold(0.0, f64::max))
}

pub fn hermitian_defect(a: &Mat) -> f64 {
    let mut m = 0.0_f64;
    let n = a.nrows();
    for i in 0..n {
        for j in i..n {
            m = m.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    m
}

pub fn hermitian_part(a: &Mat) -> Mat {
    (a + &dagger(a)).mapv(|z| z * 0.5)
}

/// Entrywise product with a real kernel.
pub fn hadamard_real(k: &Array2<f64>, a: &Mat) -> Mat {
    let mut out = a.clone();
    Zip::from(&mut out).and(k).for_each(|z, &w| *z *= w);
    out
}

/// Eigenvalues and eigenvectors of a Hermitian matrix, ascending.
///
/// For row-major complex input the backend returns eigenvectors of the
/// transpose, so the conjugate (equal to the transpose) is passed instead and
/// the result is checked against the original.
pub fn eigh(a: &Mat) -> Result<(Array1<f64>, Mat)> {
    let scale = max_abs(a).max(1.0);
    let conj = a.mapv(|z| z.conj());
    let (e, v) = conj.eigh(UPLO::Lower)?;
    if eig_residual(a, &e, &v) <= 1e-9 * scale {
        return Ok((e, v));
    }
    let (e, v) = a.as_standard_layout().eigh(UPLO::Lower)?;
    let r = eig_residual(a, &e, &v);
    if r > 1e-9 * scale {
        return Err(Error::SolverFailure(format!("Hermitian eigensolver residual {r:e}")));
    }
    Ok((e, v))
}

fn eig_residual(a: &Mat, e: &Array1<f64>, v: &Mat) -> f64 {
    let mut ve = v.clone();
    for (j, mut col) in ve.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|z| z * e[j]);
    }
    max_abs(&(a.dot(v) - ve))
}

/// `V^dagger A V`
pub fn to_basis(v: &Mat, a: &Mat) -> Mat {
    dagger(v).dot(&a.dot(v))
}

/// `V A V^dagger`
pub fn from_basis(v: &Mat, a: &Mat) -> Mat {
    v.dot(&a.dot(&dagger(v)))
}

pub fn check_square(a: &Mat, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::FlagViolation(format!("{what} is not square")));
    }
    Ok(())
}
