//! Diagonal/off-diagonal splitting relative to a projection, the Liouvillian
//! `L(B) = -i [H, B]` and its inverse on off-diagonal operators.

use std::f64::consts::PI;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::{commutator, eye, from_basis, to_basis, Mat, C64, I};
use crate::spectral::{resolvent, Contour, Projection, Spectrum};

#[derive(Clone, Debug)]
pub struct OdSplit {
    pub diagonal: Mat,
    pub offdiagonal: Mat,
}

/// `A^D = PAP + QAQ`, `A^OD = PAQ + QAP`.
pub fn od_split(a: &Mat, p: &Projection) -> OdSplit {
    let p = &p.matrix.matrix;
    let q = eye(p.nrows()) - p;
    let pa = p.dot(a);
    let qa = q.dot(a);
    let diagonal = pa.dot(p) + qa.dot(&q);
    let offdiagonal = pa.dot(&q) + qa.dot(p);
    OdSplit { diagonal, offdiagonal }
}

/// `[P, [P, A]]`, equal to the off-diagonal part.
pub fn offdiagonal_commutator_form(a: &Mat, p: &Mat) -> Mat {
    commutator(p, &commutator(p, a))
}

pub fn liouvillian(h: &Mat, b: &Mat) -> Mat {
    commutator(h, b).mapv(|z| -I * z)
}

/// Eigenbasis entries `i A_kl / (E_k - E_l)` on pairs straddling the gap,
/// zero elsewhere. `a` is already in the eigenbasis.
pub fn divide_cross_gap(e: &[f64], rank: usize, a: &Mat) -> Result<Mat> {
    let n = e.len();
    let mut out = Array2::zeros((n, n));
    let mut min_den = f64::INFINITY;
    for k in 0..n {
        for l in 0..n {
            if (k < rank) == (l < rank) {
                continue;
            }
            let den = e[k] - e[l];
            min_den = min_den.min(den.abs());
            out[[k, l]] = I * a[[k, l]] / den;
        }
    }
    if min_den < 1e-8 {
        return Err(Error::GapTooSmall(min_den));
    }
    Ok(out)
}

/// Inverse Liouvillian on the off-diagonal part of `a`.
pub fn inv_liouvillian_spectral(s: &Spectrum, p: &Projection, a: &Mat) -> Result<Mat> {
    let v = &s.eigenvectors;
    let at = to_basis(v, a);
    let e: Vec<f64> = s.eigenvalues.to_vec();
    Ok(from_basis(v, &divide_cross_gap(&e, p.rank, &at)?))
}

/// `(1 / 2 pi) sum_k w_k R(z_k) [P, A] R(z_k)`.
pub fn inv_liouvillian_contour(h: &Mat, p: &Projection, a: &Mat, contour: &Contour) -> Result<Mat> {
    let n = h.nrows();
    let pa = commutator(&p.matrix.matrix, a);
    let mut out = Array2::<C64>::zeros((n, n));
    for (z, w) in contour.nodes.iter().zip(&contour.weights) {
        let r = resolvent(h, *z)?;
        out.scaled_add(*w / (2.0 * PI), &r.dot(&pa).dot(&r));
    }
    Ok(out)
}
