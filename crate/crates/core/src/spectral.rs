//! Eigendecomposition, gap detection and the Fermi projection computed both
//! from the spectrum and from a Riesz contour integral.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use ndarray_linalg::Inverse;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dagger, eye, hermitian_defect, hermitian_part, max_abs, trace, Mat, C64, I};
use crate::operator::OperatorMatrix;

#[derive(Clone, Debug)]
pub struct Spectrum {
    /// Ascending.
    pub eigenvalues: Array1<f64>,
    /// Columns are the eigenvectors.
    pub eigenvectors: Mat,
}

pub fn eigendecompose(h: &OperatorMatrix) -> Result<Spectrum> {
    let hd = hermitian_defect(&h.matrix);
    if hd > 1e-12 {
        return Err(Error::FlagViolation(format!("eigendecompose needs a Hermitian matrix, defect {hd:e}")));
    }
    let (e, v) = crate::linalg::eigh(&h.matrix)?;
    let scale = e.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    let hv = h.matrix.dot(&v);
    let mut ve = v.clone();
    for (j, mut col) in ve.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|z| z * e[j]);
    }
    let res = max_abs(&(hv - ve));
    if res > 1e-10 * scale {
        return Err(Error::SolverFailure(format!("eigenpair residual {res:e}")));
    }
    let n = v.nrows();
    let unit = max_abs(&(dagger(&v).dot(&v) - eye(n)));
    if unit > 1e-12 * (n as f64).max(1.0).sqrt() {
        return Err(Error::SolverFailure(format!("eigenvector unitarity defect {unit:e}")));
    }
    Ok(Spectrum { eigenvalues: e, eigenvectors: v })
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn distance_to(&self, z: C64) -> f64 {
        self.eigenvalues.iter().fold(f64::INFINITY, |m, &e| m.min((C64::new(e, 0.0) - z).norm()))
    }

    /// Energy halfway between eigenvalues `rank - 1` and `rank`.
    pub fn mid_gap(&self, rank: usize) -> f64 {
        0.5 * (self.eigenvalues[rank - 1] + self.eigenvalues[rank])
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct GapInfo {
    pub lower_edge: f64,
    pub upper_edge: f64,
    pub width: f64,
    pub mu: f64,
    /// Number of eigenvalues below `mu`.
    pub rank: usize,
}

/// Largest eigenvalue-free interval containing `hint`.
pub fn find_gap(s: &Spectrum, hint: f64, gap_min: f64) -> Result<GapInfo> {
    let e = &s.eigenvalues;
    let rank = e.iter().filter(|&&x| x < hint).count();
    if e.iter().any(|&x| x == hint) {
        return Err(Error::NoGap { hint, gap_min });
    }
    let lower_edge = if rank == 0 { f64::NEG_INFINITY } else { e[rank - 1] };
    let upper_edge = if rank == e.len() { f64::INFINITY } else { e[rank] };
    let width = upper_edge - lower_edge;
    if !(width >= gap_min) {
        return Err(Error::NoGap { hint, gap_min });
    }
    let mu = if width.is_finite() { 0.5 * (lower_edge + upper_edge) } else { hint };
    Ok(GapInfo { lower_edge, upper_edge, width, mu, rank })
}

/// Gap above the lowest `rank` eigenvalues.
pub fn gap_at_rank(s: &Spectrum, rank: usize, gap_min: f64) -> Result<GapInfo> {
    if rank == 0 || rank >= s.dim() {
        return Err(Error::NoGap { hint: f64::NAN, gap_min });
    }
    find_gap(s, s.mid_gap(rank), gap_min)
}

#[derive(Clone, Debug)]
pub struct Projection {
    pub matrix: OperatorMatrix,
    pub rank: usize,
}

pub fn fermi_projection_spectral(s: &Spectrum, mu: f64) -> Result<Projection> {
    let dist = s.distance_to(C64::new(mu, 0.0));
    if dist < 1e-8 {
        return Err(Error::FermiOnSpectrum { mu, distance: dist });
    }
    let rank = s.eigenvalues.iter().filter(|&&x| x < mu).count();
    Ok(Projection { matrix: OperatorMatrix::new(spectral_projector(s, rank)), rank }.tagged())
}

/// Projection onto the lowest `rank` eigenvectors.
pub fn spectral_projector(s: &Spectrum, rank: usize) -> Mat {
    let v = s.eigenvectors.slice(ndarray::s![.., ..rank]);
    let vd = v.t().mapv(|z| z.conj());
    v.dot(&vd)
}

impl Projection {
    fn tagged(mut self) -> Self {
        self.matrix.hermitian = true;
        self
    }

    pub fn idempotency_defect(&self) -> f64 {
        let p = &self.matrix.matrix;
        max_abs(&(p.dot(p) - p))
    }
}

/// Trapezoidal rule on a circle `z = center + radius exp(i theta)`.
#[derive(Clone, Debug, Serialize)]
pub struct Contour {
    pub center: f64,
    pub radius: f64,
    #[serde(skip)]
    pub nodes: Vec<C64>,
    #[serde(skip)]
    pub weights: Vec<C64>,
    /// Smallest distance from a node to the spectrum.
    pub clearance: f64,
}

impl Contour {
    pub fn circle(center: f64, radius: f64, n_nodes: usize) -> Self {
        let mut nodes = Vec::with_capacity(n_nodes);
        let mut weights = Vec::with_capacity(n_nodes);
        for k in 0..n_nodes {
            let th = 2.0 * PI * (k as f64 + 0.5) / n_nodes as f64;
            let e = C64::from_polar(1.0, th);
            nodes.push(C64::new(center, 0.0) + e * radius);
            weights.push(I * e * radius * (2.0 * PI / n_nodes as f64));
        }
        Contour { center, radius, nodes, weights, clearance: f64::NAN }
    }
}

/// Geometric convergence factor of the trapezoidal rule for a circle
/// crossing the real axis at `left` and `right`.
fn convergence_factor(occ: &[f64], rest: &[f64], left: f64, right: f64) -> f64 {
    let c = 0.5 * (left + right);
    let r = 0.5 * (right - left);
    let inner = occ.iter().fold(0.0_f64, |m, &e| m.max((e - c).abs() / r));
    let outer = rest.iter().fold(0.0_f64, |m, &e| m.max(r / (e - c).abs()));
    inner.max(outer)
}

/// Circle enclosing exactly the eigenvalues below `gap.mu`, with every node
/// at least a quarter gap away from the spectrum. The crossing points are
/// chosen to minimise the quadrature convergence factor.
pub fn build_contour(gap: &GapInfo, s: &Spectrum, n_nodes: usize) -> Result<Contour> {
    if n_nodes < 4 {
        return Err(Error::EnclosureFailure(format!("{n_nodes} nodes are too few")));
    }
    let e: Vec<f64> = s.eigenvalues.to_vec();
    let (occ, rest): (Vec<f64>, Vec<f64>) = e.iter().partition(|&&x| x < gap.mu);
    let spread = e.last().unwrap_or(&0.0) - e.first().unwrap_or(&0.0);
    let contour = if occ.is_empty() {
        let top = rest.first().copied().unwrap_or(gap.mu);
        let r = 0.5 * spread.max(1.0);
        Contour::circle(top - 3.0 * r, r, n_nodes)
    } else {
        let lo = occ[0];
        let hi = *occ.last().unwrap();
        let g = if gap.width.is_finite() { gap.width } else { (hi - lo).max(1.0) };
        let right_max = if rest.is_empty() { hi + g } else { rest[0] - 0.25 * g };
        let min_m = 0.25 * g;
        let mut best = (f64::INFINITY, lo - min_m, hi + min_m);
        let steps = 60;
        for i in 0..=steps {
            let ml = min_m * (1.0 + 40.0 * (i as f64 / steps as f64).powi(2));
            for j in 0..=steps {
                let right = hi + min_m + (right_max - hi - min_m) * j as f64 / steps as f64;
                let f = convergence_factor(&occ, &rest, lo - ml, right);
                if f < best.0 {
                    best = (f, lo - ml, right);
                }
            }
        }
        let (_, left, right) = best;
        Contour::circle(0.5 * (left + right), 0.5 * (right - left), n_nodes)
    };
    let clearance = contour.nodes.iter().fold(f64::INFINITY, |m, &z| m.min(s.distance_to(z)));
    let c = contour.center;
    let r = contour.radius;
    for &x in &e {
        let inside = (x - c).abs() < r;
        if inside != (x < gap.mu) {
            return Err(Error::EnclosureFailure(format!("eigenvalue {x} on the wrong side of the circle")));
        }
    }
    if gap.width.is_finite() && clearance < 0.25 * gap.width * (1.0 - 1e-12) {
        return Err(Error::EnclosureFailure(format!("node clearance {clearance:e} below a quarter gap")));
    }
    Ok(Contour { clearance, ..contour })
}

/// `P = (i / 2 pi) sum_k w_k (H - z_k)^-1`, Hermitised.
pub fn fermi_projection_riesz(h: &OperatorMatrix, contour: &Contour) -> Result<Projection> {
    let n = h.dim();
    let mut p: Mat = Array2::zeros((n, n));
    for (z, w) in contour.nodes.iter().zip(&contour.weights) {
        let r = resolvent(&h.matrix, *z)?;
        p.scaled_add(I * *w / (2.0 * PI), &r);
    }
    let p = hermitian_part(&p);
    let proj = Projection { rank: trace(&p).re.round().max(0.0) as usize, matrix: OperatorMatrix::new(p) }.tagged();
    let d = proj.idempotency_defect();
    if d > 1e-6 {
        return Err(Error::QuadratureDivergence(d));
    }
    Ok(proj)
}

/// `(H - z)^-1` by LU factorisation.
pub fn resolvent(h: &Mat, z: C64) -> Result<Mat> {
    let n = h.nrows();
    let mut a = h.clone();
    for i in 0..n {
        a[[i, i]] -= z;
    }
    Ok(a.inv()?)
}
