//! Position calculus on the torus.
//!
//! The commutator `[X_j, T]` is realised by a [`Derivation`]. Two flavours are
//! available:
//!
//! * `MinimalImage`: entrywise multiplication by the minimal-image
//!   displacement table. Traces of its images vanish identically, but it
//!   obeys the Leibniz rule only up to terms of the size of `T` across half the
//!   torus.
//! * `Twist`: every operator is carried as a truncated Taylor jet in a uniform
//!   boundary twist `kappa`, `H_kappa(x, x') = H(x, x') exp(-i kappa . (x - x'))`
//!   on each bond, and `[X_j, T] = i d/dkappa_j T`. This is an exact derivation,
//!   so algebraic identities built from it hold to round-off.
//!
//! A [`Fiber`] bundles a Hamiltonian jet with its eigenbasis and the Fermi
//! projection jet, and solves the inverse Liouvillian order by order.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::lattice::{Bond, DisplacementTable, LatticeModel};
use crate::linalg::{dagger, eigh, from_basis, hermitian_defect, hermitian_part, to_basis, Mat, C64, I};
use crate::superop::divide_cross_gap;

pub type Key = (usize, usize);

fn factorial(k: usize) -> f64 {
    (1..=k).map(|x| x as f64).product()
}

/// Downward-closed set of Taylor multi-indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shape {
    keys: Vec<Key>,
}

impl Shape {
    /// All `(a, b)` with `a <= k1`, `b <= k2`.
    pub fn tensor(k1: usize, k2: usize) -> Self {
        let mut keys = Vec::new();
        for a in 0..=k1 {
            for b in 0..=k2 {
                keys.push((a, b));
            }
        }
        Shape { keys }
    }

    /// Value and first derivatives only.
    pub fn first_order() -> Self {
        Shape { keys: vec![(0, 0), (0, 1), (1, 0)] }
    }

    pub fn scalar() -> Self {
        Shape { keys: vec![(0, 0)] }
    }

    pub fn keys(&self) -> &[Key] {
        &self.keys
    }

    pub fn contains(&self, k: Key) -> bool {
        self.keys.contains(&k)
    }
}

/// Truncated bivariate Taylor series with matrix coefficients.
#[derive(Clone, Debug)]
pub struct Jet {
    n: usize,
    coeffs: BTreeMap<Key, Mat>,
}

impl Jet {
    pub fn zero(n: usize, shape: &Shape) -> Self {
        let coeffs = shape.keys().iter().map(|&k| (k, Array2::zeros((n, n)))).collect();
        Jet { n, coeffs }
    }

    /// Twist-independent operator.
    pub fn constant(m: Mat, shape: &Shape) -> Self {
        let n = m.nrows();
        let mut j = Jet::zero(n, shape);
        j.coeffs.insert((0, 0), m);
        j
    }

    pub fn scalar(m: Mat) -> Self {
        Jet::constant(m, &Shape::scalar())
    }

    /// `sum_b amp_b exp(-i (kappa0 + kappa) . d_b) |row><col|`, expanded in `kappa`.
    pub fn from_bonds(n: usize, bonds: &[Bond], twist: [f64; 2], shape: &Shape) -> Self {
        let mut j = Jet::zero(n, shape);
        for b in bonds {
            let [d1, d2] = b.displacement;
            let base = b.amplitude * C64::from_polar(1.0, -(twist[0] * d1 + twist[1] * d2));
            for (&(a, c), m) in j.coeffs.iter_mut() {
                let f = (-I * d1).powu(a as u32) / factorial(a) * (-I * d2).powu(c as u32) / factorial(c);
                m[[b.row, b.col]] += base * f;
            }
        }
        j
    }

    /// Extends a matrix to a twist family through its minimal-image
    /// displacements.
    pub fn lift(m: &Mat, d: &DisplacementTable, twist: [f64; 2], shape: &Shape) -> Self {
        let n = m.nrows();
        let mut j = Jet::zero(n, shape);
        for (&(a, c), out) in j.coeffs.iter_mut() {
            let fa = factorial(a);
            let fc = factorial(c);
            Zip::from(out).and(m).and(&d.d1).and(&d.d2).for_each(|o, &v, &x, &y| {
                let base = v * C64::from_polar(1.0, -(twist[0] * x + twist[1] * y));
                *o = base * (-I * x).powu(a as u32) / fa * (-I * y).powu(c as u32) / fc;
            });
        }
        j
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn keys(&self) -> impl Iterator<Item = &Key> {
        self.coeffs.keys()
    }

    pub fn shape(&self) -> Shape {
        Shape { keys: self.coeffs.keys().cloned().collect() }
    }

    pub fn has(&self, k: Key) -> bool {
        self.coeffs.contains_key(&k)
    }

    pub fn value(&self) -> &Mat {
        &self.coeffs[&(0, 0)]
    }

    pub fn get(&self, k: Key) -> Option<&Mat> {
        self.coeffs.get(&k)
    }

    pub fn insert(&mut self, k: Key, m: Mat) {
        self.coeffs.insert(k, m);
    }

    pub fn restrict(&self, shape: &Shape) -> Jet {
        let coeffs = self.coeffs.iter().filter(|(k, _)| shape.contains(**k)).map(|(k, m)| (*k, m.clone())).collect();
        Jet { n: self.n, coeffs }
    }

    fn common(&self, other: &Jet) -> Vec<Key> {
        self.coeffs.keys().filter(|k| other.coeffs.contains_key(k)).cloned().collect()
    }

    pub fn map(&self, f: impl Fn(&Mat) -> Mat) -> Jet {
        Jet { n: self.n, coeffs: self.coeffs.iter().map(|(k, m)| (*k, f(m))).collect() }
    }

    pub fn scale(&self, s: C64) -> Jet {
        self.map(|m| m.mapv(|z| z * s))
    }

    pub fn lin(&self, a: C64, other: &Jet, b: C64) -> Jet {
        let coeffs = self
            .common(other)
            .into_iter()
            .map(|k| {
                let mut m = self.coeffs[&k].mapv(|z| z * a);
                m.scaled_add(b, &other.coeffs[&k]);
                (k, m)
            })
            .collect();
        Jet { n: self.n, coeffs }
    }

    pub fn add(&self, other: &Jet) -> Jet {
        self.lin(C64::new(1.0, 0.0), other, C64::new(1.0, 0.0))
    }

    pub fn sub(&self, other: &Jet) -> Jet {
        self.lin(C64::new(1.0, 0.0), other, C64::new(-1.0, 0.0))
    }

    /// Cauchy product.
    pub fn mul(&self, other: &Jet) -> Jet {
        let keys = self.common(other);
        let mut coeffs = BTreeMap::new();
        for &(a, b) in &keys {
            let mut s: Mat = Array2::zeros((self.n, self.n));
            for &(a1, b1) in &keys {
                if a1 > a || b1 > b {
                    continue;
                }
                let k2 = (a - a1, b - b1);
                let (x, y) = (&self.coeffs[&(a1, b1)], &other.coeffs[&k2]);
                ndarray::linalg::general_mat_mul(C64::new(1.0, 0.0), x, y, C64::new(1.0, 0.0), &mut s);
            }
            coeffs.insert((a, b), s);
        }
        Jet { n: self.n, coeffs }
    }

    pub fn commutator(&self, other: &Jet) -> Jet {
        self.mul(other).sub(&other.mul(self))
    }

    pub fn dagger(&self) -> Jet {
        self.map(dagger)
    }

    /// `i d/dkappa_axis`.
    pub fn twist_derivative(&self, axis: usize) -> Result<Jet> {
        let mut coeffs = BTreeMap::new();
        for &(a, b) in self.coeffs.keys() {
            let (up, f) = if axis == 1 { ((a + 1, b), a + 1) } else { ((a, b + 1), b + 1) };
            if let Some(m) = self.coeffs.get(&up) {
                coeffs.insert((a, b), m.mapv(|z| z * I * f as f64));
            }
        }
        if coeffs.is_empty() {
            return Err(Error::JetOrderExhausted(axis));
        }
        Ok(Jet { n: self.n, coeffs })
    }

    /// Evaluates the truncated series at twist offset `kappa`.
    pub fn evaluate(&self, kappa: [f64; 2]) -> Mat {
        let mut out = Array2::zeros((self.n, self.n));
        for (&(a, b), m) in &self.coeffs {
            out.scaled_add(C64::new(kappa[0].powi(a as i32) * kappa[1].powi(b as i32), 0.0), m);
        }
        out
    }
}

/// Realisation of `T -> [X_j, T]`.
#[derive(Clone, Debug)]
pub enum Derivation {
    MinimalImage(Arc<DisplacementTable>),
    Twist,
}

impl Derivation {
    pub fn apply(&self, axis: usize, t: &Jet) -> Result<Jet> {
        match self {
            Derivation::MinimalImage(d) => {
                let k = d.axis(axis);
                Ok(t.map(|m| crate::linalg::hadamard_real(k, m)))
            }
            Derivation::Twist => t.twist_derivative(axis),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Derivation::MinimalImage(_) => "minimal-image",
            Derivation::Twist => "twist",
        }
    }
}

/// Hamiltonian jet with its eigenbasis and Fermi projection jet.
#[derive(Clone, Debug)]
pub struct Fiber {
    pub twist: [f64; 2],
    pub derivation: Derivation,
    pub hamiltonian: Jet,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Mat,
    pub rank: usize,
    /// Site-basis projection jet.
    pub projection: Jet,
    /// `N a^2`, the area of the torus.
    pub area: f64,
    h_eig: Jet,
    p_eig: Jet,
}

impl Fiber {
    /// Fiber filling the lowest `rank` states of `h`.
    pub fn new(h: Jet, derivation: Derivation, rank: usize, area: f64, twist: [f64; 2]) -> Result<Self> {
        let h0 = h.value();
        let hd = hermitian_defect(h0);
        if hd > 1e-12 {
            return Err(Error::FlagViolation(format!("fiber Hamiltonian Hermitian defect {hd:e}")));
        }
        let (e, v) = eigh(&hermitian_part(h0))?;
        let e: Vec<f64> = e.to_vec();
        if rank == 0 || rank >= e.len() {
            return Err(Error::NoGap { hint: f64::NAN, gap_min: 0.0 });
        }
        let gap = e[rank] - e[rank - 1];
        if gap < 1e-8 {
            return Err(Error::GapTooSmall(gap));
        }
        let h_eig = h.map(|m| to_basis(&v, m));
        let p_eig = projection_jet(&e, rank, &h_eig)?;
        let projection = p_eig.map(|m| from_basis(&v, m));
        Ok(Fiber { twist, derivation, hamiltonian: h, eigenvalues: e, eigenvectors: v, rank, projection, area, h_eig, p_eig })
    }

    pub fn minimal_image(model: &LatticeModel, d: Arc<DisplacementTable>, rank: usize) -> Result<Self> {
        let h = Jet::scalar(model.hamiltonian.matrix.clone());
        Fiber::new(h, Derivation::MinimalImage(d), rank, model.geometry.area(), [0.0, 0.0])
    }

    pub fn twisted(model: &LatticeModel, twist: [f64; 2], shape: &Shape, rank: usize) -> Result<Self> {
        let h = Jet::from_bonds(model.n_sites(), &model.bonds, twist, shape);
        Fiber::new(h, Derivation::Twist, rank, model.geometry.area(), twist)
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn gap(&self) -> f64 {
        self.eigenvalues[self.rank] - self.eigenvalues[self.rank - 1]
    }

    pub fn commutator_x(&self, axis: usize, t: &Jet) -> Result<Jet> {
        self.derivation.apply(axis, t)
    }

    /// `T(A) = tr A / (N a^2)`.
    pub fn trace_density(&self, m: &Mat) -> C64 {
        crate::linalg::trace(m) / self.area
    }

    fn restrict_to(&self, j: &Jet, a: &Jet) -> Jet {
        j.restrict(&a.shape())
    }

    /// `[P, [P, A]]`
    pub fn offdiagonal(&self, a: &Jet) -> Jet {
        let p = self.restrict_to(&self.projection, a);
        p.commutator(&p.commutator(a))
    }

    /// `X_j^OD = -[P, [X_j, P]]`
    pub fn position_offdiagonal(&self, axis: usize) -> Result<Jet> {
        let dp = self.commutator_x(axis, &self.projection)?;
        let p = self.restrict_to(&self.projection, &dp);
        Ok(p.commutator(&dp).scale(C64::new(-1.0, 0.0)))
    }

    /// Off-diagonal solution `B` of `-i [H, B] = A^OD`, jet by jet.
    pub fn inv_liouvillian(&self, a: &Jet) -> Result<Jet> {
        let v = &self.eigenvectors;
        let n = self.dim();
        let shape = a.shape();
        let pe = self.p_eig.restrict(&shape);
        let ae = a.map(|m| to_basis(v, m));
        let aod = pe.commutator(&pe.commutator(&ae));
        let qe = {
            let mut q = pe.scale(C64::new(-1.0, 0.0));
            let q0 = crate::linalg::eye(n) - pe.value();
            q.insert((0, 0), q0);
            q
        };
        let occ: Vec<bool> = (0..n).map(|i| i < self.rank).collect();
        let mut b: BTreeMap<Key, Mat> = BTreeMap::new();
        for &k in shape.keys() {
            let mut rhs = aod.coeffs[&k].clone();
            for (&kh, hm) in &self.h_eig.coeffs {
                if kh == (0, 0) || kh.0 > k.0 || kh.1 > k.1 {
                    continue;
                }
                if let Some(bm) = b.get(&(k.0 - kh.0, k.1 - kh.1)) {
                    rhs.scaled_add(I, &(hm.dot(bm) - bm.dot(hm)));
                }
            }
            let mut bk = divide_cross_gap(&self.eigenvalues, self.rank, &rhs)?;
            if k != (0, 0) {
                let mut sp: Mat = Array2::zeros((n, n));
                let mut sq: Mat = Array2::zeros((n, n));
                for (&kb, bm) in &b {
                    if kb.0 > k.0 || kb.1 > k.1 {
                        continue;
                    }
                    let rest = (k.0 - kb.0, k.1 - kb.1);
                    for a1 in 0..=rest.0 {
                        for a2 in 0..=rest.1 {
                            let ka = (a1, a2);
                            let kc = (rest.0 - a1, rest.1 - a2);
                            let (Some(pa), Some(pc)) = (pe.get(ka), pe.get(kc)) else { continue };
                            sp += &pa.dot(bm).dot(pc);
                            let (qa, qc) = (&qe.coeffs[&ka], &qe.coeffs[&kc]);
                            sq += &qa.dot(bm).dot(qc);
                        }
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        if occ[i] && occ[j] {
                            bk[[i, j]] = -sp[[i, j]];
                        } else if !occ[i] && !occ[j] {
                            bk[[i, j]] = -sq[[i, j]];
                        }
                    }
                }
            }
            b.insert(k, bk);
        }
        let out = Jet { n, coeffs: b };
        Ok(out.map(|m| from_basis(v, m)))
    }

    /// Projection jet expressed in the eigenbasis of `H(0)`.
    pub fn eigenbasis_projection(&self) -> &Jet {
        &self.p_eig
    }
}

/// Fermi projection jet in the eigenbasis of `h(0)`, from `P^2 = P` and
/// `[H, P] = 0` order by order.
fn projection_jet(e: &[f64], rank: usize, h: &Jet) -> Result<Jet> {
    let n = e.len();
    let occ: Vec<bool> = (0..n).map(|i| i < rank).collect();
    let mut p: BTreeMap<Key, Mat> = BTreeMap::new();
    let mut p0 = Array2::zeros((n, n));
    for i in 0..rank {
        p0[[i, i]] = C64::new(1.0, 0.0);
    }
    p.insert((0, 0), p0);
    for &k in h.coeffs.keys() {
        if k == (0, 0) {
            continue;
        }
        let mut cm: Mat = Array2::zeros((n, n));
        for (&k1, m1) in &p {
            if k1 == (0, 0) || k1.0 > k.0 || k1.1 > k.1 {
                continue;
            }
            let k2 = (k.0 - k1.0, k.1 - k1.1);
            if k2 == (0, 0) {
                continue;
            }
            if let Some(m2) = p.get(&k2) {
                cm -= &m1.dot(m2);
            }
        }
        let mut qm: Mat = Array2::zeros((n, n));
        for (&kh, hm) in &h.coeffs {
            if kh == (0, 0) || kh.0 > k.0 || kh.1 > k.1 {
                continue;
            }
            if let Some(pm) = p.get(&(k.0 - kh.0, k.1 - kh.1)) {
                qm -= &(hm.dot(pm) - pm.dot(hm));
            }
        }
        let mut pk = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                pk[[i, j]] = match (occ[i], occ[j]) {
                    (true, true) => cm[[i, j]],
                    (false, false) => -cm[[i, j]],
                    _ => qm[[i, j]] / (e[i] - e[j]),
                };
            }
        }
        p.insert(k, pk);
    }
    Ok(Jet { n, coeffs: p })
}

/// `exp(i eps S)` through the eigendecomposition of the Hermitian value of
/// `S`, with first-order coefficients from the Daleckii-Krein formula.
pub fn exp_i_jet(s: &Jet, eps: f64) -> Result<Jet> {
    let s = s.restrict(&Shape::first_order());
    let (w, wv) = eigh(&hermitian_part(s.value()))?;
    let x: Vec<C64> = w.iter().map(|&l| I * eps * l).collect();
    let ex: Vec<C64> = x.iter().map(|z| z.exp()).collect();
    let n = x.len();
    let mut diag = Array2::zeros((n, n));
    for i in 0..n {
        diag[[i, i]] = ex[i];
    }
    let mut out = Jet { n, coeffs: BTreeMap::new() };
    out.insert((0, 0), from_basis(&wv, &diag));
    for (&k, m) in s.coeffs.iter() {
        if k == (0, 0) {
            continue;
        }
        let mut sk = to_basis(&wv, m).mapv(|z| z * I * eps);
        for a in 0..n {
            for b in 0..n {
                let d = x[a] - x[b];
                let phi = if d.norm() > 1e-12 { (ex[a] - ex[b]) / d } else { ex[a] };
                sk[[a, b]] *= phi;
            }
        }
        out.insert(k, from_basis(&wv, &sk));
    }
    Ok(out)
}

/// Base twists `2 pi (j1 / (m L1 a), j2 / (m L2 a))` that together emulate a
/// torus `m` times larger along each axis.
pub fn twist_grid(model: &LatticeModel, m: usize) -> Vec<[f64; 2]> {
    let g = &model.geometry;
    let mut out = Vec::with_capacity(m * m);
    for j1 in 0..m {
        for j2 in 0..m {
            out.push([
                2.0 * PI * j1 as f64 / (m * g.l1) as f64 / g.a,
                2.0 * PI * j2 as f64 / (m * g.l2) as f64 / g.a,
            ]);
        }
    }
    out
}
