//! Square-lattice tight-binding model with a uniform magnetic flux in the
//! Landau gauge `A = (0, phi x1)`, closed on an `L1 x L2` torus.
//!
//! With `L1` a multiple of the magnetic cell width the Landau phases are
//! already periodic across the seam, so the closing boundary twist is the
//! identity and every hopping carries only its Peierls phase.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, max_abs, Mat, C64};
use crate::operator::OperatorMatrix;

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a as i64, b as i64) as usize * b
}

/// Flux `phi = 2 pi p / q` per plaquette.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FluxConfig {
    pub p: i64,
    pub q: i64,
}

impl FluxConfig {
    pub fn new(p: i64, q: i64) -> Result<Self> {
        if q < 1 || p < 0 || p >= q || gcd(p, q) != 1 {
            return Err(Error::InvalidFlux { p, q });
        }
        Ok(FluxConfig { p, q })
    }

    pub fn zero() -> Self {
        FluxConfig { p: 0, q: 1 }
    }

    pub fn phi(&self) -> f64 {
        2.0 * PI * self.p as f64 / self.q as f64
    }

    /// Flux `-phi`, reduced to `[0, 2 pi)`.
    pub fn reversed(&self) -> Self {
        FluxConfig { p: (self.q - self.p) % self.q, q: self.q }
    }
}

/// Irrational flux `2 pi theta` together with its continued-fraction
/// convergents `p_k / q_k`.
#[derive(Clone, Debug, Serialize)]
pub struct IncommensurateFlux {
    pub theta: f64,
    pub approximants: Vec<FluxConfig>,
}

impl IncommensurateFlux {
    /// Convergents with `2 <= q <= max_q`.
    pub fn new(theta: f64, max_q: i64) -> Self {
        let mut approximants = Vec::new();
        let (mut h0, mut h1) = (0_i64, 1_i64);
        let (mut k0, mut k1) = (1_i64, 0_i64);
        let mut x = theta.fract();
        let mut a = theta.floor() as i64;
        for _ in 0..64 {
            let h = a * h1 + h0;
            let k = a * k1 + k0;
            if k > max_q {
                break;
            }
            if k >= 2 {
                approximants.push(FluxConfig { p: h.rem_euclid(k), q: k });
            }
            h0 = h1;
            h1 = h;
            k0 = k1;
            k1 = k;
            if x.abs() < 1e-14 {
                break;
            }
            let inv = 1.0 / x;
            a = inv.floor() as i64;
            x = inv - a as f64;
        }
        IncommensurateFlux { theta, approximants }
    }

    pub fn golden_mean(max_q: i64) -> Self {
        Self::new((5.0_f64.sqrt() - 1.0) / 2.0, max_q)
    }
}

/// Cell-periodic on-site potential and Peierls phase corrections, indexed by
/// `x1 mod cell_width`. Empty tables mean zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PotentialConfig {
    #[serde(default)]
    pub onsite: Vec<f64>,
    #[serde(default)]
    pub peierls_e1: Vec<f64>,
    #[serde(default)]
    pub peierls_e2: Vec<f64>,
}

impl PotentialConfig {
    pub fn onsite(v: Vec<f64>) -> Self {
        PotentialConfig { onsite: v, ..Default::default() }
    }

    fn check(&self, w: usize) -> Result<()> {
        for (name, t) in [("onsite", &self.onsite), ("peierls_e1", &self.peierls_e1), ("peierls_e2", &self.peierls_e2)] {
            if !t.is_empty() && t.len() != w {
                return Err(Error::InvalidPotential(format!("{name} has length {} but the cell width is {w}", t.len())));
            }
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidPotential(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    fn at(t: &[f64], x1: usize) -> f64 {
        if t.is_empty() {
            0.0
        } else {
            t[x1 % t.len()]
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatticeGeometry {
    pub l1: usize,
    pub l2: usize,
    pub a: f64,
    pub q: usize,
    pub p: usize,
    /// Width along `x1` of the magnetic cell, a multiple of `q`.
    pub cell_width: usize,
    pub cell_area: f64,
}

/// Torus `l1 x l2` with lattice constant `a`, magnetic cell `q x 1`.
pub fn build_geometry(l1: usize, l2: usize, a: f64, flux: FluxConfig) -> Result<LatticeGeometry> {
    let q = flux.q as usize;
    if l1 < 2 || l2 < 2 || !l1.is_multiple_of(q) {
        return Err(Error::NonCommensurateTorus { l1, l2, cell_width: q });
    }
    if !(a > 0.0) {
        return Err(Error::Config(format!("lattice constant must be positive, got {a}")));
    }
    Ok(LatticeGeometry { l1, l2, a, q, p: flux.p as usize, cell_width: q, cell_area: q as f64 * a * a })
}

impl LatticeGeometry {
    /// Enlarges the magnetic cell to `lcm(q, w)` sites along `x1`.
    pub fn with_cell_width(mut self, w: usize) -> Result<Self> {
        let cw = lcm(self.q, w.max(1));
        if !self.l1.is_multiple_of(cw) {
            return Err(Error::NonCommensurateTorus { l1: self.l1, l2: self.l2, cell_width: cw });
        }
        self.cell_width = cw;
        self.cell_area = cw as f64 * self.a * self.a;
        Ok(self)
    }

    pub fn n_sites(&self) -> usize {
        self.l1 * self.l2
    }

    pub fn index(&self, x1: usize, x2: usize) -> usize {
        (x2 % self.l2) * self.l1 + (x1 % self.l1)
    }

    pub fn site(&self, i: usize) -> (usize, usize) {
        (i % self.l1, i / self.l1)
    }

    pub fn coords(&self, i: usize) -> (f64, f64) {
        let (x1, x2) = self.site(i);
        (x1 as f64 * self.a, x2 as f64 * self.a)
    }

    pub fn area(&self) -> f64 {
        (self.l1 * self.l2) as f64 * self.a * self.a
    }

    pub fn min_side(&self) -> f64 {
        self.l1.min(self.l2) as f64 * self.a
    }
}

/// Directed hopping `amplitude |row><col|`; `displacement` is the unwrapped
/// `x_row - x_col`, so the bond picks up `exp(-i kappa . displacement)`
/// under a uniform twist `kappa`.
#[derive(Clone, Copy, Debug)]
pub struct Bond {
    pub row: usize,
    pub col: usize,
    pub amplitude: C64,
    pub displacement: [f64; 2],
}

fn generate_bonds(l1: usize, l2: usize, a: f64, flux: FluxConfig, pot: &PotentialConfig) -> Vec<Bond> {
    let phi = flux.phi();
    let idx = |x1: usize, x2: usize| (x2 % l2) * l1 + (x1 % l1);
    let mut bonds = Vec::with_capacity(5 * l1 * l2);
    for x2 in 0..l2 {
        for x1 in 0..l1 {
            let i = idx(x1, x2);
            let v = PotentialConfig::at(&pot.onsite, x1);
            if v != 0.0 {
                bonds.push(Bond { row: i, col: i, amplitude: c(v), displacement: [0.0, 0.0] });
            }
            let t1 = -C64::from_polar(1.0, -PotentialConfig::at(&pot.peierls_e1, x1));
            let j = idx(x1 + 1, x2);
            bonds.push(Bond { row: i, col: j, amplitude: t1, displacement: [-a, 0.0] });
            bonds.push(Bond { row: j, col: i, amplitude: t1.conj(), displacement: [a, 0.0] });
            let t2 = -C64::from_polar(1.0, -(phi * x1 as f64 + PotentialConfig::at(&pot.peierls_e2, x1)));
            let j = idx(x1, x2 + 1);
            bonds.push(Bond { row: i, col: j, amplitude: t2, displacement: [0.0, -a] });
            bonds.push(Bond { row: j, col: i, amplitude: t2.conj(), displacement: [0.0, a] });
        }
    }
    bonds
}

/// Bonds of the single magnetic cell `w x 1`, used for Bloch Hamiltonians.
pub fn cell_bonds(flux: FluxConfig, pot: &PotentialConfig, w: usize) -> Result<Vec<Bond>> {
    let w = lcm(flux.q as usize, w.max(1));
    pot.check(w)?;
    Ok(generate_bonds(w, 1, 1.0, flux, pot))
}

pub fn assemble(n: usize, bonds: &[Bond]) -> Mat {
    let mut h = Array2::zeros((n, n));
    for b in bonds {
        h[[b.row, b.col]] += b.amplitude;
    }
    h
}

pub fn build_hamiltonian(g: &LatticeGeometry, flux: FluxConfig, pot: &PotentialConfig) -> Result<OperatorMatrix> {
    Ok(LatticeModel::new(g.clone(), flux, pot.clone())?.hamiltonian)
}

/// Geometry, bond list and assembled Hamiltonian of one model.
#[derive(Clone, Debug)]
pub struct LatticeModel {
    pub geometry: LatticeGeometry,
    pub flux: FluxConfig,
    pub potential: PotentialConfig,
    pub bonds: Vec<Bond>,
    pub hamiltonian: OperatorMatrix,
}

impl LatticeModel {
    pub fn new(g: LatticeGeometry, flux: FluxConfig, pot: PotentialConfig) -> Result<Self> {
        if g.q != flux.q as usize {
            return Err(Error::Config(format!("geometry built for q = {} used with q = {}", g.q, flux.q)));
        }
        if !g.l1.is_multiple_of(g.cell_width) {
            return Err(Error::NonCommensurateTorus { l1: g.l1, l2: g.l2, cell_width: g.cell_width });
        }
        pot.check(g.cell_width)?;
        let bonds = generate_bonds(g.l1, g.l2, g.a, flux, &pot);
        let h = assemble(g.n_sites(), &bonds);
        let hamiltonian = OperatorMatrix::hermitian(h, 1e-12)?.with_magnetic_periodic(true);
        Ok(LatticeModel { geometry: g, flux, potential: pot, bonds, hamiltonian })
    }

    /// Plain Hofstadter model on an `l x l` torus.
    pub fn hofstadter(l: usize, p: i64, q: i64) -> Result<Self> {
        let flux = FluxConfig::new(p, q)?;
        let g = build_geometry(l, l, 1.0, flux)?;
        Self::new(g, flux, PotentialConfig::default())
    }

    pub fn n_sites(&self) -> usize {
        self.geometry.n_sites()
    }
}

/// `(T psi)(x) = exp(i phi gamma1 x2) psi(x - gamma)`, which commutes with the
/// Landau-gauge Hamiltonian. On the torus it requires
/// `p gamma1 L2 = 0 mod q`.
pub fn magnetic_translation(g: &LatticeGeometry, flux: FluxConfig, gamma: (i64, i64)) -> Result<OperatorMatrix> {
    let (g1, g2) = gamma;
    if (flux.p * g1 * g.l2 as i64).rem_euclid(flux.q) != 0 {
        return Err(Error::InvalidTranslation(g1, g2));
    }
    let n = g.n_sites();
    let phi = flux.phi();
    let mut t = Array2::zeros((n, n));
    for x2 in 0..g.l2 {
        for x1 in 0..g.l1 {
            let src = g.index(
                (x1 as i64 - g1).rem_euclid(g.l1 as i64) as usize,
                (x2 as i64 - g2).rem_euclid(g.l2 as i64) as usize,
            );
            let ph = (phi * (g1 * x2 as i64) as f64).rem_euclid(2.0 * PI);
            t[[g.index(x1, x2), src]] = C64::from_polar(1.0, ph);
        }
    }
    Ok(OperatorMatrix::new(t))
}

/// Largest entrywise change of `a` under conjugation by the magnetic
/// translations generating the cell lattice.
pub fn magnetic_periodicity_defect(g: &LatticeGeometry, flux: FluxConfig, a: &Mat) -> Result<f64> {
    let mut worst = 0.0_f64;
    for gamma in [(g.cell_width as i64, 0), (0, 1)] {
        let t = magnetic_translation(g, flux, gamma)?.matrix;
        let conj = t.dot(a).dot(&crate::linalg::dagger(&t));
        worst = worst.max(max_abs(&(conj - a)));
    }
    Ok(worst)
}

fn minimal_image(delta: i64, l: usize, a: f64) -> f64 {
    let l = l as i64;
    let r = delta.rem_euclid(l);
    if 2 * r == l {
        0.0
    } else if 2 * r > l {
        (r - l) as f64 * a
    } else {
        r as f64 * a
    }
}

fn minimal_distance(delta: i64, l: usize) -> i64 {
    let l = l as i64;
    let r = delta.rem_euclid(l);
    r.min(l - r)
}

/// Minimal-image displacements `d(x, x') = x - x'`. Pairs exactly half a
/// period apart get displacement zero along that axis, which keeps the table
/// antisymmetric and translation invariant.
#[derive(Clone, Debug)]
pub struct DisplacementTable {
    pub d1: Array2<f64>,
    pub d2: Array2<f64>,
    /// Euclidean minimal-image distance, without the half-period convention.
    pub distance: Array2<f64>,
}

impl DisplacementTable {
    pub fn new(g: &LatticeGeometry) -> Self {
        let n = g.n_sites();
        let mut d1 = Array2::zeros((n, n));
        let mut d2 = Array2::zeros((n, n));
        let mut distance = Array2::zeros((n, n));
        for i in 0..n {
            let (x1, x2) = g.site(i);
            for j in 0..n {
                let (y1, y2) = g.site(j);
                let dx = x1 as i64 - y1 as i64;
                let dy = x2 as i64 - y2 as i64;
                d1[[i, j]] = minimal_image(dx, g.l1, g.a);
                d2[[i, j]] = minimal_image(dy, g.l2, g.a);
                let m1 = minimal_distance(dx, g.l1) as f64;
                let m2 = minimal_distance(dy, g.l2) as f64;
                distance[[i, j]] = g.a * (m1 * m1 + m2 * m2).sqrt();
            }
        }
        DisplacementTable { d1, d2, distance }
    }

    pub fn axis(&self, axis: usize) -> &Array2<f64> {
        match axis {
            1 => &self.d1,
            2 => &self.d2,
            _ => panic!("axis must be 1 or 2"),
        }
    }
}

/// Position along `x2` measured from the centre of the torus.
pub fn centered_position(g: &LatticeGeometry, axis: usize) -> Vec<f64> {
    (0..g.n_sites())
        .map(|i| {
            let (x1, x2) = g.site(i);
            match axis {
                1 => (x1 as f64 - (g.l1 as f64 - 1.0) / 2.0) * g.a,
                _ => (x2 as f64 - (g.l2 as f64 - 1.0) / 2.0) * g.a,
            }
        })
        .collect()
}

/// `H0 - eps X2` with the centred diagonal position operator.
pub fn perturbed_hamiltonian(h0: &OperatorMatrix, eps: f64, g: &LatticeGeometry) -> Result<OperatorMatrix> {
    let mut h = h0.matrix.clone();
    for (i, x) in centered_position(g, 2).into_iter().enumerate() {
        h[[i, i]] -= c(eps * x);
    }
    OperatorMatrix::hermitian(h, 1e-12)
}

/// Random magnetically periodic operator with hoppings up to `range` sites
/// along each axis. Coefficients depend only on `x1 mod cell_width`.
pub fn random_local_operator<R: Rng>(g: &LatticeGeometry, range: usize, hermitian: bool, rng: &mut R) -> Mat {
    let w = g.cell_width;
    let r = range as i64;
    let side = (2 * r + 1) as usize;
    let mut coeff = vec![C64::new(0.0, 0.0); w * side * side];
    for z in coeff.iter_mut() {
        *z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    }
    let n = g.n_sites();
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        let (x1, x2) = g.site(i);
        for d1 in -r..=r {
            for d2 in -r..=r {
                let j = g.index(
                    (x1 as i64 - d1).rem_euclid(g.l1 as i64) as usize,
                    (x2 as i64 - d2).rem_euclid(g.l2 as i64) as usize,
                );
                let k = ((x1 % w) * side + (d1 + r) as usize) * side + (d2 + r) as usize;
                a[[i, j]] += coeff[k];
            }
        }
    }
    if hermitian {
        crate::linalg::hermitian_part(&a)
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eigh, hermitian_defect};

    #[test]
    fn two_by_two_zero_flux_spectrum() {
        let m = LatticeModel::hofstadter(2, 0, 1).unwrap();
        let (e, _) = eigh(&m.hamiltonian.matrix).unwrap();
        let expect = [-4.0, 0.0, 0.0, 4.0];
        for (x, y) in e.iter().zip(expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn non_commensurate_torus_rejected() {
        let f = FluxConfig::new(1, 3).unwrap();
        assert!(matches!(build_geometry(4, 4, 1.0, f), Err(Error::NonCommensurateTorus { .. })));
    }

    #[test]
    fn hofstadter_is_hermitian_and_periodic() {
        let m = LatticeModel::hofstadter(6, 1, 3).unwrap();
        assert!(hermitian_defect(&m.hamiltonian.matrix) < 1e-14);
        let d = magnetic_periodicity_defect(&m.geometry, m.flux, &m.hamiltonian.matrix).unwrap();
        assert!(d < 1e-12);
    }

    #[test]
    fn golden_mean_convergents() {
        let f = IncommensurateFlux::golden_mean(8);
        let got: Vec<(i64, i64)> = f.approximants.iter().map(|a| (a.p, a.q)).collect();
        assert_eq!(got, vec![(1, 2), (2, 3), (3, 5), (5, 8)]);
    }

    #[test]
    fn displacement_half_period_is_zero() {
        let f = FluxConfig::zero();
        let g = build_geometry(4, 3, 1.0, f).unwrap();
        let d = DisplacementTable::new(&g);
        assert_eq!(d.d1[[g.index(2, 0), g.index(0, 0)]], 0.0);
        assert_eq!(d.d1[[g.index(3, 0), g.index(0, 0)]], -1.0);
        assert_eq!(d.distance[[g.index(2, 0), g.index(0, 0)]], 2.0);
    }

    #[test]
    fn translation_projective_phase() {
        let f = FluxConfig::new(1, 3).unwrap();
        let g = build_geometry(6, 6, 1.0, f).unwrap();
        let t1 = magnetic_translation(&g, f, (1, 0)).unwrap().matrix;
        let t2 = magnetic_translation(&g, f, (0, 1)).unwrap().matrix;
        let lhs = t1.dot(&t2);
        let rhs = t2.dot(&t1).mapv(|z| z * C64::from_polar(1.0, f.phi()));
        assert!(max_abs(&(lhs - rhs)) < 1e-12);
    }
}
