//! Trace per unit area, Hall conductivity (real-space marker and a
//! momentum-space Chern number), Hall current of a NEASS and the trace
//! identities behind them.

use std::f64::consts::PI;

use ndarray::{s, Array2};
use ndarray_linalg::Determinant;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{fit_power_law, LineFit};
use crate::jet::{Fiber, Jet};
use crate::lattice::{cell_bonds, DisplacementTable, FluxConfig, LatticeGeometry, PotentialConfig};
use crate::linalg::{commutator, dagger, eigh, hadamard_real, trace, Mat, C64, I};
use crate::neass::{neass_state, NeassGenerators};

/// `T(A) = tr A / (L1 L2 a^2)`.
pub fn trace_per_unit_area(t: &Mat, g: &LatticeGeometry) -> C64 {
    trace(t) / g.area()
}

/// Average of the diagonal over one magnetic cell, per unit area. Agrees with
/// [`trace_per_unit_area`] for magnetically periodic operators.
pub fn cell_trace_per_unit_area(t: &Mat, g: &LatticeGeometry) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for x1 in 0..g.cell_width {
        let i = g.index(x1, 0);
        s += t[[i, i]];
    }
    s / g.cell_area
}

/// `[T, X_j] = -d_j o T` with minimal-image displacements.
pub fn position_commutator(t: &Mat, d: &DisplacementTable, axis: usize) -> Mat {
    hadamard_real(d.axis(axis), t).mapv(|z| -z)
}

/// `J_i = i [H, X_i] = -i d_i o H`.
pub fn current_operator(h: &Mat, d: &DisplacementTable, axis: usize) -> Mat {
    hadamard_real(d.axis(axis), h).mapv(|z| -I * z)
}

/// `J_i = i [H, X_i]` in the calculus of `fiber`.
pub fn fiber_current(fiber: &Fiber, axis: usize) -> Result<Jet> {
    Ok(fiber.commutator_x(axis, &fiber.hamiltonian)?.scale(-I))
}

/// `i T(Q [[Q, X1], [Q, X2]] Q)` for a projection jet `q`.
pub fn marker(fiber: &Fiber, q: &Jet) -> Result<f64> {
    let d1 = fiber.commutator_x(1, q)?;
    let d2 = fiber.commutator_x(2, q)?;
    let qv = q.value();
    let c = commutator(d1.value(), d2.value());
    Ok((I * fiber.trace_density(&qv.dot(&c).dot(qv))).re)
}

/// Hall conductivity of the Fermi projection of `fiber`.
pub fn hall_conductivity(fiber: &Fiber) -> Result<f64> {
    marker(fiber, &fiber.projection)
}

/// Minimal-image marker `i T(P [[P, X1], [P, X2]] P)` for a plain matrix.
pub fn hall_conductivity_marker(p: &Mat, d: &DisplacementTable, g: &LatticeGeometry) -> f64 {
    let c1 = position_commutator(p, d, 1);
    let c2 = position_commutator(p, d, 2);
    let c = commutator(&c1, &c2);
    (I * trace_per_unit_area(&p.dot(&c).dot(p), g)).re
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ChernResult {
    pub chern: f64,
    pub mesh: usize,
    /// Smallest gap above the filled bands over the mesh.
    pub direct_gap: f64,
}

/// Bloch Hamiltonian of the magnetic cell in the periodic gauge.
pub fn bloch_hamiltonian(flux: FluxConfig, pot: &PotentialConfig, k: [f64; 2]) -> Result<Mat> {
    let w = pot.onsite.len().max(pot.peierls_e1.len()).max(pot.peierls_e2.len()).max(1);
    let bonds = cell_bonds(flux, pot, w)?;
    let n = bonds.iter().map(|b| b.row.max(b.col)).max().unwrap_or(0) + 1;
    let mut h = Array2::zeros((n, n));
    for b in &bonds {
        let r1 = b.row as f64 - b.displacement[0] - b.col as f64;
        let r2 = -b.displacement[1];
        h[[b.row, b.col]] += b.amplitude * C64::from_polar(1.0, k[0] * r1 + k[1] * r2);
    }
    Ok(h)
}

/// Fukui-Hatsugai-Suzuki lattice Chern number of the lowest `filled` bands,
/// refining the mesh until two successive values agree.
pub fn chern_number_momentum(flux: FluxConfig, pot: &PotentialConfig, filled: usize) -> Result<ChernResult> {
    let mut prev: Option<f64> = None;
    let mut mesh = 12;
    loop {
        let r = fhs(flux, pot, filled, mesh)?;
        if let Some(p) = prev {
            if (p - r.chern).abs() < 1e-6 {
                return Ok(r);
            }
        }
        if mesh >= 192 {
            return Err(Error::GaplessAtFilling(filled));
        }
        prev = Some(r.chern);
        mesh *= 2;
    }
}

fn fhs(flux: FluxConfig, pot: &PotentialConfig, filled: usize, n: usize) -> Result<ChernResult> {
    let w = bloch_hamiltonian(flux, pot, [0.0, 0.0])?.nrows();
    if filled == 0 || filled >= w {
        return Err(Error::GaplessAtFilling(filled));
    }
    let b1 = 2.0 * PI / w as f64;
    let b2 = 2.0 * PI;
    let mut states = Vec::with_capacity(n * n);
    let mut direct_gap = f64::INFINITY;
    let mut top = f64::NEG_INFINITY;
    let mut bottom = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            let k = [b1 * i as f64 / n as f64, b2 * j as f64 / n as f64];
            let (e, v) = eigh(&bloch_hamiltonian(flux, pot, k)?)?;
            direct_gap = direct_gap.min(e[filled] - e[filled - 1]);
            top = top.max(e[filled - 1]);
            bottom = bottom.min(e[filled]);
            states.push(v.slice(s![.., ..filled]).to_owned());
        }
    }
    if direct_gap < 1e-6 || bottom - top < 1e-6 {
        return Err(Error::GaplessAtFilling(filled));
    }
    let at = |i: usize, j: usize| &states[(i % n) * n + (j % n)];
    let link = |a: &Mat, b: &Mat| -> Result<C64> {
        let d = dagger(a).dot(b).det()?;
        Ok(d / d.norm())
    };
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let u1 = link(at(i, j), at(i + 1, j))?;
            let u2 = link(at(i + 1, j), at(i + 1, j + 1))?;
            let u3 = link(at(i, j + 1), at(i + 1, j + 1))?;
            let u4 = link(at(i, j), at(i, j + 1))?;
            total += (u1 * u2 / (u3 * u4)).arg();
        }
    }
    Ok(ChernResult { chern: total / (2.0 * PI), mesh: n, direct_gap })
}

/// `T(J1 P)` for a projection jet.
pub fn hall_current_density(fiber: &Fiber, projection: &Jet) -> Result<f64> {
    let j1 = fiber_current(fiber, 1)?;
    Ok(fiber.trace_density(&j1.value().dot(projection.value())).re)
}

#[derive(Clone, Debug, Serialize)]
pub struct KuboScaling {
    pub sigma: f64,
    pub epsilons: Vec<f64>,
    pub currents: Vec<f64>,
    pub defects: Vec<f64>,
    pub fit: LineFit,
}

/// Fit of `|T(J1 P_eps) - eps sigma|` against `eps`, with `sigma` the marker
/// of the same fiber.
pub fn kubo_defect_scaling(fiber: &Fiber, gens: &NeassGenerators, epsilons: &[f64]) -> Result<KuboScaling> {
    let sigma = hall_conductivity(fiber)?;
    let mut currents = Vec::new();
    let mut defects = Vec::new();
    for &e in epsilons {
        let st = neass_state(fiber, gens, e)?;
        let j = hall_current_density(fiber, &st.projection)?;
        currents.push(j);
        defects.push((j - e * sigma).abs());
    }
    let fit = fit_power_law(epsilons, &defects, 1e-13)?;
    Ok(KuboScaling { sigma, epsilons: epsilons.to_vec(), currents, defects, fit })
}

/// Marker of `U P U^*` against the marker of `P`, averaged over fibers.
/// `unitaries[k]` belongs to `fibers[k]`.
pub fn chern_simons_check(fibers: &[Fiber], unitaries: &[Jet]) -> Result<(f64, f64)> {
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for (f, u) in fibers.iter().zip(unitaries) {
        let p = f.projection.restrict(&u.shape());
        let pu = u.mul(&p).mul(&u.dagger());
        lhs += marker(f, &pu)?;
        rhs += marker(f, &f.projection)?;
    }
    let m = fibers.len() as f64;
    Ok((lhs / m, rhs / m))
}

/// `|T(T1 T2) - T(T2 T1)|`
pub fn cyclicity_defect(t1: &Mat, t2: &Mat, g: &LatticeGeometry) -> f64 {
    (trace_per_unit_area(&t1.dot(t2), g) - trace_per_unit_area(&t2.dot(t1), g)).norm()
}

/// `|T([PAP, P X_j P])|`, evaluated as `T([PAP, X_j]) - T([PAP, X_j^OD])`.
pub fn vanishing_trace_check(fiber: &Fiber, a: &Mat, axis: usize) -> Result<f64> {
    let p = fiber.projection.value();
    let pap = Jet::scalar(p.dot(a).dot(p));
    let t1 = -fiber.trace_density(fiber.commutator_x(axis, &pap)?.value());
    let xod = fiber.position_offdiagonal(axis)?;
    let t2 = fiber.trace_density(&commutator(pap.value(), xod.value()));
    Ok((t1 - t2).norm())
}

/// Two evaluations of `T([P X1 P, P X2 P])`: through the diagonal parts of
/// the positions, and as `T(P [[P, X1], [P, X2]] P)`.
pub fn projected_position_trace(fiber: &Fiber) -> Result<(C64, C64)> {
    let x1 = fiber.position_offdiagonal(1)?;
    let x2 = fiber.position_offdiagonal(2)?;
    // -[X1^OD, X2] = [X2, X1^OD], -[X1, X2^OD] = -[X1, X2^OD]
    let a = fiber.commutator_x(2, &x1)?;
    let b = fiber.commutator_x(1, &x2)?.scale(C64::new(-1.0, 0.0));
    let c = x1.commutator(&x2);
    let sum = a.add(&b).add(&c);
    let p = fiber.projection.value();
    let decomposition = fiber.trace_density(&p.dot(sum.value()).dot(p));
    let d1 = fiber.commutator_x(1, &fiber.projection)?;
    let d2 = fiber.commutator_x(2, &fiber.projection)?;
    let double = fiber.trace_density(&p.dot(&commutator(d1.value(), d2.value())).dot(p));
    Ok((decomposition, double))
}

/// Integrated density of states `T(P)`.
pub fn integrated_density(fiber: &Fiber, p: &Jet) -> f64 {
    fiber.trace_density(p.value()).re
}

#[derive(Clone, Debug, Serialize)]
pub struct ResponseReport {
    pub sigma_hall: f64,
    pub two_pi_sigma: f64,
    pub chern_oracle: Option<f64>,
    pub epsilons: Vec<f64>,
    pub hall_currents: Vec<f64>,
    pub kubo_slope: Option<f64>,
}
