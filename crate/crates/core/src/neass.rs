//! Non-equilibrium almost-stationary states: the generators `A_1, ..., A_n`,
//! the dressed projection `U P U^*` with `U = exp(i eps S)` and the scaling of
//! its stationarity residual.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{fit_power_law, LineFit};
use crate::jet::{exp_i_jet, Fiber, Jet};
use crate::linalg::{commutator, op_norm, Mat, C64, I};

/// Operator `B` whose nested commutators with the generators are expanded.
#[derive(Clone, Copy, Debug)]
pub enum Operand<'a> {
    Operator(&'a Jet),
    /// `X_axis`, entering through `[A, X] = -[X, A]`.
    Position(usize),
}

/// Compositions of `m` into `k` positive parts.
pub fn compositions(m: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return if m == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first in 1..=m.saturating_sub(k - 1) {
        for mut rest in compositions(m - first, k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Nested commutators `[A_j1, [A_j2, ... [A_jk, B]]]`, memoised on the index
/// suffix.
struct Nester<'a> {
    fiber: &'a Fiber,
    gens: &'a [Jet],
    b: Operand<'a>,
    memo: HashMap<Vec<usize>, Jet>,
}

impl<'a> Nester<'a> {
    fn new(fiber: &'a Fiber, gens: &'a [Jet], b: Operand<'a>) -> Self {
        Nester { fiber, gens, b, memo: HashMap::new() }
    }

    fn gen(&self, j: usize) -> Result<&'a Jet> {
        self.gens.get(j - 1).ok_or(Error::MissingGenerator(j, self.gens.len()))
    }

    fn nested(&mut self, js: &[usize]) -> Result<Jet> {
        if let Some(v) = self.memo.get(js) {
            return Ok(v.clone());
        }
        let a = self.gen(js[0])?;
        let out = if js.len() == 1 {
            match self.b {
                Operand::Operator(b) => a.commutator(b),
                Operand::Position(axis) => self.fiber.commutator_x(axis, a)?.scale(C64::new(-1.0, 0.0)),
            }
        } else {
            let inner = self.nested(&js[1..])?;
            a.commutator(&inner)
        };
        self.memo.insert(js.to_vec(), out.clone());
        Ok(out)
    }

    /// `B_m = sum_k (-i)^k / k! sum_{|j| = m} [A_j1, ... [A_jk, B]]`, with
    /// the `k = 1` term dropped when `skip_linear`.
    fn coefficient(&mut self, m: usize, skip_linear: bool) -> Result<Option<Jet>> {
        let mut total: Option<Jet> = None;
        let mut fact = 1.0;
        for k in 1..=m {
            fact *= k as f64;
            if skip_linear && k == 1 {
                continue;
            }
            let w = (-I).powu(k as u32) / fact;
            for js in compositions(m, k) {
                let t = self.nested(&js)?.scale(w);
                total = Some(match total {
                    None => t,
                    Some(s) => s.add(&t),
                });
            }
        }
        Ok(total)
    }
}

/// `B_m` for a given list of generators.
pub fn nested_commutator_coefficient(fiber: &Fiber, gens: &[Jet], m: usize, b: Operand) -> Result<Jet> {
    if m == 0 {
        return Err(Error::MissingGenerator(0, gens.len()));
    }
    if m > gens.len() {
        return Err(Error::MissingGenerator(m, gens.len()));
    }
    let mut ns = Nester::new(fiber, gens, b);
    Ok(ns.coefficient(m, false)?.expect("m >= 1 has at least one term"))
}

#[derive(Clone, Debug)]
pub struct NeassGenerators {
    pub order: usize,
    pub generators: Vec<Jet>,
    /// `|| [(H0)_m - (X2)_{m-1}, P] ||` for `m = 1..=order`.
    pub defining_residuals: Vec<f64>,
}

/// Solves for `A_1, ..., A_n` with `A_1 = -L^{-1}(X2^OD)` and
/// `A_m = L^{-1}((L_{m-1} - (X2)_{m-1})^OD)`.
pub fn neass_generators(fiber: &Fiber, n: usize) -> Result<NeassGenerators> {
    if n == 0 {
        return Err(Error::Config("NEASS order must be at least 1".into()));
    }
    let h = fiber.hamiltonian.clone();
    let x2od = fiber.position_offdiagonal(2)?;
    let a1 = fiber.inv_liouvillian(&x2od)?.scale(C64::new(-1.0, 0.0));
    let mut gens = vec![a1];
    for m in 2..=n {
        let mut nh = Nester::new(fiber, &gens, Operand::Operator(&h));
        let lm = nh.coefficient(m, true)?;
        let mut nx = Nester::new(fiber, &gens, Operand::Position(2));
        let xm = nx.coefficient(m - 1, false)?.expect("m - 1 >= 1");
        let d = match lm {
            Some(l) => l.sub(&xm),
            None => xm.scale(C64::new(-1.0, 0.0)),
        };
        gens.push(fiber.inv_liouvillian(&d)?);
    }
    let defining_residuals = defining_residuals(fiber, &gens)?;
    Ok(NeassGenerators { order: n, generators: gens, defining_residuals })
}

fn defining_residuals(fiber: &Fiber, gens: &[Jet]) -> Result<Vec<f64>> {
    let p = fiber.projection.value();
    let h = fiber.hamiltonian.clone();
    let mut out = Vec::with_capacity(gens.len());
    for m in 1..=gens.len() {
        let hm = Nester::new(fiber, gens, Operand::Operator(&h)).coefficient(m, false)?.expect("m >= 1");
        let xc = if m == 1 {
            fiber.commutator_x(2, &fiber.projection)?.value().clone()
        } else {
            let xm = Nester::new(fiber, gens, Operand::Position(2)).coefficient(m - 1, false)?.expect("m >= 2");
            commutator(xm.value(), p)
        };
        let r = commutator(hm.value(), p) - xc;
        out.push(op_norm(&r)?);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct NeassState {
    pub epsilon: f64,
    pub order: usize,
    /// `exp(i eps S)` with first twist derivatives when available.
    pub unitary: Jet,
    /// `U P U^*`
    pub projection: Jet,
    /// `[H0 - eps X2, U P U^*]`
    pub residual: Mat,
    pub residual_norm: f64,
}

pub fn neass_state(fiber: &Fiber, gens: &NeassGenerators, eps: f64) -> Result<NeassState> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::Config(format!("epsilon must be non-negative, got {eps}")));
    }
    let mut s: Option<Jet> = None;
    for (j, a) in gens.generators.iter().enumerate() {
        let t = a.scale(C64::new(eps.powi(j as i32), 0.0));
        s = Some(match s {
            None => t,
            Some(x) => x.add(&t),
        });
    }
    let s = s.expect("at least one generator");
    let u = exp_i_jet(&s, eps)?;
    let p = fiber.projection.restrict(&u.shape());
    let pe = u.mul(&p).mul(&u.dagger());
    let xp = fiber.commutator_x(2, &pe)?;
    let r = commutator(fiber.hamiltonian.value(), pe.value()) - xp.value().mapv(|z| z * eps);
    let residual_norm = op_norm(&r)?;
    Ok(NeassState { epsilon: eps, order: gens.order, unitary: u, projection: pe, residual: r, residual_norm })
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualScaling {
    pub order: usize,
    pub epsilons: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fit: LineFit,
}

/// Default upper end of the admissible field strengths.
pub const DEFAULT_EPS0: f64 = 0.35;

/// Power-law fit of the residual over `epsilons`, each in `(0, eps0)`.
pub fn residual_scaling(fiber: &Fiber, gens: &NeassGenerators, epsilons: &[f64], eps0: f64) -> Result<ResidualScaling> {
    if epsilons.len() < 5 {
        return Err(Error::InsufficientData(format!("{} epsilon values, need at least 5", epsilons.len())));
    }
    if epsilons.iter().any(|&e| !(e > 0.0 && e < eps0)) {
        return Err(Error::Config(format!("epsilon grid must lie in (0, {eps0})")));
    }
    let mut residuals = Vec::with_capacity(epsilons.len());
    for &e in epsilons {
        residuals.push(neass_state(fiber, gens, e)?.residual_norm);
    }
    let fit = fit_power_law(epsilons, &residuals, 1e-13)?;
    Ok(ResidualScaling { order: gens.order, epsilons: epsilons.to_vec(), residuals, fit })
}
