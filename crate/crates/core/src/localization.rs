//! Off-diagonal decay profiles of kernels and exponential-rate fits.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::fit_line;
use crate::lattice::{DisplacementTable, LatticeGeometry};
use crate::linalg::{Mat, C64};
use crate::spectral::resolvent;

/// `max |T(x, x')|` over pairs at rounded minimal-image distance `d`.
#[derive(Clone, Debug, Serialize)]
pub struct DecayProfile {
    pub distances: Vec<f64>,
    pub values: Vec<f64>,
    /// Pairs per bin divided by the number of sites.
    pub shell_sizes: Vec<f64>,
    /// Fits only use distances up to this value.
    pub seam_limit: f64,
}

pub fn decay_profile(t: &Mat, d: &DisplacementTable, g: &LatticeGeometry) -> DecayProfile {
    let n = t.nrows();
    let nb = d.distance.iter().fold(0.0_f64, |m, &x| m.max(x)).round() as usize + 1;
    let mut values = vec![0.0_f64; nb];
    let mut counts = vec![0usize; nb];
    for ((i, j), z) in t.indexed_iter() {
        let b = d.distance[[i, j]].round() as usize;
        values[b] = values[b].max(z.norm());
        counts[b] += 1;
    }
    let distances: Vec<f64> = (0..nb).map(|b| b as f64).collect();
    let shell_sizes = counts.iter().map(|&c| c as f64 / n as f64).collect();
    DecayProfile { distances, values, shell_sizes, seam_limit: 0.4 * g.min_side() }
}

impl DecayProfile {
    /// Upper bound on the operator norm from the Schur test.
    pub fn schur_bound(&self) -> f64 {
        self.values.iter().zip(&self.shell_sizes).map(|(v, s)| v * s).sum()
    }

    /// Bins in `[d_min, seam_limit]` with a positive value.
    fn window(&self, d_min: f64) -> (Vec<f64>, Vec<f64>) {
        self.distances
            .iter()
            .zip(&self.values)
            .filter(|(d, v)| **d >= d_min && **d <= self.seam_limit && **v > 1e-300)
            .map(|(d, v)| (*d, *v))
            .unzip()
    }
}

/// `|T(x, x')| ~ C d^power exp(-beta d)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LocalizationFit {
    pub beta: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    pub points: usize,
    pub power: f64,
}

/// Exponential fit over `d >= 1` up to the seam limit.
pub fn fit_localization(p: &DecayProfile) -> Result<LocalizationFit> {
    fit_localization_with(p, 1.0, 0.0)
}

/// Fit of `ln(value / d^power)` against `d` for `d >= d_min`.
pub fn fit_localization_with(p: &DecayProfile, d_min: f64, power: f64) -> Result<LocalizationFit> {
    let (d, v) = p.window(d_min);
    if d.len() < 4 {
        return Err(Error::InsufficientData(format!("{} usable distance bins", d.len())));
    }
    let y: Vec<f64> = d.iter().zip(&v).map(|(d, v)| v.ln() - power * d.ln()).collect();
    let f = fit_line(&d, &y)?;
    Ok(LocalizationFit { beta: -f.slope, prefactor: f.intercept.exp(), r_squared: f.r_squared, points: d.len(), power })
}

#[derive(Clone, Debug, Serialize)]
pub struct ResolventDecay {
    pub z: [f64; 2],
    pub distance_to_spectrum: f64,
    pub profile: DecayProfile,
    pub fit: Option<LocalizationFit>,
}

/// Decay of `(H - z)^-1` for each `z`.
pub fn combes_thomas_scan(
    h: &Mat,
    eigenvalues: &[f64],
    d: &DisplacementTable,
    g: &LatticeGeometry,
    zs: &[C64],
) -> Result<Vec<ResolventDecay>> {
    let mut out = Vec::with_capacity(zs.len());
    for &z in zs {
        let dist = eigenvalues.iter().fold(f64::INFINITY, |m, &e| m.min((C64::new(e, 0.0) - z).norm()));
        if dist < 1e-3 {
            return Err(Error::ZTooCloseToSpectrum { z, distance: dist });
        }
        let r = resolvent(h, z)?;
        let profile = decay_profile(&r, d, g);
        let fit = fit_localization(&profile).ok();
        out.push(ResolventDecay { z: [z.re, z.im], distance_to_spectrum: dist, profile, fit });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PropagationReport {
    pub beta_first: f64,
    pub beta_second: f64,
    pub beta_product: f64,
    pub beta_commutator: f64,
    /// Rate of `[X_1, T1]` after removing its linear prefactor.
    pub beta_commutator_corrected: f64,
    pub product_ok: bool,
    pub commutator_ok: bool,
}

/// Checks that products of localized kernels stay localized with a rate at
/// least `0.8 min(beta1, beta2)` and that `[X_1, T1]` decays.
pub fn decay_propagation_check(t1: &Mat, t2: &Mat, d: &DisplacementTable, g: &LatticeGeometry) -> Result<PropagationReport> {
    let f1 = fit_localization(&decay_profile(t1, d, g))?;
    let f2 = fit_localization(&decay_profile(t2, d, g))?;
    let fp = fit_localization(&decay_profile(&t1.dot(t2), d, g))?;
    let comm = crate::linalg::hadamard_real(&d.d1, t1);
    let pc = decay_profile(&comm, d, g);
    let fc = fit_localization(&pc)?;
    let fcc = fit_localization_with(&pc, 1.0, 1.0)?;
    let slack = 0.05;
    Ok(PropagationReport {
        beta_first: f1.beta,
        beta_second: f2.beta,
        beta_product: fp.beta,
        beta_commutator: fc.beta,
        beta_commutator_corrected: fcc.beta,
        product_ok: fp.beta >= 0.8 * f1.beta.min(f2.beta) - slack,
        commutator_ok: fc.beta > 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_geometry, FluxConfig};
    use crate::linalg::eye;

    fn geometry(l: usize) -> LatticeGeometry {
        build_geometry(l, l, 1.0, FluxConfig::zero()).unwrap()
    }

    #[test]
    fn identity_has_no_tail() {
        let g = geometry(8);
        let d = DisplacementTable::new(&g);
        let p = decay_profile(&eye(64), &d, &g);
        assert_eq!(p.values[0], 1.0);
        assert!(p.values[1..].iter().all(|&v| v == 0.0));
        assert!(matches!(fit_localization(&p), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn synthetic_exponential() {
        let g = geometry(20);
        let d = DisplacementTable::new(&g);
        let t = d.distance.mapv(|x| C64::new(3.0 * (-0.7 * x.round()).exp(), 0.0));
        let f = fit_localization(&decay_profile(&t, &d, &g)).unwrap();
        assert!((f.beta - 0.7).abs() < 1e-10);
        assert!((f.prefactor - 3.0).abs() < 1e-9);
        assert!(f.r_squared > 1.0 - 1e-12);
    }
}
