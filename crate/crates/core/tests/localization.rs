use neass_core::lattice::{build_geometry, random_local_operator, DisplacementTable, FluxConfig, LatticeModel};
use neass_core::linalg::{c, max_abs, op_norm, Mat, C64};
use neass_core::localization::{combes_thomas_scan, decay_profile, decay_propagation_check, fit_localization};
use neass_core::spectral::{eigendecompose, spectral_projector};
use neass_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn third_flux(l: usize) -> (LatticeModel, DisplacementTable, Mat, Vec<f64>) {
    let m = LatticeModel::hofstadter(l, 1, 3).unwrap();
    let d = DisplacementTable::new(&m.geometry);
    let s = eigendecompose(&m.hamiltonian).unwrap();
    let p = spectral_projector(&s, l * l / 3);
    (m, d, p, s.eigenvalues.to_vec())
}

#[test]
fn hopping_profile_stops_at_one() {
    let m = LatticeModel::hofstadter(6, 1, 3).unwrap();
    let d = DisplacementTable::new(&m.geometry);
    let p = decay_profile(&m.hamiltonian.matrix, &d, &m.geometry);
    assert_eq!(p.values[0], 0.0);
    assert!((p.values[1] - 1.0).abs() < 1e-15);
    assert!(p.values[2..].iter().all(|&v| v == 0.0));
    // distances 1 and sqrt(2) both round into bin 1
    assert_eq!(p.shell_sizes[1], 8.0);
}

#[test]
fn fermi_projection_decays_exponentially() {
    let (m, d, p, _) = third_flux(24);
    let fit = fit_localization(&decay_profile(&p, &d, &m.geometry)).unwrap();
    assert!(fit.beta > 0.0);
    assert!(fit.r_squared >= 0.9, "R^2 = {}", fit.r_squared);
}

#[test]
fn diagonal_resolvent_lives_on_the_diagonal() {
    let g = build_geometry(6, 6, 1.0, FluxConfig::zero()).unwrap();
    let d = DisplacementTable::new(&g);
    let ev: Vec<f64> = (0..36).map(|i| (i % 5) as f64).collect();
    let h = Mat::from_diag(&ndarray::Array1::from(ev.iter().map(|x| c(*x)).collect::<Vec<_>>()));
    let scan = combes_thomas_scan(&h, &ev, &d, &g, &[C64::new(0.5, 1.0)]).unwrap();
    let prof = &scan[0].profile;
    assert!(prof.values[0] > 0.0);
    assert!(prof.values[1..].iter().all(|&v| v == 0.0));
    assert!(scan[0].fit.is_none());
    let inside = combes_thomas_scan(&h, &ev, &d, &g, &[C64::new(2.0, 0.0)]);
    assert!(matches!(inside, Err(Error::ZTooCloseToSpectrum { .. })));
}

#[test]
fn resolvent_decays_faster_away_from_the_spectrum() {
    let (m, d, _, ev) = third_flux(18);
    let zs = [C64::new(0.0, 0.5), C64::new(0.0, 10.0)];
    let scan = combes_thomas_scan(&m.hamiltonian.matrix, &ev, &d, &m.geometry, &zs).unwrap();
    let near = scan[0].fit.unwrap().beta;
    let far = scan[1].fit.unwrap().beta;
    assert!(scan[0].distance_to_spectrum < scan[1].distance_to_spectrum);
    assert!(far > near, "{far} vs {near}");
}

#[test]
fn products_of_short_range_kernels_stay_short_range() {
    let m = LatticeModel::hofstadter(6, 1, 3).unwrap();
    let d = DisplacementTable::new(&m.geometry);
    let h = &m.hamiltonian.matrix;
    let p = decay_profile(&h.dot(h), &d, &m.geometry);
    assert!(p.values[..=2].iter().any(|&v| v > 0.0));
    assert!(p.values[3..].iter().all(|&v| v < 1e-15));
}

#[test]
fn propagation_of_the_fermi_projection() {
    let (m, d, p, _) = third_flux(24);
    let r = decay_propagation_check(&p, &p, &d, &m.geometry).unwrap();
    // P^2 = P, so the product rate equals the input rate
    assert!((r.beta_product - r.beta_first).abs() < 1e-10);
    assert!(r.product_ok);
    assert!(r.commutator_ok);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn schur_test_bounds_the_operator_norm(seed in any::<u64>(), range in 0usize..3, l in 3usize..7) {
        let g = build_geometry(l, l, 1.0, FluxConfig::zero()).unwrap();
        let d = DisplacementTable::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_local_operator(&g, range, false, &mut rng);
        let prof = decay_profile(&a, &d, &g);
        prop_assert!(prof.schur_bound() >= op_norm(&a).unwrap() * (1.0 - 1e-12));
        prop_assert!(prof.values.iter().cloned().fold(0.0, f64::max) == max_abs(&a));
        let total: f64 = prof.shell_sizes.iter().sum();
        prop_assert!((total - (l * l) as f64).abs() < 1e-12);
    }
}
