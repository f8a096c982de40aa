//! Acceptance suite. Runs every criterion at its pinned tolerance and prints
//! one PASS/FAIL line per check; exits non-zero if any check fails.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use neass_core::experiment::{ExperimentConfig, BUNDLED};
use neass_core::fit::{kendall_tau, log_grid};
use neass_core::jet::{twist_grid, Fiber, Jet, Shape};
use neass_core::lattice::{
    build_geometry, random_local_operator, DisplacementTable, FluxConfig, IncommensurateFlux, LatticeModel,
    PotentialConfig,
};
use neass_core::linalg::{eye, hermitian_defect, op_norm, Mat, C64};
use neass_core::localization::{combes_thomas_scan, decay_profile, fit_localization};
use neass_core::neass::{neass_generators, neass_state, residual_scaling, DEFAULT_EPS0};
use neass_core::response::{
    chern_number_momentum, chern_simons_check, current_operator, cyclicity_defect, hall_conductivity_marker,
    hall_current_density, integrated_density, kubo_defect_scaling, position_commutator, projected_position_trace,
    trace_per_unit_area, vanishing_trace_check,
};
use neass_core::spectral::{build_contour, eigendecompose, fermi_projection_riesz, gap_at_rank, spectral_projector, Projection, Spectrum};
use neass_core::superop::{inv_liouvillian_contour, inv_liouvillian_spectral, liouvillian, od_split};
use neass_core::operator::OperatorMatrix;
use neass_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RESIDUAL_SLOPE_TOL: f64 = 0.25;
const RUNTIME_TARGET_S: f64 = 60.0;
const KUBO_MARGIN: f64 = 0.75;
const QUANTIZATION_TOL: f64 = 0.05;
const EQUILIBRIUM_TOL: f64 = 1e-8;
const ROUNDTRIP_TOL: f64 = 1e-10;
const CONTOUR_REL_TOL: f64 = 1e-8;
const CONTOUR_NODES: usize = 128;
const RIESZ_TOL: f64 = 1e-10;
const IDS_TOL: f64 = 1e-12;
const CHERN_SIMONS_TOL: f64 = 1e-8;
const CHERN_SIMONS_EPS: f64 = 0.05;
/// Base twists per axis; the Chern-Simons sides are averaged over a
/// 5 x 5 grid of twisted boundary conditions.
const CHERN_SIMONS_SAMPLES: usize = 5;
const CYCLICITY_TOL: f64 = 1e-12;
const VANISHING_TRACE_TOL: f64 = 1e-8;
const R2_MIN: f64 = 0.85;
const KENDALL_MIN: f64 = 0.8;
const BETA_VARIATION_MAX: f64 = 0.3;
const REMARK_TOL: f64 = 1e-10;
const RANDOM_OPERATORS: usize = 20;
const GAP_MIN: f64 = 1e-6;

struct Tally {
    pass: usize,
    fail: usize,
}

impl Tally {
    fn check(&mut self, id: u32, name: &str, ok: bool, detail: String) {
        println!("{} [{id:02}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if ok {
            self.pass += 1;
        } else {
            self.fail += 1;
        }
    }

    fn error(&mut self, id: u32, name: &str, e: neass_core::Error) {
        self.check(id, name, false, format!("error: {e}"));
    }
}

struct Setup {
    model: LatticeModel,
    spectrum: Spectrum,
    rank: usize,
}

fn hofstadter(l: usize, p: i64, q: i64, bands: usize) -> Result<Setup> {
    let model = LatticeModel::hofstadter(l, p, q)?;
    let spectrum = eigendecompose(&model.hamiltonian)?;
    let rank = bands * model.n_sites() / q as usize;
    gap_at_rank(&spectrum, rank, GAP_MIN)?;
    Ok(Setup { model, spectrum, rank })
}

fn twist_fiber(s: &Setup, order: usize) -> Result<Fiber> {
    Fiber::twisted(&s.model, [0.0, 0.0], &Shape::tensor(1, order + 1), s.rank)
}

fn eps_grid() -> Vec<f64> {
    log_grid(10f64.powf(-1.5), 10f64.powf(-0.5), 7)
}

fn residual_exponent(t: &mut Tally) -> Result<()> {
    let s = hofstadter(12, 1, 3, 1)?;
    for n in 1..=3 {
        let start = Instant::now();
        let f = twist_fiber(&s, n)?;
        let g = neass_generators(&f, n)?;
        let r = residual_scaling(&f, &g, &eps_grid(), DEFAULT_EPS0)?;
        let secs = start.elapsed().as_secs_f64();
        let target = (n + 1) as f64;
        t.check(
            1,
            &format!("residual exponent n={n}"),
            (r.fit.slope - target).abs() <= RESIDUAL_SLOPE_TOL && secs < RUNTIME_TARGET_S,
            format!("slope {:.4} (target {target} +- {RESIDUAL_SLOPE_TOL}), R2 {:.6}, {secs:.1} s", r.fit.slope, r.fit.r_squared),
        );
    }
    Ok(())
}

fn kubo_exponent(t: &mut Tally) -> Result<()> {
    let s = hofstadter(12, 1, 3, 1)?;
    for n in 1..=2 {
        let f = twist_fiber(&s, n)?;
        let g = neass_generators(&f, n)?;
        let k = kubo_defect_scaling(&f, &g, &eps_grid())?;
        let bound = n as f64 + KUBO_MARGIN;
        t.check(
            2,
            &format!("Kubo defect exponent n={n}"),
            k.fit.slope >= bound,
            format!("slope {:.4} (>= {bound}), 2 pi sigma {:.6}", k.fit.slope, 2.0 * PI * k.sigma),
        );
    }
    Ok(())
}

fn quantization(t: &mut Tally) -> Result<()> {
    let flux = FluxConfig::new(1, 3)?;
    for bands in [1, 2] {
        let c = chern_number_momentum(flux, &PotentialConfig::default(), bands)?.chern.round();
        let mut defects = Vec::new();
        for l in [12, 24] {
            let s = hofstadter(l, 1, 3, bands)?;
            let d = DisplacementTable::new(&s.model.geometry);
            let sigma = hall_conductivity_marker(&spectral_projector(&s.spectrum, s.rank), &d, &s.model.geometry);
            let defect = (2.0 * PI * sigma - c).abs();
            defects.push(defect);
            t.check(
                3,
                &format!("marker quantization, {bands} band(s), L={l}"),
                defect <= QUANTIZATION_TOL,
                format!("2 pi sigma {:.6}, oracle C = {c}, defect {defect:.3e}", 2.0 * PI * sigma),
            );
        }
        t.check(
            3,
            &format!("marker defect non-increasing, {bands} band(s)"),
            defects[1] <= defects[0],
            format!("{:.3e} (L=12) -> {:.3e} (L=24)", defects[0], defects[1]),
        );
    }
    Ok(())
}

/// Every bundled configuration plus the second gap of the flux-1/3 model.
fn bundled_setups() -> Result<Vec<(String, Setup)>> {
    let mut out = Vec::new();
    for (name, text) in BUNDLED {
        let cfg = ExperimentConfig::from_toml(text)?;
        let m = &cfg.model;
        let flux = FluxConfig::new(m.p, m.q)?;
        let geom = build_geometry(m.l1, m.l2, m.lattice_constant, flux)?;
        let pot = PotentialConfig { onsite: m.onsite.clone(), peierls_e1: m.peierls_e1.clone(), peierls_e2: m.peierls_e2.clone() };
        let model = LatticeModel::new(geom, flux, pot)?;
        let spectrum = eigendecompose(&model.hamiltonian)?;
        let bands = m.filled_bands.expect("bundled configs give filled_bands");
        let rank = bands * model.n_sites() / model.geometry.cell_width;
        out.push((name.to_string(), Setup { model, spectrum, rank }));
    }
    out.push(("flux 1/3, second gap".to_string(), hofstadter(12, 1, 3, 2)?));
    Ok(out)
}

fn equilibrium_current(t: &mut Tally) -> Result<()> {
    for (name, s) in bundled_setups()? {
        let g = &s.model.geometry;
        let d = DisplacementTable::new(g);
        let p = spectral_projector(&s.spectrum, s.rank);
        let j1 = current_operator(&s.model.hamiltonian.matrix, &d, 1);
        let kernel = trace_per_unit_area(&j1.dot(&p), g).norm();
        let f = twist_fiber(&s, 1)?;
        let twisted = hall_current_density(&f, &f.projection)?.abs();
        let worst = kernel.max(twisted);
        t.check(
            4,
            &format!("equilibrium current, {name}"),
            worst <= EQUILIBRIUM_TOL,
            format!("|T(J1 P0)| {kernel:.3e} (minimal image), {twisted:.3e} (twist)"),
        );
    }
    Ok(())
}

fn inverse_liouvillian(t: &mut Tally) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (name, s) in bundled_setups()? {
        let gap = gap_at_rank(&s.spectrum, s.rank, GAP_MIN)?;
        let contour = build_contour(&gap, &s.spectrum, CONTOUR_NODES)?;
        let proj = Projection { matrix: OperatorMatrix::new(spectral_projector(&s.spectrum, s.rank)), rank: s.rank };
        let h = &s.model.hamiltonian.matrix;
        let mut roundtrip = 0.0_f64;
        let mut relative = 0.0_f64;
        for _ in 0..RANDOM_OPERATORS {
            let a = random_local_operator(&s.model.geometry, 2, false, &mut rng);
            let b = inv_liouvillian_spectral(&s.spectrum, &proj, &a)?;
            let aod = od_split(&a, &proj).offdiagonal;
            roundtrip = roundtrip.max(op_norm(&(liouvillian(h, &b) - &aod))?);
            let bc = inv_liouvillian_contour(h, &proj, &a, &contour)?;
            relative = relative.max(op_norm(&(&bc - &b))? / op_norm(&b)?);
        }
        t.check(
            5,
            &format!("inverse Liouvillian round trip, {name}"),
            roundtrip <= ROUNDTRIP_TOL,
            format!("max ||L(L^-1 A) - A_OD|| = {roundtrip:.3e} over {RANDOM_OPERATORS} operators"),
        );
        t.check(
            5,
            &format!("contour vs spectral inverse Liouvillian, {name}"),
            relative <= CONTOUR_REL_TOL,
            format!("max relative defect {relative:.3e} at {CONTOUR_NODES} nodes"),
        );
    }
    Ok(())
}

fn riesz(t: &mut Tally) -> Result<()> {
    for (name, s) in bundled_setups()? {
        let gap = gap_at_rank(&s.spectrum, s.rank, GAP_MIN)?;
        let contour = build_contour(&gap, &s.spectrum, CONTOUR_NODES)?;
        let pr = fermi_projection_riesz(&s.model.hamiltonian, &contour)?;
        let diff = op_norm(&(&pr.matrix.matrix - &spectral_projector(&s.spectrum, s.rank)))?;
        let idem = pr.idempotency_defect();
        let herm = hermitian_defect(&pr.matrix.matrix);
        t.check(
            6,
            &format!("Riesz projection, {name}"),
            diff <= RIESZ_TOL && idem <= RIESZ_TOL && herm <= RIESZ_TOL,
            format!("||P_riesz - P_spec|| {diff:.3e}, idempotency {idem:.3e}, hermiticity {herm:.3e}"),
        );
    }
    Ok(())
}

fn ids_invariance(t: &mut Tally) -> Result<()> {
    let s = hofstadter(12, 1, 3, 1)?;
    for n in 1..=3 {
        let f = twist_fiber(&s, n)?;
        let g = neass_generators(&f, n)?;
        let ids0 = integrated_density(&f, &f.projection);
        let mut worst = 0.0_f64;
        for eps in [0.01, 0.05, 0.1] {
            let st = neass_state(&f, &g, eps)?;
            worst = worst.max((integrated_density(&f, &st.projection) - ids0).abs());
        }
        t.check(7, &format!("IDS invariance n={n}"), worst <= IDS_TOL, format!("T(P0) = {ids0:.15}, max defect {worst:.3e}"));
    }
    Ok(())
}

fn chern_simons(t: &mut Tally) -> Result<()> {
    let s = hofstadter(12, 1, 3, 1)?;
    let n = s.model.n_sites();
    let shape = Shape::tensor(1, 3);
    let mut fibers = Vec::new();
    let mut unitaries = Vec::new();
    for tw in twist_grid(&s.model, CHERN_SIMONS_SAMPLES) {
        let f = Fiber::twisted(&s.model, tw, &shape, s.rank)?;
        let g = neass_generators(&f, 2)?;
        unitaries.push(neass_state(&f, &g, CHERN_SIMONS_EPS)?.unitary);
        fibers.push(f);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut phase = Mat::zeros((n, n));
    for i in 0..n {
        phase[[i, i]] = C64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI));
    }
    let cases: [(&str, Vec<Jet>); 3] = [
        ("identity", fibers.iter().map(|f| Jet::constant(eye(n), &f.projection.shape())).collect()),
        ("NEASS unitary, eps = 0.05", unitaries),
        ("random local phase", fibers.iter().map(|f| Jet::constant(phase.clone(), &f.projection.shape())).collect()),
    ];
    for (name, us) in cases {
        let (lhs, rhs) = chern_simons_check(&fibers, &us)?;
        t.check(
            8,
            &format!("Chern-Simons invariance, {name}"),
            (lhs - rhs).abs() <= CHERN_SIMONS_TOL,
            format!("lhs {lhs:.12}, rhs {rhs:.12}, |diff| {:.3e}", (lhs - rhs).abs()),
        );
    }
    Ok(())
}

fn trace_lemmas(t: &mut Tally) -> Result<()> {
    let s = hofstadter(12, 1, 3, 1)?;
    let g = &s.model.geometry;
    let d = Arc::new(DisplacementTable::new(g));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cyc = 0.0_f64;
    for _ in 0..10 {
        let a = random_local_operator(g, 2, false, &mut rng);
        let b = random_local_operator(g, 2, false, &mut rng);
        cyc = cyc.max(cyclicity_defect(&a, &b, g));
    }
    let p = spectral_projector(&s.spectrum, s.rank);
    let j1 = current_operator(&s.model.hamiltonian.matrix, &d, 1);
    let cyc_pj = cyclicity_defect(&p, &j1, g);
    t.check(9, "cyclicity, random periodic pairs", cyc <= CYCLICITY_TOL, format!("max defect {cyc:.3e}"));
    t.check(9, "cyclicity, P0 and J1", cyc_pj <= CYCLICITY_TOL, format!("defect {cyc_pj:.3e}"));
    let fiber = Fiber::minimal_image(&s.model, d, s.rank)?;
    let a = random_local_operator(g, 2, false, &mut rng);
    for (name, op) in [("H0", &s.model.hamiltonian.matrix), ("random local A", &a)] {
        let v = vanishing_trace_check(&fiber, op, 1)?.max(vanishing_trace_check(&fiber, op, 2)?);
        t.check(9, &format!("vanishing trace, {name}"), v <= VANISHING_TRACE_TOL, format!("max over axes {v:.3e}"));
    }
    Ok(())
}

fn localization(t: &mut Tally) -> Result<()> {
    let s = hofstadter(24, 1, 3, 1)?;
    let g = &s.model.geometry;
    let d = Arc::new(DisplacementTable::new(g));
    let h = &s.model.hamiltonian.matrix;
    let p0 = spectral_projector(&s.spectrum, s.rank);
    let fit_check = |t: &mut Tally, name: &str, m: &Mat| -> Result<f64> {
        let f = fit_localization(&decay_profile(m, &d, g))?;
        t.check(
            10,
            &format!("localized {name}"),
            f.beta > 0.0 && f.r_squared >= R2_MIN,
            format!("beta {:.4}, R2 {:.4}, {} bins", f.beta, f.r_squared, f.points),
        );
        Ok(f.beta)
    };
    fit_check(t, "P0", &p0)?;
    fit_check(t, "[P0, X1]", &position_commutator(&p0, &d, 1))?;
    fit_check(t, "[P0, X2]", &position_commutator(&p0, &d, 2))?;

    let fiber = Fiber::minimal_image(&s.model, d.clone(), s.rank)?;
    let gens = neass_generators(&fiber, 2)?;
    let j1 = current_operator(h, &d, 1);
    let j2 = current_operator(h, &d, 2);
    let names = ["[P_eps, X1]", "[P_eps, X2]", "H0 P_eps", "J1 P_eps", "J2 P_eps"];
    let mut betas = vec![Vec::new(); names.len()];
    for eps in [0.0, 0.05, 0.1] {
        let pe = neass_state(&fiber, &gens, eps)?.projection.value().clone();
        let ops = [
            position_commutator(&pe, &d, 1),
            position_commutator(&pe, &d, 2),
            h.dot(&pe),
            j1.dot(&pe),
            j2.dot(&pe),
        ];
        for (k, op) in ops.iter().enumerate() {
            betas[k].push(fit_check(t, &format!("{} at eps = {eps}", names[k]), op)?);
        }
    }
    for (name, b) in names.iter().zip(&betas) {
        let hi = b.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = b.iter().cloned().fold(f64::INFINITY, f64::min);
        let var = (hi - lo) / hi;
        t.check(
            10,
            &format!("beta of {name} stable over eps in [0, 0.1]"),
            var <= BETA_VARIATION_MAX,
            format!("betas {b:.4?}, variation {var:.3}"),
        );
    }

    let zs = [-3.5, -5.0, -6.0, -12.0].map(|x| C64::new(x, 0.0));
    let scan = combes_thomas_scan(h, s.spectrum.eigenvalues.as_slice().unwrap(), &d, g, &zs)?;
    let dist: Vec<f64> = scan.iter().map(|r| r.distance_to_spectrum).collect();
    let beta: Vec<f64> = scan.iter().map(|r| r.fit.map(|f| f.beta).unwrap_or(f64::NAN)).collect();
    let tau = kendall_tau(&dist, &beta);
    t.check(10, "Combes-Thomas monotonicity", tau >= KENDALL_MIN, format!("distances {dist:.3?}, betas {beta:.3?}, tau {tau:.3}"));
    Ok(())
}

fn remark_identity(t: &mut Tally) -> Result<()> {
    let s = hofstadter(12, 1, 3, 1)?;
    let f = Fiber::twisted(&s.model, [0.0, 0.0], &Shape::tensor(2, 2), s.rank)?;
    let (decomposition, double) = projected_position_trace(&f)?;
    let diff = (decomposition - double).norm();
    t.check(
        11,
        "T([P X1 P, P X2 P]) evaluated two ways",
        diff <= REMARK_TOL,
        format!(
            "three-term expansion {decomposition:.12}, double commutator {double:.12}, |diff| {diff:.3e} (with a minus sign on the double commutator the gap would be {:.3e})",
            (decomposition + double).norm()
        ),
    );
    Ok(())
}

fn approximants(t: &mut Tally) -> Result<()> {
    let golden = IncommensurateFlux::golden_mean(8);
    let mut seq = Vec::new();
    for conv in &golden.approximants {
        let (p, q) = (conv.p, conv.q);
        // lowest gap with integrated density 1 - p/q, the label followed along the sequence
        let bands = (q - p) as usize;
        let l = if q == 5 { 20 } else { 24 };
        let name = format!("approximant {p}/{q}, {bands} band(s), L={l}");
        let outcome = (|| -> Result<(f64, f64)> {
            let c = chern_number_momentum(*conv, &PotentialConfig::default(), bands)?.chern.round();
            let s = hofstadter(l, p, q, bands)?;
            let d = DisplacementTable::new(&s.model.geometry);
            let sigma = hall_conductivity_marker(&spectral_projector(&s.spectrum, s.rank), &d, &s.model.geometry);
            Ok((2.0 * PI * sigma, c))
        })();
        match outcome {
            Ok((ts, c)) => {
                let defect = (ts - c).abs();
                seq.push(format!("{p}/{q}: {ts:.5}"));
                t.check(12, &name, defect <= QUANTIZATION_TOL, format!("2 pi sigma {ts:.6}, oracle C = {c}, defect {defect:.3e}"));
            }
            Err(e) => {
                seq.push(format!("{p}/{q}: none"));
                t.error(12, &name, e);
            }
        }
    }
    println!("     [12] sequence of 2 pi sigma: {}", seq.join(", "));
    Ok(())
}

fn main() {
    let mut t = Tally { pass: 0, fail: 0 };
    let start = Instant::now();
    let criteria: [(u32, &str, fn(&mut Tally) -> Result<()>); 12] = [
        (1, "residual exponent", residual_exponent),
        (2, "Kubo defect exponent", kubo_exponent),
        (3, "Hall conductivity quantization", quantization),
        (4, "equilibrium current", equilibrium_current),
        (5, "inverse Liouvillian", inverse_liouvillian),
        (6, "Riesz projection", riesz),
        (7, "IDS invariance", ids_invariance),
        (8, "Chern-Simons invariance", chern_simons),
        (9, "trace lemmas", trace_lemmas),
        (10, "localization", localization),
        (11, "projected position identity", remark_identity),
        (12, "incommensurate approximants", approximants),
    ];
    for (id, name, f) in criteria {
        if let Err(e) = f(&mut t) {
            t.error(id, name, e);
        }
    }
    println!("acceptance: {} passed, {} failed in {:.1} s", t.pass, t.fail, start.elapsed().as_secs_f64());
    if t.fail > 0 {
        std::process::exit(1);
    }
}
