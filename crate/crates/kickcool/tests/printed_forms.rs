//! Integrated formulas as printed, kept next to the forms the crate uses so
//! the known discrepancies stay visible.

use kickcool::csl::{csl_closed_form_final_x2, ClosedFormVariant};
use kickcool::dcsl::{dcsl_free_step, dcsl_rates};
use kickcool::ode::{rk4_integrate, OdeSystem};
use kickcool::{propagate, AtomSpecies, Csl, Dcsl, GasMoments, NoiseModel, Protocol, RunOptions};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn corrected_closed_form_matches_staged_run() {
    let o = RunOptions::default();
    for dt2 in [0.02, 0.035, 0.05] {
        let p = Protocol::standard().with_dt2(dt2).unwrap();
        for (l, r) in [(0.0, 1e-7), (1e-8, 1e-7), (1e-6, 1e-7), (1e-4, 1e-5)] {
            let n = Csl::new(l, r).unwrap();
            let staged = propagate(&p, &NoiseModel::Csl(n), &o).unwrap().x2;
            let (qm, csl) = csl_closed_form_final_x2(&p, &n, ClosedFormVariant::Corrected);
            assert!(rel(qm + csl, staged) < 1e-10, "dt2 {dt2} lambda {l}: {}", rel(qm + csl, staged));
        }
    }
}

/// As printed, the quantum lever arm reads `t2 - tau_p` and two signs are
/// flipped; the quantum part then misses by three orders of magnitude.
#[test]
fn printed_closed_form_is_off() {
    let p = Protocol::standard();
    let o = RunOptions::default();
    let n = Csl::new(1e-6, 1e-7).unwrap();
    let qm = propagate(&p, &NoiseModel::QmOnly, &o).unwrap().x2;
    let staged = propagate(&p, &NoiseModel::Csl(n), &o).unwrap().x2;
    let (a, b) = csl_closed_form_final_x2(&p, &n, ClosedFormVariant::Printed);
    assert!(rel(a, qm) > 1e2, "{}", rel(a, qm));
    assert!(rel(b, staged - qm) > 1.0, "{}", rel(b, staged - qm));
}

struct Free {
    m: f64,
    chi: f64,
    b: f64,
    alpha: f64,
    p_as: f64,
}

fn setup() -> (GasMoments, Dcsl, Free) {
    let sp = AtomSpecies::RB87;
    let n = Dcsl::new(1e-4, 1e-7, 1e-7).unwrap();
    let r = dcsl_rates(&n, &sp);
    let mut m0 = GasMoments::thermal(56e-6, 1.6e-9, &sp).unwrap();
    m0.xp_sym = 0.3 * (m0.x2 * m0.p2).sqrt();
    (m0, n, Free { m: sp.mass, chi: r.chi, b: r.big_b, alpha: r.alpha, p_as: r.p2_as })
}

fn printed_x2(m0: &GasMoments, f: &Free, t: f64) -> f64 {
    let (m, chi, b) = (f.m, f.chi, f.b);
    let d = m0.p2 - f.p_as;
    m0.x2
        + 2.0 * d / (m * m * (b - chi)) * ((1.0 - (-chi * t).exp()) / chi - (1.0 - (-b * t).exp()) / b)
        + (m0.xp_sym - 2.0 * f.p_as / (m * b)) * (1.0 - (-b * t).exp()) / (m * b)
        + (f.alpha + 2.0 * f.p_as / (m * m * b)) * t
}

fn printed_xp(m0: &GasMoments, f: &Free, t: f64) -> f64 {
    let (m, chi, b) = (f.m, f.chi, f.b);
    let d = m0.p2 - f.p_as;
    2.0 * d / (m * (b - chi)) * ((-chi * t).exp() - (-b * t).exp())
        + 2.0 * m * f.p_as / (m * b)
        + (-b * t).exp() * (m0.xp_sym - 8.0 * m * f.p_as / b)
}

#[test]
fn printed_dissipative_position_form_is_exact() {
    let (m0, n, f) = setup();
    let sp = AtomSpecies::RB87;
    for t in [0.3, 1.1, 2.9] {
        let ours = dcsl_free_step(&m0, &n, &sp, t).unwrap();
        let oracle = rk4_integrate(&OdeSystem::dcsl(&n, &sp, 0.0), &m0, t, t / 1e5).unwrap();
        assert!(rel(printed_x2(&m0, &f, t), ours.x2) < 1e-10, "t {t}");
        assert!(rel(ours.x2, oracle.x2) < 1e-8, "t {t}");
    }
}

/// The printed correlation carries `2 m <p^2>_as / (m B)` and
/// `8 m <p^2>_as / B`, neither of which has the units of the rest; the
/// solution of the stated equations has `2 <p^2>_as / (m B)` in both places.
#[test]
fn printed_dissipative_correlation_form_is_off() {
    let (m0, n, f) = setup();
    let sp = AtomSpecies::RB87;
    for t in [0.3, 1.1, 2.9] {
        let ours = dcsl_free_step(&m0, &n, &sp, t).unwrap();
        let oracle = rk4_integrate(&OdeSystem::dcsl(&n, &sp, 0.0), &m0, t, t / 1e5).unwrap();
        let scale = (oracle.x2 * oracle.p2).sqrt();
        assert!((ours.xp_sym - oracle.xp_sym).abs() < 1e-8 * scale, "t {t}");
        assert!((printed_xp(&m0, &f, t) - oracle.xp_sym).abs() > 1e-2 * scale, "t {t}");
    }
}
