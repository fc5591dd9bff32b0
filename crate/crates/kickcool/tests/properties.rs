use kickcool::ccsl::{ccsl_free_moments, ccsl_harmonic_moments};
use kickcool::csl::{csl_free_step, csl_harmonic_step};
use kickcool::dcsl::{dcsl_free_step, dcsl_rates};
use kickcool::kick_error::{char_poly_roots, protocol_kick_error, KickMatrix};
use kickcool::model::dcsl_k;
use kickcool::ode::{rk4_span, OdeSystem};
use kickcool::pipeline::propagate_oracle;
use kickcool::{
    delta_kick_frequency, propagate, run_protocol, AtomSpecies, Ccsl, Csl, Dcsl, GasMoments, NoiseModel, Protocol,
    RunOptions, HBAR,
};
use proptest::prelude::*;

const RB: AtomSpecies = AtomSpecies::RB87;

fn log_uniform(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.log10()..hi.log10()).prop_map(|e| 10f64.powf(e))
}

fn state() -> impl Strategy<Value = GasMoments> {
    (log_uniform(10e-6, 200e-6), log_uniform(1e-10, 1e-6), -0.9f64..0.9).prop_map(|(s, t, c)| {
        let mut m = GasMoments::thermal(s, t, &RB).unwrap();
        m.xp_sym = 2.0 * c * (m.x2 * m.p2).sqrt();
        m
    })
}

/// Distance between two states, each second moment measured on its own scale
/// and the correlation against `sqrt(x2 p2)`.
fn gap(a: &GasMoments, b: &GasMoments) -> f64 {
    let r = |x: f64, y: f64| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE);
    r(a.x2, b.x2).max(r(a.p2, b.p2)).max((a.xp_sym - b.xp_sym).abs() / (b.x2 * b.p2).sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csl_free_composes(m in state(), l in log_uniform(1e-12, 1e-2), r in log_uniform(1e-9, 1e-3),
                         a in 0.0f64..2.0, b in 0.0f64..2.0) {
        let n = Csl::new(l, r).unwrap();
        let two = csl_free_step(&csl_free_step(&m, &n, &RB, a).unwrap(), &n, &RB, b).unwrap();
        let one = csl_free_step(&m, &n, &RB, a + b).unwrap();
        prop_assert!(gap(&two, &one) < 1e-12, "{}", gap(&two, &one));
    }

    #[test]
    fn csl_harmonic_composes(m in state(), l in log_uniform(1e-12, 1e-2), r in log_uniform(1e-9, 1e-3),
                             w in 0.5f64..20.0, a in 0.0f64..0.1, b in 0.0f64..0.1) {
        let n = Csl::new(l, r).unwrap();
        let two = csl_harmonic_step(&csl_harmonic_step(&m, &n, &RB, w, a).unwrap(), &n, &RB, w, b).unwrap();
        let one = csl_harmonic_step(&m, &n, &RB, w, a + b).unwrap();
        prop_assert!(gap(&two, &one) < 1e-12, "{}", gap(&two, &one));
    }

    #[test]
    fn dcsl_free_composes(m in state(), l in log_uniform(1e-12, 1e-2), r in log_uniform(1e-9, 1e-3),
                          t in log_uniform(1e-12, 1e6), a in 0.0f64..2.0) {
        let n = Dcsl::new(l, r, t).unwrap();
        let two = dcsl_free_step(&dcsl_free_step(&m, &n, &RB, a).unwrap(), &n, &RB, a).unwrap();
        let one = dcsl_free_step(&m, &n, &RB, 2.0 * a).unwrap();
        prop_assert!(gap(&two, &one) < 1e-12, "{}", gap(&two, &one));
    }

    #[test]
    fn free_momentum_grows_at_heating_rate(m in state(), l in log_uniform(1e-12, 1e-2),
                                           r in log_uniform(1e-9, 1e-3), dt in 0.01f64..3.0) {
        let n = Csl::new(l, r).unwrap();
        let d = 3.0 * l * RB.a() * RB.a() * HBAR * HBAR / (2.0 * r * r);
        let p2 = csl_free_step(&m, &n, &RB, dt).unwrap().p2;
        let slope = (p2 - m.p2) / dt;
        // the subtraction loses about eps * p2 / (d dt) of the slope
        let floor = 4.0 * f64::EPSILON * p2 / (d * dt);
        prop_assert!((slope / d - 1.0).abs() < 1e-12 + floor, "{slope} vs {d}");
    }

    /// Doubling lambda doubles the excess over the quantum run. The excess is
    /// a difference of rounded totals, and the totals come out of a focus that
    /// cancels terms some 40 times larger, so the tolerance carries a rounding
    /// floor of 1e-13 of the totals.
    #[test]
    fn excess_is_linear_in_lambda(l in log_uniform(1e-12, 1e-4), r in log_uniform(1e-9, 1e-3)) {
        let p = Protocol::standard();
        let o = RunOptions::default();
        let run = |l: f64| propagate(&p, &NoiseModel::Csl(Csl::new(l, r).unwrap()), &o).unwrap();
        let (q, a, b) = (run(0.0), run(l), run(2.0 * l));
        for (x0, x1, x2) in [(q.x2, a.x2, b.x2), (q.p2, a.p2, b.p2)] {
            let (e1, e2) = (x1 - x0, x2 - x0);
            let floor = 1e-13 * x2.abs();
            prop_assert!((e2 - 2.0 * e1).abs() <= 1e-12 * e2.abs() + floor, "{e1} {e2}");
        }
    }

    #[test]
    fn closed_forms_match_rk4(l in log_uniform(1e-12, 1e-5), r in log_uniform(1e-9, 1e-4),
                              t in log_uniform(1e-12, 1e6), which in 0usize..2) {
        let p = Protocol::standard();
        let n = match which {
            0 => NoiseModel::Csl(Csl::new(l, r).unwrap()),
            _ => NoiseModel::Dcsl(Dcsl::new(l, r, t).unwrap()),
        };
        let o = RunOptions::default();
        let a = propagate(&p, &n, &o).unwrap();
        let b = propagate_oracle(&p, &n, &o).unwrap();
        prop_assert!(gap(&a, &b) < 1e-8, "{:?}: {}", n, gap(&a, &b));
    }

    #[test]
    fn covariance_stays_physical(l in log_uniform(1e-12, 1e-3), r in log_uniform(1e-9, 1e-3),
                                 t in log_uniform(1e-12, 1e6), tau in log_uniform(1e-6, 1e-1), which in 0usize..4) {
        let p = Protocol::standard();
        let n = match which {
            0 => NoiseModel::QmOnly,
            1 => NoiseModel::Csl(Csl::new(l, r).unwrap()),
            2 => NoiseModel::Ccsl(Ccsl::new(l, r, tau).unwrap()),
            _ => NoiseModel::Dcsl(Dcsl::new(l, r, t).unwrap()),
        };
        let m = propagate(&p, &n, &RunOptions::default()).unwrap();
        prop_assert!(m.covariance_det() >= 0.0 && m.x2 > 0.0 && m.p2 > 0.0, "{m:?}");
    }

    /// Non-decreasing in the noise temperature for r_C up to 10 um. Around
    /// 20-60 um the cold noise has k ~ 1 and its correlation damping costs more than the
    /// heating it suppresses; see `cold_correlation_damping_spoils_refocusing`.
    #[test]
    fn colder_noise_spreads_less(l in log_uniform(1e-12, 1e-2), r in log_uniform(1e-9, 1e-5)) {
        let p = Protocol::standard();
        let o = RunOptions::default();
        let xs: Vec<f64> = [1e-12, 1e-6, 1.0, 1e6]
            .iter()
            .map(|&t| propagate(&p, &NoiseModel::Dcsl(Dcsl::new(l, r, t).unwrap()), &o).unwrap().x2)
            .collect();
        prop_assert!(xs.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12)), "{xs:?}");
    }

    #[test]
    fn momentum_relaxes_monotonically(m in state(), l in log_uniform(1e-6, 1e-1), r in log_uniform(1e-9, 1e-4),
                                      t in log_uniform(1e-12, 1e-6)) {
        let n = Dcsl::new(l, r, t).unwrap();
        let as_ = dcsl_rates(&n, &RB).p2_as;
        // a start on the asymptote has no sign to keep
        prop_assume!((m.p2 - as_).abs() > 1e-9 * m.p2.max(as_));
        let d: Vec<f64> = (0..8).map(|i| dcsl_free_step(&m, &n, &RB, 0.4 * i as f64).unwrap().p2 - as_).collect();
        // once relaxed onto the asymptote only rounding is left
        let floor = 1e-12 * m.p2.max(as_);
        let d: Vec<f64> = d.into_iter().take_while(|v| v.abs() > floor).collect();
        prop_assert!(d.iter().all(|v| v.signum() == d[0].signum()), "{d:?}");
        prop_assert!(d.windows(2).all(|w| w[1].abs() <= w[0].abs()), "{d:?}");
    }

    #[test]
    fn kick_error_grows_with_lambda(l in log_uniform(1e-14, 1e-4), r in log_uniform(1e-9, 1e-4),
                                    t in log_uniform(1e-12, 1e6)) {
        let p = Protocol::standard();
        let a = protocol_kick_error(&p, &Dcsl::new(l, r, t).unwrap()).unwrap();
        let b = protocol_kick_error(&p, &Dcsl::new(10.0 * l, r, t).unwrap()).unwrap();
        for (x, y) in [(a.err_x2, b.err_x2), (a.err_xp, b.err_xp), (a.err_p2, b.err_p2)] {
            if let (Some(x), Some(y)) = (x, y) {
                prop_assert!(y >= x * (1.0 - 1e-12), "{x} {y}");
            }
        }
    }

    #[test]
    fn kick_frequency_falls_with_durations(a in 0.01f64..0.1, b in 0.5f64..3.0, c in 0.5f64..3.0,
                                           g in 0.0f64..1.0, s in 1.01f64..2.0) {
        let w = delta_kick_frequency(a, b, c, g).unwrap();
        prop_assert!(delta_kick_frequency(a * s, b, c, g).unwrap() < w);
        prop_assert!(delta_kick_frequency(a, b * s, c, g).unwrap() <= w);
        prop_assert!(delta_kick_frequency(a, b, c * s, g).unwrap() < w);
    }

    #[test]
    fn k_times_temperature_is_fixed(t in log_uniform(1e-12, 1e6), r in log_uniform(1e-9, 1e-3)) {
        let a = dcsl_k(t, &RB, r).unwrap() * t;
        let b = dcsl_k(1.0, &RB, r).unwrap();
        prop_assert!((a / b - 1.0).abs() < 1e-12);
    }
}

fn staged_rk4(p: &Protocol, free: OdeSystem) -> f64 {
    let a = rk4_span(&free, &p.initial, 0.0, p.dt1, 1e-4).unwrap();
    let b = csl_harmonic_step(&a, &Csl::new(0.0, 1.0).unwrap(), &RB, p.omega, p.dt2).unwrap();
    rk4_span(&free, &b, 0.0, p.dt3, 1e-4).unwrap().x2
}

/// Near r_C ~ 30 um the cold noise has k ~ 1 and damps the position-momentum
/// correlation at rate B. After the kick that correlation is what refocuses
/// the cloud, so damping it leaves a larger spread than the warm heating does.
#[test]
fn cold_correlation_damping_spoils_refocusing() {
    let p = Protocol::standard();
    let o = RunOptions::default();
    let (l, r) = (1e-8, 3.16e-5);
    let x = |t: f64| propagate(&p, &NoiseModel::Dcsl(Dcsl::new(l, r, t).unwrap()), &o).unwrap().x2;
    let (cold, warm) = (x(1e-12), x(1e6));
    assert!(cold > warm);

    let OdeSystem::DcslFree { mass, chi, alpha, heating, boost, .. } =
        OdeSystem::dcsl(&Dcsl::new(l, r, 1e-12).unwrap(), &RB, 0.0)
    else {
        unreachable!()
    };
    let undamped = staged_rk4(&p, OdeSystem::DcslFree { mass, chi, big_b: 0.0, alpha, heating, boost });
    assert!(undamped < warm, "{undamped:e} vs {warm:e}");
}

#[test]
fn eigenvalues_are_stable_and_agree() {
    for k in kickcool::logspace(1e-10, 1e2, 25) {
        for l in kickcool::logspace(1e-20, 1e-3, 18) {
            let la2 = l * RB.a() * RB.a();
            let (chi, b) = (4.0 * k * la2 / (1.0 + k).powi(5), 2.0 * k * la2 / (1.0 + k).powi(4));
            let roots = char_poly_roots(b, chi, 6.7);
            assert!(roots.iter().all(|z| z.re <= 0.0), "k {k} lambda {l}: {roots:?}");
            // unshifted QR stalls on some of these; the transpose has the same spectrum
            let m = KickMatrix::new(b, chi, 6.7).m;
            let mut direct: Vec<_> = nalgebra::Schur::try_new(m, f64::EPSILON, 10_000)
                .or_else(|| nalgebra::Schur::try_new(m.transpose(), f64::EPSILON, 10_000))
                .expect("schur converges")
                .complex_eigenvalues()
                .iter()
                .copied()
                .collect();
            for z in roots {
                let (i, d) = direct
                    .iter()
                    .enumerate()
                    .map(|(i, e)| (i, (e - z).norm()))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap();
                assert!(d <= 1e-9 * z.norm().max(1.0), "k {k} lambda {l}: {z} vs {direct:?}");
                direct.remove(i);
            }
        }
    }
}

#[test]
fn colored_noise_never_exceeds_white() {
    let p = Protocol::standard();
    let o = RunOptions::default();
    for (l, r) in [(1e-6, 1e-7), (1e-3, 1e-5), (1e-10, 1e-9)] {
        let white = propagate(&p, &NoiseModel::Csl(Csl::new(l, r).unwrap()), &o).unwrap();
        for tau in kickcool::logspace(1e-6, 1e-1, 11) {
            let c = propagate(&p, &NoiseModel::Ccsl(Ccsl::new(l, r, tau).unwrap()), &o).unwrap();
            assert!(c.x2 <= white.x2 * (1.0 + 1e-12) && c.p2 <= white.p2 * (1.0 + 1e-12), "tau {tau}");
        }
    }
}

#[test]
fn colored_free_is_slow_harmonic() {
    let m = GasMoments::thermal(56e-6, 1.6e-9, &RB).unwrap();
    for tau in [1e-5, 1e-3, 1e-1] {
        let n = Ccsl::new(1e-4, 1e-7, tau).unwrap();
        let a = ccsl_free_moments(&m, &n, &RB, 1.1).unwrap();
        let b = ccsl_harmonic_moments(&m, &n, &RB, 1e-6, 1.1).unwrap();
        assert!(gap(&b, &a) < 1e-5, "tau {tau}: {}", gap(&b, &a));
    }
}

#[test]
fn sampling_density_is_invisible_at_the_end() {
    let p = Protocol::standard();
    for n in [NoiseModel::QmOnly, NoiseModel::Dcsl(Dcsl::new(1e-6, 1e-6, 1e-9).unwrap())] {
        let a = run_protocol(&p, &n, 0.1).unwrap();
        let b = run_protocol(&p, &n, 0.05).unwrap();
        assert_eq!(a.final_moments(), b.final_moments());
        assert!(b.times.len() > a.times.len());
    }
}
