//! Dissipative CSL: relaxation rates, free-flight solution, the kick, and the
//! boosted mean motion.
//!
//! ```text
//! x2' = u/m + alpha
//! u'  = 2 p2/m - 2 m w^2 x2 - B u
//! p2' = -m w^2 u - chi p2 + chi p2_as
//! ```

use serde::Serialize;

use crate::csl::csl_harmonic_step;
use crate::error::{Error, Result};
use crate::model::{dcsl_k, AtomSpecies, Csl, Dcsl, GasMoments, HBAR};
use crate::ode::{self, OdeSystem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DcslRates {
    pub k: f64,
    pub chi: f64,
    pub big_b: f64,
    pub alpha: f64,
    pub p2_as: f64,
    /// `chi * p2_as`, evaluated without forming the divergent `p2_as`.
    pub heating: f64,
}

pub fn dcsl_rates(noise: &Dcsl, species: &AtomSpecies) -> DcslRates {
    let k = dcsl_k(noise.t_csl, species, noise.r_c).expect("validated noise parameters");
    let a = species.a();
    let la2 = noise.lambda * a * a;
    let kp = 1.0 + k;
    let chi = 4.0 * k * la2 / kp.powi(5);
    DcslRates {
        k,
        chi,
        big_b: 2.0 * k * la2 / kp.powi(4),
        alpha: 6.0 * la2 * noise.r_c * noise.r_c * k * k / kp.powi(3),
        p2_as: 3.0 * HBAR * HBAR / (8.0 * k * noise.r_c * noise.r_c),
        heating: 1.5 * la2 * HBAR * HBAR / (noise.r_c * noise.r_c * kp.powi(5)),
    }
}

/// `Phi(t; c_0..c_n)`: the `n`-fold convolution of `exp(-c_i t)`.
///
/// Computed as the corner entry of `exp(t J)` with `J` bidiagonal (`-c_i` on the
/// diagonal, ones above). Shifting by `max c_i` leaves a non-negative matrix
/// whose Taylor series has no cancellation, so repeated or vanishing rates
/// need no special cases.
pub fn exp_convolution(t: f64, rates: &[f64]) -> f64 {
    let n = rates.len();
    assert!((1..=5).contains(&n), "between one and five rates");
    let cmax = rates.iter().cloned().fold(0.0, f64::max);
    // similarity scaling by diag(1, c, c^2, ..) puts the off-diagonal on the
    // same footing as the diagonal
    let sim = if cmax * t > 1.0 {
        cmax
    } else if t > 0.0 {
        1.0 / t
    } else {
        1.0
    };
    let mut a = [[0.0f64; 5]; 5];
    for i in 0..n {
        a[i][i] = (cmax - rates[i]) * t;
        if i + 1 < n {
            a[i][i + 1] = sim * t;
        }
    }
    let norm = (0..n).map(|i| a[i][i] + a[i].get(i + 1).copied().unwrap_or(0.0)).fold(0.0, f64::max);
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    for row in a.iter_mut().take(n) {
        for v in row.iter_mut().take(n) {
            *v *= scale;
        }
    }
    let mut e = identity(n);
    let mut term = identity(n);
    for j in 1..30 {
        term = mul(&term, &a, n);
        let inv = 1.0 / j as f64;
        let mut small = true;
        for r in 0..n {
            for c in r..n {
                term[r][c] *= inv;
                e[r][c] += term[r][c];
                if term[r][c] > 1e-18 * e[r][c] {
                    small = false;
                }
            }
        }
        if small {
            break;
        }
    }
    for _ in 0..squarings {
        e = mul(&e, &e, n);
    }
    e[0][n - 1] * (-cmax * t).exp() / sim.powi(n as i32 - 1)
}

fn identity(n: usize) -> [[f64; 5]; 5] {
    let mut m = [[0.0; 5]; 5];
    for (i, row) in m.iter_mut().enumerate().take(n) {
        row[i] = 1.0;
    }
    m
}

fn mul(x: &[[f64; 5]; 5], y: &[[f64; 5]; 5], n: usize) -> [[f64; 5]; 5] {
    let mut z = [[0.0; 5]; 5];
    for r in 0..n {
        for c in r..n {
            z[r][c] = (r..=c).map(|k| x[r][k] * y[k][c]).sum();
        }
    }
    z
}

/// Free flight. Only second moments change; see [`boost_mean_step`] for the
/// means.
pub fn dcsl_free_step(m0: &GasMoments, noise: &Dcsl, species: &AtomSpecies, dt: f64) -> Result<GasMoments> {
    if !(dt >= 0.0) {
        return Err(Error::domain(format!("free step needs dt >= 0, got {dt}")));
    }
    let r = dcsl_rates(noise, species);
    Ok(free_second_moments(m0, &r, species.mass, dt))
}

fn free_second_moments(m0: &GasMoments, r: &DcslRates, m: f64, t: f64) -> GasMoments {
    let (chi, b, h) = (r.chi, r.big_b, r.heating);
    let phi = |rates: &[f64]| exp_convolution(t, rates);
    let (x0, u0, p0) = (m0.x2, m0.xp_sym, m0.p2);
    let p2 = p0 * phi(&[chi]) + h * phi(&[chi, 0.0]);
    let u = u0 * phi(&[b]) + 2.0 / m * (p0 * phi(&[chi, b]) + h * phi(&[0.0, chi, b]));
    let x2 = x0
        + r.alpha * t
        + (u0 * phi(&[b, 0.0]) + 2.0 / m * (p0 * phi(&[chi, b, 0.0]) + h * phi(&[0.0, chi, b, 0.0]))) / m;
    m0.with_second(x2, u, p2)
}

/// How the kick is propagated under dCSL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum KickMode {
    /// Plain quantum harmonic evolution; the collapse terms are dropped.
    #[default]
    AnalyticQm,
    /// RK4 on the full dissipative system.
    Numeric,
}

pub const NUMERIC_MAX_STEP: f64 = 1e-4;

pub fn dcsl_harmonic_step(
    m0: &GasMoments,
    noise: &Dcsl,
    species: &AtomSpecies,
    omega: f64,
    dt: f64,
    mode: KickMode,
) -> Result<GasMoments> {
    dcsl_harmonic_step_with(m0, noise, species, omega, dt, mode, NUMERIC_MAX_STEP)
}

/// As [`dcsl_harmonic_step`] with an explicit upper bound on the RK4 step.
pub fn dcsl_harmonic_step_with(
    m0: &GasMoments,
    noise: &Dcsl,
    species: &AtomSpecies,
    omega: f64,
    dt: f64,
    mode: KickMode,
    max_step: f64,
) -> Result<GasMoments> {
    let qm = csl_harmonic_step(m0, &Csl { lambda: 0.0, r_c: noise.r_c }, species, omega, dt)?;
    match mode {
        KickMode::AnalyticQm => Ok(qm),
        KickMode::Numeric => {
            if noise.lambda == 0.0 || dt == 0.0 {
                return Ok(qm);
            }
            let r = dcsl_rates(noise, species);
            let sys = OdeSystem::DcslHarmonic {
                mass: species.mass,
                omega,
                chi: r.chi,
                big_b: r.big_b,
                alpha: r.alpha,
                heating: r.heating,
            };
            let steps = (dt / max_step).ceil().max(1.0);
            let out = ode::rk4_integrate(&sys, m0, dt, dt / steps)?;
            // means follow the plain oscillator; the boost acts in free flight only
            Ok(GasMoments { x_mean: qm.x_mean, p_mean: qm.p_mean, ..out })
        }
    }
}

/// Free flight with the boosted mean motion.
pub fn boost_mean_step(m0: &GasMoments, noise: &Dcsl, species: &AtomSpecies, dt: f64) -> Result<GasMoments> {
    let mut out = dcsl_free_step(m0, noise, species, dt)?;
    let b = dcsl_rates(noise, species).big_b;
    let m = species.mass;
    let decay = exp_convolution(dt, &[b]);
    let lag = exp_convolution(dt, &[b, 0.0]);
    for i in 0..3 {
        let (x0, p0, u) = (m0.x_mean[i], m0.p_mean[i], noise.boost[i]);
        out.p_mean[i] = p0 * decay + m * u * b * lag;
        out.x_mean[i] = x0 + u * dt + (p0 / m - u) * lag;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VelocityBound {
    pub u_max: f64,
    /// `B t`; the quadratic displacement formula assumes this is small.
    pub b_t: f64,
}

impl VelocityBound {
    pub fn small_rate(&self) -> bool {
        self.b_t < 0.1
    }
}

/// Largest drift speed whose mean displacement `u B t^2 / 2` stays within
/// `displacement_limit`.
pub fn boost_velocity_bound(
    noise: &Dcsl,
    species: &AtomSpecies,
    t_total: f64,
    displacement_limit: f64,
) -> Result<VelocityBound> {
    if !(t_total > 0.0 && displacement_limit > 0.0) {
        return Err(Error::domain("duration and displacement limit must be positive"));
    }
    let b = dcsl_rates(noise, species).big_b;
    if b == 0.0 {
        return Err(Error::Unbounded("B = 0, the boost has no effect on the mean".into()));
    }
    Ok(VelocityBound { u_max: 2.0 * displacement_limit / (b * t_total * t_total), b_t: b * t_total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csl::csl_free_step;
    use crate::model::Protocol;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn convolution_closed_forms() {
        let t = 1.7;
        assert!(rel(exp_convolution(t, &[0.3]), (-0.3f64 * t).exp()) < 1e-14);
        assert!(rel(exp_convolution(t, &[0.0]), 1.0) < 1e-15);
        assert!(rel(exp_convolution(t, &[0.3, 0.0]), (1.0 - (-0.3f64 * t).exp()) / 0.3) < 1e-14);
        let (a, b) = (0.3f64, 1.1f64);
        let want = ((-a * t).exp() - (-b * t).exp()) / (b - a);
        assert!(rel(exp_convolution(t, &[a, b]), want) < 1e-13);
        // repeated rate: t e^{-a t}
        assert!(rel(exp_convolution(t, &[a, a]), t * (-a * t).exp()) < 1e-14);
        // all zero rates: t^n / n!
        assert!(rel(exp_convolution(t, &[0.0; 4]), t.powi(3) / 6.0) < 1e-14);
        // tiny rates keep full relative accuracy
        let eps = 1e-20;
        assert!(rel(exp_convolution(t, &[eps, 0.0]), t) < 1e-15);
    }

    #[test]
    fn rates_reference() {
        let n = Dcsl::new(1e-17, 1e-7, 1.0).unwrap();
        let r = dcsl_rates(&n, &AtomSpecies::RB87);
        // 2 * 1e-17 * 87^2 * k / (1+k)^4 with k = 6.99224e-8
        assert!(rel(r.big_b, 1.058_485_564e-20) < 1e-6, "{:e}", r.big_b);
        assert!(rel(r.big_b, (1.0 + r.k) * r.chi / 2.0) < 1e-14);
        assert!(rel(r.heating, r.chi * r.p2_as) < 1e-14);
        let zero = dcsl_rates(&Dcsl::new(0.0, 1e-7, 1.0).unwrap(), &AtomSpecies::RB87);
        assert_eq!((zero.chi, zero.big_b, zero.alpha), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hot_noise_recovers_csl_rate() {
        let n = Dcsl::new(1e-5, 1e-7, 1e6).unwrap();
        let r = dcsl_rates(&n, &AtomSpecies::RB87);
        let d = n.white().heating_rate(&AtomSpecies::RB87);
        assert!((r.chi * r.p2_as / d - 1.0).abs() < 1e-5);
    }

    #[test]
    fn free_step_relaxes_to_asymptote() {
        let sp = AtomSpecies::RB87;
        let n = Dcsl::new(1e-3, 1e-7, 1e-12).unwrap();
        let r = dcsl_rates(&n, &sp);
        let m0 = Protocol::standard().initial;
        let late = dcsl_free_step(&m0, &n, &sp, 50.0 / r.chi).unwrap();
        assert!(rel(late.p2, r.p2_as) < 1e-12);
        let printed = r.p2_as + (-r.chi * 0.7).exp() * (m0.p2 - r.p2_as);
        assert!(rel(dcsl_free_step(&m0, &n, &sp, 0.7).unwrap().p2, printed) < 1e-12);
    }

    #[test]
    fn hot_free_step_matches_csl() {
        let p = Protocol::standard();
        let n = Dcsl::new(1e-5, 1e-7, 1e6).unwrap();
        let a = dcsl_free_step(&p.initial, &n, &p.species, 3.0).unwrap();
        let b = csl_free_step(&p.initial, &n.white(), &p.species, 3.0).unwrap();
        assert!(rel(a.x2, b.x2) < 1e-4 && rel(a.p2, b.p2) < 1e-4 && rel(a.xp_sym, b.xp_sym) < 1e-4);
    }

    #[test]
    fn harmonic_modes_agree_at_zero_lambda() {
        let p = Protocol::standard();
        let n = Dcsl::new(0.0, 1e-7, 1.0).unwrap();
        let a = dcsl_harmonic_step(&p.initial, &n, &p.species, 6.7, 0.035, KickMode::AnalyticQm).unwrap();
        let b = dcsl_harmonic_step(&p.initial, &n, &p.species, 6.7, 0.035, KickMode::Numeric).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn boost_limits() {
        let sp = AtomSpecies::RB87;
        let m0 = Protocol::standard().initial;
        let still = Dcsl::new(1e-5, 1e-7, 1.0).unwrap();
        let out = boost_mean_step(&m0, &still, &sp, 2.0).unwrap();
        assert_eq!((out.x_mean, out.p_mean), ([0.0; 3], [0.0; 3]));

        let n = Dcsl::boosted(1e-3, 1e-7, 1e-3, [1e3, 0.0, 0.0]).unwrap();
        let b = dcsl_rates(&n, &sp).big_b;
        let late = boost_mean_step(&m0, &n, &sp, 60.0 / b).unwrap();
        assert!(rel(late.p_mean[0], sp.mass * 1e3) < 1e-12);
    }

    #[test]
    fn velocity_bound_linear_and_unbounded() {
        let sp = AtomSpecies::RB87;
        let n = Dcsl::new(1e-17, 1e-7, 1.0).unwrap();
        let a = boost_velocity_bound(&n, &sp, 3.0, 1e-6).unwrap();
        let b = boost_velocity_bound(&n, &sp, 3.0, 2e-6).unwrap();
        assert!(rel(b.u_max, 2.0 * a.u_max) < 1e-15);
        assert!(a.small_rate());
        let z = Dcsl::new(0.0, 1e-7, 1.0).unwrap();
        assert!(matches!(boost_velocity_bound(&z, &sp, 3.0, 1e-6), Err(Error::Unbounded(_))));
    }
}
