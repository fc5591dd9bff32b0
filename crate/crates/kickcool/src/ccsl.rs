//! Colored-noise CSL with correlator `f(s) = exp(-|s|/tau) / (2 tau)`.
//!
//! The memory enters through the damped-trig integrals
//!
//! ```text
//! Cf(t) = int_0^t f(s) cos(w s) ds
//! S(t)  = int_0^t f(s) sin(w s) / w ds
//! ```
//!
//! and the moments obey
//!
//! ```text
//! x2' = u/m
//! u'  = 2 p2/m - 2 m w^2 x2 + (2D/m) S(t)
//! p2' = -m w^2 u + 2 D Cf(t)
//! ```
//!
//! with `D` the white-noise heating rate. As `tau -> 0`, `Cf -> 1/2` and the
//! white-noise equations come back. Memory starts at the beginning of each
//! stage, so every stage call sees a fresh correlator.

use nalgebra::Complex;
use serde::Serialize;

use crate::csl::{csl_free_step, csl_harmonic_step};
use crate::error::{Error, Result};
use crate::model::{AtomSpecies, Ccsl, Csl, GasMoments, Protocol, HBAR};
use crate::quad::{self, Tolerance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ColoredNoiseSpec {
    tau: f64,
}

impl ColoredNoiseSpec {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::domain(format!("correlation time must be positive, got {tau}")));
        }
        Ok(ColoredNoiseSpec { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn cutoff_omega(&self) -> f64 {
        1.0 / self.tau
    }
}

pub fn noise_correlator(s: f64, tau: f64) -> f64 {
    (-s.abs() / tau).exp() / (2.0 * tau)
}

/// `(int_0^x e^{-y/tau} cos(w y) dy, int_0^x e^{-y/tau} sin(w y) dy / w)`.
///
/// Short arguments use the power series of `(1 - e^{-zx})/z`, `z = 1/tau - i w`,
/// which avoids the cancellation in the closed form.
fn damped_trig(x: f64, omega: f64, tau: f64) -> (f64, f64) {
    let a = 1.0 / tau;
    let w = omega;
    if x * (a * a + w * w).sqrt() < 0.5 {
        // sum_n (-z)^n x^{n+1} / (n+1)!
        let mz = Complex::new(-a, w);
        let mut term = Complex::new(x, 0.0);
        let mut sum = term;
        for n in 1..40 {
            term = term * mz * (x / (n as f64 + 1.0));
            sum += term;
            if term.norm() < 1e-18 * sum.norm() {
                break;
            }
        }
        // Im(sum)/w is a polynomial in w, so w = 0 reduces to the moment integral
        let sin_part = if w == 0.0 { sine_moment(x, a) } else { sum.im / w };
        (sum.re, sin_part)
    } else {
        let e = (-a * x).exp();
        let (s, c) = (w * x).sin_cos();
        let half = (0.5 * w * x).sin();
        let one_minus_ec = -(-a * x).exp_m1() + e * 2.0 * half * half;
        let den = a * a + w * w;
        let cos_int = (a * one_minus_ec + w * e * s) / den;
        let sin_int = if w == 0.0 { sine_moment(x, a) } else { (1.0 - e * c - a * e * s / w) / den };
        (cos_int, sin_int)
    }
}

/// `int_0^x y e^{-a y} dy`.
fn sine_moment(x: f64, a: f64) -> f64 {
    let z = a * x;
    if z < 1e-3 {
        x * x * (0.5 - z / 3.0 + z * z / 8.0)
    } else {
        (-(-z).exp_m1() - z * (-z).exp()) / (a * a)
    }
}

/// Memory integrals `(Cf(x), S(x))` for the exponential correlator.
pub fn memory_integrals(x: f64, omega: f64, tau: f64) -> (f64, f64) {
    let (c, s) = damped_trig(x, omega, tau);
    (c / (2.0 * tau), s / (2.0 * tau))
}

/// `g(x) = Cf(x) + e^{-x/tau} sin(w x) / (2 w tau)`.
pub fn g_kernel(x: f64, omega: f64, tau: f64) -> f64 {
    let (cf, _) = memory_integrals(x, omega, tau);
    let tail = if omega == 0.0 { x } else { (omega * x).sin() / omega };
    cf + (-x / tau).exp() * tail / (2.0 * tau)
}

/// `x - 1 + e^{-x}`.
fn r2(x: f64) -> f64 {
    if x < 0.1 {
        series(x, 2, |k| 1.0 / factorial(k))
    } else {
        x + (-x).exp_m1()
    }
}

/// `x^3/3 - x^2/2 + 1 - (1+x) e^{-x}`.
fn q3(x: f64) -> f64 {
    if x < 0.1 {
        series(x, 4, |k| (k as f64 - 1.0) / factorial(k))
    } else {
        x * x * x / 3.0 - x * x / 2.0 + 1.0 - (1.0 + x) * (-x).exp()
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// `sum_{k >= k0} (-1)^k c(k) x^k`, enough terms for double precision at `x < 0.1`.
fn series(x: f64, k0: usize, c: impl Fn(usize) -> f64) -> f64 {
    let mut sum = 0.0;
    for k in (k0..k0 + 14).rev() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * c(k) * x.powi(k as i32);
    }
    sum
}

/// Free flight under colored noise.
pub fn ccsl_free_moments(m0: &GasMoments, noise: &Ccsl, species: &AtomSpecies, t: f64) -> Result<GasMoments> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("free flight needs t >= 0, got {t}")));
    }
    let ballistic = csl_free_step(m0, &Csl { lambda: 0.0, r_c: noise.r_c }, species, t)?;
    let d = noise.white().heating_rate(species);
    let m = species.mass;
    let tau = noise.tau;
    let z = t / tau;
    let x2 = ballistic.x2 + d * tau * tau * tau * q3(z) / (m * m);
    let u = ballistic.xp_sym + d * tau * tau * z * r2(z) / m;
    let p2 = ballistic.p2 + d * tau * r2(z);
    Ok(ballistic.with_second(x2, u, p2))
}

/// Harmonic trap under colored noise; the driven part is a single time
/// integral of the memory functions against the free-oscillator response.
pub fn ccsl_harmonic_moments(
    m0: &GasMoments,
    noise: &Ccsl,
    species: &AtomSpecies,
    omega: f64,
    t: f64,
) -> Result<GasMoments> {
    ccsl_harmonic_moments_tol(m0, noise, species, omega, t, Tolerance::default())
}

pub fn ccsl_harmonic_moments_tol(
    m0: &GasMoments,
    noise: &Ccsl,
    species: &AtomSpecies,
    omega: f64,
    t: f64,
    tol: Tolerance,
) -> Result<GasMoments> {
    let free = csl_harmonic_step(m0, &Csl { lambda: 0.0, r_c: noise.r_c }, species, omega, t)?;
    if noise.lambda == 0.0 || t == 0.0 {
        return Ok(free);
    }
    let d = noise.white().heating_rate(species);
    let m = species.mass;
    let w = omega;
    let tau = noise.tau;
    let mem = |s: f64| memory_integrals(s, w, tau);
    let breaks = [0.0, tau.min(t), (10.0 * tau).min(t), (40.0 * tau).min(t), t];

    // scale the integrands to O(1) so the absolute floor stays meaningful
    let (iu, _) = quad::integrate_with_breaks(
        |s| {
            let (cf, _) = mem(s);
            (g_kernel(s, w, tau) + cf) * (2.0 * w * (t - s)).sin()
        },
        &breaks,
        tol,
    )?;
    let (ix, _) = quad::integrate_with_breaks(
        |s| {
            let (cf, sf) = mem(s);
            let ph = 2.0 * w * (t - s);
            let half = (0.5 * ph).sin();
            w * sf * ph.sin() + cf * 2.0 * half * half
        },
        &breaks,
        tol,
    )?;
    let (ip, _) = quad::integrate_with_breaks(
        |s| {
            let (cf, sf) = mem(s);
            let ph = 2.0 * w * (t - s);
            let half = (0.5 * ph).cos();
            -w * sf * ph.sin() + cf * 2.0 * half * half
        },
        &breaks,
        tol,
    )?;
    let x2 = free.x2 + d * ix / (m * m * w * w);
    let u = free.xp_sym + d * iu / (m * w);
    let p2 = free.p2 + d * ip;
    Ok(free.with_second(x2, u, p2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Condition {
    pub margin: f64,
    pub holds: bool,
}

impl Condition {
    fn from_margin(margin: f64) -> Self {
        Condition { margin, holds: margin < VALIDITY_THRESHOLD }
    }
}

/// A margin below this counts as "much smaller than one".
pub const VALIDITY_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RcRegime {
    /// `r_C >= 1e-5 m`: only `w tau << 1` matters, `Omega >= 1e3 Hz`.
    Large,
    /// `1e-6 < r_C < 1e-5 m`: `Omega >> 1e-3 (1 m / r_C) Hz`.
    Intermediate,
    /// `r_C <= 1e-6 m`: `Omega >> 1e-9 (1 m / r_C)^2 Hz`.
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeThreshold {
    pub regime: RcRegime,
    pub omega_min: f64,
    /// `omega_min / Omega`.
    pub ratio: f64,
    pub met: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidityReport {
    pub cond_omega_tau: Condition,
    pub cond_momentum: Condition,
    pub cond_q2: Condition,
    pub regime_threshold: RegimeThreshold,
}

impl ValidityReport {
    pub fn all_hold(&self) -> bool {
        self.cond_omega_tau.holds && self.cond_momentum.holds && self.cond_q2.holds
    }
}

/// White-noise validity margins. `p_max = |<p>| + sqrt(<p^2>)` is taken from
/// the protocol's initial state.
pub fn white_noise_validity(noise: &Ccsl, protocol: &Protocol) -> ValidityReport {
    let m = protocol.species.mass;
    let tau = noise.tau;
    let r_c = noise.r_c;
    let init = &protocol.initial;
    let p_mean = init.p_mean.iter().map(|p| p * p).sum::<f64>().sqrt();
    let p_max = p_mean + init.p2.sqrt();
    let omega_cut = 1.0 / tau;
    let (regime, omega_min) = if r_c >= 1e-5 {
        (RcRegime::Large, 1e3)
    } else if r_c > 1e-6 {
        (RcRegime::Intermediate, 1e-3 / r_c)
    } else {
        (RcRegime::Small, 1e-9 / (r_c * r_c))
    };
    let ratio = omega_min / omega_cut;
    let met = match regime {
        RcRegime::Large => ratio <= 1.0,
        _ => ratio < VALIDITY_THRESHOLD,
    };
    ValidityReport {
        cond_omega_tau: Condition::from_margin(protocol.omega * tau),
        cond_momentum: Condition::from_margin(p_max * tau / (m * r_c)),
        cond_q2: Condition::from_margin(HBAR * tau / (2.0 * m * r_c * r_c)),
        regime_threshold: RegimeThreshold { regime, omega_min, ratio, met },
    }
}
