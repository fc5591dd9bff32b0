//! White-noise CSL: exact free and harmonic steps, and the closed-form final
//! variance.
//!
//! With `u = <xp+px>` and `D = 3 lambda A^2 hbar^2 / (2 r_C^2)` the moments obey
//!
//! ```text
//! x2' = u/m
//! u'  = 2 p2/m - 2 m w^2 x2
//! p2' = -m w^2 u + D
//! ```

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AtomSpecies, Csl, GasMoments, Protocol, HBAR};

/// `x - sin x`, accurate for small `x`.
pub(crate) fn x_minus_sin(x: f64) -> f64 {
    if x.abs() < 0.25 {
        // x^3/3! - x^5/5! + ...
        let x2 = x * x;
        let mut term = x * x2 / 6.0;
        let mut sum = term;
        for k in 1..12 {
            let k = k as f64;
            term *= -x2 / ((2.0 * k + 2.0) * (2.0 * k + 3.0));
            sum += term;
        }
        sum
    } else {
        x - x.sin()
    }
}

pub fn csl_free_step(m0: &GasMoments, noise: &Csl, species: &AtomSpecies, dt: f64) -> Result<GasMoments> {
    if !(dt >= 0.0) {
        return Err(Error::domain(format!("free step needs dt >= 0, got {dt}")));
    }
    let m = species.mass;
    let d = noise.heating_rate(species);
    let (x0, u0, p0) = (m0.x2, m0.xp_sym, m0.p2);
    let x2 = x0 + u0 * dt / m + p0 * dt * dt / (m * m) + d * dt * dt * dt / (3.0 * m * m);
    let u = u0 + 2.0 * p0 * dt / m + d * dt * dt / m;
    let p2 = p0 + d * dt;
    let mut out = m0.with_second(x2, u, p2);
    for i in 0..3 {
        out.x_mean[i] = m0.x_mean[i] + m0.p_mean[i] * dt / m;
    }
    Ok(out)
}

/// Coefficients fixing the harmonic solution for a given start state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarmonicStepCoefficients {
    pub a_w: f64,
    pub b_w: f64,
    pub c_w: f64,
}

impl HarmonicStepCoefficients {
    /// `c_w = D / (2 m w^2)`; the `D / (m w^2)` written elsewhere double-counts
    /// the secular drift and fails the ODE check.
    pub fn new(m0: &GasMoments, noise: &Csl, species: &AtomSpecies, omega: f64) -> Self {
        let m = species.mass;
        let c_w = noise.heating_rate(species) / (2.0 * m * omega * omega);
        HarmonicStepCoefficients { a_w: m * omega * m0.x2 - m0.p2 / (m * omega), b_w: m0.xp_sym - c_w, c_w }
    }
}

/// Harmonic trap of frequency `omega` for a duration `dt`.
///
/// Written in the rotated form so that small `omega * dt` does not cancel:
/// the secular pieces use `x - sin x` explicitly.
pub fn csl_harmonic_step(
    m0: &GasMoments,
    noise: &Csl,
    species: &AtomSpecies,
    omega: f64,
    dt: f64,
) -> Result<GasMoments> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::domain(format!("harmonic step needs omega > 0, got {omega}; use the free step")));
    }
    if !(dt >= 0.0) {
        return Err(Error::domain(format!("harmonic step needs dt >= 0, got {dt}")));
    }
    let m = species.mass;
    let w = omega;
    let d = noise.heating_rate(species);
    let (x0, u0, p0) = (m0.x2, m0.xp_sym, m0.p2);
    let th = w * dt;
    let (s, c) = th.sin_cos();
    let s2 = 2.0 * s * c;
    let c2 = c * c - s * s;
    let (ss, cc) = (s * s, c * c);
    let two_th = 2.0 * th;
    let x2 = x0 * cc
        + u0 * s2 / (2.0 * w * m)
        + p0 * ss / (m * m * w * w)
        + d * x_minus_sin(two_th) / (4.0 * m * m * w * w * w);
    let u = u0 * c2 - m * w * x0 * s2 + p0 * s2 / (m * w) + d * ss / (m * w * w);
    let p2 = p0 * cc + m * m * w * w * x0 * ss - 0.5 * m * w * u0 * s2 + d * (two_th + s2) / (4.0 * w);
    let mut out = m0.with_second(x2, u, p2);
    for i in 0..3 {
        let (x, p) = (m0.x_mean[i], m0.p_mean[i]);
        out.x_mean[i] = x * c + p * s / (m * w);
        out.p_mean[i] = p * c - m * w * x * s;
    }
    Ok(out)
}

/// Harmonic step in the coefficient form `x2 = x0 + [b sin - a (1 - cos)]/(2 w m) + c t/m`.
///
/// Same physics as [`csl_harmonic_step`]; kept as an independent check of the
/// coefficient bookkeeping. Loses accuracy for small `omega * dt`.
pub fn csl_harmonic_step_coefficients(
    m0: &GasMoments,
    noise: &Csl,
    species: &AtomSpecies,
    omega: f64,
    dt: f64,
) -> GasMoments {
    let m = species.mass;
    let w = omega;
    let k = HarmonicStepCoefficients::new(m0, noise, species, omega);
    let (s, c) = (2.0 * w * dt).sin_cos();
    let x2 = m0.x2 + (k.b_w * s - k.a_w * (1.0 - c)) / (2.0 * w * m) + k.c_w * dt / m;
    let u = k.b_w * c - k.a_w * s + k.c_w;
    let p2 = m0.p2 + m * w * (k.a_w * (1.0 - c) - k.b_w * s) / 2.0 + m * w * w * k.c_w * dt;
    m0.with_second(x2, u, p2)
}

/// Whether to evaluate the closed form exactly as printed or with the
/// sign and symbol fixes that make it agree with the staged composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ClosedFormVariant {
    Printed,
    Corrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedFormCoefficients {
    pub a_qm: f64,
    pub b_qm: f64,
    pub c_qm: f64,
    pub a_csl: f64,
    pub b_csl: f64,
    pub c_csl: f64,
}

impl ClosedFormCoefficients {
    /// Assumes an uncorrelated start (`xp_sym = 0`) as the closed form does.
    /// Times: `t2 = t1 + dt2`, `t3 = t2 + dt3`, and `tau_p = dt2`.
    pub fn new(protocol: &Protocol, variant: ClosedFormVariant) -> Self {
        let m = protocol.species.mass;
        let w = protocol.omega;
        let (x0, p0) = (protocol.initial.x2, protocol.initial.p2);
        let (t1, t2, t3, d2) = (protocol.t1(), protocol.t2(), protocol.t3(), protocol.dt2);
        let tp = d2;
        let f = t3 - t2;
        let w2 = w * w;
        let g = x0 * m * m + p0 * t1 * t1;

        let a_qm = (p0 + g * w2) * (1.0 + f * f * w2) / (2.0 * m * m * w2);
        let b_head = -(p0 - (x0 * m * m + p0 * (f * f + 4.0 * t1 * f + t1 * t1)) * w2) / (2.0 * m * m * w2);
        let b_tail = g * f * f * w2 / (2.0 * m * m);
        let lever = match variant {
            ClosedFormVariant::Printed => t2 - tp,
            ClosedFormVariant::Corrected => t3 - tp,
        };
        let c_qm = (p0 * lever - (x0 * m * m + p0 * t1 * lever) * f * w2) / (w * m * m);
        let b_qm = match variant {
            ClosedFormVariant::Printed => b_head + b_tail,
            ClosedFormVariant::Corrected => b_head - b_tail,
        };

        let a_csl = 6.0 * w * t3
            + 2.0 * w.powi(3) * (t2.powi(3) + 2.0 * t3.powi(3) + t1.powi(3) - 3.0 * t3 * t3 * t2)
            + 2.0 * t1.powi(3) * f * f * w.powi(5);
        let b_csl = -2.0
            * w
            * (3.0 * (t3 - d2) + w2 * t1 * (2.0 * t1 * t1 - 3.0 * (t3 - d2).powi(2)) + w.powi(4) * t1.powi(3) * f * f);
        let c_print = 3.0
            + 3.0 * w2 * (f * f - 2.0 * (t3 - d2).powi(2))
            + 2.0 * w.powi(4) * t1 * t1 * f * (3.0 * t3 - t1 - 3.0 * d2);
        let c_csl = match variant {
            ClosedFormVariant::Printed => c_print,
            ClosedFormVariant::Corrected => -c_print,
        };
        ClosedFormCoefficients { a_qm, b_qm, c_qm, a_csl, b_csl, c_csl }
    }
}

/// Final `x2` split into quantum and collapse parts, from the closed form.
pub fn csl_closed_form_final_x2(protocol: &Protocol, noise: &Csl, variant: ClosedFormVariant) -> (f64, f64) {
    let k = ClosedFormCoefficients::new(protocol, variant);
    let m = protocol.species.mass;
    let w = protocol.omega;
    let a = protocol.species.a();
    let (s, c) = (2.0 * w * protocol.dt2).sin_cos();
    let qm = k.a_qm + k.b_qm * c + k.c_qm * s;
    let pref = noise.lambda * a * a * HBAR * HBAR / (noise.r_c * noise.r_c * 8.0 * m * m * w.powi(3));
    let csl = pref * (k.a_csl + k.b_csl * c + k.c_csl * s);
    (qm, csl)
}
