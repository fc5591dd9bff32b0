//! Fixed-step RK4 on the moment equations in derivative form.
//!
//! This is the reference the closed-form propagators are tested against, so
//! the right-hand sides here are written out directly and share no code with
//! the integrated solutions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AtomSpecies, Ccsl, Csl, Dcsl, GasMoments, Vec3};

/// State layout: `[x2, xp_sym, p2, x_mean(3), p_mean(3)]`.
pub const DIM: usize = 9;
type State = [f64; DIM];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum OdeSystem {
    CslFree {
        mass: f64,
        heating: f64,
    },
    CslHarmonic {
        mass: f64,
        omega: f64,
        heating: f64,
    },
    DcslFree {
        mass: f64,
        chi: f64,
        big_b: f64,
        alpha: f64,
        heating: f64,
        boost: Vec3,
    },
    DcslHarmonic {
        mass: f64,
        omega: f64,
        chi: f64,
        big_b: f64,
        alpha: f64,
        heating: f64,
    },
    /// Colored noise with memory starting at `t = 0`; `omega = 0` is free flight.
    CcslHistory {
        mass: f64,
        omega: f64,
        heating: f64,
        tau: f64,
    },
}

impl OdeSystem {
    pub fn csl(noise: &Csl, species: &AtomSpecies, omega: f64) -> Self {
        let heating = noise.heating_rate(species);
        if omega == 0.0 {
            OdeSystem::CslFree { mass: species.mass, heating }
        } else {
            OdeSystem::CslHarmonic { mass: species.mass, omega, heating }
        }
    }

    pub fn ccsl(noise: &Ccsl, species: &AtomSpecies, omega: f64) -> Self {
        OdeSystem::CcslHistory {
            mass: species.mass,
            omega,
            heating: noise.white().heating_rate(species),
            tau: noise.tau,
        }
    }

    /// dCSL with the rates written out from the noise parameters directly.
    pub fn dcsl(noise: &Dcsl, species: &AtomSpecies, omega: f64) -> Self {
        let hbar = crate::model::HBAR;
        let k = hbar * hbar / (8.0 * species.mass * crate::model::K_B * noise.t_csl * noise.r_c * noise.r_c);
        let la2 = noise.lambda * species.a() * species.a();
        let chi = 4.0 * k * la2 / (1.0 + k).powi(5);
        let big_b = 2.0 * la2 * k / (1.0 + k).powi(4);
        let alpha = 6.0 * la2 * noise.r_c * noise.r_c * k * k / (1.0 + k).powi(3);
        // chi * 3 hbar^2 / (8 k r_C^2) with k cancelled
        let heating = 1.5 * la2 * hbar * hbar / ((1.0 + k).powi(5) * noise.r_c * noise.r_c);
        let mass = species.mass;
        if omega == 0.0 {
            OdeSystem::DcslFree { mass, chi, big_b, alpha, heating, boost: noise.boost }
        } else {
            OdeSystem::DcslHarmonic { mass, omega, chi, big_b, alpha, heating }
        }
    }

    pub fn dimension(&self) -> usize {
        DIM
    }

    fn rhs(&self, t: f64, y: &State) -> State {
        let (x2, u, p2) = (y[0], y[1], y[2]);
        let mut d = [0.0; DIM];
        let (mass, omega) = match *self {
            OdeSystem::CslFree { mass, .. } | OdeSystem::DcslFree { mass, .. } => (mass, 0.0),
            OdeSystem::CslHarmonic { mass, omega, .. }
            | OdeSystem::DcslHarmonic { mass, omega, .. }
            | OdeSystem::CcslHistory { mass, omega, .. } => (mass, omega),
        };
        let w2 = omega * omega;
        d[0] = u / mass;
        d[1] = 2.0 * p2 / mass - 2.0 * mass * w2 * x2;
        d[2] = -mass * w2 * u;
        for i in 0..3 {
            d[3 + i] = y[6 + i] / mass;
            d[6 + i] = -mass * w2 * y[3 + i];
        }
        match *self {
            OdeSystem::CslFree { heating, .. } | OdeSystem::CslHarmonic { heating, .. } => {
                d[2] += heating;
            }
            OdeSystem::DcslFree { mass, chi, big_b, alpha, heating, boost } => {
                d[0] += alpha;
                d[1] -= big_b * u;
                d[2] += -chi * p2 + heating;
                for i in 0..3 {
                    d[6 + i] = -big_b * (y[6 + i] - mass * boost[i]);
                }
            }
            OdeSystem::DcslHarmonic { chi, big_b, alpha, heating, .. } => {
                d[0] += alpha;
                d[1] -= big_b * u;
                d[2] += -chi * p2 + heating;
            }
            OdeSystem::CcslHistory { mass, omega, heating, tau } => {
                let (c, s) = history(t, omega, tau);
                d[1] += 2.0 * heating * s / mass;
                d[2] += 2.0 * heating * c;
            }
        }
        d
    }
}

/// `int_0^t f cos(w s) ds` and `int_0^t f sin(w s)/w ds` for the exponential
/// correlator, from the standard damped-trig antiderivatives.
fn history(t: f64, omega: f64, tau: f64) -> (f64, f64) {
    let a = 1.0 / tau;
    let e = (-a * t).exp();
    let norm = 1.0 / (2.0 * tau);
    if omega == 0.0 {
        let c = (1.0 - e) / a;
        let s = (1.0 - e * (1.0 + a * t)) / (a * a);
        return (norm * c, norm * s);
    }
    let (sn, cs) = (omega * t).sin_cos();
    let den = a * a + omega * omega;
    let c = (a - e * (a * cs - omega * sn)) / den;
    let s = (omega - e * (a * sn + omega * cs)) / (den * omega);
    (norm * c, norm * s)
}

fn pack(m: &GasMoments) -> State {
    let mut y = [0.0; DIM];
    y[0] = m.x2;
    y[1] = m.xp_sym;
    y[2] = m.p2;
    y[3..6].copy_from_slice(&m.x_mean);
    y[6..9].copy_from_slice(&m.p_mean);
    y
}

fn unpack(y: &State) -> GasMoments {
    GasMoments { x2: y[0], xp_sym: y[1], p2: y[2], x_mean: [y[3], y[4], y[5]], p_mean: [y[6], y[7], y[8]] }
}

/// Default step: `t_span / 1e5`, capped at `1e-4` s.
pub fn default_step(t_span: f64) -> f64 {
    (t_span / 1e5).min(1e-4)
}

/// Classical RK4 from `t = 0` to `t_end`. The step is shrunk slightly so an
/// integer number of steps lands on `t_end`.
pub fn rk4_integrate(system: &OdeSystem, initial: &GasMoments, t_end: f64, step: f64) -> Result<GasMoments> {
    rk4_span(system, initial, 0.0, t_end, step)
}

/// RK4 from `t0` to `t1`; the time only matters for [`OdeSystem::CcslHistory`].
pub fn rk4_span(system: &OdeSystem, initial: &GasMoments, t0: f64, t1: f64, step: f64) -> Result<GasMoments> {
    let span = t1 - t0;
    if !(step > 0.0) || !(span >= 0.0) || !(t0 >= 0.0) {
        return Err(Error::domain(format!("RK4 needs step > 0 and 0 <= t0 <= t1, got {step}, {t0}, {t1}")));
    }
    if span == 0.0 {
        return Ok(*initial);
    }
    let n = (span / step).ceil().max(1.0) as u64;
    let h = span / n as f64;
    let mut y = pack(initial);
    for i in 0..n {
        let t = t0 + i as f64 * h;
        let k1 = system.rhs(t, &y);
        let k2 = system.rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k1));
        let k3 = system.rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k2));
        let k4 = system.rhs(t + h, &axpy(&y, h, &k3));
        for j in 0..DIM {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { t: t + h, what: format!("RK4 state {y:?}") });
        }
    }
    Ok(unpack(&y))
}

fn axpy(y: &State, a: f64, k: &State) -> State {
    let mut out = *y;
    for j in 0..DIM {
        out[j] += a * k[j];
    }
    out
}
