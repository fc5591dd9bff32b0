//! Constants, species, moment state, protocol and noise models.
//!
//! Moments are 3D totals summed over the Cartesian axes. The spread compared
//! with the measured cloud size is the per-axis value `sqrt(x2 / 3)`.

use serde::Serialize;

use crate::error::{Error, Result};

pub const HBAR: f64 = 1.054_571_817e-34;
pub const K_B: f64 = 1.380_649e-23;

pub type Vec3 = [f64; 3];

/// CODATA-fixed constants. Fields are private so the values cannot drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhysicalConstants {
    hbar: f64,
    k_b: f64,
}

impl PhysicalConstants {
    pub const CODATA: PhysicalConstants = PhysicalConstants { hbar: HBAR, k_b: K_B };

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn k_b(&self) -> f64 {
        self.k_b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AtomSpecies {
    pub mass: f64,
    pub nucleon_count: u32,
}

impl AtomSpecies {
    pub const RB87: AtomSpecies = AtomSpecies { mass: 1.44e-25, nucleon_count: 87 };

    pub fn new(mass: f64, nucleon_count: u32) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::domain(format!("atom mass must be positive, got {mass}")));
        }
        if nucleon_count == 0 {
            return Err(Error::domain("nucleon count must be at least 1"));
        }
        Ok(AtomSpecies { mass, nucleon_count })
    }

    pub fn a(&self) -> f64 {
        f64::from(self.nucleon_count)
    }
}

impl Default for AtomSpecies {
    fn default() -> Self {
        AtomSpecies::RB87
    }
}

/// Second moments and means of a single atom.
///
/// `x2` and `p2` are variances summed over the three axes, `xp_sym` is
/// `<x.p + p.x>` (also a centred quantity).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct GasMoments {
    pub x2: f64,
    pub p2: f64,
    pub xp_sym: f64,
    pub x_mean: Vec3,
    pub p_mean: Vec3,
}

impl GasMoments {
    /// Uncorrelated cloud at rest.
    pub fn at_rest(x2: f64, p2: f64) -> Self {
        GasMoments { x2, p2, ..Default::default() }
    }

    /// Cloud with the given per-axis position spread and kinetic temperature.
    pub fn thermal(sigma_per_axis: f64, temperature: f64, species: &AtomSpecies) -> Result<Self> {
        if !(sigma_per_axis >= 0.0) {
            return Err(Error::domain(format!("spread must be non-negative, got {sigma_per_axis}")));
        }
        let p2 = moments_from_temperature(temperature, species)?;
        Ok(Self::at_rest(3.0 * sigma_per_axis * sigma_per_axis, p2))
    }

    pub fn sigma_per_axis(&self) -> f64 {
        (self.x2 / 3.0).sqrt()
    }

    /// `x2 p2 - (xp_sym/2)^2`, non-negative for any physical state.
    pub fn covariance_det(&self) -> f64 {
        self.x2 * self.p2 - 0.25 * self.xp_sym * self.xp_sym
    }

    pub fn is_finite(&self) -> bool {
        [self.x2, self.p2, self.xp_sym].iter().chain(&self.x_mean).chain(&self.p_mean).all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(self, t: f64) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite { t, what: format!("{self:?}") })
        }
    }

    pub(crate) fn with_second(self, x2: f64, xp_sym: f64, p2: f64) -> Self {
        GasMoments { x2, xp_sym, p2, ..self }
    }
}

/// Which clock the detection time is pinned to when the kick length changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum DetectionClock {
    /// Second flight lasts `dt3` after the kick ends, whatever the kick length.
    #[default]
    KickEnd,
    /// Detection happens at a fixed time after release.
    Release,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Protocol {
    pub dt1: f64,
    pub dt2: f64,
    pub dt3: f64,
    pub omega: f64,
    pub species: AtomSpecies,
    pub initial: GasMoments,
    pub clock: DetectionClock,
}

impl Protocol {
    pub const DEFAULT_SIGMA0: f64 = 56e-6;
    pub const DEFAULT_T0: f64 = 1600e-12;

    /// 1.1 s flight, 35 ms kick at 6.7 rad/s, 1.8 s flight, 56 um and 1600 pK start.
    pub fn standard() -> Self {
        let species = AtomSpecies::RB87;
        let initial = GasMoments::thermal(Self::DEFAULT_SIGMA0, Self::DEFAULT_T0, &species)
            .expect("default initial state is valid");
        Protocol { dt1: 1.1, dt2: 0.035, dt3: 1.8, omega: 6.7, species, initial, clock: DetectionClock::KickEnd }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("dt1", self.dt1), ("dt2", self.dt2), ("dt3", self.dt3), ("omega", self.omega)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        let m = &self.initial;
        if !(m.x2 >= 0.0 && m.p2 >= 0.0) || !m.is_finite() {
            return Err(Error::domain("initial moments must be finite with x2, p2 >= 0"));
        }
        Ok(())
    }

    pub fn t1(&self) -> f64 {
        self.dt1
    }

    pub fn t2(&self) -> f64 {
        self.dt1 + self.dt2
    }

    pub fn t3(&self) -> f64 {
        self.dt1 + self.dt2 + self.dt3
    }

    /// Same protocol with a different kick length, keeping the detection
    /// clock's invariant.
    pub fn with_dt2(&self, dt2: f64) -> Result<Self> {
        if !(dt2 >= 0.0) {
            return Err(Error::domain(format!("kick duration must be non-negative, got {dt2}")));
        }
        let dt3 = match self.clock {
            DetectionClock::KickEnd => self.dt3,
            DetectionClock::Release => self.t3() - self.dt1 - dt2,
        };
        if dt3 < 0.0 {
            return Err(Error::domain(format!("kick of {dt2} s ends after detection")));
        }
        Ok(Protocol { dt2, dt3, ..*self })
    }
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol::standard()
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be positive and finite, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be non-negative and finite, got {v}")))
    }
}

/// White-noise CSL parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Csl {
    pub lambda: f64,
    pub r_c: f64,
}

impl Csl {
    pub fn new(lambda: f64, r_c: f64) -> Result<Self> {
        non_negative("lambda", lambda)?;
        positive("r_c", r_c)?;
        Ok(Csl { lambda, r_c })
    }

    /// Momentum diffusion `3 lambda A^2 hbar^2 / (2 r_C^2)`.
    pub fn heating_rate(&self, species: &AtomSpecies) -> f64 {
        let a = species.a();
        1.5 * self.lambda * a * a * HBAR * HBAR / (self.r_c * self.r_c)
    }
}

/// Colored-noise CSL with exponential correlator of time `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ccsl {
    pub lambda: f64,
    pub r_c: f64,
    pub tau: f64,
}

impl Ccsl {
    pub fn new(lambda: f64, r_c: f64, tau: f64) -> Result<Self> {
        non_negative("lambda", lambda)?;
        positive("r_c", r_c)?;
        positive("tau", tau)?;
        Ok(Ccsl { lambda, r_c, tau })
    }

    pub fn white(&self) -> Csl {
        Csl { lambda: self.lambda, r_c: self.r_c }
    }

    pub fn cutoff_omega(&self) -> f64 {
        1.0 / self.tau
    }
}

/// Dissipative CSL, optionally boosted by a noise drift `boost`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dcsl {
    pub lambda: f64,
    pub r_c: f64,
    pub t_csl: f64,
    pub boost: Vec3,
}

impl Dcsl {
    pub fn new(lambda: f64, r_c: f64, t_csl: f64) -> Result<Self> {
        Self::boosted(lambda, r_c, t_csl, [0.0; 3])
    }

    pub fn boosted(lambda: f64, r_c: f64, t_csl: f64, boost: Vec3) -> Result<Self> {
        non_negative("lambda", lambda)?;
        positive("r_c", r_c)?;
        positive("t_csl", t_csl)?;
        if !boost.iter().all(|u| u.is_finite()) {
            return Err(Error::domain("boost components must be finite"));
        }
        Ok(Dcsl { lambda, r_c, t_csl, boost })
    }

    pub fn white(&self) -> Csl {
        Csl { lambda: self.lambda, r_c: self.r_c }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum NoiseModel {
    QmOnly,
    Csl(Csl),
    Ccsl(Ccsl),
    Dcsl(Dcsl),
}

impl NoiseModel {
    pub fn lambda(&self) -> f64 {
        match self {
            NoiseModel::QmOnly => 0.0,
            NoiseModel::Csl(n) => n.lambda,
            NoiseModel::Ccsl(n) => n.lambda,
            NoiseModel::Dcsl(n) => n.lambda,
        }
    }

    pub fn r_c(&self) -> Option<f64> {
        match self {
            NoiseModel::QmOnly => None,
            NoiseModel::Csl(n) => Some(n.r_c),
            NoiseModel::Ccsl(n) => Some(n.r_c),
            NoiseModel::Dcsl(n) => Some(n.r_c),
        }
    }

    /// Same family and extras with new `(lambda, r_c)`. `QmOnly` stays as is.
    pub fn with_lambda_rc(&self, lambda: f64, r_c: f64) -> Result<Self> {
        Ok(match self {
            NoiseModel::QmOnly => NoiseModel::QmOnly,
            NoiseModel::Csl(_) => NoiseModel::Csl(Csl::new(lambda, r_c)?),
            NoiseModel::Ccsl(n) => NoiseModel::Ccsl(Ccsl::new(lambda, r_c, n.tau)?),
            NoiseModel::Dcsl(n) => NoiseModel::Dcsl(Dcsl::boosted(lambda, r_c, n.t_csl, n.boost)?),
        })
    }

    pub fn family(&self) -> &'static str {
        match self {
            NoiseModel::QmOnly => "qm",
            NoiseModel::Csl(_) => "csl",
            NoiseModel::Ccsl(_) => "ccsl",
            NoiseModel::Dcsl(_) => "dcsl",
        }
    }
}

/// Kick frequency that focuses the cloud at detection:
/// `sqrt((1/dt_min) (1/dt3 + (1 - gamma2)/dt1))`.
pub fn delta_kick_frequency(dt_min: f64, dt1: f64, dt3: f64, gamma2: f64) -> Result<f64> {
    positive("dt_min", dt_min)?;
    positive("dt1", dt1)?;
    positive("dt3", dt3)?;
    if !(0.0..=1.0).contains(&gamma2) {
        return Err(Error::domain(format!("gamma2 must lie in [0, 1], got {gamma2}")));
    }
    Ok(((1.0 / dt3 + (1.0 - gamma2) / dt1) / dt_min).sqrt())
}

/// Equipartition: `<p^2> = 3 m k_B T`.
pub fn moments_from_temperature(t: f64, species: &AtomSpecies) -> Result<f64> {
    non_negative("temperature", t)?;
    Ok(3.0 * species.mass * K_B * t)
}

pub fn temperature_from_moments(p2: f64, species: &AtomSpecies) -> f64 {
    p2 / (3.0 * species.mass * K_B)
}

pub fn kinetic_energy(m: &GasMoments, species: &AtomSpecies) -> f64 {
    m.p2 / (2.0 * species.mass)
}

/// `T = 2E / (3 k_B)`.
pub fn temperature_from_energy(e: f64) -> f64 {
    2.0 * e / (3.0 * K_B)
}

/// Dimensionless dissipation parameter `hbar^2 / (8 m k_B T r_C^2)`.
pub fn dcsl_k(t_csl: f64, species: &AtomSpecies, r_c: f64) -> Result<f64> {
    positive("t_csl", t_csl)?;
    positive("r_c", r_c)?;
    Ok(HBAR * HBAR / (8.0 * species.mass * K_B * t_csl * r_c * r_c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kick_frequency_reference_point() {
        let w = delta_kick_frequency(0.034, 1.1, 1.8, 0.017).unwrap();
        assert!((w - 6.53).abs() < 0.01, "{w}");
        // independent evaluation: sqrt((1/0.020)(1/2 + 1/1))
        let w = delta_kick_frequency(0.020, 1.0, 2.0, 0.0).unwrap();
        assert!((w - 8.660_254_037_844_387).abs() < 1e-14);
        let w = delta_kick_frequency(0.02, 1.1, 1.8, 1.0).unwrap();
        assert!((w - (1.0f64 / (0.02 * 1.8)).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn kick_frequency_domain() {
        assert!(delta_kick_frequency(0.0, 1.1, 1.8, 0.0).is_err());
        assert!(delta_kick_frequency(0.03, -1.0, 1.8, 0.0).is_err());
        assert!(delta_kick_frequency(0.03, 1.1, 1.8, 1.5).is_err());
    }

    #[test]
    fn equipartition_values() {
        let sp = AtomSpecies::RB87;
        assert_eq!(moments_from_temperature(0.0, &sp).unwrap(), 0.0);
        // 3 * 1.44e-25 * 1.380649e-23 * 1.6e-9
        let p2 = moments_from_temperature(1600e-12, &sp).unwrap();
        assert!((p2 / 9.543_045_888e-57 - 1.0).abs() < 1e-9, "{p2:e}");
        assert!(moments_from_temperature(-1.0, &sp).is_err());
        let t = temperature_from_moments(p2, &sp);
        assert!((t / 1600e-12 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_and_temperature_agree() {
        let sp = AtomSpecies::RB87;
        let m = GasMoments::thermal(1e-5, 50e-12, &sp).unwrap();
        let e = kinetic_energy(&m, &sp);
        assert!((temperature_from_energy(e) / 50e-12 - 1.0).abs() < 1e-12);
        assert_eq!(kinetic_energy(&GasMoments::default(), &sp), 0.0);
    }

    #[test]
    fn dcsl_k_reference() {
        let sp = AtomSpecies::RB87;
        let k1 = dcsl_k(1.0, &sp, 1e-7).unwrap();
        // hbar^2 / (8 * 1.44e-25 * 1.380649e-23 * 1e-14)
        assert!((k1 / 6.992_243_757e-8 - 1.0).abs() < 1e-6, "{k1:e}");
        let k12 = dcsl_k(1e-12, &sp, 1e-7).unwrap();
        assert!((k12 / (k1 * 1e12) - 1.0).abs() < 1e-12);
        assert!(dcsl_k(0.0, &sp, 1e-7).is_err());
        assert!(dcsl_k(1.0, &sp, 0.0).is_err());
    }

    #[test]
    fn with_dt2_respects_clock() {
        let p = Protocol::standard();
        let q = p.with_dt2(0.02).unwrap();
        assert_eq!(q.dt3, 1.8);
        let r = Protocol { clock: DetectionClock::Release, ..p }.with_dt2(0.02).unwrap();
        assert!((r.t3() - p.t3()).abs() < 1e-15);
    }

    #[test]
    fn noise_validation() {
        assert!(Csl::new(-1.0, 1e-7).is_err());
        assert!(Csl::new(1.0, 0.0).is_err());
        assert!(Ccsl::new(1.0, 1e-7, 0.0).is_err());
        assert!(Dcsl::new(1.0, 1e-7, 0.0).is_err());
        assert!(Dcsl::boosted(1.0, 1e-7, 1.0, [f64::NAN, 0.0, 0.0]).is_err());
    }
}
