//! How much the dCSL terms can change the moments during the kick.
//!
//! In the dimensionless vector `x = (m w x2/hbar, u/hbar, p2/(hbar m w))` the kick
//! reads `x' = M x + f` with
//!
//! ```text
//!     |   0    w    0  |
//! M = | -2w   -B   2w  |      f = (m w alpha/hbar, 0, chi p2_as/(hbar m w))
//!     |   0   -w  -chi |
//! ```
//!
//! and the relative error of dropping `B`, `chi` and `f` is bounded through
//! `||e^{Mt}|| <= ||e^{M~t}|| <= 2`.

use nalgebra::{Complex, Matrix3, Vector3};
use serde::Serialize;

use crate::csl::csl_harmonic_step;
use crate::dcsl::{dcsl_free_step, dcsl_rates};
use crate::error::{Error, Result};
use crate::model::{AtomSpecies, Csl, Dcsl, GasMoments, Protocol, HBAR};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KickMatrix {
    pub m: Matrix3<f64>,
    pub f: Vector3<f64>,
}

impl KickMatrix {
    pub fn new(big_b: f64, chi: f64, omega: f64) -> Self {
        let w = omega;
        KickMatrix { m: Matrix3::new(0.0, w, 0.0, -2.0 * w, -big_b, 2.0 * w, 0.0, -w, -chi), f: Vector3::zeros() }
    }

    pub fn from_noise(noise: &Dcsl, species: &AtomSpecies, omega: f64) -> Self {
        let r = dcsl_rates(noise, species);
        let m = species.mass;
        let mut k = Self::new(r.big_b, r.chi, omega);
        k.f = Vector3::new(m * omega * r.alpha / HBAR, 0.0, r.heating / (HBAR * m * omega));
        k
    }
}

/// Dimensionless state vector used in the bound.
pub fn scaled_state(m0: &GasMoments, species: &AtomSpecies, omega: f64) -> Vector3<f64> {
    let m = species.mass;
    Vector3::new(m * omega * m0.x2 / HBAR, m0.xp_sym / HBAR, m0.p2 / (HBAR * m * omega))
}

fn poly(z: Complex<f64>, a: f64, b: f64, c: f64) -> (Complex<f64>, Complex<f64>) {
    let p = ((z + a) * z + b) * z + c;
    let dp = (z * 3.0 + 2.0 * a) * z + b;
    (p, dp)
}

fn polish(mut z: Complex<f64>, a: f64, b: f64, c: f64) -> Complex<f64> {
    for _ in 0..8 {
        let (p, dp) = poly(z, a, b, c);
        if dp.norm() == 0.0 {
            break;
        }
        let step = p / dp;
        z -= step;
        if step.norm() <= 1e-16 * z.norm() {
            break;
        }
    }
    z
}

/// Roots of `m^3 + m^2 (B+chi) + m (B chi + 4 w^2) + 2 chi w^2`, real root
/// first, then the conjugate pair with positive imaginary part first.
pub fn char_poly_roots(big_b: f64, chi: f64, omega: f64) -> [Complex<f64>; 3] {
    let a = big_b + chi;
    let b = big_b * chi + 4.0 * omega * omega;
    let c = 2.0 * chi * omega * omega;
    // depressed cubic y^3 + p y + q with m = y - a/3
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let disc = 0.25 * q * q + p * p * p / 27.0;
    let shift = a / 3.0;
    if disc >= 0.0 {
        let big = -q.signum() * (0.5 * q.abs() + disc.sqrt()).cbrt();
        let y1 = if big == 0.0 { 0.0 } else { big - p / (3.0 * big) };
        let m1 = polish(Complex::new(y1 - shift, 0.0), a, b, c).re;
        // remaining pair from Vieta
        let s = -a - m1;
        let prod = b - m1 * s;
        let half = 0.5 * s;
        let d = prod - half * half;
        let (m2, m3) = if d >= 0.0 {
            (Complex::new(half, d.sqrt()), Complex::new(half, -d.sqrt()))
        } else {
            let r = (-d).sqrt();
            (Complex::new(half + r, 0.0), Complex::new(half - r, 0.0))
        };
        let m2 = polish(m2, a, b, c);
        let m3 = if m2.im != 0.0 { m2.conj() } else { polish(m3, a, b, c) };
        [Complex::new(m1, 0.0), m2, m3]
    } else {
        let r = 2.0 * (-p / 3.0).sqrt();
        let phi = ((3.0 * q / (2.0 * p)) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0).acos();
        let mut roots = [0.0; 3];
        for (k, root) in roots.iter_mut().enumerate() {
            let y = r * (phi / 3.0 - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos();
            *root = polish(Complex::new(y - shift, 0.0), a, b, c).re;
        }
        roots.sort_by(|x, y| y.total_cmp(x));
        roots.map(|x| Complex::new(x, 0.0))
    }
}

/// Largest singular value.
pub fn spectral_norm(a: &Matrix3<f64>) -> f64 {
    a.singular_values().max()
}

/// `exp(A)` by scaling and squaring a Taylor series.
pub fn matrix_exp(a: &Matrix3<f64>) -> Matrix3<f64> {
    let norm = a.abs().row_sum().max();
    let mut squarings = 0;
    let mut scaled = *a;
    let mut n = norm;
    while n > 0.25 {
        scaled *= 0.5;
        n *= 0.5;
        squarings += 1;
    }
    let mut e = Matrix3::identity();
    let mut term = Matrix3::identity();
    for j in 1..25 {
        term = term * scaled / j as f64;
        e += term;
        if term.abs().max() <= 1e-18 * e.abs().max() {
            break;
        }
    }
    for _ in 0..squarings {
        e = e * e;
    }
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormCheck {
    pub norm: f64,
    pub norm_unitary: f64,
    pub ok: bool,
}

pub const NORM_SLACK: f64 = 1e-9;

/// Checks `||e^{Mt}|| <= ||e^{M~t}|| <= 2` with spectral norms.
pub fn matrix_exp_norm_check(big_b: f64, chi: f64, omega: f64, t: f64) -> NormCheck {
    let full = KickMatrix::new(big_b, chi, omega).m * t;
    let bare = KickMatrix::new(0.0, 0.0, omega).m * t;
    let norm = spectral_norm(&matrix_exp(&full));
    let norm_unitary = spectral_norm(&matrix_exp(&bare));
    NormCheck { norm, norm_unitary, ok: norm <= norm_unitary + NORM_SLACK && norm_unitary <= 2.0 + NORM_SLACK }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KickErrorReport {
    #[serde(serialize_with = "ser_complex")]
    pub eigenvalues: [Complex<f64>; 3],
    /// `None` when the quantum increment of that component vanishes.
    pub err_x2: Option<f64>,
    pub err_xp: Option<f64>,
    pub err_p2: Option<f64>,
    pub norm_bound_ok: bool,
}

fn ser_complex<S: serde::Serializer>(v: &[Complex<f64>; 3], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(3))?;
    for z in v {
        seq.serialize_element(&[z.re, z.im])?;
    }
    seq.end()
}

impl KickErrorReport {
    /// Largest of the determinate components.
    pub fn max_error(&self) -> Option<f64> {
        [self.err_x2, self.err_xp, self.err_p2].into_iter().flatten().reduce(f64::max)
    }
}

pub const DENOMINATOR_FLOOR: f64 = 1e-30;

/// Error bounds for a kick of length `dt` starting from `m0`.
pub fn kick_error_bounds(
    m0: &GasMoments,
    noise: &Dcsl,
    species: &AtomSpecies,
    omega: f64,
    dt: f64,
) -> Result<KickErrorReport> {
    if !(omega > 0.0) {
        return Err(Error::domain(format!("kick frequency must be positive, got {omega}")));
    }
    let r = dcsl_rates(noise, species);
    let km = KickMatrix::from_noise(noise, species, omega);
    let x0 = scaled_state(m0, species, omega);
    let quantum = csl_harmonic_step(m0, &Csl { lambda: 0.0, r_c: noise.r_c }, species, omega, dt)?;
    let xt = scaled_state(&quantum, species, omega);
    let numer = 2.0 * dt * (x0.norm() * r.big_b.max(r.chi) + km.f.norm());
    let comp = |i: usize| {
        let den = (xt[i] - x0[i]).abs();
        (den >= DENOMINATOR_FLOOR).then(|| numer / den)
    };
    Ok(KickErrorReport {
        eigenvalues: char_poly_roots(r.big_b, r.chi, omega),
        err_x2: comp(0),
        err_xp: comp(1),
        err_p2: comp(2),
        norm_bound_ok: matrix_exp_norm_check(r.big_b, r.chi, omega, dt).ok,
    })
}

/// Bounds for the protocol's kick, starting from the state the first dCSL
/// flight actually delivers.
pub fn protocol_kick_error(protocol: &Protocol, noise: &Dcsl) -> Result<KickErrorReport> {
    let pre = dcsl_free_step(&protocol.initial, noise, &protocol.species, protocol.dt1)?;
    kick_error_bounds(&pre, noise, &protocol.species, protocol.omega, protocol.dt2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(z: Complex<f64>, big_b: f64, chi: f64, w: f64) -> f64 {
        poly(z, big_b + chi, big_b * chi + 4.0 * w * w, 2.0 * chi * w * w).0.norm()
    }

    #[test]
    fn unitary_roots() {
        let r = char_poly_roots(0.0, 0.0, 6.7);
        assert_eq!(r[0], Complex::new(0.0, 0.0));
        assert!((r[1] - Complex::new(0.0, 13.4)).norm() < 1e-14);
        assert!((r[2] - Complex::new(0.0, -13.4)).norm() < 1e-14);
    }

    #[test]
    fn roots_satisfy_vieta_and_residual() {
        for &(b, chi, w) in
            &[(1e-3, 2e-3, 6.7), (0.3, 0.5, 6.7), (40.0, 60.0, 6.7), (1e-20, 2e-20, 6.7), (5.0, 5.0, 1.0)]
        {
            let r = char_poly_roots(b, chi, w);
            for z in r {
                assert!(residual(z, b, chi, w) < 1e-10 * w * w * w, "{b} {chi} {z}");
                assert!(z.re <= 0.0);
            }
            let prod = r[0] * r[1] * r[2];
            let want = -2.0 * chi * w * w;
            assert!((prod.re - want).abs() <= 1e-10 * want.abs(), "{prod} vs {want}");
        }
    }

    #[test]
    fn exp_identity_and_oracle() {
        assert_eq!(matrix_exp(&Matrix3::zeros()), Matrix3::identity());
        let a = Matrix3::new(0.1, 2.0, -0.3, -1.0, -0.5, 3.0, 0.2, -2.0, -0.7) * 1.3;
        let mine = matrix_exp(&a);
        let theirs = a.exp();
        assert!((mine - theirs).norm() < 1e-12 * theirs.norm());
    }

    #[test]
    fn norm_check_at_zero_time() {
        let c = matrix_exp_norm_check(0.1, 0.2, 6.7, 0.0);
        assert!((c.norm - 1.0).abs() < 1e-15 && c.ok);
    }

    #[test]
    fn zero_lambda_gives_zero_errors() {
        let p = Protocol::standard();
        let n = Dcsl::new(0.0, 1e-7, 1.0).unwrap();
        let r = protocol_kick_error(&p, &n).unwrap();
        assert_eq!(r.max_error(), Some(0.0));
    }
}
