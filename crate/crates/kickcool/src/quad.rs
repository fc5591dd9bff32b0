//! Globally adaptive 7/15-point Gauss-Kronrod quadrature.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

pub const DEFAULT_REL_TOL: f64 = 1e-10;
pub const DEFAULT_ABS_FLOOR: f64 = 1e-30;
const MAX_INTERVALS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { rel: DEFAULT_REL_TOL, abs: DEFAULT_ABS_FLOOR }
    }
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Piece {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    Piece { a, b, value: k * h, err: ((k - g) * h).abs() }
}

/// Integrate `f` over `[a, b]`, bisecting the worst interval until the summed
/// error estimate meets `max(tol.abs, tol.rel * |I|)`.
///
/// Returns the integral and its error estimate.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<(f64, f64)> {
    integrate_with_breaks(f, &[a, b], tol)
}

/// As [`integrate`] over `[breaks[0], breaks[last]]`, starting from the
/// partition given by the increasing `breaks`. Features narrower than the
/// node spacing are only seen if a break points at them.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(f: F, breaks: &[f64], tol: Tolerance) -> Result<(f64, f64)> {
    let b = *breaks.last().unwrap_or(&0.0);
    let mut pieces: Vec<Piece> = breaks.windows(2).filter(|w| w[1] != w[0]).map(|w| kronrod(&f, w[0], w[1])).collect();
    if pieces.is_empty() {
        return Ok((0.0, 0.0));
    }
    loop {
        let value: f64 = pieces.iter().map(|p| p.value).sum();
        let err: f64 = pieces.iter().map(|p| p.err).sum();
        if !value.is_finite() {
            return Err(Error::NonFinite { t: b, what: "quadrature integrand".into() });
        }
        let target = tol.abs.max(tol.rel * value.abs());
        if err <= target {
            return Ok((value, err));
        }
        if pieces.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature { achieved: err / value.abs().max(tol.abs), requested: tol.rel });
        }
        let worst =
            pieces.iter().enumerate().max_by(|x, y| x.1.err.total_cmp(&y.1.err)).map(|(i, _)| i).expect("non-empty");
        let p = pieces.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            return Err(Error::Quadrature { achieved: err / value.abs().max(tol.abs), requested: tol.rel });
        }
        pieces.push(kronrod(&f, p.a, mid));
        pieces.push(kronrod(&f, mid, p.b));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let (v, _) = integrate(|x| x.powi(5) - 3.0 * x * x, 0.0, 2.0, Tolerance::default()).unwrap();
        assert!((v - (64.0 / 6.0 - 8.0)).abs() < 1e-13);
    }

    #[test]
    fn boundary_layer() {
        let tau = 1e-6;
        let f = |s: f64| (-s / tau).exp() / tau;
        let (v, _) =
            integrate_with_breaks(f, &[0.0, tau, 10.0 * tau, 40.0 * tau, 0.035], Tolerance::default()).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
        // without the break every node sees zero
        let (v, _) = integrate(f, 0.0, 0.035, Tolerance::default()).unwrap();
        assert!(v < 1e-9);
    }

    #[test]
    fn oscillatory() {
        let (v, _) = integrate(|x| (50.0 * x).cos(), 0.0, 3.0, Tolerance::default()).unwrap();
        assert!((v - (150.0f64).sin() / 50.0).abs() < 1e-12);
    }

    #[test]
    fn empty_interval() {
        assert_eq!(integrate(|x| x, 1.0, 1.0, Tolerance::default()).unwrap().0, 0.0);
    }

    #[test]
    fn singular_reports_failure() {
        let r = integrate(|x: f64| 1.0 / x, 0.0, 1.0, Tolerance { rel: 1e-12, abs: 0.0 });
        assert!(r.is_err());
    }
}
