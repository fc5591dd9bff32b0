//! Confidence band and exclusion grids over `(lambda, r_C)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::dcsl::dcsl_rates;
use crate::error::{Error, Result};
use crate::model::{Csl, Dcsl, NoiseModel, Protocol};
use crate::pipeline::{propagate, RunOptions};

/// Symmetric normal interval `mean +- z(level) sigma`.
pub fn cl_interval(mean: f64, sigma: f64, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("confidence level must lie in (0, 1), got {level}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("band width must be positive, got {sigma}")));
    }
    let z = std::f64::consts::SQRT_2 * statrs::function::erf::erf_inv(level);
    Ok((mean - z * sigma, mean + z * sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasurementBand {
    pub mean: f64,
    pub sigma: f64,
    pub level: f64,
    pub lo: f64,
    pub hi: f64,
}

impl MeasurementBand {
    pub fn new(mean: f64, sigma: f64, level: f64) -> Result<Self> {
        let (lo, hi) = cl_interval(mean, sigma, level)?;
        Ok(MeasurementBand { mean, sigma, level, lo, hi })
    }

    /// 120 +- 40 um at 95 %.
    pub fn standard() -> Self {
        Self::new(120e-6, 40e-6, 0.95).expect("valid band")
    }

    pub fn contains(&self, sigma_x: f64) -> bool {
        (self.lo..=self.hi).contains(&sigma_x)
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Excluded,
    Allowed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub lambda: f64,
    pub r_c: f64,
    /// Per-axis spread for band scans, mean displacement for boost scans.
    pub value: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryPoint {
    pub r_c: f64,
    /// Smallest excluded `lambda` in the column, if any.
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExclusionGrid {
    pub lambda_axis: Vec<f64>,
    pub rc_axis: Vec<f64>,
    /// Column-major: all `lambda` for the first `r_C`, then the next.
    pub cells: Vec<Cell>,
    pub model: NoiseModel,
}

impl ExclusionGrid {
    pub fn cell(&self, i_lambda: usize, i_rc: usize) -> &Cell {
        &self.cells[i_rc * self.lambda_axis.len() + i_lambda]
    }

    pub fn column(&self, i_rc: usize) -> &[Cell] {
        let n = self.lambda_axis.len();
        &self.cells[i_rc * n..(i_rc + 1) * n]
    }

    pub fn boundary(&self) -> Vec<BoundaryPoint> {
        (0..self.rc_axis.len())
            .map(|j| BoundaryPoint {
                r_c: self.rc_axis[j],
                lambda: self.column(j).iter().find(|c| c.verdict == Verdict::Excluded).map(|c| c.lambda),
            })
            .collect()
    }

    pub fn excluded_count(&self) -> usize {
        self.cells.iter().filter(|c| c.verdict == Verdict::Excluded).count()
    }

    /// Index of the `r_C` column nearest to `r_c` in log distance.
    pub fn nearest_rc(&self, r_c: f64) -> usize {
        nearest(&self.rc_axis, r_c)
    }
}

fn nearest(axis: &[f64], v: f64) -> usize {
    axis.iter()
        .enumerate()
        .min_by(|a, b| (a.1.ln() - v.ln()).abs().total_cmp(&(b.1.ln() - v.ln()).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::domain(format!("{name} axis is empty")));
    }
    if !axis.iter().all(|v| *v > 0.0 && v.is_finite()) {
        return Err(Error::domain(format!("{name} axis must be positive and finite")));
    }
    if !axis.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::domain(format!("{name} axis must be increasing")));
    }
    Ok(())
}

fn grid<F>(lambda_axis: &[f64], rc_axis: &[f64], model: NoiseModel, cell: F) -> Result<ExclusionGrid>
where
    F: Fn(f64, f64) -> Cell + Sync,
{
    check_axis("lambda", lambda_axis)?;
    check_axis("r_c", rc_axis)?;
    let n = lambda_axis.len();
    let cells = (0..n * rc_axis.len()).into_par_iter().map(|i| cell(lambda_axis[i % n], rc_axis[i / n])).collect();
    Ok(ExclusionGrid { lambda_axis: lambda_axis.to_vec(), rc_axis: rc_axis.to_vec(), cells, model })
}

/// Runs the protocol in every cell and flags spreads outside the band, on
/// either side.
pub fn scan_exclusion(
    protocol: &Protocol,
    family: &NoiseModel,
    lambda_axis: &[f64],
    rc_axis: &[f64],
    band: &MeasurementBand,
) -> Result<ExclusionGrid> {
    protocol.validate()?;
    grid(lambda_axis, rc_axis, *family, |lambda, r_c| {
        let sigma = family
            .with_lambda_rc(lambda, r_c)
            .and_then(|n| propagate(protocol, &n, &RunOptions::default()))
            .map(|m| m.sigma_per_axis());
        match sigma {
            Ok(s) => Cell {
                lambda,
                r_c,
                value: Some(s),
                verdict: if band.contains(s) { Verdict::Allowed } else { Verdict::Excluded },
            },
            Err(_) => Cell { lambda, r_c, value: None, verdict: Verdict::Failed },
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CslBound {
    /// Collapse excess of `x2` per unit `lambda / r_C^2`.
    pub k: f64,
    /// Largest allowed `lambda / r_C^2`.
    pub limit: f64,
    pub qm_sigma: f64,
}

pub const REFERENCE_LAMBDA: f64 = 1e-8;
pub const REFERENCE_RC: f64 = 1e-7;

pub fn analytic_csl_bound(protocol: &Protocol, band: &MeasurementBand) -> Result<CslBound> {
    analytic_csl_bound_at(protocol, band, REFERENCE_LAMBDA, REFERENCE_RC)
}

/// The collapse excess is `(lambda / r_C^2) K` exactly, so one reference run fixes `K`.
pub fn analytic_csl_bound_at(protocol: &Protocol, band: &MeasurementBand, lambda0: f64, rc0: f64) -> Result<CslBound> {
    let opts = RunOptions::default();
    let qm = propagate(protocol, &NoiseModel::QmOnly, &opts)?;
    let with = propagate(protocol, &NoiseModel::Csl(Csl::new(lambda0, rc0)?), &opts)?;
    let k = (with.x2 - qm.x2) * rc0 * rc0 / lambda0;
    let qm_sigma = qm.sigma_per_axis();
    if !band.contains(qm_sigma) {
        return Err(Error::Inconsistent { sigma: qm_sigma, lo: band.lo, hi: band.hi });
    }
    let limit = 3.0 * (band.hi * band.hi - qm_sigma * qm_sigma) / k;
    Ok(CslBound { k, limit, qm_sigma })
}

/// Per temperature, flags cells whose boost drift `u B t^2 / 2` over the whole
/// protocol exceeds `displacement_limit`.
pub fn boost_exclusion(
    protocol: &Protocol,
    t_csl_list: &[f64],
    u: f64,
    lambda_axis: &[f64],
    rc_axis: &[f64],
    displacement_limit: f64,
) -> Result<Vec<ExclusionGrid>> {
    if !(u >= 0.0) {
        return Err(Error::domain(format!("boost speed must be non-negative, got {u}")));
    }
    let t = protocol.t3();
    let species = protocol.species;
    t_csl_list
        .iter()
        .map(|&t_csl| {
            let template = NoiseModel::Dcsl(Dcsl::boosted(1.0, 1.0, t_csl, [u, 0.0, 0.0])?);
            grid(lambda_axis, rc_axis, template, |lambda, r_c| match Dcsl::new(lambda, r_c, t_csl) {
                Ok(n) => {
                    let shift = 0.5 * u * dcsl_rates(&n, &species).big_b * t * t;
                    Cell {
                        lambda,
                        r_c,
                        value: Some(shift),
                        verdict: if shift > displacement_limit { Verdict::Excluded } else { Verdict::Allowed },
                    }
                }
                Err(_) => Cell { lambda, r_c, value: None, verdict: Verdict::Failed },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_values() {
        let b = MeasurementBand::standard();
        assert!((b.lo - 41.6e-6).abs() < 0.01e-6, "{}", b.lo);
        assert!((b.hi - 198.4e-6).abs() < 0.01e-6, "{}", b.hi);
        let (lo, hi) = cl_interval(0.0, 2.0, 0.6827).unwrap();
        assert!((hi / 2.0 - 1.0).abs() < 1e-4 && (lo / -2.0 - 1.0).abs() < 1e-4);
        let (lo, hi) = cl_interval(5.0, 1.0, 1e-12).unwrap();
        assert!((hi - 5.0).abs() < 1e-11 && (lo - 5.0).abs() < 1e-11);
        assert!(cl_interval(0.0, 1.0, 1.0).is_err());
        assert!(cl_interval(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn logspace_ends() {
        let v = logspace(1e-20, 1e-2, 60);
        assert_eq!(v.len(), 60);
        assert!((v[0] / 1e-20 - 1.0).abs() < 1e-12 && (v[59] / 1e-2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vanishing_lambda_excludes_nothing() {
        let g = scan_exclusion(
            &Protocol::standard(),
            &NoiseModel::Csl(Csl::new(0.0, 1e-7).unwrap()),
            &[1e-20],
            &logspace(1e-9, 1e-3, 7),
            &MeasurementBand::standard(),
        )
        .unwrap();
        assert_eq!(g.excluded_count(), 0);
        assert!(g.boundary().iter().all(|b| b.lambda.is_none()));
    }

    #[test]
    fn axes_are_validated() {
        let p = Protocol::standard();
        let fam = NoiseModel::Csl(Csl::new(0.0, 1e-7).unwrap());
        let band = MeasurementBand::standard();
        assert!(scan_exclusion(&p, &fam, &[], &[1e-7], &band).is_err());
        assert!(scan_exclusion(&p, &fam, &[1e-3, 1e-5], &[1e-7], &band).is_err());
    }

    #[test]
    fn zero_boost_excludes_nothing() {
        let grids =
            boost_exclusion(&Protocol::standard(), &[1.0], 0.0, &logspace(1e-20, 1e-2, 5), &[1e-7], 1e-6).unwrap();
        assert_eq!(grids[0].excluded_count(), 0);
    }
}
