//! Scan a CSL grid against the 120 +- 40 um measurement and compare the
//! boundary with the line implied by the linear collapse excess.
use anyhow::Result;
use kickcool::{analytic_csl_bound, logspace, scan_exclusion, Csl, MeasurementBand, NoiseModel, Protocol};

fn main() -> Result<()> {
    let p = Protocol::standard();
    let band = MeasurementBand::standard();
    println!("band [{:.1}, {:.1}] um", band.lo * 1e6, band.hi * 1e6);
    let bound = analytic_csl_bound(&p, &band)?;
    println!("lambda / r_C^2 < {:.4e} m^-2 s^-1", bound.limit);

    let family = NoiseModel::Csl(Csl::new(1.0, 1.0)?);
    let g = scan_exclusion(&p, &family, &logspace(1e-20, 1e-2, 60), &logspace(1e-9, 1e-3, 13), &band)?;
    for b in g.boundary() {
        let line = bound.limit * b.r_c * b.r_c;
        match b.lambda {
            Some(l) => println!("r_C {:8.2e} m  first excluded lambda {:9.3e}  line {:9.3e}", b.r_c, l, line),
            None => println!("r_C {:8.2e} m  nothing excluded  line {:9.3e}", b.r_c, line),
        }
    }
    Ok(())
}
