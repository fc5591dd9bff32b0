//! Largest noise drift speed compatible with a 1 um mean displacement.
use anyhow::Result;
use kickcool::dcsl::boost_velocity_bound;
use kickcool::{boost_exclusion, logspace, AtomSpecies, Dcsl, Protocol};

fn main() -> Result<()> {
    let n = Dcsl::new(1e-8, 1e-7, 1e-9)?;
    let b = boost_velocity_bound(&n, &AtomSpecies::RB87, 3.0, 1e-6)?;
    println!("u_max {:.3e} m/s  (B t = {:.2e}, small: {})", b.u_max, b.b_t, b.small_rate());

    let grids = boost_exclusion(
        &Protocol::standard(),
        &[1e-12, 1e-9],
        1e3,
        &logspace(1e-20, 1e-2, 40),
        &logspace(1e-9, 1e-3, 40),
        1e-6,
    )?;
    for g in &grids {
        if let kickcool::NoiseModel::Dcsl(d) = g.model {
            println!("u = 1 km/s, T_CSL {:e} K: {} of {} cells excluded", d.t_csl, g.excluded_count(), g.cells.len());
        }
    }
    Ok(())
}
