//! Final energy against kick length; the minimum marks the optimal kick.
use anyhow::Result;
use kickcool::{sweep_kick_time, NoiseModel, Protocol};

fn main() -> Result<()> {
    let p = Protocol::standard();
    let grid: Vec<f64> = (1..=14).map(|i| i as f64 * 5e-3).collect();
    let rows = sweep_kick_time(&p, &NoiseModel::QmOnly, &grid);
    let best = rows.iter().filter_map(|r| r.ok().map(|o| (r.value, o.energy))).min_by(|a, b| a.1.total_cmp(&b.1));
    for r in &rows {
        if let Some(o) = r.ok() {
            println!("dt2 {:5.1} ms  E {:10.4e} J  sigma_x {:9.3} um", r.value * 1e3, o.energy, o.sigma_x * 1e6);
        }
    }
    if let Some((dt2, e)) = best {
        println!("lowest energy {e:.4e} J at {:.1} ms", dt2 * 1e3);
    }
    Ok(())
}
