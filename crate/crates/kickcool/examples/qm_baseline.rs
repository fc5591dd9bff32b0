//! Quantum-only run of the standard protocol, sampled every 100 ms.
use anyhow::Result;
use kickcool::{delta_kick_frequency, run_protocol, NoiseModel, Protocol};

fn main() -> Result<()> {
    let p = Protocol::standard();
    let w = delta_kick_frequency(0.034, p.dt1, p.dt3, 0.017)?;
    println!("focusing frequency for a 34 ms kick: {w:.4} rad/s (protocol uses {})", p.omega);

    let rec = run_protocol(&p, &NoiseModel::QmOnly, 0.1)?;
    println!("{:>8} {:>8} {:>14} {:>14}", "t [s]", "stage", "sigma_x [um]", "T [pK]");
    for ((t, m), s) in rec.times.iter().zip(&rec.moments).zip(&rec.stages) {
        let temp = kickcool::temperature_from_moments(m.p2, &p.species);
        println!("{t:>8.3} {:>8} {:>14.3} {:>14.3}", format!("{s:?}"), m.sigma_per_axis() * 1e6, temp * 1e12);
    }
    println!(
        "final spread {:.2} um, final temperature {:.3} pK",
        rec.final_sigma_x * 1e6,
        rec.final_temperature * 1e12
    );
    Ok(())
}
