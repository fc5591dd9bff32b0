//! White-noise collapse heating: the excess spread and energy over the quantum run.
use anyhow::Result;
use kickcool::{final_observables, Csl, NoiseModel, Protocol, RunOptions};

fn main() -> Result<()> {
    let p = Protocol::standard();
    let opts = RunOptions::default();
    let qm = final_observables(&p, &NoiseModel::QmOnly, &opts)?;
    let r_c = 1e-7;
    println!("r_C = {r_c:e} m, quantum spread {:.3} um", qm.sigma_x * 1e6);
    for lambda in [1e-12, 1e-10, 1e-8, 1e-6] {
        let n = Csl::new(lambda, r_c)?;
        let o = final_observables(&p, &NoiseModel::Csl(n), &opts)?;
        println!(
            "lambda {lambda:8.1e}  heating {:9.3e} kg^2 m^2/s^3  sigma_x {:10.3} um  dE {:9.3e} J",
            n.heating_rate(&p.species),
            o.sigma_x * 1e6,
            o.energy - qm.energy
        );
    }
    Ok(())
}
