//! Dissipative collapse: final spread against the noise temperature, then
//! against the correlation length at a cold temperature.
use anyhow::Result;
use kickcool::{logspace, sweep_noise_temperature, sweep_rc, Dcsl, Protocol};

fn main() -> Result<()> {
    let p = Protocol::standard();
    let base = Dcsl::new(1e-6, 1e-7, 1.0)?;
    println!("lambda {:e}, r_C {:e} m", base.lambda, base.r_c);
    for row in sweep_noise_temperature(&p, &base, &logspace(1e-12, 1e6, 7)) {
        match row.ok() {
            Some(o) => {
                println!("T_CSL {:8.1e} K  sigma_x {:9.3} um  T {:9.3e} K", row.value, o.sigma_x * 1e6, o.temperature)
            }
            None => println!("T_CSL {:8.1e} K  failed: {:?}", row.value, row.outcome),
        }
    }

    let cold = Dcsl::new(1e-6, 1e-7, 1e-9)?;
    println!("T_CSL {:e} K", cold.t_csl);
    for row in sweep_rc(&p, &cold, &logspace(1e-9, 1e-4, 6)) {
        if let Some(o) = row.ok() {
            println!("r_C {:8.1e} m  sigma_x {:9.3} um", row.value, o.sigma_x * 1e6);
        }
    }
    Ok(())
}
