//! Colored collapse noise: how far below white-noise heating it stays, and
//! whether the white-noise approximation is justified.
use anyhow::Result;
use kickcool::ccsl::white_noise_validity;
use kickcool::{final_observables, Ccsl, NoiseModel, Protocol, RunOptions};

fn main() -> Result<()> {
    let p = Protocol::standard();
    let opts = RunOptions::default();
    let (lambda, r_c) = (1e-6, 1e-7);
    let qm = final_observables(&p, &NoiseModel::QmOnly, &opts)?.x2;
    let white = final_observables(&p, &NoiseModel::Csl(kickcool::Csl::new(lambda, r_c)?), &opts)?.x2 - qm;
    println!("{:>9} {:>12} {:>10} {:>10} {:>10} {:>6}", "tau [s]", "excess/white", "w tau", "p tau/mr", "q2", "valid");
    for tau in [1e-6, 1e-4, 1e-2, 1e-1] {
        let n = Ccsl::new(lambda, r_c, tau)?;
        let excess = final_observables(&p, &NoiseModel::Ccsl(n), &opts)?.x2 - qm;
        let v = white_noise_validity(&n, &p);
        println!(
            "{tau:>9.0e} {:>12.6} {:>10.2e} {:>10.2e} {:>10.2e} {:>6}",
            excess / white,
            v.cond_omega_tau.margin,
            v.cond_momentum.margin,
            v.cond_q2.margin,
            v.all_hold()
        );
    }
    Ok(())
}
