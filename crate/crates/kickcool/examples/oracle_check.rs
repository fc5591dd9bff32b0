//! Closed-form stage propagation against RK4 on the moment equations.
use anyhow::Result;
use kickcool::pipeline::propagate_oracle;
use kickcool::{propagate, Ccsl, Csl, Dcsl, NoiseModel, Protocol, RunOptions};

fn main() -> Result<()> {
    let p = Protocol::standard();
    let opts = RunOptions::default();
    let models = [
        NoiseModel::QmOnly,
        NoiseModel::Csl(Csl::new(1e-8, 1e-7)?),
        NoiseModel::Ccsl(Ccsl::new(1e-8, 1e-7, 1e-3)?),
        NoiseModel::Dcsl(Dcsl::new(1e-8, 1e-7, 1e-9)?),
    ];
    for n in &models {
        let a = propagate(&p, n, &opts)?;
        let o = propagate_oracle(&p, n, &opts)?;
        println!(
            "{:5}  x2 {:.10e}  rk4 {:.10e}  rel {:.1e}  p2 rel {:.1e}",
            n.family(),
            a.x2,
            o.x2,
            (a.x2 - o.x2).abs() / o.x2,
            (a.p2 - o.p2).abs() / o.p2
        );
    }
    Ok(())
}
