//! Bounds on the error of dropping the collapse terms during the kick.
use anyhow::Result;
use kickcool::kick_error::protocol_kick_error;
use kickcool::{Dcsl, Protocol};

fn main() -> Result<()> {
    let p = Protocol::standard();
    for t_csl in [1e-12, 1e-9, 1e-6, 1.0] {
        let n = Dcsl::new(1e-6, 1e-7, t_csl)?;
        let r = protocol_kick_error(&p, &n)?;
        let ev: Vec<String> = r.eigenvalues.iter().map(|z| format!("{:.3e}{:+.3e}i", z.re, z.im)).collect();
        println!(
            "T_CSL {t_csl:8.1e} K  max rel. error {:9.3e}  norm bound {}  eigenvalues [{}]",
            r.max_error().unwrap_or(f64::NAN),
            if r.norm_bound_ok { "holds" } else { "violated" },
            ev.join(", ")
        );
    }
    Ok(())
}
