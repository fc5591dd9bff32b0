//! Drive the command-line layer from a config string, as the binary does.
use anyhow::Result;
use kickcool::cli::{execute, load_config, Command};

fn main() -> Result<()> {
    let text = r#"{
        "protocol": { "dt2": "35 ms", "initial_temperature": "1600 pK" },
        "noise": { "model": "csl", "lambda": "1e-8 /s", "r_c": "100 nm" },
        "simulate": { "sampling": "500 ms" }
    }"#;
    let cfg = load_config(text, "inline")?;
    let tables = execute(Command::Simulate, &cfg, false)?;
    for t in &tables {
        println!("{}: {} rows, columns {:?}", t.name, t.rows.len(), t.columns);
    }
    Ok(())
}
