//! A small end-to-end sweep written to a temporary directory.

use hlfd::harness::{cmd_sweep, ExperimentConfig};

fn main() -> hlfd::Result<()> {
    let cfg = ExperimentConfig::from_json(
        r#"{
            "seed": 3,
            "dataset": {"seed": 1, "budgets": [3, 15]},
            "methods": ["nn", "bnn", "hybrid", "cf_nn", "cf_bnn", "uniform_stub"],
            "train": {"epochs": 10},
            "test": {"seed": 2, "episodes": 20}
        }"#,
    )?;
    let dir = tempfile::tempdir()?;
    let table = cmd_sweep(&cfg, dir.path(), 1)?;
    print!("{}", table.to_csv());
    println!("config hash {}", table.config_hash);
    Ok(())
}
