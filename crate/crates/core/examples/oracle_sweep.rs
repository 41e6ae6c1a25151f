//! Runs the simulated-user sweep over all six policies and five feedback
//! accuracies, then prints the grid of mean normalized rewards.
//!
//! ```bash
//! cargo run -p cocreate --example oracle_sweep -- 1000
//! ```

use cocreate::oracle::{run_experiment, OracleConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let repetitions = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(100);
    let config = OracleConfig {
        repetitions,
        master_seed: 7,
        ..Default::default()
    };
    let table = run_experiment(&config)?;
    print!("{}", table.render());
    Ok(())
}
