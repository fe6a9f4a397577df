//! Trains the baseline, K1 and K2 configurations from `configs/` over their
//! seeds and prints the comparison table.
//!
//! `cargo run --release --example knowledge_ladder -- [work-dir]`
//!
//! Data and runs go under the work directory (default `ladder/`). This is
//! the full-size experiment: expect tens of minutes on one core.

use std::path::{Path, PathBuf};

use pinode::cli::{gen_data, geometric_mean, train_runs};
use pinode::config::RunConfig;

fn main() -> pinode::Result<()> {
    let work = std::env::args()
        .nth(1)
        .map_or_else(|| PathBuf::from("ladder"), PathBuf::from);
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");

    println!(
        "{:<9} {:>12} {:>12} {:>12}",
        "model", "test loss", "rollout", "violation"
    );
    for (i, name) in ["baseline", "k1", "k2"].into_iter().enumerate() {
        let mut cfg = RunConfig::load(&configs.join(format!("{name}.toml")))?;
        cfg.data.dir = work.join("data");
        cfg.run.out = work.join("runs");
        if i == 0 {
            gen_data(&cfg, None, true)?;
        }
        let runs = train_runs(&cfg, None, None, true)?;
        let test: Vec<f64> = runs.iter().map(|r| r.evaluation.test_loss).collect();
        let rollout: Vec<f64> = runs.iter().map(|r| r.evaluation.rollout_error).collect();
        let viol: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.evaluation.constraint_loss)
            .collect();
        let viol = if viol.is_empty() {
            "-".to_string()
        } else {
            format!("{:.3e}", geometric_mean(&viol))
        };
        println!(
            "{name:<9} {:>12.4e} {:>12.4e} {viol:>12}",
            geometric_mean(&test),
            geometric_mean(&rollout)
        );
    }
    Ok(())
}
