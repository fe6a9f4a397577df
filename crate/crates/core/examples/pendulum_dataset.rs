//! Simulates the double pendulum datasets and checks them against physics:
//! energy conservation and the symmetries of the forcing terms.
//!
//! Pass a directory to also write the CSV files and manifest there.

use std::path::PathBuf;

use pinode::dataset::{write_dataset, Role};
use pinode::pendulum::{energy, g1, g2, generate_dataset, symmetry_residuals, PendulumParams};

fn main() -> pinode::Result<()> {
    let p = PendulumParams::default();
    let train = generate_dataset(Role::Train, 1, 0, &p)?;
    let test = generate_dataset(Role::Test, 10, 1, &p)?;

    for ds in [&train, &test] {
        let mut drift: f64 = 0.0;
        let mut sym: f64 = 0.0;
        for traj in &ds.trajectories {
            let e0 = energy(&traj.states[0], &p);
            for s in &traj.states {
                drift = drift.max(((energy(s, &p) - e0) / e0).abs());
                let r = symmetry_residuals(|x| g1(x, &p), |x| g2(x, &p), s);
                sym = r.iter().fold(sym, |m, v| m.max(v.abs()));
            }
        }
        println!(
            "{}: {} trajectories x {} points, max relative energy drift {drift:.2e}, max symmetry residual {sym:.2e}",
            ds.role.as_str(),
            ds.trajectories.len(),
            ds.trajectories[0].len()
        );
        let x0 = &ds.trajectories[0].states[0];
        println!("  first initial state {x0:.3?}");
    }

    if let Some(dir) = std::env::args().nth(1).map(PathBuf::from) {
        write_dataset(&train, &dir.join("train"))?;
        write_dataset(&test, &dir.join("test"))?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
