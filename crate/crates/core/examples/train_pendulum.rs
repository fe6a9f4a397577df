//! Trains one pendulum model through the library API, without config files.
//!
//! `cargo run --release --example train_pendulum -- [baseline|k1|k2] [seed]`
//!
//! The budget is kept small so a run takes well under a minute; the
//! configs in `configs/` hold the full-size settings.

use pinode::constraints::{pendulum_symmetry, BoxDomain, ConstraintProgram};
use pinode::dataset::Role;
use pinode::nn::ParameterSet;
use pinode::pendulum::{generate_dataset, PendulumParams};
use pinode::trainer::{evaluate, train, RolloutObjective, TrainConfig};
use pinode::vectorfield::ModelKind;

fn main() -> pinode::Result<()> {
    let mut args = std::env::args().skip(1);
    let which = args.next().unwrap_or_else(|| "k2".into());
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let (kind, constrained) = match which.as_str() {
        "baseline" => (ModelKind::Baseline, false),
        "k1" => (ModelKind::K1, false),
        "k2" => (ModelKind::K1, true),
        other => panic!("unknown model {other}"),
    };

    let p = PendulumParams::default();
    let train_set = generate_dataset(Role::Train, 1, 0, &p)?;
    let test_set = generate_dataset(Role::Test, 10, 1, &p)?;

    let domain = BoxDomain::new(vec![[-0.5, 0.5], [-0.5, 0.5], [-1.0, 1.0], [-1.0, 1.0]]);
    let collocation = ConstraintProgram::new(vec![pendulum_symmetry(domain.clone())], 500, seed)?;
    let held_out = ConstraintProgram::new(vec![pendulum_symmetry(domain)], 500, seed + 1)?;

    let field = kind.pendulum_field(p);
    let params = ParameterSet::init(&kind.pendulum_specs(32), seed)?;
    let objective = RolloutObjective::new(field.as_ref(), &train_set, &test_set, 5, 64)?;
    let cfg = TrainConfig {
        patience: 200,
        max_inner_steps: 400,
        max_outer: 3,
        ..TrainConfig::default()
    };

    let out = train(
        &objective,
        params,
        constrained.then_some(&collocation),
        &cfg,
        seed,
    )?;
    for o in &out.log.outer {
        println!(
            "outer {:>2}  steps {:>5}  mu {:.2e}  violation {:.3e}",
            o.iteration, o.inner_steps, o.mu, o.constraint_loss
        );
    }
    let ev = evaluate(
        field.as_ref(),
        &out.params,
        &test_set,
        5,
        1,
        (kind == ModelKind::K1).then_some(&held_out),
    )?;
    println!("{which} seed {seed}: {} steps, {:?}", out.steps, out.status);
    println!("  test loss      {:.4e}", ev.test_loss);
    println!("  rollout error  {:.4e}", ev.rollout_error);
    if let Some(c) = ev.constraint_loss {
        println!("  symmetry viol. {c:.4e}");
    }
    Ok(())
}
