//! Method of multipliers on three one-parameter problems with known KKT
//! points: minimize (theta - 2)^2 subject to
//!
//! - theta = 1        (active equality, theta* = 1, lambda* = 2)
//! - theta - 1 <= 0   (active inequality, theta* = 1, lambda* = 2)
//! - theta - 3 <= 0   (inactive inequality, theta* = 2, lambda* = 0)

use pinode::constraints::{scalar_constraint, ConstraintKind, ConstraintProgram};
use pinode::nn::{MlpSpec, ParameterSet};
use pinode::trainer::{train, ScalarQuadratic, TrainConfig};

fn main() -> pinode::Result<()> {
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        mu0: 1.0,
        mu_mult: 2.0,
        patience: 200,
        eval_every: 10,
        max_inner_steps: 3000,
        max_outer: 15,
        tolerance: 1e-5,
        ..TrainConfig::default()
    };
    let problems = [
        ("theta = 1", ConstraintKind::Equality, -1.0),
        ("theta <= 1", ConstraintKind::Inequality, -1.0),
        ("theta <= 3", ConstraintKind::Inequality, -3.0),
    ];
    for (name, kind, offset) in problems {
        let program = ConstraintProgram::new(vec![scalar_constraint(kind, 0, 1.0, offset)], 1, 0)?;
        let init = ParameterSet::zeros(&[MlpSpec::relu(1, &[], 1)])?;
        let out = train(
            &ScalarQuadratic { target: 2.0 },
            init,
            Some(&program),
            &cfg,
            0,
        )?;
        let theta = ScalarQuadratic::theta(&out.params)?;
        let lambda = out
            .multipliers
            .as_ref()
            .map_or(0.0, |m| m.lambdas[0].item());
        println!(
            "{name:<11} theta = {theta:.6}  lambda = {lambda:.4}  steps = {:>5}  {:?}",
            out.steps, out.status
        );
    }
    Ok(())
}
