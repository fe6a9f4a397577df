//! Fixed-step RK4 on the tape and adaptive Dormand-Prince on plain slices.

use std::f64::consts::PI;

use pinode::autodiff::{Matrix, Tape, Var};
use pinode::nn::{ParamVars, ParameterSet};
use pinode::odeint::{dopri_integrate, ode_solve, DopriOptions, RolloutRequest, VectorField};

/// x' = x
struct Growth;

impl VectorField for Growth {
    fn state_dim(&self) -> usize {
        1
    }

    fn eval(&self, _: &mut Tape, _: &ParamVars, x: Var, _: Option<Var>) -> pinode::Result<Var> {
        Ok(x)
    }
}

fn rk4_error(steps: usize) -> pinode::Result<f64> {
    let mut tape = Tape::new();
    let vars = ParameterSet::empty().register(&mut tape);
    let x0 = tape.constant(Matrix::scalar(1.0));
    let request = RolloutRequest::uniform(x0, 1.0 / steps as f64, steps);
    let out = ode_solve(&mut tape, &Growth, &vars, &request)?;
    Ok((tape.scalar_value(*out.last().unwrap()) - 1f64.exp()).abs())
}

fn main() -> pinode::Result<()> {
    println!("RK4 on x' = x over [0, 1]");
    let mut prev = None;
    for steps in [10, 20, 40, 80] {
        let err = rk4_error(steps)?;
        match prev {
            Some(p) => println!("  h = 1/{steps:<3} error {err:.3e}  ratio {:.2}", p / err),
            None => println!("  h = 1/{steps:<3} error {err:.3e}"),
        }
        prev = Some(err);
    }

    let opts = DopriOptions::default();
    let decay = dopri_integrate(|_, x| vec![-x[0]], &[1.0], (0.0, 1.0), &[0.0, 1.0], opts)?;
    println!(
        "dopri x' = -x: x(1) - e^-1 = {:.2e}",
        decay[1][0] - (-1f64).exp()
    );

    let period = 2.0 * PI;
    let samples = [0.0, period / 4.0, period / 2.0, period];
    let osc = dopri_integrate(
        |_, x| vec![x[1], -x[0]],
        &[1.0, 0.0],
        (0.0, period),
        &samples,
        opts,
    )?;
    for (t, x) in samples.iter().zip(&osc) {
        println!("  harmonic t = {t:.4}: ({:+.10}, {:+.10})", x[0], x[1]);
    }
    Ok(())
}
