//! Building a knowledge-informed vector field from known structure plus
//! learned terms, here for a forced, damped oscillator `q'' = -q + f(q', u)`
//! where only the force `f` is learned.

use std::sync::Arc;

use pinode::autodiff::{Matrix, Tape};
use pinode::nn::{MlpSpec, ParameterSet};
use pinode::odeint::{ode_solve, RolloutRequest};
use pinode::vectorfield::{CompositionalField, Feature, LearnedTerm, Structure};

fn main() -> pinode::Result<()> {
    let specs = [MlpSpec::relu(2, &[16], 1)];
    // state (q, q'), one control column
    let structure: Arc<Structure> = Arc::new(|tape, x, _u, g| {
        let q = tape.column(x, 0)?;
        let v = tape.column(x, 1)?;
        let spring = tape.neg(q)?;
        let acc = tape.add(spring, g[0])?;
        Ok(tape.concat_cols(&[v, acc])?)
    });
    let force = LearnedTerm {
        network: 0,
        inputs: vec![Feature::State(1), Feature::Control(0)],
    };
    let field = CompositionalField::build(2, 1, vec![force], &specs, structure)?;
    println!("{field:?}");

    let params = ParameterSet::init(&specs, 1)?;
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let x0 = tape.constant(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
    let mut request = RolloutRequest::uniform(x0, 0.1, 5);
    for k in 0..5 {
        let u = tape.constant(Matrix::column_vector(&[0.1 * k as f64, -0.2]));
        request.controls.push(u);
    }
    let states = ode_solve(&mut tape, &field, &vars, &request)?;
    for (k, s) in states.iter().enumerate() {
        println!("t = {:.1}: {:?}", 0.1 * (k + 1) as f64, tape.value(*s));
    }

    // gradients of the final state's squared norm with respect to every weight
    let last = *states.last().unwrap();
    let loss = tape.sum_squares(last)?;
    let grads = tape.grad(loss)?;
    let g = vars.flat_gradient(&grads);
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!(
        "loss {:.6}, gradient norm {norm:.6} over {} parameters",
        tape.scalar_value(loss),
        g.len()
    );
    Ok(())
}
