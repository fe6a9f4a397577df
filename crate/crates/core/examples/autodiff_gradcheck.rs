//! Reverse-mode gradients of a small expression and of an MLP loss, checked
//! against central differences.

use pinode::autodiff::{gradient_check, Matrix, Tape};
use pinode::nn::{check_parameter_gradient, MlpSpec, ParameterSet};

fn main() -> pinode::Result<()> {
    // f(x) = sum(x^3) / 3 has gradient x^2
    let mut tape = Tape::new();
    let x = tape.input(Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]));
    let sq = tape.square(x)?;
    let cube = tape.mul(sq, x)?;
    let s = tape.sum(cube)?;
    let f = tape.scale(s, 1.0 / 3.0)?;
    let grads = tape.grad(f)?;
    println!("f = {}", tape.scalar_value(f));
    println!("df/dx = {:?}", grads.get(x));

    let check = gradient_check(
        |tape, vars| {
            let s = tape.sin(vars[0])?;
            let p = tape.matmul(s, vars[1])?;
            tape.sum_squares(p)
        },
        &[
            Matrix::from_rows(&[vec![0.3, -0.7, 1.1]]),
            Matrix::from_rows(&[vec![0.2], vec![-0.4], vec![0.9]]),
        ],
        1e-5,
    )?;
    println!(
        "sin-matmul check: max relative error {:.2e} over {} coordinates",
        check.max_relative_error, check.coordinates
    );

    let params = ParameterSet::init(&[MlpSpec::relu(4, &[16, 16], 2)], 7)?;
    let batch = Matrix::from_rows(&[vec![0.1, -0.2, 0.3, 0.4], vec![-0.5, 0.6, 0.7, -0.8]]);
    let check = check_parameter_gradient(&params, 1e-5, |tape, vars| {
        let x = tape.constant(batch.clone());
        let y = vars.mlp_forward(tape, 0, x)?;
        Ok(tape.sum_squares(y)?)
    })?;
    println!(
        "mlp check: max relative error {:.2e} over {} parameters",
        check.max_relative_error, check.coordinates
    );
    Ok(())
}
