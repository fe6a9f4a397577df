use super::matrix::Matrix;
use super::tape::{AutodiffError, Result, Tape, Var};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradientCheck {
    /// Max over smooth coordinates of `|ad - fd| / (|fd| + 1e-12)`.
    pub max_relative_error: f64,
    /// (input index, flat coordinate) where the maximum occurred.
    pub worst: (usize, usize),
    pub coordinates: usize,
    /// Coordinates whose difference stencil crosses a `relu`/`max_zero`
    /// kink. Central differences do not estimate the derivative there, so
    /// these are left out of `max_relative_error`.
    pub kink_crossings: usize,
}

impl GradientCheck {
    pub(crate) fn new() -> Self {
        Self {
            max_relative_error: 0.0,
            worst: (0, 0),
            coordinates: 0,
            kink_crossings: 0,
        }
    }

    /// Folds in one coordinate's comparison.
    pub(crate) fn record(&mut self, at: (usize, usize), ad: f64, fd: f64, smooth: bool) {
        self.coordinates += 1;
        if !smooth {
            self.kink_crossings += 1;
            return;
        }
        let err = (ad - fd).abs() / (fd.abs() + 1e-12);
        if err > self.max_relative_error || err.is_nan() {
            self.max_relative_error = err;
            self.worst = at;
        }
    }
}

fn evaluate<F>(function: &F, point: &[Matrix]) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|m| tape.input(m.clone())).collect();
    let out = function(&mut tape, &vars)?;
    let shape = tape.shape(out);
    if shape != (1, 1) {
        return Err(AutodiffError::NonScalarOutput { shape });
    }
    Ok((tape.scalar_value(out), tape.kink_pattern()))
}

/// Compares the tape gradient of a scalar-valued `function` at `point`
/// against central finite differences with the given `step`.
///
/// The function is rebuilt from scratch for every perturbed evaluation.
pub fn gradient_check<F>(function: F, point: &[Matrix], step: f64) -> Result<GradientCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(AutodiffError::InvalidStep(step));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|m| tape.input(m.clone())).collect();
    let out = function(&mut tape, &vars)?;
    let grads = tape.grad(out)?;
    let pattern = tape.kink_pattern();

    let mut result = GradientCheck::new();
    let mut probe: Vec<Matrix> = point.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let ad = grads.get(*var);
        for k in 0..point[which].len() {
            let original = point[which].as_slice()[k];
            probe[which].as_mut_slice()[k] = original + step;
            let (plus, plus_pattern) = evaluate(&function, &probe)?;
            probe[which].as_mut_slice()[k] = original - step;
            let (minus, minus_pattern) = evaluate(&function, &probe)?;
            probe[which].as_mut_slice()[k] = original;

            let fd = (plus - minus) / (2.0 * step);
            let smooth = plus_pattern == pattern && minus_pattern == pattern;
            result.record((which, k), ad.as_slice()[k], fd, smooth);
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_matches_central_difference() {
        // f(x) = x^3 + 2x at 1.3; f'(x) = 3x^2 + 2 = 7.07
        let check = gradient_check(
            |t, v| {
                let sq = t.square(v[0])?;
                let cube = t.mul(sq, v[0])?;
                let two_x = t.scale(v[0], 2.0)?;
                t.add(cube, two_x)
            },
            &[Matrix::scalar(1.3)],
            1e-5,
        )
        .unwrap();
        assert!(check.max_relative_error < 1e-6, "{check:?}");
    }

    #[test]
    fn linear_map_is_exact() {
        let w = Matrix::from_rows(&[vec![0.5], vec![-2.0], vec![1.25]]);
        let check = gradient_check(
            |t, v| {
                let w = t.constant(w.clone());
                let y = t.matmul(v[0], w)?;
                t.sum(y)
            },
            &[Matrix::from_rows(&[
                vec![0.1, 0.2, 0.3],
                vec![-1.0, 4.0, 2.0],
            ])],
            1e-5,
        )
        .unwrap();
        assert!(check.max_relative_error < 1e-10, "{check:?}");
        assert_eq!(check.coordinates, 6);
    }

    #[test]
    fn stencils_across_a_kink_are_reported_not_scored() {
        // relu(x) at x = 4e-6 with step 1e-5: the stencil straddles 0 and the
        // central difference is 0.7 where the derivative is 1.
        let point = [Matrix::from_rows(&[vec![4e-6, 0.5]])];
        let check = gradient_check(
            |t, v| {
                let r = t.relu(v[0])?;
                t.sum(r)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert_eq!(check.kink_crossings, 1);
        assert_eq!(check.coordinates, 2);
        assert!(check.max_relative_error < 1e-10, "{check:?}");
    }

    #[test]
    fn rejects_non_scalar_and_bad_step() {
        let err = gradient_check(|t, v| t.sin(v[0]), &[Matrix::zeros(2, 1)], 1e-5).unwrap_err();
        assert!(matches!(err, AutodiffError::NonScalarOutput { .. }));
        let err = gradient_check(|t, v| t.sum(v[0]), &[Matrix::zeros(2, 1)], 0.0).unwrap_err();
        assert_eq!(err, AutodiffError::InvalidStep(0.0));
    }
}
