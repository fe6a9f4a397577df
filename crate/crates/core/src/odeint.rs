//! Time integration.
//!
//! Training rollouts use fixed-step classical RK4 recorded on the tape so
//! gradients flow through every stage. Ground-truth data comes from an
//! adaptive Dormand-Prince 5(4) integrator that works on plain `f64` slices.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::ParamVars;

/// A vector field `x' = h(x, u)` evaluated row-wise on a batch of states.
pub trait VectorField {
    fn state_dim(&self) -> usize;

    fn control_dim(&self) -> usize {
        0
    }

    /// `x` is batch x n, `u` is batch x m (absent when m = 0). Returns batch x n.
    fn eval(&self, tape: &mut Tape, params: &ParamVars, x: Var, u: Option<Var>) -> Result<Var>;
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }

    fn control_dim(&self) -> usize {
        (**self).control_dim()
    }

    fn eval(&self, tape: &mut Tape, params: &ParamVars, x: Var, u: Option<Var>) -> Result<Var> {
        (**self).eval(tape, params, x, u)
    }
}

impl<F: VectorField + ?Sized> VectorField for Box<F> {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }

    fn control_dim(&self) -> usize {
        (**self).control_dim()
    }

    fn eval(&self, tape: &mut Tape, params: &ParamVars, x: Var, u: Option<Var>) -> Result<Var> {
        (**self).eval(tape, params, x, u)
    }
}

fn checked_stage<F: VectorField + ?Sized>(
    field: &F,
    tape: &mut Tape,
    params: &ParamVars,
    x: Var,
    u: Option<Var>,
    stage: usize,
) -> Result<Var> {
    let k = field.eval(tape, params, x, u)?;
    if tape.shape(k) != tape.shape(x) {
        return Err(Error::Shape(format!(
            "field returned {:?} for state {:?}",
            tape.shape(k),
            tape.shape(x)
        )));
    }
    if !tape.value(k).all_finite() {
        return Err(Error::NonFiniteField { stage });
    }
    Ok(k)
}

/// One classical fourth-order Runge-Kutta step with every stage on the tape.
pub fn rk4_step<F: VectorField + ?Sized>(
    tape: &mut Tape,
    field: &F,
    params: &ParamVars,
    x: Var,
    u: Option<Var>,
    dt: f64,
) -> Result<Var> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rk4 step needs dt > 0, got {dt}"
        )));
    }
    let k1 = checked_stage(field, tape, params, x, u, 1)?;
    let d = tape.scale(k1, 0.5 * dt)?;
    let x2 = tape.add(x, d)?;
    let k2 = checked_stage(field, tape, params, x2, u, 2)?;
    let d = tape.scale(k2, 0.5 * dt)?;
    let x3 = tape.add(x, d)?;
    let k3 = checked_stage(field, tape, params, x3, u, 3)?;
    let d = tape.scale(k3, dt)?;
    let x4 = tape.add(x, d)?;
    let k4 = checked_stage(field, tape, params, x4, u, 4)?;

    let k23 = tape.add(k2, k3)?;
    let k23 = tape.scale(k23, 2.0)?;
    let s = tape.add(k1, k23)?;
    let s = tape.add(s, k4)?;
    let incr = tape.scale(s, dt / 6.0)?;
    Ok(tape.add(x, incr)?)
}

/// Initial state, time grid and piecewise-constant controls for a rollout.
#[derive(Clone, Debug)]
pub struct RolloutRequest {
    /// batch x n
    pub initial: Var,
    /// Strictly increasing sample times; one prediction per time after the first.
    pub times: Vec<f64>,
    /// One batch x m control per interval, held constant over it. A trailing
    /// control for the final grid point is accepted and ignored.
    pub controls: Vec<Var>,
    pub steps_per_interval: usize,
}

impl RolloutRequest {
    pub fn uncontrolled(initial: Var, times: Vec<f64>) -> Self {
        Self {
            initial,
            times,
            controls: Vec::new(),
            steps_per_interval: 1,
        }
    }

    /// Evenly spaced grid `0, dt, ..., intervals * dt`.
    pub fn uniform(initial: Var, dt: f64, intervals: usize) -> Self {
        Self::uncontrolled(initial, (0..=intervals).map(|k| k as f64 * dt).collect())
    }

    fn validate(&self) -> Result<()> {
        if self.times.len() < 2 {
            return Err(Error::InvalidArgument(
                "rollout grid needs at least two times".into(),
            ));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "rollout time grid must be strictly increasing".into(),
            ));
        }
        if self.steps_per_interval == 0 {
            return Err(Error::InvalidArgument(
                "steps_per_interval must be positive".into(),
            ));
        }
        let intervals = self.times.len() - 1;
        if !self.controls.is_empty()
            && self.controls.len() != intervals
            && self.controls.len() != intervals + 1
        {
            return Err(Error::InvalidArgument(format!(
                "{} controls for {intervals} intervals",
                self.controls.len()
            )));
        }
        Ok(())
    }
}

/// Integrates the field across the request's grid, returning the predicted
/// state at every grid time after the initial one.
pub fn ode_solve<F: VectorField + ?Sized>(
    tape: &mut Tape,
    field: &F,
    params: &ParamVars,
    request: &RolloutRequest,
) -> Result<Vec<Var>> {
    request.validate()?;
    if field.control_dim() > 0 && request.controls.is_empty() {
        return Err(Error::InvalidArgument(
            "field needs controls but none were given".into(),
        ));
    }
    let mut x = request.initial;
    let mut out = Vec::with_capacity(request.times.len() - 1);
    for (k, w) in request.times.windows(2).enumerate() {
        let u = request.controls.get(k).copied();
        let h = (w[1] - w[0]) / request.steps_per_interval as f64;
        for _ in 0..request.steps_per_interval {
            x = rk4_step(tape, field, params, x, u, h)?;
        }
        out.push(x);
    }
    Ok(out)
}

/// Tolerances and safeguards for [`dopri_integrate`].
#[derive(Clone, Copy, Debug)]
pub struct DopriOptions {
    pub rtol: f64,
    pub atol: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for DopriOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-8,
            min_step: 1e-12,
            max_steps: 1_000_000,
        }
    }
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// Error coefficients: fifth-order weights minus embedded fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Adaptive Dormand-Prince 5(4) with PI step-size control. The integrator
/// lands exactly on every sample time, so returned states are not
/// interpolated. `samples` must be non-decreasing and lie in `t_span`.
pub fn dopri_integrate<F>(
    mut field: F,
    x0: &[f64],
    t_span: (f64, f64),
    samples: &[f64],
    options: DopriOptions,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    let DopriOptions {
        rtol,
        atol,
        min_step,
        max_steps,
    } = options;
    if !(rtol > 0.0 && atol > 0.0) {
        return Err(Error::InvalidArgument(
            "dopri tolerances must be positive".into(),
        ));
    }
    let (t0, t1) = t_span;
    if samples.iter().any(|&s| s < t0 || s > t1) || samples.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument(
            "sample grid must be sorted and inside t_span".into(),
        ));
    }

    let n = x0.len();
    let mut t = t0;
    let mut x = x0.to_vec();
    let mut k1 = field(t, &x);
    let mut h = initial_step(&mut field, t, &x, &k1, rtol, atol);
    let mut err_prev: f64 = 1e-4;
    let mut out = Vec::with_capacity(samples.len());
    let mut steps = 0usize;

    let stage = |x: &[f64], h: f64, terms: &[(f64, &[f64])]| -> Vec<f64> {
        let mut y = x.to_vec();
        for (a, k) in terms {
            for i in 0..y.len() {
                y[i] += h * a * k[i];
            }
        }
        y
    };

    for &target in samples {
        while t < target {
            steps += 1;
            if steps > max_steps {
                return Err(Error::StepSizeUnderflow { t, h });
            }
            let remaining = target - t;
            let last = h >= remaining;
            let step = if last { remaining } else { h };

            let k2 = field(t + C2 * step, &stage(&x, step, &[(A21, &k1)]));
            let k3 = field(t + C3 * step, &stage(&x, step, &[(A31, &k1), (A32, &k2)]));
            let k4 = field(
                t + C4 * step,
                &stage(&x, step, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
            );
            let k5 = field(
                t + C5 * step,
                &stage(&x, step, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            );
            let k6 = field(
                t + step,
                &stage(
                    &x,
                    step,
                    &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                ),
            );
            let x_new = stage(
                &x,
                step,
                &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
            );
            let k7 = field(t + step, &x_new);

            let mut err = 0.0;
            for i in 0..n {
                let e = step
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = atol + rtol * x[i].abs().max(x_new[i].abs());
                err += (e / sc).powi(2);
            }
            let err = (err / n.max(1) as f64).sqrt();
            if !err.is_finite() {
                h = step * 0.1;
                if h < min_step {
                    return Err(Error::StepSizeUnderflow { t, h });
                }
                continue;
            }

            // PI controller (Hairer, Norsett & Wanner, II.4).
            const BETA: f64 = 0.04;
            const ALPHA: f64 = 0.2 - BETA * 0.75;
            if err <= 1.0 {
                let fac = if err == 0.0 {
                    10.0
                } else {
                    (0.9 * err.powf(-ALPHA) * err_prev.powf(BETA)).clamp(0.2, 10.0)
                };
                err_prev = err.max(1e-4);
                t = if last { target } else { t + step };
                x = x_new;
                k1 = k7;
                // A step shortened to hit a sample says nothing about the next one.
                h = if last { h.max(step * fac) } else { step * fac };
            } else {
                let fac = (0.9 * err.powf(-ALPHA)).clamp(0.2, 1.0);
                h = step * fac;
            }
            if h < min_step {
                return Err(Error::StepSizeUnderflow { t, h });
            }
        }
        out.push(x.clone());
    }
    Ok(out)
}

fn initial_step<F>(field: &mut F, t: f64, x: &[f64], f0: &[f64], rtol: f64, atol: f64) -> f64
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    let n = x.len().max(1) as f64;
    let norm = |v: &[f64]| {
        (v.iter()
            .zip(x)
            .map(|(vi, xi)| (vi / (atol + rtol * xi.abs())).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
    };
    let d0 = norm(x);
    let d1 = norm(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let x1: Vec<f64> = x.iter().zip(f0).map(|(xi, fi)| xi + h0 * fi).collect();
    let f1 = field(t + h0, &x1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| (a - b) / h0).collect();
    let d2 = norm(&diff);
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    (100.0 * h0).min(h1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;
    use crate::nn::ParameterSet;

    /// `x' = A x` with a constant matrix `A` (applied as `x A^T` on rows).
    struct Linear(Matrix);

    impl VectorField for Linear {
        fn state_dim(&self) -> usize {
            self.0.rows()
        }

        fn eval(&self, tape: &mut Tape, _: &ParamVars, x: Var, _: Option<Var>) -> Result<Var> {
            let at = tape.constant(self.0.transpose());
            Ok(tape.matmul(x, at)?)
        }
    }

    struct Constant(Vec<f64>);

    impl VectorField for Constant {
        fn state_dim(&self) -> usize {
            self.0.len()
        }

        fn eval(&self, tape: &mut Tape, _: &ParamVars, x: Var, _: Option<Var>) -> Result<Var> {
            let rows = tape.shape(x).0;
            let m = Matrix::from_vec(rows, self.0.len(), self.0.repeat(rows));
            Ok(tape.constant(m))
        }
    }

    struct Blowup;

    impl VectorField for Blowup {
        fn state_dim(&self) -> usize {
            1
        }

        fn eval(&self, tape: &mut Tape, _: &ParamVars, x: Var, _: Option<Var>) -> Result<Var> {
            // 1/x: infinite at the origin, so stage 1 fails from x = 0.
            let one = tape.constant(Matrix::filled(tape.shape(x).0, 1, 1.0));
            Ok(tape.div(one, x)?)
        }
    }

    fn no_params(tape: &mut Tape) -> ParamVars {
        ParameterSet::empty().register(tape)
    }

    fn step_value<F: VectorField>(field: &F, x: &[f64], dt: f64) -> Vec<f64> {
        let mut tape = Tape::new();
        let p = no_params(&mut tape);
        let xv = tape.input(Matrix::row_vector(x));
        let y = rk4_step(&mut tape, field, &p, xv, None, dt).unwrap();
        tape.value(y).as_slice().to_vec()
    }

    #[test]
    fn zero_and_constant_fields() {
        assert_eq!(
            step_value(&Constant(vec![0.0; 3]), &[1.0, -2.0, 0.5], 0.1),
            vec![1.0, -2.0, 0.5]
        );
        let y = step_value(&Constant(vec![1.0, 1.0]), &[0.0, 2.0], 0.1);
        assert!((y[0] - 0.1).abs() < 1e-15 && (y[1] - 2.1).abs() < 1e-15);
    }

    #[test]
    fn exponential_step() {
        let y = step_value(&Linear(Matrix::identity(1)), &[1.0], 0.01);
        assert!((y[0] - 1.010050167084).abs() < 1e-10, "{}", y[0]);
    }

    #[test]
    fn non_finite_stage_is_reported() {
        let mut tape = Tape::new();
        let p = no_params(&mut tape);
        let x = tape.input(Matrix::scalar(0.0));
        let err = rk4_step(&mut tape, &Blowup, &p, x, None, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteField { stage: 1 }));
        let err = rk4_step(&mut tape, &Blowup, &p, x, None, 0.0).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    fn rk4_error(intervals: usize) -> f64 {
        let mut tape = Tape::new();
        let p = no_params(&mut tape);
        let x = tape.input(Matrix::scalar(1.0));
        let req = RolloutRequest::uniform(x, 1.0 / intervals as f64, intervals);
        let out = ode_solve(&mut tape, &Linear(Matrix::identity(1)), &p, &req).unwrap();
        (tape.value(*out.last().unwrap()).item() - 1f64.exp()).abs()
    }

    #[test]
    fn rk4_is_fourth_order() {
        for n in [10, 20, 40] {
            let ratio = rk4_error(n) / rk4_error(2 * n);
            assert!((14.0..=18.0).contains(&ratio), "n = {n}: ratio {ratio}");
        }
    }

    #[test]
    fn degenerate_single_interval() {
        let field = Constant(vec![2.0, -1.0]);
        let mut tape = Tape::new();
        let p = no_params(&mut tape);
        let x = tape.input(Matrix::row_vector(&[1.0, 1.0]));
        let req = RolloutRequest::uniform(x, 0.5, 1);
        let out = ode_solve(&mut tape, &field, &p, &req).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(
            tape.value(out[0]).as_slice(),
            &step_value(&field, &[1.0, 1.0], 0.5)[..]
        );
    }

    #[test]
    fn diagonal_linear_rollout() {
        let diag = [-1.5, 0.3, 2.0];
        let mut a = Matrix::zeros(3, 3);
        for (i, d) in diag.iter().enumerate() {
            a.set(i, i, *d);
        }
        let x0 = [1.0, -2.0, 0.5];
        let mut tape = Tape::new();
        let p = no_params(&mut tape);
        let x = tape.input(Matrix::row_vector(&x0));
        let req = RolloutRequest::uniform(x, 0.01, 5);
        let out = ode_solve(&mut tape, &Linear(a), &p, &req).unwrap();
        assert_eq!(out.len(), 5);
        for (k, state) in out.iter().enumerate() {
            let t = 0.01 * (k + 1) as f64;
            for i in 0..3 {
                let exact = x0[i] * (diag[i] * t).exp();
                assert!((tape.value(*state).as_slice()[i] - exact).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn substeps_equal_refined_grid() {
        let field = Linear(Matrix::from_rows(&[vec![0.0, 1.0], vec![-4.0, -0.1]]));
        let run = |times: Vec<f64>, steps: usize| {
            let mut tape = Tape::new();
            let p = no_params(&mut tape);
            let x = tape.input(Matrix::row_vector(&[1.0, 0.0]));
            let req = RolloutRequest {
                steps_per_interval: steps,
                ..RolloutRequest::uncontrolled(x, times)
            };
            let out = ode_solve(&mut tape, &field, &p, &req).unwrap();
            out.iter()
                .map(|v| tape.value(*v).clone())
                .collect::<Vec<_>>()
        };
        let coarse = run(vec![0.0, 0.1, 0.2], 4);
        let fine = run((0..=8).map(|k| k as f64 * 0.025).collect(), 1);
        assert_eq!(coarse[0], fine[3]);
        assert_eq!(coarse[1], fine[7]);
    }

    #[test]
    fn rejects_bad_grids() {
        let mut tape = Tape::new();
        let p = no_params(&mut tape);
        let x = tape.input(Matrix::scalar(1.0));
        let field = Constant(vec![1.0]);
        let bad = RolloutRequest::uncontrolled(x, vec![0.0, 0.1, 0.1]);
        assert!(ode_solve(&mut tape, &field, &p, &bad).is_err());
        let one = RolloutRequest::uncontrolled(x, vec![0.0]);
        assert!(ode_solve(&mut tape, &field, &p, &one).is_err());
        let u = tape.constant(Matrix::scalar(0.0));
        let mut wrong = RolloutRequest::uniform(x, 0.1, 3);
        wrong.controls = vec![u; 2];
        assert!(ode_solve(&mut tape, &field, &p, &wrong).is_err());
        wrong.controls = vec![u; 4];
        assert!(ode_solve(&mut tape, &field, &p, &wrong).is_ok());
    }

    #[test]
    fn dopri_exponential_decay() {
        let opts = DopriOptions::default();
        let out = dopri_integrate(|_, x| vec![-x[0]], &[1.0], (0.0, 1.0), &[1.0], opts).unwrap();
        assert!((out[0][0] - (-1f64).exp()).abs() < 10.0 * opts.rtol);
    }

    #[test]
    fn dopri_harmonic_period() {
        let opts = DopriOptions::default();
        let period = 2.0 * std::f64::consts::PI;
        let samples: Vec<f64> = (0..=8).map(|k| k as f64 * period / 8.0).collect();
        let out = dopri_integrate(
            |_, x| vec![x[1], -x[0]],
            &[1.0, 0.0],
            (0.0, period),
            &samples,
            opts,
        )
        .unwrap();
        assert_eq!(out.len(), samples.len());
        for (t, x) in samples.iter().zip(&out) {
            assert!((x[0] - t.cos()).abs() < 1e-6 && (x[1] + t.sin()).abs() < 1e-6);
        }
        let end = out.last().unwrap();
        assert!((end[0] - 1.0).abs() < 1e-6 && end[1].abs() < 1e-6);
    }

    #[test]
    fn dopri_zero_field_and_errors() {
        let samples = [0.0, 0.5, 1.0];
        let out = dopri_integrate(
            |_, _| vec![0.0, 0.0],
            &[3.0, -1.0],
            (0.0, 1.0),
            &samples,
            DopriOptions::default(),
        )
        .unwrap();
        assert!(out.iter().all(|x| x == &vec![3.0, -1.0]));
        let bad = DopriOptions {
            rtol: 0.0,
            ..DopriOptions::default()
        };
        assert!(dopri_integrate(|_, x| x.to_vec(), &[1.0], (0.0, 1.0), &[1.0], bad).is_err());
        assert!(dopri_integrate(
            |_, x| x.to_vec(),
            &[1.0],
            (0.0, 1.0),
            &[2.0],
            DopriOptions::default()
        )
        .is_err());
        // x' = x^2 from 1 blows up at t = 1.
        let err = dopri_integrate(
            |_, x| vec![x[0] * x[0]],
            &[1.0],
            (0.0, 2.0),
            &[2.0],
            DopriOptions::default(),
        );
        assert!(
            matches!(err, Err(Error::StepSizeUnderflow { .. })),
            "{err:?}"
        );
    }
}
