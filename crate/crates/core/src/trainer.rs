//! Training: Adam, the multi-step rollout loss, the augmented-Lagrangian
//! outer loop with early stopping, and evaluation metrics.

use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::constraints::{
    apply_multiplier_update, augmented_lagrangian, penalty_value, residual_values,
    violation_from_residuals, ConstraintProgram, MultiplierState,
};
use crate::dataset::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::nn::{ParamVars, ParameterSet};
use crate::odeint::{ode_solve, rk4_step, RolloutRequest, VectorField};

/// Anchors per tape when a loss is evaluated over a whole dataset.
const EVAL_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Trajectory anchors per gradient step.
    pub batch_size: usize,
    /// Collocation points per gradient step.
    pub constraint_batch: usize,
    /// Gradient steps without improvement before an inner loop stops.
    pub patience: usize,
    /// Gradient steps between evaluations of the stopping criterion.
    pub eval_every: usize,
    pub max_inner_steps: usize,
    pub max_outer: usize,
    pub mu0: f64,
    pub mu_mult: f64,
    /// Mean constraint violation at which the outer loop stops.
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 64,
            constraint_batch: 256,
            patience: 1000,
            eval_every: 50,
            max_inner_steps: 10_000,
            max_outer: 10,
            mu0: 1e-3,
            mu_mult: 1.5,
            tolerance: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("training config: {what}")));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.constraint_batch == 0 {
            return bad("batch sizes must be positive");
        }
        if self.eval_every == 0 || self.patience == 0 || self.max_inner_steps == 0 {
            return bad("eval_every, patience and max_inner_steps must be positive");
        }
        if self.max_outer == 0 {
            return bad("max_outer must be positive");
        }
        if !(self.mu0 > 0.0) || !(self.mu_mult >= 1.0) {
            return bad("need mu0 > 0 and mu_mult >= 1");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        Ok(())
    }
}

/// Adam over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Something to minimize: a stochastic minibatch loss on the tape plus a
/// deterministic held-out loss used for early stopping.
pub trait Objective {
    fn batch_loss(&self, tape: &mut Tape, params: &ParamVars, rng: &mut ChaCha8Rng) -> Result<Var>;
    fn validation_loss(&self, params: &ParameterSet) -> Result<f64>;
}

/// Objective built from two closures.
pub struct FnObjective<B, V> {
    pub batch: B,
    pub validation: V,
}

impl<B, V> Objective for FnObjective<B, V>
where
    B: Fn(&mut Tape, &ParamVars, &mut ChaCha8Rng) -> Result<Var>,
    V: Fn(&ParameterSet) -> Result<f64>,
{
    fn batch_loss(&self, tape: &mut Tape, params: &ParamVars, rng: &mut ChaCha8Rng) -> Result<Var> {
        (self.batch)(tape, params, rng)
    }

    fn validation_loss(&self, params: &ParameterSet) -> Result<f64> {
        (self.validation)(params)
    }
}

/// `(theta - target)^2` where `theta` is network 0 evaluated at the origin
/// (its bias, for a single affine layer). A one-parameter test problem.
#[derive(Clone, Copy, Debug)]
pub struct ScalarQuadratic {
    pub target: f64,
}

impl ScalarQuadratic {
    pub fn theta(params: &ParameterSet) -> Result<f64> {
        let input = params
            .specs()
            .first()
            .map(|s| s.input)
            .ok_or(Error::NetworkIndex { index: 0, count: 0 })?;
        Ok(params.forward_value(0, &Matrix::zeros(1, input))?.get(0, 0))
    }
}

impl Objective for ScalarQuadratic {
    fn batch_loss(&self, tape: &mut Tape, params: &ParamVars, _: &mut ChaCha8Rng) -> Result<Var> {
        let input = params.spec(0).map_or(1, |s| s.input);
        let origin = tape.constant(Matrix::zeros(1, input));
        let y = params.mlp_forward(tape, 0, origin)?;
        let y = tape.column(y, 0)?;
        let d = tape.add_const(y, -self.target)?;
        Ok(tape.sum_squares(d)?)
    }

    fn validation_loss(&self, params: &ParameterSet) -> Result<f64> {
        Ok((Self::theta(params)? - self.target).powi(2))
    }
}

/// Start index `i` in trajectory `traj`; the window is `i ..= i + horizon + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Anchor {
    pub traj: usize,
    pub index: usize,
}

/// Every start index whose `horizon + 1` step window fits in its trajectory.
pub fn admissible_anchors(dataset: &TrajectoryDataset, horizon: usize) -> Vec<Anchor> {
    let mut out = Vec::new();
    for (traj, t) in dataset.trajectories.iter().enumerate() {
        let span = horizon + 1;
        if t.len() > span {
            out.extend((0..t.len() - span).map(|index| Anchor { traj, index }));
        }
    }
    out
}

/// Mean over anchors of the summed squared error of a `horizon + 1` step
/// rollout: `1/B sum_b sum_{j=1}^{horizon+1} |x_hat(i_b + j) - x(i_b + j)|^2`.
pub fn rollout_loss<F: VectorField + ?Sized>(
    tape: &mut Tape,
    field: &F,
    params: &ParamVars,
    dataset: &TrajectoryDataset,
    anchors: &[Anchor],
    horizon: usize,
    steps_per_interval: usize,
) -> Result<Var> {
    if anchors.is_empty() {
        return Err(Error::InvalidArgument(
            "rollout loss needs at least one anchor".into(),
        ));
    }
    let n = dataset.state_dim();
    let m = field.control_dim();
    let b = anchors.len();
    let span = horizon + 1;
    let rows_at =
        |offset: usize, width: usize, pick: &dyn Fn(Anchor, usize) -> Vec<f64>| -> Result<Matrix> {
            let mut data = Vec::with_capacity(b * width);
            for &a in anchors {
                let row = pick(a, a.index + offset);
                if row.len() != width {
                    return Err(Error::Shape(format!(
                        "dataset row has width {}, expected {width}",
                        row.len()
                    )));
                }
                data.extend_from_slice(&row);
            }
            Ok(Matrix::from_vec(b, width, data))
        };
    let state = |a: Anchor, k: usize| dataset.trajectories[a.traj].states[k].clone();
    let control = |a: Anchor, k: usize| dataset.trajectories[a.traj].controls[k].clone();

    let x0 = rows_at(0, n, &state)?;
    let x0 = tape.constant(x0);
    let mut request = RolloutRequest::uniform(x0, dataset.dt, span);
    request.steps_per_interval = steps_per_interval;
    if m > 0 {
        for j in 0..span {
            let u = rows_at(j, m, &control)?;
            request.controls.push(tape.constant(u));
        }
    }
    let preds = ode_solve(tape, field, params, &request)?;
    let mut total: Option<Var> = None;
    for (j, pred) in preds.into_iter().enumerate() {
        let target = rows_at(j + 1, n, &state)?;
        let target = tape.constant(target);
        let diff = tape.sub(pred, target)?;
        let sq = tape.sum_squares(diff)?;
        total = Some(match total {
            Some(t) => tape.add(t, sq)?,
            None => sq,
        });
    }
    Ok(tape.scale(total.expect("span >= 1"), 1.0 / b as f64)?)
}

/// Rollout loss over every admissible anchor of `dataset`, without gradients.
pub fn dataset_rollout_loss<F: VectorField + ?Sized>(
    field: &F,
    params: &ParameterSet,
    dataset: &TrajectoryDataset,
    horizon: usize,
    steps_per_interval: usize,
) -> Result<f64> {
    let anchors = admissible_anchors(dataset, horizon);
    if anchors.is_empty() {
        return Err(Error::InvalidArgument(
            "dataset too short for the rollout horizon".into(),
        ));
    }
    let mut total = 0.0;
    for chunk in anchors.chunks(EVAL_CHUNK) {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let l = rollout_loss(
            &mut tape,
            field,
            &vars,
            dataset,
            chunk,
            horizon,
            steps_per_interval,
        )?;
        total += tape.scalar_value(l) * chunk.len() as f64;
    }
    Ok(total / anchors.len() as f64)
}

/// Rollout loss on minibatches of training anchors, validated on a test set.
pub struct RolloutObjective<'a, F: ?Sized> {
    pub field: &'a F,
    pub train: &'a TrajectoryDataset,
    pub test: &'a TrajectoryDataset,
    pub horizon: usize,
    pub batch_size: usize,
    pub steps_per_interval: usize,
    anchors: Vec<Anchor>,
}

impl<'a, F: VectorField + ?Sized> RolloutObjective<'a, F> {
    pub fn new(
        field: &'a F,
        train: &'a TrajectoryDataset,
        test: &'a TrajectoryDataset,
        horizon: usize,
        batch_size: usize,
    ) -> Result<Self> {
        let anchors = admissible_anchors(train, horizon);
        if anchors.is_empty() {
            return Err(Error::InvalidArgument(
                "training data too short for the rollout horizon".into(),
            ));
        }
        if admissible_anchors(test, horizon).is_empty() {
            return Err(Error::InvalidArgument(
                "test data too short for the rollout horizon".into(),
            ));
        }
        Ok(Self {
            field,
            train,
            test,
            horizon,
            batch_size,
            steps_per_interval: 1,
            anchors,
        })
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }
}

impl<F: VectorField + ?Sized> Objective for RolloutObjective<'_, F> {
    fn batch_loss(&self, tape: &mut Tape, params: &ParamVars, rng: &mut ChaCha8Rng) -> Result<Var> {
        let batch: Vec<Anchor> = (0..self.batch_size)
            .map(|_| self.anchors[rng.gen_range(0..self.anchors.len())])
            .collect();
        rollout_loss(
            tape,
            self.field,
            params,
            self.train,
            &batch,
            self.horizon,
            self.steps_per_interval,
        )
    }

    fn validation_loss(&self, params: &ParameterSet) -> Result<f64> {
        dataset_rollout_loss(
            self.field,
            params,
            self.test,
            self.horizon,
            self.steps_per_interval,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    /// Data part of the minibatch objective.
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub constraint_loss: Option<f64>,
    pub mu: Option<f64>,
    /// Seconds since training started. Not written to CSV.
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OuterRecord {
    pub iteration: usize,
    pub step: usize,
    pub inner_steps: usize,
    pub inner_cap_hit: bool,
    pub mu: f64,
    pub multiplier_norms: Vec<f64>,
    pub constraint_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
    pub outer: Vec<OuterRecord>,
}

pub const METRICS_HEADER: &str = "step,train_loss,test_loss,constraint_loss,mu";

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::with_capacity(self.rows.len() * 48);
        out.push_str(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step,
                r.train_loss,
                opt(r.test_loss),
                opt(r.constraint_loss),
                opt(r.mu)
            ));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrainStatus {
    /// No constraints: a single inner loop.
    Unconstrained,
    /// Mean violation fell below the tolerance.
    Converged { outer_iterations: usize },
    /// The outer iteration cap was reached first.
    OuterCapHit {
        outer_iterations: usize,
        constraint_loss: f64,
    },
    /// A non-finite loss or gradient stopped training; parameters are the
    /// last finite checkpoint.
    Aborted { step: usize, reason: String },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParameterSet,
    pub multipliers: Option<MultiplierState>,
    pub log: MetricsLog,
    pub status: TrainStatus,
    pub steps: usize,
    /// Number of inner loops that ran into `max_inner_steps`.
    pub inner_cap_hits: usize,
}

enum StepError {
    NonFinite(String),
    Other(Error),
}

impl From<Error> for StepError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFiniteField { .. }
            | Error::NonFiniteLoss { .. }
            | Error::Autodiff(crate::autodiff::AutodiffError::NonFiniteGradient { .. }) => {
                StepError::NonFinite(e.to_string())
            }
            other => StepError::Other(other),
        }
    }
}

struct Trainer<'a> {
    objective: &'a dyn Objective,
    program: Option<&'a ConstraintProgram>,
    cfg: &'a TrainConfig,
    params: ParameterSet,
    flat: Vec<f64>,
    adam: Adam,
    rng: ChaCha8Rng,
    log: MetricsLog,
    step: usize,
    start: Instant,
}

impl Trainer<'_> {
    /// One Adam step; returns the data part of the minibatch loss.
    fn gradient_step(
        &mut self,
        mult: Option<&MultiplierState>,
    ) -> std::result::Result<f64, StepError> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let data = self.objective.batch_loss(&mut tape, &vars, &mut self.rng)?;
        let data_value = tape.scalar_value(data);
        if !data_value.is_finite() {
            return Err(StepError::NonFinite(format!(
                "training loss is {data_value}"
            )));
        }
        let total = match (self.program, mult) {
            (Some(program), Some(mult)) => {
                let n = program.omega.len();
                let k = self.cfg.constraint_batch.min(n);
                let batch = index::sample(&mut self.rng, n, k).into_vec();
                augmented_lagrangian(
                    &mut tape,
                    data,
                    &program.specs,
                    &vars,
                    &program.omega,
                    &batch,
                    mult,
                )?
            }
            _ => data,
        };
        if !tape.scalar_value(total).is_finite() {
            return Err(StepError::NonFinite(
                "augmented objective is not finite".into(),
            ));
        }
        let grads = tape.grad(total).map_err(Error::from)?;
        let g = vars.flat_gradient(&grads);
        self.adam.step(&mut self.flat, &g);
        self.params.assign_flat(&self.flat);
        Ok(data_value)
    }

    /// Stopping criterion: held-out loss, plus the constraint terms over the
    /// whole collocation set rescaled to one constraint batch.
    fn monitor(&self, mult: Option<&MultiplierState>) -> Result<(f64, f64, Option<f64>)> {
        let test = self.objective.validation_loss(&self.params)?;
        match (self.program, mult) {
            (Some(program), Some(mult)) => {
                let res = residual_values(&program.specs, &self.params, &program.omega)?;
                let n = program.omega.len();
                let scale = self.cfg.constraint_batch.min(n) as f64 / n as f64;
                let penalty = penalty_value(&program.specs, &res, mult);
                let violation = violation_from_residuals(&program.specs, &res);
                Ok((test + scale * penalty, test, Some(violation)))
            }
            _ => Ok((test, test, None)),
        }
    }

    /// Runs gradient steps until the monitor stops improving for `patience`
    /// steps or the cap is hit, then restores the best parameters.
    /// Returns (steps taken, cap hit, abort reason).
    fn inner_loop(
        &mut self,
        mult: Option<&MultiplierState>,
    ) -> Result<(usize, bool, Option<String>)> {
        // The best checkpoint is tracked per inner loop, starting from the
        // entry point scored under this loop's multipliers.
        let (mut best, _, _) = self.monitor(mult)?;
        let mut best_params = self.params.clone();
        let mut best_step = 0;
        let mu = mult.map(|m| m.mu);
        for local in 1..=self.cfg.max_inner_steps {
            let train_loss = match self.gradient_step(mult) {
                Ok(v) => v,
                Err(StepError::NonFinite(reason)) => {
                    self.params = best_params;
                    self.flat = self.params.to_flat();
                    return Ok((local, false, Some(reason)));
                }
                Err(StepError::Other(e)) => return Err(e),
            };
            self.step += 1;
            let mut row = MetricsRow {
                step: self.step,
                train_loss,
                test_loss: None,
                constraint_loss: None,
                mu,
                wall_seconds: 0.0,
            };
            let mut stop = false;
            if local % self.cfg.eval_every == 0 {
                let (score, test, violation) = self.monitor(mult)?;
                row.test_loss = Some(test);
                row.constraint_loss = violation;
                if score < best {
                    best = score;
                    best_params = self.params.clone();
                    best_step = local;
                } else if local - best_step >= self.cfg.patience {
                    stop = true;
                }
            }
            row.wall_seconds = self.start.elapsed().as_secs_f64();
            self.log.rows.push(row);
            if stop {
                self.params = best_params;
                self.flat = self.params.to_flat();
                return Ok((local, false, None));
            }
        }
        self.params = best_params;
        self.flat = self.params.to_flat();
        Ok((self.cfg.max_inner_steps, true, None))
    }
}

/// Minimizes `objective` from `init`, optionally subject to a constraint
/// program, with Adam inner loops and multiplier updates between them.
///
/// Without constraints a single inner loop runs. With constraints, each
/// inner loop is followed by a multiplier update over the full collocation
/// set and `mu *= mu_mult`; the outer loop ends when the mean violation is
/// below `tolerance` or after `max_outer` iterations.
pub fn train(
    objective: &dyn Objective,
    init: ParameterSet,
    program: Option<&ConstraintProgram>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if init.is_empty() {
        return Err(Error::InvalidArgument(
            "nothing to train: model has no parameters".into(),
        ));
    }
    let program = program.filter(|p| !p.specs.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let flat = init.to_flat();
    let mut t = Trainer {
        objective,
        program,
        cfg,
        adam: Adam::new(flat.len(), cfg),
        flat,
        params: init,
        rng,
        log: MetricsLog::default(),
        step: 0,
        start: Instant::now(),
    };
    let mut inner_cap_hits = 0;

    let Some(program) = program else {
        let (_, cap, abort) = t.inner_loop(None)?;
        inner_cap_hits += cap as usize;
        let status = match abort {
            Some(reason) => TrainStatus::Aborted {
                step: t.step,
                reason,
            },
            None => TrainStatus::Unconstrained,
        };
        return Ok(TrainOutcome {
            params: t.params,
            multipliers: None,
            log: t.log,
            status,
            steps: t.step,
            inner_cap_hits,
        });
    };

    let mut mult = MultiplierState::new(&program.specs, &program.omega, cfg.mu0);
    let mut status = None;
    for outer in 1..=cfg.max_outer {
        let (inner_steps, cap, abort) = t.inner_loop(Some(&mult))?;
        inner_cap_hits += cap as usize;
        if let Some(reason) = abort {
            status = Some(TrainStatus::Aborted {
                step: t.step,
                reason,
            });
            break;
        }
        let res = residual_values(&program.specs, &t.params, &program.omega)?;
        mult = apply_multiplier_update(&program.specs, &res, &mult, cfg.mu_mult);
        let violation = violation_from_residuals(&program.specs, &res);
        t.log.outer.push(OuterRecord {
            iteration: outer,
            step: t.step,
            inner_steps,
            inner_cap_hit: cap,
            mu: mult.mu,
            multiplier_norms: mult.norms(),
            constraint_loss: violation,
        });
        if violation < cfg.tolerance {
            status = Some(TrainStatus::Converged {
                outer_iterations: outer,
            });
            break;
        }
    }
    let status = status.unwrap_or_else(|| TrainStatus::OuterCapHit {
        outer_iterations: cfg.max_outer,
        constraint_loss: t.log.outer.last().map_or(f64::NAN, |o| o.constraint_loss),
    });
    Ok(TrainOutcome {
        params: t.params,
        multipliers: Some(mult),
        log: t.log,
        status,
        steps: t.step,
        inner_cap_hits,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub test_loss: f64,
    /// Mean over test trajectories and predicted samples of the Euclidean
    /// error of a rollout from each trajectory's initial state. Infinite when
    /// a rollout diverged.
    #[serde(serialize_with = "finite_or_null")]
    pub rollout_error: f64,
    pub diverged: bool,
    pub constraint_loss: Option<f64>,
}

fn finite_or_null<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

/// Full-length rollout error from each trajectory's first state.
pub fn average_rollout_error<F: VectorField + ?Sized>(
    field: &F,
    params: &ParameterSet,
    dataset: &TrajectoryDataset,
    steps_per_interval: usize,
) -> Result<(f64, bool)> {
    let trajs = &dataset.trajectories;
    let n = dataset.state_dim();
    let m = field.control_dim();
    let len = trajs.iter().map(|t| t.len()).min().unwrap_or(0);
    if len < 2 {
        return Err(Error::InvalidArgument(
            "rollout error needs trajectories of length >= 2".into(),
        ));
    }
    let rows = |k: usize, width: usize, ctrl: bool| {
        let mut data = Vec::with_capacity(trajs.len() * width);
        for t in trajs {
            data.extend_from_slice(if ctrl { &t.controls[k] } else { &t.states[k] });
        }
        Matrix::from_vec(trajs.len(), width, data)
    };
    let h = dataset.dt / steps_per_interval as f64;
    let mut x = rows(0, n, false);
    let mut total = 0.0;
    for k in 1..len {
        for _ in 0..steps_per_interval {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape);
            let xv = tape.constant(x.clone());
            let u = (m > 0).then(|| tape.constant(rows(k - 1, m, true)));
            let next = match rk4_step(&mut tape, field, &vars, xv, u, h) {
                Ok(v) => v,
                Err(Error::NonFiniteField { .. }) | Err(Error::SingularPendulum { .. }) => {
                    return Ok((f64::INFINITY, true));
                }
                Err(e) => return Err(e),
            };
            x = tape.value(next).clone();
        }
        if !x.all_finite() {
            return Ok((f64::INFINITY, true));
        }
        let target = rows(k, n, false);
        for (pred, want) in x.as_slice().chunks(n).zip(target.as_slice().chunks(n)) {
            total += pred
                .iter()
                .zip(want)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
        }
    }
    let mean = total / ((len - 1) * trajs.len()) as f64;
    if mean.is_finite() {
        Ok((mean, false))
    } else {
        Ok((f64::INFINITY, true))
    }
}

/// Testing loss, average rollout error and (when a held-out constraint
/// program is given) mean constraint violation.
pub fn evaluate<F: VectorField + ?Sized>(
    field: &F,
    params: &ParameterSet,
    test: &TrajectoryDataset,
    horizon: usize,
    steps_per_interval: usize,
    held_out: Option<&ConstraintProgram>,
) -> Result<Evaluation> {
    let test_loss = match dataset_rollout_loss(field, params, test, horizon, steps_per_interval) {
        Ok(v) => v,
        Err(Error::NonFiniteField { .. }) | Err(Error::SingularPendulum { .. }) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    let (rollout_error, diverged) = average_rollout_error(field, params, test, steps_per_interval)?;
    let constraint_loss = match held_out {
        Some(p) => Some(crate::constraints::constraint_loss(
            &p.specs, params, &p.omega,
        )?),
        None => None,
    };
    Ok(Evaluation {
        test_loss,
        rollout_error,
        diverged,
        constraint_loss,
    })
}
