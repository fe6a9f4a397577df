//! Constraint programs over model internals and the augmented-Lagrangian
//! machinery that enforces them.
//!
//! A [`ConstraintSpec`] is a family of `components` residuals sharing one
//! kind and one box domain; each (component, collocation point) pair gets its
//! own multiplier.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{ParamVars, ParameterSet};

/// Rows per tape when residuals are evaluated over a whole collocation set.
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    /// residual = 0
    Equality,
    /// residual <= 0
    Inequality,
}

/// Maps a batch of collocation points (rows of state then control columns)
/// to a batch x components residual matrix.
pub type Residual = dyn Fn(&mut Tape, &ParamVars, Var) -> Result<Var> + Send + Sync;

/// Axis-aligned box, one `[lo, hi]` per point coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain {
    pub bounds: Vec<[f64; 2]>,
}

impl BoxDomain {
    pub fn new(bounds: Vec<[f64; 2]>) -> Self {
        Self { bounds }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty() || self.bounds.iter().any(|[lo, hi]| !(lo <= hi))
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point
            .iter()
            .zip(&self.bounds)
            .all(|(v, [lo, hi])| *lo <= *v && *v <= *hi)
    }

    /// Product of the non-degenerate side lengths.
    fn weight(&self) -> f64 {
        self.bounds
            .iter()
            .map(|[lo, hi]| hi - lo)
            .filter(|w| *w > 0.0)
            .product()
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|&[lo, hi]| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
            .collect()
    }
}

#[derive(Clone)]
pub struct ConstraintSpec {
    pub name: String,
    pub kind: ConstraintKind,
    pub components: usize,
    pub domain: BoxDomain,
    pub residual: Arc<Residual>,
}

impl fmt::Debug for ConstraintSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSpec")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("components", &self.components)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

impl ConstraintSpec {
    pub fn new(
        name: impl Into<String>,
        kind: ConstraintKind,
        components: usize,
        domain: BoxDomain,
        residual: Arc<Residual>,
    ) -> Self {
        Self {
            name: name.into(),
            kind,
            components,
            domain,
            residual,
        }
    }

    fn eval(&self, tape: &mut Tape, params: &ParamVars, points: Var) -> Result<Var> {
        let r = (self.residual)(tape, params, points)?;
        let expected = (tape.shape(points).0, self.components);
        if tape.shape(r) != expected {
            return Err(Error::Shape(format!(
                "constraint `{}` returned {:?}, expected {expected:?}",
                self.name,
                tape.shape(r)
            )));
        }
        Ok(r)
    }
}

/// The finite point set at which constraints are enforced.
#[derive(Clone, Debug, PartialEq)]
pub struct CollocationSet {
    /// One point per row.
    pub points: Matrix,
    /// `masks[c][k]`: point `k` lies in the domain of constraint `c`.
    pub masks: Vec<Vec<bool>>,
    pub seed: u64,
}

impl CollocationSet {
    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    /// Points of `indices` that lie in constraint `c`'s domain, with their
    /// positions in the full set.
    fn select(&self, c: usize, indices: &[usize]) -> (Vec<usize>, Matrix) {
        let kept: Vec<usize> = indices
            .iter()
            .copied()
            .filter(|&k| self.masks[c][k])
            .collect();
        let dim = self.points.cols();
        let mut data = Vec::with_capacity(kept.len() * dim);
        for &k in &kept {
            data.extend_from_slice(self.points.row(k));
        }
        let m = Matrix::from_vec(kept.len(), dim, data);
        (kept, m)
    }
}

/// Draws `n_points` uniformly from the union of the constraint domains.
///
/// A box is chosen with probability proportional to its volume, a point is
/// drawn inside it, and the point is kept with probability one over the
/// number of boxes covering it, which makes overlapping unions uniform.
pub fn sample_collocation(
    specs: &[ConstraintSpec],
    n_points: usize,
    seed: u64,
) -> Result<CollocationSet> {
    if n_points == 0 {
        return Err(Error::InvalidArgument(
            "collocation set needs at least one point".into(),
        ));
    }
    if specs.is_empty() {
        return Err(Error::InvalidArgument(
            "no constraint domains to sample".into(),
        ));
    }
    let dim = specs[0].domain.dim();
    for s in specs {
        if s.domain.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "constraint `{}` has an empty domain",
                s.name
            )));
        }
        if s.domain.dim() != dim {
            return Err(Error::Shape(format!(
                "constraint `{}` domain has {} coordinates, expected {dim}",
                s.name,
                s.domain.dim()
            )));
        }
    }
    let weights: Vec<f64> = specs.iter().map(|s| s.domain.weight()).collect();
    let total: f64 = weights.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n_points * dim);
    let mut accepted = 0;
    while accepted < n_points {
        let mut pick = rng.gen_range(0.0..total);
        let mut which = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if pick < *w {
                which = i;
                break;
            }
            pick -= w;
        }
        let point = specs[which].domain.sample(&mut rng);
        let cover = specs.iter().filter(|s| s.domain.contains(&point)).count();
        if cover > 1 && rng.gen_range(0..cover) != 0 {
            continue;
        }
        data.extend_from_slice(&point);
        accepted += 1;
    }
    let points = Matrix::from_vec(n_points, dim, data);
    let masks = specs
        .iter()
        .map(|s| {
            (0..n_points)
                .map(|k| s.domain.contains(points.row(k)))
                .collect()
        })
        .collect();
    Ok(CollocationSet {
        points,
        masks,
        seed,
    })
}

/// Lagrange multipliers and penalty weight.
///
/// `lambdas[c]` is collocation-size x components; entries for points outside
/// constraint `c`'s domain stay zero.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiplierState {
    pub lambdas: Vec<Matrix>,
    pub mu: f64,
}

impl MultiplierState {
    pub fn new(specs: &[ConstraintSpec], omega: &CollocationSet, mu0: f64) -> Self {
        Self {
            lambdas: specs
                .iter()
                .map(|s| Matrix::zeros(omega.len(), s.components))
                .collect(),
            mu: mu0,
        }
    }

    /// Euclidean norm of each constraint's multipliers.
    pub fn norms(&self) -> Vec<f64> {
        self.lambdas
            .iter()
            .map(|l| l.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }
}

/// A set of constraints together with its collocation points.
#[derive(Clone, Debug)]
pub struct ConstraintProgram {
    pub specs: Vec<ConstraintSpec>,
    pub omega: CollocationSet,
}

impl ConstraintProgram {
    pub fn new(specs: Vec<ConstraintSpec>, n_points: usize, seed: u64) -> Result<Self> {
        let omega = sample_collocation(&specs, n_points, seed)?;
        Ok(Self { specs, omega })
    }
}

/// Adds the penalty and multiplier terms for the collocation rows in `batch`
/// to `data_loss`:
///
/// `J + sum_eq (mu r^2 + lambda r) + sum_ineq (mu [lambda > 0 or r > 0] r^2 + lambda r)`.
///
/// The inequality gate is computed from current values and recorded as a
/// constant.
pub fn augmented_lagrangian(
    tape: &mut Tape,
    data_loss: Var,
    specs: &[ConstraintSpec],
    params: &ParamVars,
    omega: &CollocationSet,
    batch: &[usize],
    mult: &MultiplierState,
) -> Result<Var> {
    let mut total = data_loss;
    for (c, spec) in specs.iter().enumerate() {
        let (kept, points) = omega.select(c, batch);
        if kept.is_empty() {
            continue;
        }
        let pts = tape.constant(points);
        let r = spec.eval(tape, params, pts)?;
        let mut lambda = Matrix::zeros(kept.len(), spec.components);
        for (row, &k) in kept.iter().enumerate() {
            for j in 0..spec.components {
                lambda.set(row, j, mult.lambdas[c].get(k, j));
            }
        }
        let quad_base = match spec.kind {
            ConstraintKind::Equality => r,
            ConstraintKind::Inequality => {
                let rv = tape.value(r);
                let gate = lambda.zip_map(rv, |l, v| if l > 0.0 || v > 0.0 { 1.0 } else { 0.0 });
                let gate = tape.constant(gate);
                tape.mul(gate, r)?
            }
        };
        let quad = tape.sum_squares(quad_base)?;
        let quad = tape.scale(quad, mult.mu)?;
        let lam = tape.constant(lambda);
        let lin = tape.mul(lam, r)?;
        let lin = tape.sum(lin)?;
        total = tape.add(total, quad)?;
        total = tape.add(total, lin)?;
    }
    Ok(total)
}

/// Residuals of every constraint at every point of its domain in `omega`,
/// as (positions in omega, rows x components matrix) per constraint.
pub fn residual_values(
    specs: &[ConstraintSpec],
    params: &ParameterSet,
    omega: &CollocationSet,
) -> Result<Vec<(Vec<usize>, Matrix)>> {
    let all: Vec<usize> = (0..omega.len()).collect();
    let mut out = Vec::with_capacity(specs.len());
    for (c, spec) in specs.iter().enumerate() {
        let (kept, _) = omega.select(c, &[]);
        debug_assert!(kept.is_empty());
        let mut positions = Vec::new();
        let mut values = Vec::new();
        for chunk in all.chunks(EVAL_CHUNK) {
            let (kept, points) = omega.select(c, chunk);
            if kept.is_empty() {
                continue;
            }
            let mut tape = Tape::new();
            let vars = params.register(&mut tape);
            let pts = tape.constant(points);
            let r = spec.eval(&mut tape, &vars, pts)?;
            values.extend_from_slice(tape.value(r).as_slice());
            positions.extend(kept);
        }
        let rows = positions.len();
        out.push((positions, Matrix::from_vec(rows, spec.components, values)));
    }
    Ok(out)
}

/// One outer step of the method of multipliers, using residuals over the
/// full collocation set: `lambda += 2 mu r` (clamped at zero for
/// inequalities), then `mu *= mu_mult`.
pub fn update_multipliers(
    specs: &[ConstraintSpec],
    params: &ParameterSet,
    omega: &CollocationSet,
    mult: &MultiplierState,
    mu_mult: f64,
) -> Result<MultiplierState> {
    let residuals = residual_values(specs, params, omega)?;
    Ok(apply_multiplier_update(specs, &residuals, mult, mu_mult))
}

/// Multiplier update from precomputed residuals.
pub fn apply_multiplier_update(
    specs: &[ConstraintSpec],
    residuals: &[(Vec<usize>, Matrix)],
    mult: &MultiplierState,
    mu_mult: f64,
) -> MultiplierState {
    let mut next = mult.clone();
    for (c, spec) in specs.iter().enumerate() {
        let (positions, r) = &residuals[c];
        for (row, &k) in positions.iter().enumerate() {
            for j in 0..spec.components {
                let updated = mult.lambdas[c].get(k, j) + 2.0 * mult.mu * r.get(row, j);
                let updated = match spec.kind {
                    ConstraintKind::Equality => updated,
                    ConstraintKind::Inequality => updated.max(0.0),
                };
                next.lambdas[c].set(k, j, updated);
            }
        }
    }
    next.mu = mult.mu * mu_mult;
    next
}

/// Mean violation over all (residual, point) pairs: `|r|` for equalities,
/// `max(0, r)` for inequalities.
pub fn constraint_loss(
    specs: &[ConstraintSpec],
    params: &ParameterSet,
    omega: &CollocationSet,
) -> Result<f64> {
    let residuals = residual_values(specs, params, omega)?;
    Ok(violation_from_residuals(specs, &residuals))
}

pub fn violation_from_residuals(
    specs: &[ConstraintSpec],
    residuals: &[(Vec<usize>, Matrix)],
) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (spec, (_, r)) in specs.iter().zip(residuals) {
        for &v in r.as_slice() {
            sum += match spec.kind {
                ConstraintKind::Equality => v.abs(),
                ConstraintKind::Inequality => v.max(0.0),
            };
        }
        count += r.len();
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Penalty and multiplier terms of the augmented Lagrangian summed over all of
/// `omega` (plain values, no tape).
pub fn penalty_value(
    specs: &[ConstraintSpec],
    residuals: &[(Vec<usize>, Matrix)],
    mult: &MultiplierState,
) -> f64 {
    let mut total = 0.0;
    for (c, spec) in specs.iter().enumerate() {
        let (positions, r) = &residuals[c];
        for (row, &k) in positions.iter().enumerate() {
            for j in 0..spec.components {
                let v = r.get(row, j);
                let l = mult.lambdas[c].get(k, j);
                let gate = match spec.kind {
                    ConstraintKind::Equality => 1.0,
                    ConstraintKind::Inequality if l > 0.0 || v > 0.0 => 1.0,
                    ConstraintKind::Inequality => 0.0,
                };
                total += mult.mu * gate * v * v + l * v;
            }
        }
    }
    total
}

/// The four symmetries of the pendulum forcing terms, learned by networks 0
/// (first link) and 1 (second link):
///
/// ```text
/// g(a, w) + g(-a, w) = 0      (odd in the angles a)
/// g(a, w) - g(a, -w) = 0      (even in the rates w)
/// ```
///
/// Columns are ordered (g1 odd, g2 odd, g1 even, g2 even).
pub fn pendulum_symmetry(domain: BoxDomain) -> ConstraintSpec {
    let residual: Arc<Residual> = Arc::new(|tape, params, points| {
        let rows = tape.shape(points).0;
        let flip = |angles: f64, rates: f64| {
            let mut m = Matrix::zeros(rows, 4);
            for r in 0..rows {
                m.set(r, 0, angles);
                m.set(r, 1, angles);
                m.set(r, 2, rates);
                m.set(r, 3, rates);
            }
            m
        };
        let angle_flip = tape.constant(flip(-1.0, 1.0));
        let rate_flip = tape.constant(flip(1.0, -1.0));
        let xa = tape.mul(points, angle_flip)?;
        let xr = tape.mul(points, rate_flip)?;
        let mut cols = [None; 4];
        for net in 0..2 {
            let g = params.mlp_forward(tape, net, points)?;
            let ga = params.mlp_forward(tape, net, xa)?;
            let gr = params.mlp_forward(tape, net, xr)?;
            cols[net] = Some(tape.add(g, ga)?);
            cols[net + 2] = Some(tape.sub(g, gr)?);
        }
        let cols: Vec<Var> = cols.into_iter().map(|c| c.expect("filled")).collect();
        Ok(tape.concat_cols(&cols)?)
    });
    ConstraintSpec::new(
        "pendulum-symmetry",
        ConstraintKind::Equality,
        4,
        domain,
        residual,
    )
}

/// `network(x)[output] - bound <= 0` over a box: a generic output bound.
pub fn output_upper_bound(
    network: usize,
    output: usize,
    bound: f64,
    domain: BoxDomain,
) -> ConstraintSpec {
    let residual: Arc<Residual> = Arc::new(move |tape, params, points| {
        let y = params.mlp_forward(tape, network, points)?;
        let col = tape.column(y, output)?;
        Ok(tape.add_const(col, -bound)?)
    });
    ConstraintSpec::new(
        format!("output-bound[{network}.{output}]"),
        ConstraintKind::Inequality,
        1,
        domain,
        residual,
    )
}

/// A constraint on the scalar `network(0)` (the network's bias when it is a
/// single affine layer): `scale * value + offset` compared against zero.
/// Used for small analytic programs.
pub fn scalar_constraint(
    kind: ConstraintKind,
    network: usize,
    scale: f64,
    offset: f64,
) -> ConstraintSpec {
    let residual: Arc<Residual> = Arc::new(move |tape, params, points| {
        let rows = tape.shape(points).0;
        let spec = params.spec(network).ok_or(Error::NetworkIndex {
            index: network,
            count: params.count(),
        })?;
        let zero = tape.constant(Matrix::zeros(rows, spec.input));
        let y = params.mlp_forward(tape, network, zero)?;
        let y = tape.column(y, 0)?;
        let y = tape.scale(y, scale)?;
        Ok(tape.add_const(y, offset)?)
    });
    ConstraintSpec::new(
        format!("scalar[{network}]"),
        kind,
        1,
        BoxDomain::new(vec![[0.0, 0.0]]),
        residual,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpSpec;

    /// One 1 -> 1 affine network; its value at 0 is its bias.
    fn scalar_params(value: f64) -> ParameterSet {
        let mut p = ParameterSet::zeros(&[MlpSpec::relu(1, &[], 1)]).unwrap();
        p.networks_mut()[0].layers[0].bias = Matrix::scalar(value);
        p
    }

    fn unit_box(dim: usize) -> BoxDomain {
        BoxDomain::new(vec![[0.0, 1.0]; dim])
    }

    fn lagrangian_value(
        specs: &[ConstraintSpec],
        params: &ParameterSet,
        omega: &CollocationSet,
        mult: &MultiplierState,
        data: f64,
    ) -> f64 {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let j = tape.scalar(data);
        let batch: Vec<usize> = (0..omega.len()).collect();
        let l = augmented_lagrangian(&mut tape, j, specs, &vars, omega, &batch, mult).unwrap();
        tape.scalar_value(l)
    }

    #[test]
    fn collocation_unit_box() {
        let spec = scalar_constraint(ConstraintKind::Equality, 0, 1.0, 0.0);
        let spec = ConstraintSpec {
            domain: unit_box(4),
            ..spec
        };
        let set = sample_collocation(std::slice::from_ref(&spec), 10_000, 3).unwrap();
        assert_eq!(set.len(), 10_000);
        assert!(set.masks[0].iter().all(|&m| m));
        assert_eq!(set, sample_collocation(&[spec], 10_000, 3).unwrap());
    }

    #[test]
    fn collocation_disjoint_boxes() {
        let base = scalar_constraint(ConstraintKind::Equality, 0, 1.0, 0.0);
        let a = ConstraintSpec {
            domain: BoxDomain::new(vec![[0.0, 1.0], [0.0, 1.0]]),
            ..base.clone()
        };
        let b = ConstraintSpec {
            domain: BoxDomain::new(vec![[2.0, 4.0], [-3.0, -1.0]]),
            ..base
        };
        let set = sample_collocation(&[a, b], 2000, 5).unwrap();
        for k in 0..set.len() {
            assert!(
                set.masks[0][k] ^ set.masks[1][k],
                "point {k} in exactly one box"
            );
        }
        // b has 4x the area of a
        let in_b = set.masks[1].iter().filter(|&&m| m).count() as f64 / 2000.0;
        assert!((in_b - 0.8).abs() < 0.05, "{in_b}");
    }

    #[test]
    fn collocation_errors() {
        let base = scalar_constraint(ConstraintKind::Equality, 0, 1.0, 0.0);
        let empty = ConstraintSpec {
            domain: BoxDomain::new(vec![[1.0, 0.0]]),
            ..base.clone()
        };
        assert!(sample_collocation(&[empty], 10, 0).is_err());
        assert!(sample_collocation(std::slice::from_ref(&base), 0, 0).is_err());
        assert!(sample_collocation(&[], 10, 0).is_err());
    }

    #[test]
    fn no_constraints_returns_data_loss() {
        let omega = CollocationSet {
            points: Matrix::zeros(1, 1),
            masks: vec![],
            seed: 0,
        };
        let mult = MultiplierState {
            lambdas: vec![],
            mu: 1.0,
        };
        assert_eq!(
            lagrangian_value(&[], &scalar_params(0.0), &omega, &mult, 0.75),
            0.75
        );
    }

    #[test]
    fn equality_substitution() {
        // residual = value - 0.5 with value = 1.0 -> 0.5
        let spec = scalar_constraint(ConstraintKind::Equality, 0, 1.0, -0.5);
        let omega = sample_collocation(std::slice::from_ref(&spec), 1, 0).unwrap();
        let mult = MultiplierState::new(std::slice::from_ref(&spec), &omega, 1e-3);
        let v = lagrangian_value(
            std::slice::from_ref(&spec),
            &scalar_params(1.0),
            &omega,
            &mult,
            2.0,
        );
        assert!((v - (2.0 + 1e-3 * 0.25)).abs() < 1e-15);

        let next = update_multipliers(&[spec], &scalar_params(1.0), &omega, &mult, 1.5).unwrap();
        assert!((next.lambdas[0].item() - 1e-3).abs() < 1e-18);
        assert!((next.mu - 1.5e-3).abs() < 1e-18);
    }

    #[test]
    fn inactive_inequality_is_gated_off() {
        let spec = scalar_constraint(ConstraintKind::Inequality, 0, 1.0, 0.0);
        let omega = sample_collocation(std::slice::from_ref(&spec), 1, 0).unwrap();
        let mult = MultiplierState::new(std::slice::from_ref(&spec), &omega, 1.0);
        let v = lagrangian_value(
            std::slice::from_ref(&spec),
            &scalar_params(-0.2),
            &omega,
            &mult,
            1.25,
        );
        assert_eq!(v, 1.25);
        // active: residual 0.3 -> mu r^2
        let v = lagrangian_value(
            std::slice::from_ref(&spec),
            &scalar_params(0.3),
            &omega,
            &mult,
            1.25,
        );
        assert!((v - (1.25 + 0.09)).abs() < 1e-15);
        // tie: lambda = 0 and r = 0 -> gate off
        let v = lagrangian_value(&[spec], &scalar_params(0.0), &omega, &mult, 1.25);
        assert_eq!(v, 1.25);
    }

    #[test]
    fn inequality_multiplier_clamps_at_zero() {
        let spec = scalar_constraint(ConstraintKind::Inequality, 0, 1.0, 0.0);
        let omega = sample_collocation(std::slice::from_ref(&spec), 1, 0).unwrap();
        let mult = MultiplierState::new(std::slice::from_ref(&spec), &omega, 1.0);
        let next = update_multipliers(&[spec], &scalar_params(-1.0), &omega, &mult, 1.5).unwrap();
        assert_eq!(next.lambdas[0].item(), 0.0);
    }

    #[test]
    fn constraint_loss_means() {
        let eq = scalar_constraint(ConstraintKind::Equality, 0, 1.0, 0.0);
        let eq = ConstraintSpec {
            domain: unit_box(1),
            ..eq
        };
        let omega = sample_collocation(std::slice::from_ref(&eq), 50, 0).unwrap();
        assert_eq!(
            constraint_loss(std::slice::from_ref(&eq), &scalar_params(0.0), &omega).unwrap(),
            0.0
        );
        let l = constraint_loss(std::slice::from_ref(&eq), &scalar_params(-0.3), &omega).unwrap();
        assert!((l - 0.3).abs() < 1e-15);
        let ineq = ConstraintSpec {
            kind: ConstraintKind::Inequality,
            ..eq
        };
        assert_eq!(
            constraint_loss(&[ineq], &scalar_params(-0.3), &omega).unwrap(),
            0.0
        );
    }

    #[test]
    fn mu_grows_geometrically() {
        let spec = scalar_constraint(ConstraintKind::Equality, 0, 1.0, 0.0);
        let omega = sample_collocation(std::slice::from_ref(&spec), 1, 0).unwrap();
        let mut mult = MultiplierState::new(std::slice::from_ref(&spec), &omega, 1e-3);
        let p = scalar_params(0.1);
        let mut expected = 1e-3;
        for _ in 0..7 {
            mult = update_multipliers(std::slice::from_ref(&spec), &p, &omega, &mult, 1.5).unwrap();
            expected *= 1.5;
        }
        assert_eq!(mult.mu, expected);
    }

    #[test]
    fn penalty_value_matches_tape() {
        let eq = ConstraintSpec {
            domain: unit_box(1),
            ..scalar_constraint(ConstraintKind::Equality, 0, 2.0, -0.1)
        };
        let ineq = ConstraintSpec {
            domain: unit_box(1),
            ..scalar_constraint(ConstraintKind::Inequality, 0, -1.0, 0.05)
        };
        let specs = vec![eq, ineq];
        let omega = sample_collocation(&specs, 20, 1).unwrap();
        let mut mult = MultiplierState::new(&specs, &omega, 0.7);
        mult.lambdas[0] = Matrix::filled(20, 1, 0.3);
        mult.lambdas[1] = Matrix::filled(20, 1, 0.2);
        let p = scalar_params(0.4);
        let res = residual_values(&specs, &p, &omega).unwrap();
        let plain = penalty_value(&specs, &res, &mult);
        let taped = lagrangian_value(&specs, &p, &omega, &mult, 0.0);
        assert!((plain - taped).abs() < 1e-12, "{plain} vs {taped}");
    }

    #[test]
    fn symmetry_residuals_match_plain_oracle() {
        let specs = [MlpSpec::relu(4, &[6], 1), MlpSpec::relu(4, &[6], 1)];
        let mut params = ParameterSet::init(&specs, 2).unwrap();
        for l in params
            .networks_mut()
            .iter_mut()
            .flat_map(|n| n.layers.iter_mut())
        {
            l.bias = Matrix::filled(1, l.bias.cols(), 0.2);
        }
        let spec = pendulum_symmetry(BoxDomain::new(vec![[-1.0, 1.0]; 4]));
        let omega = sample_collocation(std::slice::from_ref(&spec), 30, 4).unwrap();
        let res = residual_values(std::slice::from_ref(&spec), &params, &omega).unwrap();
        let g = |net: usize, x: &[f64]| {
            params
                .forward_value(net, &Matrix::row_vector(x))
                .unwrap()
                .item()
        };
        for k in 0..omega.len() {
            let x = omega.points.row(k);
            let expected = crate::pendulum::symmetry_residuals(|s| g(0, s), |s| g(1, s), x);
            for (j, want) in expected.iter().enumerate() {
                assert!((res[0].1.get(k, j) - want).abs() < 1e-12);
            }
        }
    }
}
