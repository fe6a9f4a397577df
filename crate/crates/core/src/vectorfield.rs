//! Compositional vector-field models: known structure with learned terms
//! substituted in.
//!
//! [`BaselineField`] is a single network over state and control.
//! [`K1PendulumField`] keeps the pendulum's kinematic rows and coupling
//! coefficients and learns only the two forcing terms. [`CompositionalField`]
//! is the general form: a list of learned terms, each fed a selection of
//! state/control columns, combined by an arbitrary tape-recorded structure.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{MlpSpec, ParamVars, ParameterSet};
use crate::odeint::VectorField;
use crate::pendulum::{PendulumParams, SINGULARITY_TOLERANCE};

/// Models selectable from a run configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// One network for the whole field.
    Baseline,
    /// Pendulum structure with learned forcing terms.
    K1,
    /// The closed-form reference dynamics; no learned parameters.
    Reference,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::K1 => "k1",
            ModelKind::Reference => "reference",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "baseline" => Some(Self::Baseline),
            "k1" => Some(Self::K1),
            "reference" => Some(Self::Reference),
            _ => None,
        }
    }

    /// Network specs for the double pendulum with two hidden layers of `hidden`.
    pub fn pendulum_specs(self, hidden: usize) -> Vec<MlpSpec> {
        match self {
            ModelKind::Baseline => vec![MlpSpec::relu(4, &[hidden, hidden], 4)],
            ModelKind::K1 => vec![
                MlpSpec::relu(4, &[hidden, hidden], 1),
                MlpSpec::relu(4, &[hidden, hidden], 1),
            ],
            ModelKind::Reference => Vec::new(),
        }
    }

    pub fn pendulum_field(self, params: PendulumParams) -> Box<dyn VectorField + Send + Sync> {
        match self {
            ModelKind::Baseline => Box::new(BaselineField::new(4, 0)),
            ModelKind::K1 => Box::new(K1PendulumField::new(params)),
            ModelKind::Reference => Box::new(ReferencePendulumField::new(params)),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `x' = g(x, u)` with a single learned network (index 0).
#[derive(Clone, Debug)]
pub struct BaselineField {
    state_dim: usize,
    control_dim: usize,
}

impl BaselineField {
    pub fn new(state_dim: usize, control_dim: usize) -> Self {
        Self {
            state_dim,
            control_dim,
        }
    }
}

impl VectorField for BaselineField {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn eval(&self, tape: &mut Tape, params: &ParamVars, x: Var, u: Option<Var>) -> Result<Var> {
        let input = match u {
            Some(u) if self.control_dim > 0 => tape.concat_cols(&[x, u])?,
            _ => x,
        };
        let out = params.mlp_forward(tape, 0, input)?;
        if tape.shape(out).1 != self.state_dim {
            return Err(Error::Shape(format!(
                "baseline network outputs {} columns for a {}-dimensional state",
                tape.shape(out).1,
                self.state_dim
            )));
        }
        Ok(out)
    }
}

/// Assembles the pendulum field from the state and the two forcing terms
/// (each batch x 1): `(dphi1, dphi2, (g1 - a1 g2) / D, (-a2 g1 + g2) / D)`
/// with `D = 1 - a1 a2`.
pub fn pendulum_structure(
    tape: &mut Tape,
    x: Var,
    g1: Var,
    g2: Var,
    p: &PendulumParams,
) -> Result<Var> {
    let phi1 = tape.column(x, 0)?;
    let phi2 = tape.column(x, 1)?;
    let w1 = tape.column(x, 2)?;
    let w2 = tape.column(x, 3)?;
    let diff = tape.sub(phi1, phi2)?;
    let c = tape.cos(diff)?;
    let a1 = tape.scale(c, p.alpha1_coeff())?;
    let a2 = tape.scale(c, p.alpha2_coeff())?;
    let a1a2 = tape.mul(a1, a2)?;
    let neg = tape.neg(a1a2)?;
    let denom = tape.add_const(neg, 1.0)?;
    if let Some(&d) = tape
        .value(denom)
        .as_slice()
        .iter()
        .find(|d| d.abs() < SINGULARITY_TOLERANCE)
    {
        return Err(Error::SingularPendulum { denominator: d });
    }
    let a1g2 = tape.mul(a1, g2)?;
    let num1 = tape.sub(g1, a1g2)?;
    let a2g1 = tape.mul(a2, g1)?;
    let num2 = tape.sub(g2, a2g1)?;
    let acc1 = tape.div(num1, denom)?;
    let acc2 = tape.div(num2, denom)?;
    Ok(tape.concat_cols(&[w1, w2, acc1, acc2])?)
}

/// Closed-form forcing terms recorded on the tape.
pub fn reference_forcing(tape: &mut Tape, x: Var, p: &PendulumParams) -> Result<(Var, Var)> {
    let phi1 = tape.column(x, 0)?;
    let phi2 = tape.column(x, 1)?;
    let w1 = tape.column(x, 2)?;
    let w2 = tape.column(x, 3)?;
    let diff = tape.sub(phi1, phi2)?;
    let sd = tape.sin(diff)?;

    let w2sq = tape.square(w2)?;
    let t = tape.mul(w2sq, sd)?;
    let t = tape.scale(t, -p.l1 / p.l2 * (p.m2 / (p.m1 + p.m2)))?;
    let s1 = tape.sin(phi1)?;
    let grav = tape.scale(s1, p.g / p.l1)?;
    let g1 = tape.sub(t, grav)?;

    let w1sq = tape.square(w1)?;
    let t = tape.mul(w1sq, sd)?;
    let t = tape.scale(t, p.l1 / p.l2)?;
    let s2 = tape.sin(phi2)?;
    let grav = tape.scale(s2, p.g / p.l2)?;
    let g2 = tape.sub(t, grav)?;
    Ok((g1, g2))
}

/// Pendulum structure with `g1`, `g2` learned by networks 0 and 1, each
/// taking the full 4-dimensional state.
#[derive(Clone, Debug)]
pub struct K1PendulumField {
    pub params: PendulumParams,
}

impl K1PendulumField {
    pub fn new(params: PendulumParams) -> Self {
        Self { params }
    }

    /// The two learned forcing terms at the rows of `x`.
    pub fn forcing(&self, tape: &mut Tape, params: &ParamVars, x: Var) -> Result<(Var, Var)> {
        let g1 = params.mlp_forward(tape, 0, x)?;
        let g2 = params.mlp_forward(tape, 1, x)?;
        for g in [g1, g2] {
            if tape.shape(g).1 != 1 {
                return Err(Error::Shape(
                    "k1 forcing networks must output one column".into(),
                ));
            }
        }
        Ok((g1, g2))
    }
}

impl VectorField for K1PendulumField {
    fn state_dim(&self) -> usize {
        4
    }

    fn eval(&self, tape: &mut Tape, params: &ParamVars, x: Var, _u: Option<Var>) -> Result<Var> {
        let (g1, g2) = self.forcing(tape, params, x)?;
        pendulum_structure(tape, x, g1, g2, &self.params)
    }
}

/// The reference pendulum dynamics on the tape.
#[derive(Clone, Debug)]
pub struct ReferencePendulumField {
    pub params: PendulumParams,
}

impl ReferencePendulumField {
    pub fn new(params: PendulumParams) -> Self {
        Self { params }
    }
}

impl VectorField for ReferencePendulumField {
    fn state_dim(&self) -> usize {
        4
    }

    fn eval(&self, tape: &mut Tape, _params: &ParamVars, x: Var, _u: Option<Var>) -> Result<Var> {
        let (g1, g2) = reference_forcing(tape, x, &self.params)?;
        pendulum_structure(tape, x, g1, g2, &self.params)
    }
}

/// A column fed to a learned term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    State(usize),
    Control(usize),
}

/// One learned term: which network, and which columns form its input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LearnedTerm {
    pub network: usize,
    pub inputs: Vec<Feature>,
}

impl LearnedTerm {
    /// A term reading the full state in order.
    pub fn full_state(network: usize, state_dim: usize) -> Self {
        Self {
            network,
            inputs: (0..state_dim).map(Feature::State).collect(),
        }
    }
}

/// Known structure: maps (state, control, learned-term outputs) to the
/// state derivative. Everything it records must stay on the tape.
pub type Structure = dyn Fn(&mut Tape, Var, Option<Var>, &[Var]) -> Result<Var> + Send + Sync;

#[derive(Clone)]
pub struct CompositionalField {
    state_dim: usize,
    control_dim: usize,
    terms: Vec<LearnedTerm>,
    structure: Arc<Structure>,
}

impl fmt::Debug for CompositionalField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompositionalField")
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .field("terms", &self.terms)
            .finish_non_exhaustive()
    }
}

impl CompositionalField {
    /// Validates the wiring against `specs` and probes the structure once at
    /// the origin, so inconsistencies surface here rather than mid-training.
    pub fn build(
        state_dim: usize,
        control_dim: usize,
        terms: Vec<LearnedTerm>,
        specs: &[MlpSpec],
        structure: Arc<Structure>,
    ) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::Shape("state dimension must be positive".into()));
        }
        for (k, term) in terms.iter().enumerate() {
            let spec = specs.get(term.network).ok_or(Error::NetworkIndex {
                index: term.network,
                count: specs.len(),
            })?;
            if spec.input != term.inputs.len() {
                return Err(Error::Shape(format!(
                    "term {k} feeds {} columns to network {} expecting {}",
                    term.inputs.len(),
                    term.network,
                    spec.input
                )));
            }
            for feature in &term.inputs {
                let ok = match *feature {
                    Feature::State(i) => i < state_dim,
                    Feature::Control(i) => i < control_dim,
                };
                if !ok {
                    return Err(Error::Shape(format!(
                        "term {k} reads missing column {feature:?}"
                    )));
                }
            }
        }
        let field = Self {
            state_dim,
            control_dim,
            terms,
            structure,
        };
        let probe_params = ParameterSet::zeros(specs)?;
        let mut tape = Tape::new();
        let vars = probe_params.register(&mut tape);
        let x = tape.constant(Matrix::zeros(1, state_dim));
        let u = (control_dim > 0).then(|| tape.constant(Matrix::zeros(1, control_dim)));
        let out = field.eval(&mut tape, &vars, x, u)?;
        if tape.shape(out) != (1, state_dim) {
            return Err(Error::Shape(format!(
                "structure returns {:?}, expected (1, {state_dim})",
                tape.shape(out)
            )));
        }
        Ok(field)
    }

    /// Identity structure around one full-input network: the baseline model.
    pub fn baseline(state_dim: usize, control_dim: usize, specs: &[MlpSpec]) -> Result<Self> {
        let mut inputs: Vec<Feature> = (0..state_dim).map(Feature::State).collect();
        inputs.extend((0..control_dim).map(Feature::Control));
        Self::build(
            state_dim,
            control_dim,
            vec![LearnedTerm { network: 0, inputs }],
            specs,
            Arc::new(|_, _, _, g| Ok(g[0])),
        )
    }

    pub fn terms(&self) -> &[LearnedTerm] {
        &self.terms
    }

    fn term_input(
        &self,
        tape: &mut Tape,
        term: &LearnedTerm,
        x: Var,
        u: Option<Var>,
    ) -> Result<Var> {
        let identity = term.inputs.len() == self.state_dim
            && term
                .inputs
                .iter()
                .enumerate()
                .all(|(i, f)| *f == Feature::State(i));
        if identity {
            return Ok(x);
        }
        let mut cols = Vec::with_capacity(term.inputs.len());
        for feature in &term.inputs {
            cols.push(match *feature {
                Feature::State(i) => tape.column(x, i)?,
                Feature::Control(i) => {
                    let u = u.ok_or_else(|| {
                        Error::Shape("term reads a control but none given".into())
                    })?;
                    tape.column(u, i)?
                }
            });
        }
        Ok(tape.concat_cols(&cols)?)
    }
}

impl VectorField for CompositionalField {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn eval(&self, tape: &mut Tape, params: &ParamVars, x: Var, u: Option<Var>) -> Result<Var> {
        let mut outputs = Vec::with_capacity(self.terms.len());
        for term in &self.terms {
            let input = self.term_input(tape, term, x, u)?;
            outputs.push(params.mlp_forward(tape, term.network, input)?);
        }
        (self.structure)(tape, x, u, &outputs)
    }
}
