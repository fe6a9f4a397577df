use std::fmt;

use super::matrix::{gemm, Matrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    /// Position of the recording operation on the tape.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Broadcast(Var, usize, usize),
    Scale(Var, f64),
    AddConst(Var, f64),
    Neg(Var),
    Relu(Var),
    MaxZero(Var),
    Sin(Var),
    Cos(Var),
    Square(Var),
    Sum(Var),
    SumSquares(Var),
    Column(Var, usize),
    ConcatCols(Vec<Var>),
}

impl Op {
    fn any_operand(&self, f: impl Fn(Var) -> bool) -> bool {
        match self {
            Op::Input | Op::Constant => false,
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatMul(a, b)
            | Op::AddRow(a, b) => f(*a) || f(*b),
            Op::Broadcast(a, ..)
            | Op::Scale(a, _)
            | Op::AddConst(a, _)
            | Op::Neg(a)
            | Op::Relu(a)
            | Op::MaxZero(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::SumSquares(a)
            | Op::Column(a, _) => f(*a),
            Op::ConcatCols(parts) => parts.iter().any(|p| f(*p)),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Broadcast(..) => "broadcast",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::Neg(..) => "neg",
            Op::Relu(..) => "relu",
            Op::MaxZero(..) => "max_zero",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::SumSquares(..) => "sum_squares",
            Op::Column(..) => "column",
            Op::ConcatCols(..) => "concat_cols",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AutodiffError {
    ShapeMismatch {
        op_index: usize,
        op: &'static str,
        detail: String,
    },
    InputCount {
        expected: usize,
        got: usize,
    },
    BackwardBeforeForward,
    SeedShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    NonFiniteGradient {
        op_index: usize,
        op: &'static str,
    },
    NonScalarOutput {
        shape: (usize, usize),
    },
    InvalidStep(f64),
}

impl fmt::Display for AutodiffError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeMismatch {
                op_index,
                op,
                detail,
            } => {
                write!(
                    f,
                    "shape mismatch in {op} at operation {op_index}: {detail}"
                )
            }
            Self::InputCount { expected, got } => {
                write!(f, "tape expects {expected} inputs, got {got}")
            }
            Self::BackwardBeforeForward => {
                write!(f, "backward called before forward on a modified tape")
            }
            Self::SeedShape { expected, got } => write!(
                f,
                "seed shape {}x{} does not match root shape {}x{}",
                got.0, got.1, expected.0, expected.1
            ),
            Self::NonFiniteGradient { op_index, op } => {
                write!(
                    f,
                    "non-finite gradient while propagating through {op} at operation {op_index}"
                )
            }
            Self::NonScalarOutput { shape } => {
                write!(f, "expected scalar output, got {}x{}", shape.0, shape.1)
            }
            Self::InvalidStep(h) => write!(f, "finite-difference step must be positive, got {h}"),
        }
    }
}

impl std::error::Error for AutodiffError {}

pub type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Matrix,
    /// Depends on at least one input; constants and their descendants get no adjoint.
    needs_grad: bool,
}

/// Wengert list of matrix operations. Values are computed eagerly as
/// operations are recorded, so record order is a topological order.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    inputs: Vec<Var>,
    stale: bool,
}

/// Adjoints for every node of a tape after a backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    shapes: Vec<(usize, usize)>,
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`; zeros when `var` does not
    /// influence the root.
    pub fn get(&self, var: Var) -> Matrix {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn get_ref(&self, var: Var) -> Option<&Matrix> {
        self.grads[var.0].as_ref()
    }
}

fn mismatch(op_index: usize, op: &Op, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op_index,
        op: op.name(),
        detail,
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Which side of its kink every `relu`/`max_zero` input element lies on,
    /// in record order. Two evaluations of the same graph with equal
    /// patterns lie in the same smooth piece.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) | Op::MaxZero(a) = node.op {
                out.extend(self.nodes[a.0].value.as_slice().iter().map(|v| *v > 0.0));
            }
        }
        out
    }

    /// Drops every recorded operation.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.inputs.clear();
        self.stale = false;
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.shape()
    }

    pub fn scalar_value(&self, var: Var) -> f64 {
        self.nodes[var.0].value.item()
    }

    /// Registers a replaceable input leaf. Inputs are numbered in
    /// registration order for [`Tape::forward`].
    pub fn input(&mut self, value: Matrix) -> Var {
        let var = self.push_node(Op::Input, value);
        self.inputs.push(var);
        var
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_node(Op::Constant, value)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Matrix::scalar(value))
    }

    pub fn inputs(&self) -> &[Var] {
        &self.inputs
    }

    /// Replaces an input's value. The tape must be replayed with
    /// [`Tape::forward`] before the next backward pass.
    pub fn set_input(&mut self, var: Var, value: Matrix) -> Result<()> {
        let node = &mut self.nodes[var.0];
        if node.value.shape() != value.shape() {
            return Err(mismatch(
                var.0,
                &node.op,
                format!(
                    "input replaced with {:?}, recorded {:?}",
                    value.shape(),
                    node.value.shape()
                ),
            ));
        }
        node.value = value;
        self.stale = true;
        Ok(())
    }

    fn push_node(&mut self, op: Op, value: Matrix) -> Var {
        let needs_grad = match op {
            Op::Input => true,
            Op::Constant => false,
            _ => op.any_operand(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let index = self.nodes.len();
        let value = self.compute(index, &op)?;
        Ok(self.push_node(op, value))
    }

    fn compute(&self, index: usize, op: &Op) -> Result<Matrix> {
        let v = |var: &Var| &self.nodes[var.0].value;
        let same = |a: &Var, b: &Var| -> Result<()> {
            if v(a).shape() != v(b).shape() {
                return Err(mismatch(
                    index,
                    op,
                    format!("{:?} vs {:?}", v(a).shape(), v(b).shape()),
                ));
            }
            Ok(())
        };
        let out = match op {
            Op::Input | Op::Constant => v(&Var(index)).clone(),
            Op::Add(a, b) => {
                same(a, b)?;
                v(a).zip_map(v(b), |x, y| x + y)
            }
            Op::Sub(a, b) => {
                same(a, b)?;
                v(a).zip_map(v(b), |x, y| x - y)
            }
            Op::Mul(a, b) => {
                same(a, b)?;
                v(a).zip_map(v(b), |x, y| x * y)
            }
            Op::Div(a, b) => {
                same(a, b)?;
                v(a).zip_map(v(b), |x, y| x / y)
            }
            Op::MatMul(a, b) => {
                if v(a).cols() != v(b).rows() {
                    return Err(mismatch(
                        index,
                        op,
                        format!("{:?} x {:?}", v(a).shape(), v(b).shape()),
                    ));
                }
                gemm(v(a), false, v(b), false)
            }
            Op::AddRow(a, row) => {
                let (m, r) = (v(a), v(row));
                if r.rows() != 1 || r.cols() != m.cols() {
                    return Err(mismatch(
                        index,
                        op,
                        format!("row {:?} onto {:?}", r.shape(), m.shape()),
                    ));
                }
                let row = r.as_slice();
                let mut data = Vec::with_capacity(m.len());
                for chunk in m.as_slice().chunks_exact(m.cols().max(1)) {
                    data.extend(chunk.iter().zip(row).map(|(x, b)| x + b));
                }
                Matrix::from_vec(m.rows(), m.cols(), data)
            }
            Op::Broadcast(s, rows, cols) => {
                if v(s).shape() != (1, 1) {
                    return Err(mismatch(
                        index,
                        op,
                        format!("broadcast source {:?}", v(s).shape()),
                    ));
                }
                Matrix::filled(*rows, *cols, v(s).item())
            }
            Op::Scale(a, c) => v(a).scale(*c),
            Op::AddConst(a, c) => v(a).map(|x| x + c),
            Op::Neg(a) => v(a).map(|x| -x),
            Op::Relu(a) | Op::MaxZero(a) => v(a).map(|x| if x > 0.0 { x } else { 0.0 }),
            Op::Sin(a) => v(a).map(f64::sin),
            Op::Cos(a) => v(a).map(f64::cos),
            Op::Square(a) => v(a).map(|x| x * x),
            Op::Sum(a) => Matrix::scalar(v(a).sum()),
            Op::SumSquares(a) => Matrix::scalar(v(a).as_slice().iter().map(|x| x * x).sum()),
            Op::Column(a, j) => {
                if *j >= v(a).cols() {
                    return Err(mismatch(
                        index,
                        op,
                        format!("column {j} of {:?}", v(a).shape()),
                    ));
                }
                v(a).column(*j)
            }
            Op::ConcatCols(parts) => {
                let rows = parts.first().map_or(0, |p| v(p).rows());
                if parts.iter().any(|p| v(p).rows() != rows) {
                    let shapes: Vec<_> = parts.iter().map(|p| v(p).shape()).collect();
                    return Err(mismatch(
                        index,
                        op,
                        format!("row counts differ: {shapes:?}"),
                    ));
                }
                let cols: usize = parts.iter().map(|p| v(p).cols()).sum();
                let mut out = Matrix::zeros(rows, cols);
                let mut offset = 0;
                for p in parts {
                    let pm = v(p);
                    for r in 0..rows {
                        for c in 0..pm.cols() {
                            out.set(r, offset + c, pm.get(r, c));
                        }
                    }
                    offset += pm.cols();
                }
                out
            }
        };
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Div(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }

    /// Adds a 1xk row to every row of an nxk matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.record(Op::AddRow(a, row))
    }

    /// Expands a 1x1 value to a `rows`x`cols` matrix.
    pub fn broadcast(&mut self, scalar: Var, rows: usize, cols: usize) -> Result<Var> {
        self.record(Op::Broadcast(scalar, rows, cols))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.record(Op::Scale(a, factor))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        self.record(Op::AddConst(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Neg(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Relu(a))
    }

    /// `max(0, a)`, the hinge used for inequality violations.
    pub fn max_zero(&mut self, a: Var) -> Result<Var> {
        self.record(Op::MaxZero(a))
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Cos(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Square(a))
    }

    /// Sum of all entries, as a 1x1 value.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sum(a))
    }

    /// Squared Frobenius norm, as a 1x1 value.
    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        self.record(Op::SumSquares(a))
    }

    pub fn column(&mut self, a: Var, col: usize) -> Result<Var> {
        self.record(Op::Column(a, col))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        self.record(Op::ConcatCols(parts.to_vec()))
    }

    /// Replays every recorded operation with new input values, in input
    /// registration order. Returns the value of the last recorded node.
    pub fn forward(&mut self, inputs: &[Matrix]) -> Result<&Matrix> {
        if inputs.len() != self.inputs.len() {
            return Err(AutodiffError::InputCount {
                expected: self.inputs.len(),
                got: inputs.len(),
            });
        }
        for (slot, value) in inputs.iter().enumerate() {
            let var = self.inputs[slot];
            let recorded = self.nodes[var.0].value.shape();
            if recorded != value.shape() {
                return Err(mismatch(
                    var.0,
                    &self.nodes[var.0].op,
                    format!(
                        "input {slot} given {:?}, recorded {recorded:?}",
                        value.shape()
                    ),
                ));
            }
            self.nodes[var.0].value = value.clone();
        }
        self.replay()?;
        self.nodes
            .last()
            .map(|n| &n.value)
            .ok_or(AutodiffError::BackwardBeforeForward)
    }

    /// Recomputes every non-leaf node from the current leaf values.
    pub fn replay(&mut self) -> Result<()> {
        for index in 0..self.nodes.len() {
            if matches!(self.nodes[index].op, Op::Input | Op::Constant) {
                continue;
            }
            let value = self.compute(index, &self.nodes[index].op)?;
            self.nodes[index].value = value;
        }
        self.stale = false;
        Ok(())
    }

    /// Propagates `seed` (the adjoint of `root`) back to every node.
    pub fn backward(&self, root: Var, seed: &Matrix) -> Result<Gradients> {
        if self.stale || self.nodes.is_empty() {
            return Err(AutodiffError::BackwardBeforeForward);
        }
        let root_shape = self.shape(root);
        if root_shape != seed.shape() {
            return Err(AutodiffError::SeedShape {
                expected: root_shape,
                got: seed.shape(),
            });
        }
        if !seed.all_finite() {
            return Err(AutodiffError::NonFiniteGradient {
                op_index: root.0,
                op: self.nodes[root.0].op.name(),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        if self.nodes[root.0].needs_grad {
            grads[root.0] = Some(seed.clone());
        }

        fn accumulate(grads: &mut [Option<Matrix>], var: Var, g: Matrix) {
            match &mut grads[var.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        let mut pending: Vec<(Var, Matrix)> = Vec::with_capacity(4);
        for index in (0..=root.0).rev() {
            let Some(g) = grads[index].take() else {
                continue;
            };
            let node = &self.nodes[index];
            let val = |v: &Var| &self.nodes[v.0].value;
            let need = |v: &Var| self.nodes[v.0].needs_grad;
            let mut push = |v: Var, m: Matrix| {
                if self.nodes[v.0].needs_grad {
                    pending.push((v, m));
                }
            };
            match &node.op {
                Op::Input | Op::Constant => {}
                Op::Add(a, b) => {
                    push(*a, g.clone());
                    push(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    if need(b) {
                        push(*b, g.map(|x| -x));
                    }
                    push(*a, g.clone());
                }
                Op::Mul(a, b) => {
                    if need(a) {
                        push(*a, g.zip_map(val(b), |x, y| x * y));
                    }
                    if need(b) {
                        push(*b, g.zip_map(val(a), |x, y| x * y));
                    }
                }
                Op::Div(a, b) => {
                    let da = g.zip_map(val(b), |x, y| x / y);
                    if need(b) {
                        push(*b, da.zip_map(&node.value, |x, q| -x * q));
                    }
                    push(*a, da);
                }
                Op::MatMul(a, b) => {
                    if need(a) {
                        push(*a, gemm(&g, false, val(b), true));
                    }
                    if need(b) {
                        push(*b, gemm(val(a), true, &g, false));
                    }
                }
                Op::AddRow(a, row) => {
                    if need(row) {
                        let cols = g.cols();
                        let mut dr = vec![0.0; cols];
                        for r in 0..g.rows() {
                            for (acc, x) in dr.iter_mut().zip(g.row(r)) {
                                *acc += x;
                            }
                        }
                        push(*row, Matrix::from_vec(1, cols, dr));
                    }
                    push(*a, g.clone());
                }
                Op::Broadcast(s, ..) => push(*s, Matrix::scalar(g.sum())),
                Op::Scale(a, c) => push(*a, g.scale(*c)),
                Op::AddConst(a, _) => push(*a, g.clone()),
                Op::Neg(a) => push(*a, g.map(|x| -x)),
                Op::Relu(a) | Op::MaxZero(a) => {
                    let d = g.zip_map(&node.value, |x, y| if y > 0.0 { x } else { 0.0 });
                    push(*a, d);
                }
                Op::Sin(a) => push(*a, g.zip_map(val(a), |x, y| x * y.cos())),
                Op::Cos(a) => push(*a, g.zip_map(val(a), |x, y| -x * y.sin())),
                Op::Square(a) => push(*a, g.zip_map(val(a), |x, y| 2.0 * x * y)),
                Op::Sum(a) => {
                    let (r, c) = val(a).shape();
                    push(*a, Matrix::filled(r, c, g.item()));
                }
                Op::SumSquares(a) => {
                    let s = 2.0 * g.item();
                    push(*a, val(a).scale(s));
                }
                Op::Column(a, j) => {
                    let (r, c) = val(a).shape();
                    let mut d = Matrix::zeros(r, c);
                    for i in 0..r {
                        d.set(i, *j, g.get(i, 0));
                    }
                    push(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (r, c) = val(p).shape();
                        let mut d = Matrix::zeros(r, c);
                        for i in 0..r {
                            for k in 0..c {
                                d.set(i, k, g.get(i, offset + k));
                            }
                        }
                        offset += c;
                        push(*p, d);
                    }
                }
            }
            for (var, contribution) in pending.drain(..) {
                if !contribution.all_finite() {
                    return Err(AutodiffError::NonFiniteGradient {
                        op_index: index,
                        op: node.op.name(),
                    });
                }
                accumulate(&mut grads, var, contribution);
            }
            // Leaves keep their adjoint; interior adjoints are no longer needed.
            if matches!(node.op, Op::Input | Op::Constant) {
                grads[index] = Some(g);
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { shapes, grads })
    }

    /// Backward pass from a scalar root with seed 1.
    pub fn grad(&self, root: Var) -> Result<Gradients> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarOutput { shape });
        }
        self.backward(root, &Matrix::scalar(1.0))
    }
}
