//! Multilayer perceptrons for the learned terms of a vector field.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, GradientCheck, Gradients, Matrix, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub output: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn relu(input: usize, hidden: &[usize], output: usize) -> Self {
        Self {
            input,
            output,
            hidden: hidden.to_vec(),
            activation: Activation::Relu,
        }
    }

    /// (fan_in, fan_out) for every affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input);
        widths.extend_from_slice(&self.hidden);
        widths.push(self.output);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || self.hidden.contains(&0) {
            return Err(Error::Shape(format!("zero-width layer in {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// fan_in x fan_out, applied as `x W + b`.
    pub weight: Matrix,
    /// 1 x fan_out.
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: MlpSpec,
    pub layers: Vec<Layer>,
}

/// All learned-term parameters, one network per term.
///
/// The flat view orders networks, then layers, then each layer's weight
/// (row-major) followed by its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    networks: Vec<Network>,
}

impl ParameterSet {
    /// Uniform Glorot initialization with zero biases, deterministic per seed.
    pub fn init(specs: &[MlpSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut networks = Vec::with_capacity(specs.len());
        for spec in specs {
            spec.validate()?;
            let layers = spec
                .layer_dims()
                .into_iter()
                .map(|(fan_in, fan_out)| {
                    let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let w = (0..fan_in * fan_out)
                        .map(|_| rng.gen_range(-scale..scale))
                        .collect();
                    Layer {
                        weight: Matrix::from_vec(fan_in, fan_out, w),
                        bias: Matrix::zeros(1, fan_out),
                    }
                })
                .collect();
            networks.push(Network {
                spec: spec.clone(),
                layers,
            });
        }
        Ok(Self { networks })
    }

    pub fn zeros(specs: &[MlpSpec]) -> Result<Self> {
        let mut set = Self::init(specs, 0)?;
        for v in set.networks.iter_mut().flat_map(|n| n.layers.iter_mut()) {
            v.weight = Matrix::zeros(v.weight.rows(), v.weight.cols());
        }
        Ok(set)
    }

    pub fn empty() -> Self {
        Self {
            networks: Vec::new(),
        }
    }

    pub fn specs(&self) -> Vec<MlpSpec> {
        self.networks.iter().map(|n| n.spec.clone()).collect()
    }

    pub fn networks(&self) -> &[Network] {
        &self.networks
    }

    pub fn networks_mut(&mut self) -> &mut [Network] {
        &mut self.networks
    }

    /// Number of learned terms.
    pub fn count(&self) -> usize {
        self.networks.len()
    }

    pub fn len(&self) -> usize {
        self.networks.iter().map(|n| n.spec.parameter_count()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for layer in self.networks.iter().flat_map(|n| &n.layers) {
            out.extend_from_slice(layer.weight.as_slice());
            out.extend_from_slice(layer.bias.as_slice());
        }
        out
    }

    pub fn from_flat(specs: &[MlpSpec], flat: &[f64]) -> Result<Self> {
        let expected: usize = specs.iter().map(MlpSpec::parameter_count).sum();
        if flat.len() != expected {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} entries, specs need {expected}",
                flat.len()
            )));
        }
        let mut set = Self::zeros(specs)?;
        set.assign_flat(flat);
        Ok(set)
    }

    /// Overwrites every parameter from a flat vector of matching length.
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len(), "flat parameter length");
        let mut offset = 0;
        for layer in self.networks.iter_mut().flat_map(|n| n.layers.iter_mut()) {
            for m in [&mut layer.weight, &mut layer.bias] {
                let n = m.len();
                m.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
                offset += n;
            }
        }
    }

    /// Records every weight and bias as a tape input.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let layers = self
            .networks
            .iter()
            .map(|n| {
                n.layers
                    .iter()
                    .map(|l| (tape.input(l.weight.clone()), tape.input(l.bias.clone())))
                    .collect()
            })
            .collect();
        ParamVars {
            specs: self.specs(),
            layers,
        }
    }

    /// Plain evaluation of one network without a tape.
    pub fn forward_value(&self, network: usize, input: &Matrix) -> Result<Matrix> {
        let net = self.networks.get(network).ok_or(Error::NetworkIndex {
            index: network,
            count: self.networks.len(),
        })?;
        check_width(&net.spec, input.cols())?;
        let mut h = input.clone();
        let last = net.layers.len() - 1;
        for (i, layer) in net.layers.iter().enumerate() {
            let mut z = h.matmul(&layer.weight);
            let cols = z.cols();
            for (k, v) in z.as_mut_slice().iter_mut().enumerate() {
                *v += layer.bias.as_slice()[k % cols];
                if i < last && *v <= 0.0 {
                    *v = 0.0;
                }
            }
            h = z;
        }
        Ok(h)
    }
}

fn check_width(spec: &MlpSpec, width: usize) -> Result<()> {
    if width != spec.input {
        return Err(Error::Shape(format!(
            "network expects input width {}, got {width}",
            spec.input
        )));
    }
    Ok(())
}

/// Compares tape gradients of a scalar loss with respect to every parameter
/// against central differences of the flat parameter vector.
pub fn check_parameter_gradient<F>(
    params: &ParameterSet,
    step: f64,
    loss: F,
) -> Result<GradientCheck>
where
    F: Fn(&mut Tape, &ParamVars) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(AutodiffError::InvalidStep(step).into());
    }
    let eval = |p: &ParameterSet| -> Result<(f64, Vec<bool>)> {
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let out = loss(&mut tape, &vars)?;
        let shape = tape.shape(out);
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarOutput { shape }.into());
        }
        Ok((tape.scalar_value(out), tape.kink_pattern()))
    };
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let out = loss(&mut tape, &vars)?;
    let ad = vars.flat_gradient(&tape.grad(out)?);
    let pattern = tape.kink_pattern();

    let mut flat = params.to_flat();
    let mut probe = params.clone();
    let mut result = GradientCheck::new();
    for k in 0..flat.len() {
        let original = flat[k];
        flat[k] = original + step;
        probe.assign_flat(&flat);
        let (plus, plus_pattern) = eval(&probe)?;
        flat[k] = original - step;
        probe.assign_flat(&flat);
        let (minus, minus_pattern) = eval(&probe)?;
        flat[k] = original;
        let fd = (plus - minus) / (2.0 * step);
        let smooth = plus_pattern == pattern && minus_pattern == pattern;
        result.record((0, k), ad[k], fd, smooth);
    }
    Ok(result)
}

/// Tape handles for a registered [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    specs: Vec<MlpSpec>,
    layers: Vec<Vec<(Var, Var)>>,
}

impl ParamVars {
    pub fn count(&self) -> usize {
        self.specs.len()
    }

    pub fn spec(&self, network: usize) -> Option<&MlpSpec> {
        self.specs.get(network)
    }

    /// Applies network `network` to the rows of `input` (batch x input width).
    pub fn mlp_forward(&self, tape: &mut Tape, network: usize, input: Var) -> Result<Var> {
        let spec = self.specs.get(network).ok_or(Error::NetworkIndex {
            index: network,
            count: self.specs.len(),
        })?;
        check_width(spec, tape.shape(input).1)?;
        let layers = &self.layers[network];
        let mut h = input;
        for (i, &(w, b)) in layers.iter().enumerate() {
            let z = tape.matmul(h, w)?;
            h = tape.add_row(z, b)?;
            if i + 1 < layers.len() {
                h = match spec.activation {
                    Activation::Relu => tape.relu(h)?,
                };
            }
        }
        Ok(h)
    }

    /// Gathers parameter gradients in flat order.
    pub fn flat_gradient(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for &(w, b) in self.layers.iter().flatten() {
            out.extend_from_slice(grads.get(w).as_slice());
            out.extend_from_slice(grads.get(b).as_slice());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let specs = [MlpSpec::relu(4, &[16, 16], 2)];
        let a = ParameterSet::init(&specs, 7).unwrap();
        let b = ParameterSet::init(&specs, 7).unwrap();
        let fa: Vec<u64> = a.to_flat().iter().map(|v| v.to_bits()).collect();
        let fb: Vec<u64> = b.to_flat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(fa, fb);
        assert_ne!(a, ParameterSet::init(&specs, 8).unwrap());
        for layer in &a.networks()[0].layers {
            assert!(layer.bias.as_slice().iter().all(|&v| v == 0.0));
            let s = (6.0 / (layer.weight.rows() + layer.weight.cols()) as f64).sqrt();
            assert!(layer.weight.max_abs() <= s);
        }
    }

    #[test]
    fn parameter_count_closed_form() {
        let spec = MlpSpec::relu(4, &[128, 128], 2);
        assert_eq!(
            spec.parameter_count(),
            4 * 128 + 128 + 128 * 128 + 128 + 128 * 2 + 2
        );
        assert_eq!(spec.parameter_count(), 17410);
        let set = ParameterSet::init(&[spec.clone(), MlpSpec::relu(4, &[8], 1)], 1).unwrap();
        assert_eq!(set.len(), 17410 + (4 * 8 + 8 + 8 + 1));
        assert_eq!(set.to_flat().len(), set.len());
    }

    #[test]
    fn zero_width_rejected() {
        assert!(ParameterSet::init(&[MlpSpec::relu(4, &[0], 1)], 0).is_err());
        assert!(ParameterSet::init(&[MlpSpec::relu(0, &[3], 1)], 0).is_err());
    }

    #[test]
    fn zero_network_maps_to_zero() {
        let set = ParameterSet::zeros(&[MlpSpec::relu(3, &[5, 5], 2)]).unwrap();
        let mut t = Tape::new();
        let vars = set.register(&mut t);
        let x = t.constant(Matrix::from_rows(&[
            vec![1.0, -2.0, 3.0],
            vec![0.5, 0.5, 0.5],
        ]));
        let y = vars.mlp_forward(&mut t, 0, x).unwrap();
        assert_eq!(t.value(y), &Matrix::zeros(2, 2));
    }

    #[test]
    fn identity_linear_layer() {
        let spec = MlpSpec::relu(3, &[], 3);
        let mut set = ParameterSet::zeros(&[spec]).unwrap();
        set.networks_mut()[0].layers[0].weight = Matrix::identity(3);
        let v = Matrix::row_vector(&[0.3, -4.0, 2.5]);
        assert_eq!(set.forward_value(0, &v).unwrap(), v);
        let mut t = Tape::new();
        let vars = set.register(&mut t);
        let x = t.constant(v.clone());
        let y = vars.mlp_forward(&mut t, 0, x).unwrap();
        assert_eq!(t.value(y), &v);
    }

    #[test]
    fn hand_computed_two_layer_net() {
        // 2 -> 2 -> 1 net on input (1, -1).
        let mut set = ParameterSet::zeros(&[MlpSpec::relu(2, &[2], 1)]).unwrap();
        let layers = &mut set.networks_mut()[0].layers;
        layers[0].weight = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]]);
        layers[0].bias = Matrix::row_vector(&[0.5, -0.5]);
        layers[1].weight = Matrix::from_rows(&[vec![2.0], vec![-3.0]]);
        layers[1].bias = Matrix::row_vector(&[0.25]);
        // pre-activation: (1 - 3 + 0.5, 2 + 1 - 0.5) = (-1.5, 2.5) -> relu (0, 2.5)
        // output: 0 * 2 + 2.5 * -3 + 0.25 = -7.25
        let y = set
            .forward_value(0, &Matrix::row_vector(&[1.0, -1.0]))
            .unwrap();
        assert_eq!(y.item(), -7.25);
    }

    #[test]
    fn errors_on_bad_index_and_width() {
        let set = ParameterSet::init(&[MlpSpec::relu(3, &[4], 1)], 0).unwrap();
        let mut t = Tape::new();
        let vars = set.register(&mut t);
        let x = t.constant(Matrix::zeros(1, 3));
        assert!(matches!(
            vars.mlp_forward(&mut t, 1, x),
            Err(Error::NetworkIndex { index: 1, count: 1 })
        ));
        let bad = t.constant(Matrix::zeros(1, 2));
        assert!(matches!(
            vars.mlp_forward(&mut t, 0, bad),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn last_layer_homogeneity() {
        let mut set = ParameterSet::init(&[MlpSpec::relu(3, &[6, 6], 2)], 3).unwrap();
        for l in &mut set.networks_mut()[0].layers {
            l.bias = Matrix::filled(1, l.bias.cols(), 0.1);
        }
        let x = Matrix::from_rows(&[vec![0.2, -0.7, 1.1], vec![-1.0, 0.4, 0.0]]);
        let y = set.forward_value(0, &x).unwrap();
        let last = set.networks_mut()[0].layers.last_mut().unwrap();
        last.weight = last.weight.scale(2.0);
        last.bias = last.bias.scale(2.0);
        let y2 = set.forward_value(0, &x).unwrap();
        assert_eq!(y2, y.scale(2.0));
    }

    #[test]
    fn flat_round_trip() {
        let specs = [MlpSpec::relu(2, &[3], 2), MlpSpec::relu(4, &[2, 2], 1)];
        let set = ParameterSet::init(&specs, 11).unwrap();
        let back = ParameterSet::from_flat(&specs, &set.to_flat()).unwrap();
        assert_eq!(back, set);
        assert!(ParameterSet::from_flat(&specs, &[0.0; 3]).is_err());
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut set = ParameterSet::init(&[MlpSpec::relu(3, &[8, 8], 2)], 5).unwrap();
        for (i, l) in set.networks_mut()[0].layers.iter_mut().enumerate() {
            l.bias = Matrix::filled(1, l.bias.cols(), 0.05 * (i as f64 + 1.0));
        }
        let x = Matrix::from_rows(&[vec![0.3, -0.8, 1.2], vec![-0.5, 0.9, 0.1]]);
        let check = check_parameter_gradient(&set, 1e-5, |t, vars| {
            let xin = t.constant(x.clone());
            let y = vars.mlp_forward(t, 0, xin)?;
            let s = t.sin(y)?;
            Ok(t.sum(s)?)
        })
        .unwrap();
        assert!(check.max_relative_error < 1e-5, "{check:?}");
        assert_eq!(check.coordinates, set.len());
    }
}
