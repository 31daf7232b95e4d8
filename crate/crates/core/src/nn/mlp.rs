use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Activation;
use crate::{Error, Result};

/// Shape of a multilayer perceptron.
///
/// `layer_dims` has one more entry than there are layers: layer `i` maps
/// `layer_dims[i]` inputs to `layer_dims[i + 1]` outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub residual_flags: Vec<bool>,
}

impl MlpSpec {
    pub fn num_layers(&self) -> usize {
        self.activations.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated spec has dims")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.activations.len();
        if n == 0 {
            return Err(Error::config("MLP needs at least one layer"));
        }
        if self.layer_dims.len() != n + 1 {
            return Err(Error::config(format!(
                "{} activations need {} layer dims, got {}",
                n,
                n + 1,
                self.layer_dims.len()
            )));
        }
        if self.residual_flags.len() != n {
            return Err(Error::config(format!(
                "{} layers need {} residual flags, got {}",
                n,
                n,
                self.residual_flags.len()
            )));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::config("layer dims must be positive"));
        }
        for (i, &res) in self.residual_flags.iter().enumerate() {
            if res && self.layer_dims[i] != self.layer_dims[i + 1] {
                return Err(Error::config(format!(
                    "layer {} is {}->{} and cannot carry a residual skip",
                    i,
                    self.layer_dims[i],
                    self.layer_dims[i + 1]
                )));
            }
        }
        Ok(())
    }
}

/// One fully connected layer, `activation(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out_dim x in_dim`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        let weights = Array2::from_shape_simple_fn((out_dim, in_dim), || dist.sample(rng));
        Self {
            weights,
            bias: Array1::zeros(out_dim),
            activation,
        }
    }

    fn check(&self) -> Result<()> {
        if self.weights.nrows() != self.bias.len() {
            return Err(Error::config(format!(
                "weight rows {} != bias length {}",
                self.weights.nrows(),
                self.bias.len()
            )));
        }
        if !self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::config("layer contains non-finite parameters"));
        }
        Ok(())
    }

    fn pre_activation(&self, input: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = input.dot(&self.weights.t());
        z += &self.bias;
        z
    }
}

/// Values cached by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl ForwardTape {
    pub fn len(&self) -> usize {
        self.pre.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pre.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |a| a.nrows())
    }
}

/// Parameter gradients of an [`Mlp`], laid out like its layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
}

impl MlpGrads {
    /// Flattened in parameter order (per layer: weights row-major, then bias).
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.iter().collect()
    }
}

/// A dense network: its shape plus one [`DenseLayer`] per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<DenseLayer>,
}

impl Mlp {
    /// Randomly initialized network (Glorot-uniform weights, zero biases).
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = (0..spec.num_layers())
            .map(|i| {
                DenseLayer::glorot(
                    spec.layer_dims[i],
                    spec.layer_dims[i + 1],
                    spec.activations[i],
                    rng,
                )
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<DenseLayer>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.num_layers() {
            return Err(Error::config(format!(
                "spec has {} layers but {} were given",
                spec.num_layers(),
                layers.len()
            )));
        }
        for (i, layer) in layers.iter().enumerate() {
            layer.check()?;
            if layer.in_dim() != spec.layer_dims[i] || layer.out_dim() != spec.layer_dims[i + 1] {
                return Err(Error::config(format!(
                    "layer {} is {}->{}, spec says {}->{}",
                    i,
                    layer.in_dim(),
                    layer.out_dim(),
                    spec.layer_dims[i],
                    spec.layer_dims[i + 1]
                )));
            }
            if layer.activation != spec.activations[i] {
                return Err(Error::config(format!("layer {i} activation differs from spec")));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.spec.in_dim() {
            return Err(Error::config(format!(
                "input has {} features, network expects {}",
                input.ncols(),
                self.spec.in_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass over a batch (one sample per row), recording a tape.
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardTape)> {
        self.check_input(&input)?;
        let n = self.layers.len();
        let mut tape = ForwardTape {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            post: Vec::with_capacity(n),
        };
        let mut current = input.to_owned();
        for (layer, &residual) in self.layers.iter().zip(&self.spec.residual_flags) {
            let z = layer.pre_activation(&current.view());
            let act = layer.activation;
            let a = z.mapv(|v| act.apply(v));
            let out = if residual { &a + &current } else { a.clone() };
            tape.inputs.push(current);
            tape.pre.push(z);
            tape.post.push(a);
            current = out;
        }
        Ok((current, tape))
    }

    /// Forward pass without recording a tape.
    pub fn infer(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        let mut current = input.to_owned();
        for (layer, &residual) in self.layers.iter().zip(&self.spec.residual_flags) {
            let act = layer.activation;
            let mut z = layer.pre_activation(&current.view());
            z.mapv_inplace(|v| act.apply(v));
            if residual {
                z += &current;
            }
            current = z;
        }
        Ok(current)
    }

    /// Single-sample convenience wrapper around [`Mlp::infer`].
    pub fn forward_vec(&self, input: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Internal(e.to_string()))?;
        Ok(self.infer(view)?.into_raw_vec_and_offset().0)
    }

    /// Reverse-mode gradients given `d loss / d output` for every sample.
    ///
    /// Returns parameter gradients summed over the batch and the gradient
    /// with respect to the network input.
    pub fn backward(
        &self,
        tape: &ForwardTape,
        upstream: ArrayView2<f64>,
    ) -> Result<(MlpGrads, Array2<f64>)> {
        if tape.len() != self.layers.len() {
            return Err(Error::Internal(format!(
                "tape has {} layers, network has {}",
                tape.len(),
                self.layers.len()
            )));
        }
        if upstream.ncols() != self.spec.out_dim() || upstream.nrows() != tape.batch_size() {
            return Err(Error::Internal(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                upstream.nrows(),
                upstream.ncols(),
                tape.batch_size(),
                self.spec.out_dim()
            )));
        }
        let n = self.layers.len();
        let mut w_grads = Vec::with_capacity(n);
        let mut b_grads = Vec::with_capacity(n);
        let mut g_out = upstream.to_owned();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let act = layer.activation;
            let mut g_pre = g_out.clone();
            Zip::from(&mut g_pre)
                .and(&tape.pre[i])
                .and(&tape.post[i])
                .for_each(|g, &z, &a| *g *= act.derivative(z, a));
            w_grads.push(g_pre.t().dot(&tape.inputs[i]));
            b_grads.push(g_pre.sum_axis(Axis(0)));
            let mut g_in = g_pre.dot(&layer.weights);
            if self.spec.residual_flags[i] {
                g_in += &g_out;
            }
            g_out = g_in;
        }
        w_grads.reverse();
        b_grads.reverse();
        Ok((
            MlpGrads {
                weights: w_grads,
                bias: b_grads,
            },
            g_out,
        ))
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters in gradient order (per layer: weights row-major, then bias).
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    fn locate(&self, mut index: usize) -> (usize, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            let len = l.weights.len() + l.bias.len();
            if index < len {
                return (li, index);
            }
            index -= len;
        }
        panic!("parameter index out of range");
    }

    pub fn param(&self, index: usize) -> f64 {
        let (li, off) = self.locate(index);
        let l = &self.layers[li];
        if off < l.weights.len() {
            l.weights[(off / l.in_dim(), off % l.in_dim())]
        } else {
            l.bias[off - l.weights.len()]
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let (li, off) = self.locate(index);
        let l = &mut self.layers[li];
        let in_dim = l.in_dim();
        if off < l.weights.len() {
            l.weights[(off / in_dim, off % in_dim)] = value;
        } else {
            let nw = l.weights.len();
            l.bias[off - nw] = value;
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRepr {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpRepr {
    spec: MlpSpec,
    layers: Vec<LayerRepr>,
}

impl Serialize for Mlp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = MlpRepr {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerRepr {
                    weights: l.weights.outer_iter().map(|r| r.to_vec()).collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mlp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = MlpRepr::deserialize(d)?;
        repr.spec.validate().map_err(D::Error::custom)?;
        if repr.layers.len() != repr.spec.num_layers() {
            return Err(D::Error::custom("layer count does not match spec"));
        }
        let mut layers = Vec::with_capacity(repr.layers.len());
        for (i, l) in repr.layers.into_iter().enumerate() {
            let rows = l.weights.len();
            let cols = l.weights.first().map_or(0, |r| r.len());
            if l.weights.iter().any(|r| r.len() != cols) {
                return Err(D::Error::custom(format!("layer {i} has ragged weight rows")));
            }
            let flat: Vec<f64> = l.weights.into_iter().flatten().collect();
            let weights = Array2::from_shape_vec((rows, cols), flat).map_err(D::Error::custom)?;
            layers.push(DenseLayer {
                weights,
                bias: Array1::from(l.bias),
                activation: repr.spec.activations[i],
            });
        }
        Mlp::from_layers(repr.spec, layers).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(act: Activation, residual: bool, w: Array2<f64>, b: Array1<f64>) -> Mlp {
        let spec = MlpSpec {
            layer_dims: vec![w.ncols(), w.nrows()],
            activations: vec![act],
            residual_flags: vec![residual],
        };
        Mlp::from_layers(
            spec,
            vec![DenseLayer {
                weights: w,
                bias: b,
                activation: act,
            }],
        )
        .unwrap()
    }

    #[test]
    fn identity_network_passes_input_through() {
        let net = single(Activation::Linear, false, Array2::eye(3), Array1::zeros(3));
        assert_eq!(net.forward_vec(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn zero_residual_layer_is_skip_path() {
        let net = single(Activation::Linear, true, Array2::zeros((3, 3)), Array1::zeros(3));
        assert_eq!(net.forward_vec(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn residual_adds_input_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Array2::from_shape_fn((4, 4), |_| rng.gen_range(-1.0..1.0));
        let b = Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0));
        let plain = single(Activation::Elu, false, w.clone(), b.clone());
        let skip = single(Activation::Elu, true, w, b);
        let x = [0.3, -1.2, 0.7, 2.0];
        let a = plain.forward_vec(&x).unwrap();
        let c = skip.forward_vec(&x).unwrap();
        for i in 0..4 {
            assert_eq!(c[i], a[i] + x[i]);
        }
    }

    #[test]
    fn two_layer_hand_computation() {
        // Layer 0: W = [[1, -1], [0.5, 2]], b = [0.1, -0.2], ELU.
        // Layer 1: W = [[2, -3]], b = [0.5], linear.
        // x = (1, 2):
        //   z0 = (1 - 2 + 0.1, 0.5 + 4 - 0.2) = (-0.9, 4.3)
        //   a0 = (exp(-0.9) - 1, 4.3) = (-0.5934303402594009, 4.3)
        //   y  = 2 * -0.5934303402594009 - 3 * 4.3 + 0.5 = -13.586860680518802
        let spec = MlpSpec {
            layer_dims: vec![2, 2, 1],
            activations: vec![Activation::Elu, Activation::Linear],
            residual_flags: vec![false, false],
        };
        let net = Mlp::from_layers(
            spec,
            vec![
                DenseLayer {
                    weights: array![[1.0, -1.0], [0.5, 2.0]],
                    bias: array![0.1, -0.2],
                    activation: Activation::Elu,
                },
                DenseLayer {
                    weights: array![[2.0, -3.0]],
                    bias: array![0.5],
                    activation: Activation::Linear,
                },
            ],
        )
        .unwrap();
        let y = net.forward_vec(&[1.0, 2.0]).unwrap();
        assert!((y[0] - -13.586_860_680_518_802).abs() < 1e-12);
    }

    #[test]
    fn linear_backward_by_hand() {
        let net = single(Activation::Linear, false, Array2::eye(2), Array1::zeros(2));
        let x = array![[3.0, -1.0]];
        let (_, tape) = net.forward(x.view()).unwrap();
        let g = array![[0.5, 2.0]];
        let (grads, gin) = net.backward(&tape, g.view()).unwrap();
        assert_eq!(gin, g);
        // dW = g^T x
        assert_eq!(grads.weights[0], array![[1.5, -0.5], [6.0, -2.0]]);
        assert_eq!(grads.bias[0], array![0.5, 2.0]);
    }

    #[test]
    fn sigmoid_backward_at_zero_scales_by_quarter() {
        let net = single(Activation::Sigmoid, false, Array2::zeros((1, 1)), Array1::zeros(1));
        let (_, tape) = net.forward(array![[0.7]].view()).unwrap();
        let (grads, _) = net.backward(&tape, array![[2.0]].view()).unwrap();
        assert_eq!(grads.bias[0][0], 0.5);
    }

    #[test]
    fn spec_rejects_bad_residual_and_mismatch() {
        let bad = MlpSpec {
            layer_dims: vec![2, 3],
            activations: vec![Activation::Elu],
            residual_flags: vec![true],
        };
        assert!(bad.validate().is_err());
        let short = MlpSpec {
            layer_dims: vec![2, 3, 4],
            activations: vec![Activation::Elu],
            residual_flags: vec![false],
        };
        assert!(short.validate().is_err());
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = single(Activation::Linear, false, Array2::eye(2), Array1::zeros(2));
        assert!(matches!(
            net.forward(array![[1.0, 2.0, 3.0]].view()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn backward_rejects_wrong_upstream() {
        let net = single(Activation::Linear, false, Array2::eye(2), Array1::zeros(2));
        let (_, tape) = net.forward(array![[1.0, 2.0]].view()).unwrap();
        assert!(matches!(
            net.backward(&tape, array![[1.0]].view()),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn param_indexing_matches_iteration_order() {
        let spec = MlpSpec {
            layer_dims: vec![3, 4, 2],
            activations: vec![Activation::Elu, Activation::Sigmoid],
            residual_flags: vec![false, false],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::new(spec, &mut rng).unwrap();
        let flat: Vec<f64> = net.params().collect();
        assert_eq!(flat.len(), net.num_params());
        for (i, v) in flat.iter().enumerate() {
            assert_eq!(net.param(i), *v);
        }
        net.set_param(13, 42.0);
        assert_eq!(net.params().nth(13), Some(42.0));
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let spec = MlpSpec {
            layer_dims: vec![2, 5, 5, 1],
            activations: vec![Activation::Elu, Activation::Elu, Activation::Softplus],
            residual_flags: vec![false, true, false],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::new(spec, &mut rng).unwrap();
        let text = serde_json::to_string(&net).unwrap();
        let back: Mlp = serde_json::from_str(&text).unwrap();
        assert_eq!(back, net);
    }
}
