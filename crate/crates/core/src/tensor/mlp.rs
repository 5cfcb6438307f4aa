use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::kernels::axpy;
use super::tape::{Gradients, Tape, Unary, Var};
use super::{Tensor, TensorError};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => math::sigmoid(x),
            Activation::Softplus => math::softplus(x),
        }
    }

    fn record(self, tape: &mut Tape, x: Var) -> Var {
        let f = match self {
            Activation::Identity => return x,
            Activation::Relu => Unary::Relu,
            Activation::Sigmoid => Unary::Sigmoid,
            Activation::Softplus => Unary::Softplus,
        };
        tape.unary(f, x).expect("activations are total")
    }
}

/// Affine map `x·W + b` followed by an activation. `W` is `in×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

/// Tape handles for one bound [`Layer`].
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self, TensorError> {
        let (_, out) = weight.dims2()?;
        let (br, bc) = bias.dims2()?;
        if br != 1 || bc != out {
            return Err(TensorError::Shape {
                op: "layer",
                lhs: weight.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// Uniform Glorot initialisation with zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
        let w = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            weight: Tensor::matrix(fan_in, fan_out, w),
            bias: Tensor::zeros(1, fan_out),
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind(&self, tape: &mut Tape) -> LayerVars {
        LayerVars {
            weight: tape.param(&self.weight),
            bias: tape.param(&self.bias),
            activation: self.activation,
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &LayerVars, x: Var) -> Result<Var, TensorError> {
        mlp_forward(tape, core::slice::from_ref(vars), x)
    }

    /// Tape-free evaluation on a single input row.
    ///
    /// Performs the same floating-point operations in the same order as the
    /// recorded path, so results are bit-identical.
    pub fn infer(&self, x: &[f64]) -> Vec<f64> {
        let (k, n) = (self.fan_in(), self.fan_out());
        assert_eq!(x.len(), k, "layer input width");
        let w = self.weight.data();
        let mut out = vec![0.0; n];
        for (p, &xv) in x.iter().enumerate() {
            if xv != 0.0 {
                axpy(xv, &w[p * n..(p + 1) * n], &mut out);
            }
        }
        for (o, b) in out.iter_mut().zip(self.bias.data()) {
            *o = self.activation.apply(*o + b);
        }
        out
    }

    pub fn accumulate_grads(&mut self, grads: &Gradients, vars: &LayerVars) {
        grads.accumulate_into(vars.weight, &mut self.weight);
        grads.accumulate_into(vars.bias, &mut self.bias);
    }
}

/// Composes affine-plus-activation layers on the tape.
pub fn mlp_forward(tape: &mut Tape, layers: &[LayerVars], input: Var) -> Result<Var, TensorError> {
    let mut h = input;
    for layer in layers {
        let z = tape.matmul(h, layer.weight)?;
        let z = tape.add_bias(z, layer.bias)?;
        h = layer.activation.record(tape, z);
    }
    Ok(h)
}

/// Feedforward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone)]
pub struct MlpVars {
    pub layers: Vec<LayerVars>,
}

impl Mlp {
    /// Checks that consecutive layer widths chain.
    pub fn new(layers: Vec<Layer>) -> Result<Self, TensorError> {
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(TensorError::Shape {
                    op: "mlp",
                    lhs: pair[0].weight.shape().to_vec(),
                    rhs: pair[1].weight.shape().to_vec(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-initialised network through `widths` (input first). Hidden
    /// layers use `hidden`, the last layer uses `output`.
    pub fn glorot<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                Layer::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn bind(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &MlpVars, x: Var) -> Result<Var, TensorError> {
        mlp_forward(tape, &vars.layers, x)
    }

    pub fn infer(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.infer(&h);
        }
        h
    }

    pub fn accumulate_grads(&mut self, grads: &Gradients, vars: &MlpVars) {
        for (layer, v) in self.layers.iter_mut().zip(&vars.layers) {
            layer.accumulate_grads(grads, v);
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Layer::new(Tensor::eye(3), Tensor::zeros(1, 3), Activation::Identity).unwrap();
        let mut tape = Tape::new();
        let vars = layer.bind(&mut tape);
        let x = tape.constant(&Tensor::row(vec![0.5, -1.0, 2.0]));
        let y = layer.forward(&mut tape, &vars, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn zero_weights_return_bias() {
        let bias = Tensor::row(vec![0.25, -4.0]);
        let layer = Layer::new(Tensor::zeros(3, 2), bias.clone(), Activation::Identity).unwrap();
        assert_eq!(layer.infer(&[1.0, 2.0, 3.0]), bias.data());
    }

    #[test]
    fn broken_chain_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Layer::glorot(4, 3, Activation::Relu, &mut rng);
        let b = Layer::glorot(2, 1, Activation::Identity, &mut rng);
        assert!(Mlp::new(vec![a, b]).is_err());
    }

    #[test]
    fn infer_is_bit_identical_to_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Mlp::glorot(&[5, 8, 8, 3], Activation::Relu, Activation::Identity, &mut rng);
        let x: Vec<f64> = (0..5).map(|i| (i as f64 - 2.0) * 0.3).collect();
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let xv = tape.constant(&Tensor::row(x.clone()));
        let y = net.forward(&mut tape, &vars, xv).unwrap();
        assert_eq!(tape.value(y).data(), net.infer(&x).as_slice());
    }

    #[test]
    fn glorot_respects_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Layer::glorot(10, 20, Activation::Relu, &mut rng);
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(l.weight.data().iter().all(|w| w.abs() <= limit));
        assert!(l.bias.data().iter().all(|&b| b == 0.0));
    }
}
