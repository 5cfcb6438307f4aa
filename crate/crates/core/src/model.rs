//! RCE networks and the locally-linear latent transitions.
//!
//! Four networks make up the model:
//!
//! - the **encoder** `x ↦ N(μ(x), diag σ²(x))`, shared by the posterior over
//!   the next latent and the prior over the current latent and its
//!   linearization point (one weight set, three roles);
//! - the **backward encoder** `(x_t, ẑ_{t+1}) ↦ N(μ, diag σ²)` over the
//!   linearization point, conditioned on the *future* latent;
//! - the **linearization** head `(z̄, ū) ↦ (w, r, B, c)`;
//! - the **decoder** `ẑ ↦` Bernoulli logits over pixels.
//!
//! The inverse transition matrix is a rank-one perturbation of the identity,
//! `M = I + w rᵀ` with `w, r ≥ 0`, so `det M = 1 + rᵀw ≥ 1` and the forward
//! matrix `A = M⁻¹ = I − w rᵀ / (1 + rᵀw)` always exists.

use alloc::vec;
use alloc::vec::Vec;
use alloc::{format, string::String};

use rand::Rng;

use crate::distributions::{DiagGaussian, GaussianVars};
use crate::math;
use crate::tensor::{Activation, Gradients, Layer, LayerVars, Mlp, MlpVars, Tape, Tensor, TensorError, Var};

/// Observation, latent and action widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelDims {
    pub n_x: usize,
    pub n_z: usize,
    pub n_u: usize,
}

impl ModelDims {
    pub const PLANAR: ModelDims = ModelDims {
        n_x: 1600,
        n_z: 2,
        n_u: 2,
    };

    /// Width of the linearization head: `w`, `r`, `B` (row-major) and `c`.
    pub fn linearization_head(&self) -> usize {
        2 * self.n_z + self.n_z * self.n_u + self.n_z
    }
}

/// Network widths. Hidden layers use ReLU; heads are linear.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Architecture {
    pub dims: ModelDims,
    pub encoder_hidden: Vec<usize>,
    /// Hidden width of the `x_t` branch of the backward encoder.
    pub backward_x_hidden: usize,
    /// Hidden width of the `ẑ_{t+1}` branch of the backward encoder.
    pub backward_z_hidden: usize,
    /// Hidden width after the two branches are concatenated.
    pub backward_merge_hidden: usize,
    pub linearization_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
}

impl Architecture {
    /// 40×40 planar system: 1600-300-300-4 encoder, 2-300-300-1600 decoder,
    /// backward encoder 100/5/100/4 and linearization 20-20-10.
    pub fn planar() -> Self {
        Self {
            dims: ModelDims::PLANAR,
            encoder_hidden: vec![300, 300],
            backward_x_hidden: 100,
            backward_z_hidden: 5,
            backward_merge_hidden: 100,
            linearization_hidden: vec![20, 20],
            decoder_hidden: vec![300, 300],
        }
    }

    /// Same topology with every hidden layer `width` wide.
    pub fn uniform(dims: ModelDims, width: usize) -> Self {
        Self {
            dims,
            encoder_hidden: vec![width, width],
            backward_x_hidden: width,
            backward_z_hidden: width,
            backward_merge_hidden: width,
            linearization_hidden: vec![width, width],
            decoder_hidden: vec![width, width],
        }
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(hidden.len() + 2);
    w.push(input);
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

fn dim_err(op: &'static str, expected: usize, got: usize) -> TensorError {
    TensorError::Shape {
        op,
        lhs: vec![expected],
        rhs: vec![got],
    }
}

/// Per-sample locally-linear dynamics around a linearization point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalLinearDynamics {
    w: Vec<f64>,
    r: Vec<f64>,
    b: Tensor,
    c: Vec<f64>,
}

impl LocalLinearDynamics {
    /// `w` and `r` must be non-negative; `b` is `n_z×n_u`.
    pub fn new(w: Vec<f64>, r: Vec<f64>, b: Tensor, c: Vec<f64>) -> Result<Self, TensorError> {
        let n = w.len();
        if r.len() != n || c.len() != n || b.rows() != n {
            return Err(dim_err("local_linear_dynamics", n, r.len().max(c.len())));
        }
        if w.iter().chain(&r).any(|v| !(*v >= 0.0)) {
            return Err(TensorError::Domain {
                op: "local_linear_dynamics",
            });
        }
        Ok(Self { w, r, b, c })
    }

    /// Identity transition `ẑ = z + B u + c` (`w = r = 0`).
    pub fn with_identity_state(b: Tensor, c: Vec<f64>) -> Self {
        let n = c.len();
        Self::new(vec![0.0; n], vec![0.0; n], b, c).expect("zero rank-one factors")
    }

    /// Builds the dynamics from a raw linearization head, applying softplus
    /// to the `w` and `r` slices.
    pub fn from_head(head: &[f64], n_z: usize, n_u: usize) -> Result<Self, TensorError> {
        let expected = 2 * n_z + n_z * n_u + n_z;
        if head.len() != expected {
            return Err(dim_err("linearization_head", expected, head.len()));
        }
        let w = head[..n_z].iter().map(|&v| math::softplus(v)).collect();
        let r = head[n_z..2 * n_z].iter().map(|&v| math::softplus(v)).collect();
        let b = Tensor::matrix(n_z, n_u, head[2 * n_z..2 * n_z + n_z * n_u].to_vec());
        let c = head[2 * n_z + n_z * n_u..].to_vec();
        Self::new(w, r, b, c)
    }

    pub fn n_z(&self) -> usize {
        self.w.len()
    }

    pub fn n_u(&self) -> usize {
        self.b.cols()
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn b(&self) -> &Tensor {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    /// `rᵀw`.
    pub fn rank_one_gain(&self) -> f64 {
        self.r.iter().zip(&self.w).map(|(a, b)| a * b).sum()
    }

    /// Inverse transition matrix `M = I + w rᵀ`.
    pub fn m(&self) -> Tensor {
        let n = self.n_z();
        let mut m = Tensor::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                m.set(i, j, self.w[i] * self.r[j] + delta);
            }
        }
        m
    }

    /// `det M = 1 + rᵀw` (matrix determinant lemma).
    pub fn det_m(&self) -> f64 {
        1.0 + self.rank_one_gain()
    }

    /// Forward transition matrix `A = M⁻¹ = I − w rᵀ / (1 + rᵀw)`.
    pub fn a(&self) -> Tensor {
        let n = self.n_z();
        let denom = self.det_m();
        let mut a = Tensor::eye(n);
        for i in 0..n {
            for j in 0..n {
                let v = a.get(i, j) - self.w[i] * self.r[j] / denom;
                a.set(i, j, v);
            }
        }
        a
    }

    fn bu(&self, u: &[f64]) -> Result<Vec<f64>, TensorError> {
        if u.len() != self.n_u() {
            return Err(dim_err("transition_action", self.n_u(), u.len()));
        }
        self.b.matvec(u)
    }

    /// `z_t = M (ẑ_{t+1} − B u_t − c)`.
    pub fn reverse(&self, z_next: &[f64], u: &[f64]) -> Result<Vec<f64>, TensorError> {
        if z_next.len() != self.n_z() {
            return Err(dim_err("reverse_transition", self.n_z(), z_next.len()));
        }
        let bu = self.bu(u)?;
        let d: Vec<f64> = (0..self.n_z())
            .map(|i| z_next[i] - bu[i] - self.c[i])
            .collect();
        self.m().matvec(&d)
    }

    /// `ẑ_{t+1} = A z_t + B u_t + c`.
    pub fn forward(&self, z: &[f64], u: &[f64]) -> Result<Vec<f64>, TensorError> {
        if z.len() != self.n_z() {
            return Err(dim_err("forward_transition", self.n_z(), z.len()));
        }
        let az = self.a().matvec(z)?;
        let bu = self.bu(u)?;
        Ok((0..self.n_z()).map(|i| az[i] + bu[i] + self.c[i]).collect())
    }
}

/// `z_t = M (ẑ_{t+1} − B u_t − c)`.
pub fn reverse_transition(
    dynamics: &LocalLinearDynamics,
    z_next: &[f64],
    u: &[f64],
) -> Result<Vec<f64>, TensorError> {
    dynamics.reverse(z_next, u)
}

/// `ẑ_{t+1} = A z_t + B u_t + c` with `A = M⁻¹`.
pub fn forward_transition(
    dynamics: &LocalLinearDynamics,
    z: &[f64],
    u: &[f64],
) -> Result<Vec<f64>, TensorError> {
    dynamics.forward(z, u)
}

/// What planning and evaluation need from a trained model.
pub trait LatentModel {
    fn dims(&self) -> ModelDims;
    fn encode(&self, x: &[f64]) -> Result<DiagGaussian, TensorError>;
    /// Bernoulli logits for every pixel.
    fn decode(&self, z: &[f64]) -> Result<Vec<f64>, TensorError>;
    fn linearize(&self, z_bar: &[f64], u_bar: &[f64]) -> Result<LocalLinearDynamics, TensorError>;
}

/// Models with a recognition network over the linearization point.
pub trait BackwardEncode {
    fn backward_encode(&self, x: &[f64], z_next: &[f64]) -> Result<DiagGaussian, TensorError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardEncoder {
    pub x_branch: Layer,
    pub z_branch: Layer,
    pub merge: Mlp,
}

/// All trainable parameters of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct RceParams {
    pub arch: Architecture,
    pub encoder: Mlp,
    pub backward_encoder: BackwardEncoder,
    pub linearization: Mlp,
    pub decoder: Mlp,
}

/// Tape handles for one bound copy of [`RceParams`].
#[derive(Debug, Clone)]
pub struct RceVars {
    pub encoder: MlpVars,
    pub backward_x: LayerVars,
    pub backward_z: LayerVars,
    pub backward_merge: MlpVars,
    pub linearization: MlpVars,
    pub decoder: MlpVars,
}

/// Batched linearization outputs on the tape, one sample per row.
#[derive(Debug, Clone, Copy)]
pub struct DynamicsVars {
    pub w: Var,
    pub r: Var,
    /// `m × n_z·n_u`, row-major `B` per row.
    pub b: Var,
    pub c: Var,
    /// `m × n_z·n_z`, row-major `M = I + w rᵀ` per row.
    pub m: Var,
}

/// Initial bias of the raw `w`, `r` outputs: softplus(−5) ≈ 0.007, so the
/// transition starts close to `M = I`.
const RANK_ONE_BIAS_INIT: f64 = -5.0;
/// Initial bias of every log-variance output (σ² ≈ 0.018).
const LOG_VAR_BIAS_INIT: f64 = -4.0;

fn set_head_bias(net: &mut Mlp, range: core::ops::Range<usize>, value: f64) {
    if let Some(last) = net.layers.last_mut() {
        for b in &mut last.bias.data_mut()[range] {
            *b = value;
        }
    }
}

impl RceParams {
    /// Glorot-uniform weights and zero biases, except that the log-variance
    /// heads start small and the rank-one factors start near zero.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let d = arch.dims;
        let relu = Activation::Relu;
        let id = Activation::Identity;
        let mut encoder = Mlp::glorot(&widths(d.n_x, &arch.encoder_hidden, 2 * d.n_z), relu, id, rng);
        let x_branch = Layer::glorot(d.n_x, arch.backward_x_hidden, relu, rng);
        let z_branch = Layer::glorot(d.n_z, arch.backward_z_hidden, relu, rng);
        let mut merge = Mlp::glorot(
            &[
                arch.backward_x_hidden + arch.backward_z_hidden,
                arch.backward_merge_hidden,
                2 * d.n_z,
            ],
            relu,
            id,
            rng,
        );
        let mut linearization = Mlp::glorot(
            &widths(d.n_z + d.n_u, &arch.linearization_hidden, d.linearization_head()),
            relu,
            id,
            rng,
        );
        let decoder = Mlp::glorot(&widths(d.n_z, &arch.decoder_hidden, d.n_x), relu, id, rng);
        set_head_bias(&mut encoder, d.n_z..2 * d.n_z, LOG_VAR_BIAS_INIT);
        set_head_bias(&mut merge, d.n_z..2 * d.n_z, LOG_VAR_BIAS_INIT);
        set_head_bias(&mut linearization, 0..2 * d.n_z, RANK_ONE_BIAS_INIT);
        Self {
            arch,
            encoder,
            backward_encoder: BackwardEncoder {
                x_branch,
                z_branch,
                merge,
            },
            linearization,
            decoder,
        }
    }

    pub fn dims(&self) -> ModelDims {
        self.arch.dims
    }

    /// Layers in canonical order with their name prefixes.
    fn layers(&self) -> Vec<(String, &Layer)> {
        fn mlp<'a>(prefix: &str, net: &'a Mlp, out: &mut Vec<(String, &'a Layer)>) {
            for (i, l) in net.layers.iter().enumerate() {
                out.push((format!("{prefix}.{i}"), l));
            }
        }
        let mut out = Vec::new();
        mlp("encoder", &self.encoder, &mut out);
        out.push((String::from("backward.x.0"), &self.backward_encoder.x_branch));
        out.push((String::from("backward.z.0"), &self.backward_encoder.z_branch));
        mlp("backward.merge", &self.backward_encoder.merge, &mut out);
        mlp("linearization", &self.linearization, &mut out);
        mlp("decoder", &self.decoder, &mut out);
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut Layer> {
        let mut out: Vec<&mut Layer> = Vec::new();
        out.extend(self.encoder.layers.iter_mut());
        out.push(&mut self.backward_encoder.x_branch);
        out.push(&mut self.backward_encoder.z_branch);
        out.extend(self.backward_encoder.merge.layers.iter_mut());
        out.extend(self.linearization.layers.iter_mut());
        out.extend(self.decoder.layers.iter_mut());
        out
    }

    /// Every parameter tensor with a stable name, in canonical order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers()
            .into_iter()
            .flat_map(|(name, l)| {
                [
                    (format!("{name}.weight"), &l.weight),
                    (format!("{name}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    /// Parameter tensors in the same order as [`named_params`](Self::named_params).
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Overwrites every parameter from `values`, given in canonical order.
    pub fn load_params(&mut self, values: Vec<Tensor>) -> Result<(), TensorError> {
        let mut slots = self.params_mut();
        if slots.len() != values.len() {
            return Err(TensorError::Length {
                shape: vec![slots.len()],
                expected: slots.len(),
                got: values.len(),
            });
        }
        for (slot, v) in slots.iter().zip(&values) {
            if slot.shape() != v.shape() {
                return Err(TensorError::Shape {
                    op: "load_params",
                    lhs: slot.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            **slot = v;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> RceVars {
        RceVars {
            encoder: self.encoder.bind(tape),
            backward_x: self.backward_encoder.x_branch.bind(tape),
            backward_z: self.backward_encoder.z_branch.bind(tape),
            backward_merge: self.backward_encoder.merge.bind(tape),
            linearization: self.linearization.bind(tape),
            decoder: self.decoder.bind(tape),
        }
    }

    pub fn accumulate_grads(&mut self, grads: &Gradients, vars: &RceVars) {
        self.encoder.accumulate_grads(grads, &vars.encoder);
        self.backward_encoder
            .x_branch
            .accumulate_grads(grads, &vars.backward_x);
        self.backward_encoder
            .z_branch
            .accumulate_grads(grads, &vars.backward_z);
        self.backward_encoder
            .merge
            .accumulate_grads(grads, &vars.backward_merge);
        self.linearization
            .accumulate_grads(grads, &vars.linearization);
        self.decoder.accumulate_grads(grads, &vars.decoder);
    }

    /// Batched encoder on the tape; `x` is `m × n_x`.
    pub fn encode_on(&self, tape: &mut Tape, vars: &RceVars, x: Var) -> Result<GaussianVars, TensorError> {
        let head = self.encoder.forward(tape, &vars.encoder, x)?;
        GaussianVars::from_squashed_head(tape, head, self.dims().n_z)
    }

    /// Batched backward encoder; `x` is `m × n_x`, `z_next` is `m × n_z`.
    pub fn backward_encode_on(
        &self,
        tape: &mut Tape,
        vars: &RceVars,
        x: Var,
        z_next: Var,
    ) -> Result<GaussianVars, TensorError> {
        let be = &self.backward_encoder;
        let hx = be.x_branch.forward(tape, &vars.backward_x, x)?;
        let hz = be.z_branch.forward(tape, &vars.backward_z, z_next)?;
        let h = tape.concat_cols(&[hx, hz])?;
        let head = be.merge.forward(tape, &vars.backward_merge, h)?;
        GaussianVars::from_squashed_head(tape, head, self.dims().n_z)
    }

    /// Batched linearization around `(z̄, ū)`.
    pub fn linearize_on(
        &self,
        tape: &mut Tape,
        vars: &RceVars,
        z_bar: Var,
        u_bar: Var,
    ) -> Result<DynamicsVars, TensorError> {
        let d = self.dims();
        let input = tape.concat_cols(&[z_bar, u_bar])?;
        let head = self.linearization.forward(tape, &vars.linearization, input)?;
        let w_raw = tape.slice_cols(head, 0, d.n_z)?;
        let r_raw = tape.slice_cols(head, d.n_z, d.n_z)?;
        let b = tape.slice_cols(head, 2 * d.n_z, d.n_z * d.n_u)?;
        let c = tape.slice_cols(head, 2 * d.n_z + d.n_z * d.n_u, d.n_z)?;
        let w = tape.softplus(w_raw);
        let r = tape.softplus(r_raw);
        let outer = tape.row_outer(w, r)?;
        let eye = tape.constant(&Tensor::row(Tensor::eye(d.n_z).into_data()));
        let m = tape.add_bias(outer, eye)?;
        Ok(DynamicsVars { w, r, b, c, m })
    }

    /// Batched decoder logits.
    pub fn decode_on(&self, tape: &mut Tape, vars: &RceVars, z: Var) -> Result<Var, TensorError> {
        self.decoder.forward(tape, &vars.decoder, z)
    }

    fn check_len(op: &'static str, expected: usize, v: &[f64]) -> Result<(), TensorError> {
        if v.len() == expected {
            Ok(())
        } else {
            Err(dim_err(op, expected, v.len()))
        }
    }

}

impl BackwardEncode for RceParams {
    /// Posterior over the linearization point given `x_t` and `ẑ_{t+1}`.
    fn backward_encode(&self, x: &[f64], z_next: &[f64]) -> Result<DiagGaussian, TensorError> {
        let d = self.dims();
        Self::check_len("backward_encode", d.n_x, x)?;
        Self::check_len("backward_encode", d.n_z, z_next)?;
        let be = &self.backward_encoder;
        let mut h = be.x_branch.infer(x);
        h.extend(be.z_branch.infer(z_next));
        let head = be.merge.infer(&h);
        DiagGaussian::from_squashed_head(&head)
    }
}

/// `z_t = M (ẑ_{t+1} − B u_t − c)` for every row.
pub fn reverse_transition_on(
    tape: &mut Tape,
    dynamics: &DynamicsVars,
    z_next: Var,
    u: Var,
) -> Result<Var, TensorError> {
    let bu = tape.row_matvec(dynamics.b, u)?;
    let shifted = tape.sub(z_next, bu)?;
    let d = tape.sub(shifted, dynamics.c)?;
    tape.row_matvec(dynamics.m, d)
}

impl LatentModel for RceParams {
    fn dims(&self) -> ModelDims {
        self.arch.dims
    }

    fn encode(&self, x: &[f64]) -> Result<DiagGaussian, TensorError> {
        let d = self.arch.dims;
        Self::check_len("encode", d.n_x, x)?;
        DiagGaussian::from_squashed_head(&self.encoder.infer(x))
    }

    fn decode(&self, z: &[f64]) -> Result<Vec<f64>, TensorError> {
        Self::check_len("decode", self.arch.dims.n_z, z)?;
        Ok(self.decoder.infer(z))
    }

    fn linearize(&self, z_bar: &[f64], u_bar: &[f64]) -> Result<LocalLinearDynamics, TensorError> {
        let d = self.arch.dims;
        Self::check_len("linearize", d.n_z, z_bar)?;
        Self::check_len("linearize", d.n_u, u_bar)?;
        let mut input = z_bar.to_vec();
        input.extend_from_slice(u_bar);
        LocalLinearDynamics::from_head(&self.linearization.infer(&input), d.n_z, d.n_u)
    }
}
