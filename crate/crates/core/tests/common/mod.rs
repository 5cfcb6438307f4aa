#![allow(dead_code)]

pub mod oracles;

use rce_core::distributions::DiagGaussian;
use rce_core::env::{self, EnvConfig};
use rce_core::model::{LatentModel, LocalLinearDynamics, ModelDims};
use rce_core::{Architecture, RceParams, Tensor, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Globally linear latent model. Its encoder reads the latent straight from
/// the first `n_z` entries of the observation.
pub struct LinearStub {
    pub dims: ModelDims,
    pub dynamics: LocalLinearDynamics,
}

impl LinearStub {
    pub fn new(w: [f64; 2], r: [f64; 2], b: [f64; 4], c: [f64; 2]) -> Self {
        Self {
            dims: ModelDims { n_x: 2, n_z: 2, n_u: 2 },
            dynamics: LocalLinearDynamics::new(w.to_vec(), r.to_vec(), Tensor::matrix(2, 2, b.to_vec()), c.to_vec())
                .unwrap(),
        }
    }

    pub fn identity() -> Self {
        Self::new([0.0; 2], [0.0; 2], [0.0; 4], [0.0; 2])
    }
}

impl LatentModel for LinearStub {
    fn dims(&self) -> ModelDims {
        self.dims
    }

    fn encode(&self, x: &[f64]) -> Result<DiagGaussian, TensorError> {
        DiagGaussian::new(x[..self.dims.n_z].to_vec(), vec![0.0; self.dims.n_z])
    }

    fn decode(&self, _z: &[f64]) -> Result<Vec<f64>, TensorError> {
        Ok(vec![0.0; self.dims.n_x])
    }

    fn linearize(&self, _z: &[f64], _u: &[f64]) -> Result<LocalLinearDynamics, TensorError> {
        Ok(self.dynamics.clone())
    }
}

/// Exact model of the obstacle-free planar dynamics: the latent is the
/// agent position, recovered from the image as the centroid of the agent
/// pixels; the decoder renders the state with saturated logits.
pub struct PositionStub {
    pub env: EnvConfig,
    /// Magnitude of the decoder's logits.
    pub saturation: f64,
    background: Vec<f64>,
}

impl PositionStub {
    pub fn new(env: EnvConfig) -> Self {
        let background = env::render_background(&env);
        Self {
            env,
            saturation: 20.0,
            background,
        }
    }
}

impl LatentModel for PositionStub {
    fn dims(&self) -> ModelDims {
        ModelDims { n_x: self.env.n_x(), n_z: 2, n_u: 2 }
    }

    fn encode(&self, x: &[f64]) -> Result<DiagGaussian, TensorError> {
        let side = self.env.side();
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for (i, (&p, &b)) in x.iter().zip(&self.background).enumerate() {
            if p > 0.5 && b < 0.5 {
                sx += (i % side) as f64 + 0.5;
                sy += (i / side) as f64 + 0.5;
                n += 1.0;
            }
        }
        DiagGaussian::new(vec![sx / n, sy / n], vec![-10.0; 2])
    }

    fn decode(&self, z: &[f64]) -> Result<Vec<f64>, TensorError> {
        let s = env::PlanarState::new(z[0], z[1]);
        Ok(env::render(&self.env, &s).iter().map(|&p| if p > 0.5 { self.saturation } else { -self.saturation }).collect())
    }

    fn linearize(&self, _z: &[f64], _u: &[f64]) -> Result<LocalLinearDynamics, TensorError> {
        Ok(LocalLinearDynamics::with_identity_state(Tensor::eye(2), vec![0.0; 2]))
    }
}

pub fn tiny_dims() -> ModelDims {
    ModelDims { n_x: 12, n_z: 2, n_u: 2 }
}

pub fn tiny_model(seed: u64) -> RceParams {
    RceParams::init(Architecture::uniform(tiny_dims(), 8), &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Negated bound and its gradient with respect to every parameter, in
/// canonical order.
pub fn loss_and_grad(
    params: &RceParams,
    triple: &env::ObservationTriple,
    eps1: &[f64],
    eps2: &[f64],
    weights: rce_core::training::LossWeights,
) -> (f64, Vec<f64>) {
    use rce_core::training::{batch_loss, Batch};
    let batch = Batch::from_triples(&[triple]).unwrap();
    let mut tape = rce_core::Tape::new();
    let e1 = Tensor::matrix(1, eps1.len(), eps1.to_vec());
    let e2 = Tensor::matrix(1, eps2.len(), eps2.to_vec());
    let (vars, out) = batch_loss(&mut tape, params, &batch, &e1, &e2, weights).unwrap();
    let loss = tape.value(out.loss).data()[0];
    let grads = tape.backward(out.loss).unwrap();
    let mut p = params.clone();
    p.zero_grad();
    p.accumulate_grads(&grads, &vars);
    let g = p
        .named_params()
        .iter()
        .flat_map(|(_, t)| t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    (loss, g)
}

pub fn flat_params(params: &RceParams) -> Vec<f64> {
    params.named_params().iter().flat_map(|(_, t)| t.data().to_vec()).collect()
}

pub fn with_flat_params(params: &RceParams, flat: &[f64]) -> RceParams {
    let mut p = params.clone();
    let mut it = flat.iter().copied();
    for t in p.params_mut() {
        for v in t.data_mut() {
            *v = it.next().expect("enough values");
        }
    }
    p
}

/// Random binary observations of the tiny model's size.
pub fn tiny_triple<R: rand::Rng>(rng: &mut R) -> env::ObservationTriple {
    let mut img = || (0..12).map(|_| f64::from(u8::from(rng.random_bool(0.4)))).collect::<Vec<_>>();
    let x_t = img();
    let x_next = img();
    env::ObservationTriple {
        x_t,
        u_t: vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
        x_next,
        s_t: env::PlanarState::new(0.0, 0.0),
        s_next: env::PlanarState::new(0.0, 0.0),
    }
}

pub fn normals<R: rand::Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
