//! The RCE lower bound and its optimization.
//!
//! For a triple `(x_t, u_t, x_{t+1})` the bound is
//!
//! ```text
//! E[ln p(x_{t+1} | ẑ)] − w_kl · KL(q(z̄ | x_t, ẑ) ‖ p(z̄ | x_t))
//!     + H(q(ẑ | x_{t+1})) + w_logp · E[ln p(z_t | x_t)]
//! ```
//!
//! with `ẑ ~ q(· | x_{t+1})`, `z̄ ~ q(· | x_t, ẑ)` and `z_t` recovered by the
//! reverse transition. Both expectations use one reparameterized sample.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::distributions::{self, bernoulli_log_likelihood_rows};
use crate::env::ObservationTriple;
use crate::model::{reverse_transition_on, Architecture, BackwardEncode, LatentModel, RceParams, RceVars};
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(&'static str),
    #[error("{term} term of the loss is not finite")]
    NonFinite { term: &'static str },
    #[error("parameter {index} has no gradient")]
    MissingGradient { index: usize },
    #[error("epoch {epoch}, batch {batch}: {term} term of the loss is not finite")]
    Diverged {
        epoch: usize,
        batch: usize,
        term: &'static str,
    },
}

/// Weights on the KL and the `ln p(z_t | x_t)` terms.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossWeights {
    pub w_kl: f64,
    pub w_logp: f64,
}

impl LossWeights {
    pub const UNIT: LossWeights = LossWeights {
        w_kl: 1.0,
        w_logp: 1.0,
    };
}

/// Piecewise-linear `(epoch, weight)` breakpoints shared by both weights.
/// Epochs are zero-based; the value is held constant outside the breakpoints.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossSchedule {
    pub breakpoints: Vec<(usize, f64)>,
}

impl Default for LossSchedule {
    fn default() -> Self {
        Self::constant()
    }
}

impl LossSchedule {
    /// Both weights fixed at 1.
    pub fn constant() -> Self {
        Self {
            breakpoints: vec![(0, 1.0)],
        }
    }

    /// Starts at `start` and decays linearly to 1 at `end_epoch`.
    pub fn annealed(start: f64, end_epoch: usize) -> Self {
        Self {
            breakpoints: vec![(0, start), (end_epoch, 1.0)],
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let last = self
            .breakpoints
            .last()
            .ok_or(TrainError::Config("schedule needs at least one breakpoint"))?;
        if last.1 != 1.0 {
            return Err(TrainError::Config("schedule must end at weight 1"));
        }
        if self.breakpoints.windows(2).any(|p| p[0].0 >= p[1].0) {
            return Err(TrainError::Config("schedule epochs must be strictly increasing"));
        }
        if self.breakpoints.iter().any(|b| !(b.1 >= 0.0) || !b.1.is_finite()) {
            return Err(TrainError::Config("schedule weights must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn value_at(&self, epoch: usize) -> f64 {
        let bp = &self.breakpoints;
        if bp.is_empty() {
            return 1.0;
        }
        if epoch <= bp[0].0 {
            return bp[0].1;
        }
        for pair in bp.windows(2) {
            let ((e0, v0), (e1, v1)) = (pair[0], pair[1]);
            if epoch <= e1 {
                let t = (epoch - e0) as f64 / (e1 - e0) as f64;
                return v0 + t * (v1 - v0);
            }
        }
        bp[bp.len() - 1].1
    }

    pub fn weights_at(&self, epoch: usize) -> LossWeights {
        let v = self.value_at(epoch);
        LossWeights { w_kl: v, w_logp: v }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub arch: Architecture,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub schedule: LossSchedule,
    /// Save a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::planar(),
            batch_size: 32,
            epochs: 50,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            grad_clip: Some(10.0),
            seed: 0,
            schedule: LossSchedule::constant(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive"));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(TrainError::Config("learning_rate must be positive"));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(TrainError::Config("adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(TrainError::Config("adam_eps must be positive"));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(TrainError::Config("grad_clip must be positive"));
        }
        self.schedule.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            eps: self.adam_eps,
        }
    }
}

/// Batch means of the four bound terms. `kl` and `logp` are unweighted.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub bce: f64,
    pub kl: f64,
    pub entropy: f64,
    pub logp: f64,
}

impl LossTerms {
    /// The weighted bound (higher is better).
    pub fn bound(&self, w: LossWeights) -> f64 {
        self.bce - w.w_kl * self.kl + self.entropy + w.w_logp * self.logp
    }
}

/// Loss node and term diagnostics for one batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    /// Scalar negated mean bound.
    pub loss: Var,
    pub terms: LossTerms,
}

fn column_mean(tape: &Tape, v: Var, term: &'static str) -> Result<f64, TrainError> {
    let d = tape.value(v).data();
    let m = d.iter().sum::<f64>() / d.len() as f64;
    if m.is_finite() {
        Ok(m)
    } else {
        Err(TrainError::NonFinite { term })
    }
}

/// Records the negated bound for a batch (one sample per row) on `tape`.
///
/// `eps1` and `eps2` are `m × n_z` standard-normal draws for the two
/// reparameterized samples.
#[allow(clippy::too_many_arguments)]
pub fn rce_loss_on(
    tape: &mut Tape,
    params: &RceParams,
    vars: &RceVars,
    x_t: Var,
    u_t: Var,
    x_next: Var,
    eps1: Var,
    eps2: Var,
    weights: LossWeights,
) -> Result<BatchLoss, TrainError> {
    let enc_next = params.encode_on(tape, vars, x_next)?;
    let z_hat = enc_next.sample_reparam(tape, eps1)?;
    let back = params.backward_encode_on(tape, vars, x_t, z_hat)?;
    let z_bar = back.sample_reparam(tape, eps2)?;
    let dynamics = params.linearize_on(tape, vars, z_bar, u_t)?;
    let z_t = reverse_transition_on(tape, &dynamics, z_hat, u_t)?;

    let logits = params.decode_on(tape, vars, z_hat)?;
    let bce = bernoulli_log_likelihood_rows(tape, logits, x_next)?;
    let enc_t = params.encode_on(tape, vars, x_t)?;
    let kl = back.kl_diag(tape, &enc_t)?;
    let entropy = enc_next.entropy(tape)?;
    let logp = enc_t.log_prob(tape, z_t)?;

    let terms = LossTerms {
        bce: column_mean(tape, bce, "reconstruction")?,
        kl: column_mean(tape, kl, "kl")?,
        entropy: column_mean(tape, entropy, "entropy")?,
        logp: column_mean(tape, logp, "log-prior")?,
    };

    let kl_w = tape.scale(kl, weights.w_kl);
    let logp_w = tape.scale(logp, weights.w_logp);
    let b = tape.sub(bce, kl_w)?;
    let b = tape.add(b, entropy)?;
    let b = tape.add(b, logp_w)?;
    let mean = tape.mean(b);
    let loss = tape.neg(mean);
    Ok(BatchLoss { loss, terms })
}

fn stack_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Tensor {
    let mut data = Vec::new();
    let mut m = 0;
    for r in rows {
        data.extend_from_slice(r);
        m += 1;
    }
    Tensor::matrix(m, width, data)
}

/// Inputs for one batch, as tensors.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x_t: Tensor,
    pub u_t: Tensor,
    pub x_next: Tensor,
}

impl Batch {
    pub fn from_triples(triples: &[&ObservationTriple]) -> Result<Self, TrainError> {
        let first = triples.first().ok_or(TrainError::EmptyDataset)?;
        let (n_x, n_u) = (first.x_t.len(), first.u_t.len());
        for t in triples {
            for (len, want) in [(t.x_t.len(), n_x), (t.x_next.len(), n_x), (t.u_t.len(), n_u)] {
                if len != want {
                    return Err(TensorError::Shape {
                        op: "batch",
                        lhs: vec![want],
                        rhs: vec![len],
                    }
                    .into());
                }
            }
        }
        Ok(Self {
            x_t: stack_rows(triples.iter().map(|t| t.x_t.as_slice()), n_x),
            u_t: stack_rows(triples.iter().map(|t| t.u_t.as_slice()), n_u),
            x_next: stack_rows(triples.iter().map(|t| t.x_next.as_slice()), n_x),
        })
    }

    pub fn len(&self) -> usize {
        self.x_t.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Records the full loss for `batch` on a fresh tape.
pub fn batch_loss(
    tape: &mut Tape,
    params: &RceParams,
    batch: &Batch,
    eps1: &Tensor,
    eps2: &Tensor,
    weights: LossWeights,
) -> Result<(RceVars, BatchLoss), TrainError> {
    let vars = params.bind(tape);
    let x_t = tape.constant(&batch.x_t);
    let u_t = tape.constant(&batch.u_t);
    let x_next = tape.constant(&batch.x_next);
    let e1 = tape.constant(eps1);
    let e2 = tape.constant(eps2);
    let out = rce_loss_on(tape, params, &vars, x_t, u_t, x_next, e1, e2, weights)?;
    Ok((vars, out))
}

/// Negated bound for a single triple and its term values.
pub fn rce_loss(
    params: &RceParams,
    triple: &ObservationTriple,
    eps1: &[f64],
    eps2: &[f64],
    weights: LossWeights,
) -> Result<(f64, LossTerms), TrainError> {
    let batch = Batch::from_triples(&[triple])?;
    let mut tape = Tape::new();
    let (_, out) = batch_loss(
        &mut tape,
        params,
        &batch,
        &Tensor::row(eps1.to_vec()),
        &Tensor::row(eps2.to_vec()),
        weights,
    )?;
    Ok((tape.value(out.loss).data()[0], out.terms))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

/// One Adam update with bias correction, reading each tensor's gradient slot.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<(), TrainError> {
    if let Some(index) = params.iter().position(|p| p.grad().is_none()) {
        return Err(TrainError::MissingGradient { index });
    }
    if state.m.len() != params.len() {
        state.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        state.v = state.m.clone();
        state.t = 0;
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let c2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for (i, p) in params.iter_mut().enumerate() {
        let g = p.grad().expect("checked above").to_vec();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= cfg.lr * m_hat / (crate::math::sqrt(v_hat) + cfg.eps);
        }
    }
    Ok(())
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
pub fn clip_grad_norm(params: &mut [&mut Tensor], max_norm: f64) -> f64 {
    let sq: f64 = params
        .iter()
        .filter_map(|p| p.grad())
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum();
    let norm = crate::math::sqrt(sq);
    if norm > max_norm {
        let s = max_norm / norm;
        for p in params.iter_mut() {
            if p.grad().is_some() {
                p.grad_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    norm
}

/// Per-epoch training summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// One-based epoch number.
    pub epoch: usize,
    /// Mean negated weighted bound over the epoch's samples.
    pub mean_loss: f64,
    pub terms: LossTerms,
    pub weights: LossWeights,
}

impl EpochMetrics {
    /// Mean unweighted bound.
    pub fn bound(&self) -> f64 {
        self.terms.bound(LossWeights::UNIT)
    }
}

/// Stateful minibatch trainer.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    params: RceParams,
    adam: AdamState,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    /// Parameters are initialized from stream 0 of the seed; shuffling and
    /// sampling noise use stream 1.
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let params = RceParams::init(config.arch.clone(), &mut ChaCha8Rng::seed_from_u64(config.seed));
        Ok(Self::with_params(config, params))
    }

    pub fn with_params(config: TrainConfig, params: RceParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Self {
            config,
            params,
            adam: AdamState::default(),
            rng,
            epoch: 0,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &RceParams {
        &self.params
    }

    pub fn into_params(self) -> RceParams {
        self.params
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn noise(&mut self, m: usize) -> Tensor {
        let n_z = self.config.arch.dims.n_z;
        let data = (0..m * n_z).map(|_| self.rng.sample(StandardNormal)).collect();
        Tensor::matrix(m, n_z, data)
    }

    /// One optimizer step on `batch`. Returns the loss and the term means.
    pub fn step(&mut self, batch: &Batch, weights: LossWeights) -> Result<(f64, LossTerms), TrainError> {
        let eps1 = self.noise(batch.len());
        let eps2 = self.noise(batch.len());
        let mut tape = Tape::new();
        let (vars, out) = batch_loss(&mut tape, &self.params, batch, &eps1, &eps2, weights)?;
        let loss = tape.value(out.loss).data()[0];
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { term: "total" });
        }
        let grads = tape.backward(out.loss)?;
        drop(tape);
        self.params.zero_grad();
        self.params.accumulate_grads(&grads, &vars);
        let adam = self.config.adam();
        let clip = self.config.grad_clip;
        let mut slots = self.params.params_mut();
        if let Some(c) = clip {
            clip_grad_norm(&mut slots, c);
        }
        adam_step(&mut slots, &mut self.adam, &adam)?;
        Ok((loss, out.terms))
    }

    /// Shuffles `data` and makes one pass over it.
    pub fn run_epoch(&mut self, data: &[ObservationTriple]) -> Result<EpochMetrics, TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let weights = self.config.schedule.weights_at(self.epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut sums = LossTerms::default();
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let triples: Vec<&ObservationTriple> = chunk.iter().map(|&i| &data[i]).collect();
            let batch = Batch::from_triples(&triples)?;
            let (loss, terms) = self.step(&batch, weights).map_err(|e| match e {
                TrainError::NonFinite { term } => TrainError::Diverged {
                    epoch: self.epoch + 1,
                    batch: b,
                    term,
                },
                other => other,
            })?;
            let m = chunk.len() as f64;
            total += loss * m;
            sums.bce += terms.bce * m;
            sums.kl += terms.kl * m;
            sums.entropy += terms.entropy * m;
            sums.logp += terms.logp * m;
        }
        self.epoch += 1;
        let n = data.len() as f64;
        Ok(EpochMetrics {
            epoch: self.epoch,
            mean_loss: total / n,
            terms: LossTerms {
                bce: sums.bce / n,
                kl: sums.kl / n,
                entropy: sums.entropy / n,
                logp: sums.logp / n,
            },
            weights,
        })
    }
}

/// Trains for `config.epochs` epochs, calling `on_epoch` after each one.
pub fn train(
    data: &[ObservationTriple],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, &RceParams),
) -> Result<(RceParams, Vec<EpochMetrics>), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut trainer = Trainer::new(config.clone())?;
    let mut log = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let m = trainer.run_epoch(data)?;
        on_epoch(&m, trainer.params());
        log.push(m);
    }
    Ok((trainer.into_params(), log))
}

/// Tape-free evaluation of the four bound terms for one triple.
pub fn bound_terms<M: LatentModel + BackwardEncode>(
    model: &M,
    triple: &ObservationTriple,
    eps1: &[f64],
    eps2: &[f64],
) -> Result<LossTerms, TensorError> {
    let enc_next = model.encode(&triple.x_next)?;
    let z_hat = enc_next.sample_reparam(eps1)?;
    let back = model.backward_encode(&triple.x_t, &z_hat)?;
    let z_bar = back.sample_reparam(eps2)?;
    let dynamics = model.linearize(&z_bar, &triple.u_t)?;
    let z_t = dynamics.reverse(&z_hat, &triple.u_t)?;
    let enc_t = model.encode(&triple.x_t)?;
    Ok(LossTerms {
        bce: distributions::bernoulli_log_likelihood(&model.decode(&z_hat)?, &triple.x_next)?,
        kl: distributions::kl_diag(&back, &enc_t)?,
        entropy: distributions::entropy(&enc_next),
        logp: distributions::log_prob(&enc_t, &z_t)?,
    })
}
