//! Latent-space trajectory optimization.
//!
//! The quadratic cost is charged on the states reached after each action:
//!
//! ```text
//! J = Σ_{t=0}^{H−1} (z_{t+1} − g)ᵀ Q (z_{t+1} − g) + u_tᵀ R u_t
//! ```
//!
//! Around a reference `(z̄, ū)` the deviations `y = z − z̄`, `v = u − ū` obey
//! `y_{t+1} = A_t y_t + B_t v_t + o_t`. The offset `o_t` and the constant
//! parts of the cost are carried by an augmented state `[y; 1]`, so one
//! Riccati recursion handles the whole affine problem.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::env::{self, EnvConfig, PlanarState};
use crate::model::{LatentModel, LocalLinearDynamics};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlannerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("control Hessian at step {step} is not positive definite even with regularization {mu}")]
    NotPositiveDefinite { step: usize, mu: f64 },
    #[error("invalid planner config: {0}")]
    Config(&'static str),
    #[error("reference rollout from the initial actions is not finite")]
    NonFiniteReference,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlanConfig {
    pub horizon: usize,
    pub ilqr_iters: usize,
    /// `n_z × n_z`, positive semidefinite.
    pub q: Tensor,
    /// `n_u × n_u`, positive definite.
    pub r: Tensor,
    /// Per-axis bound on every planned action.
    pub action_clip: f64,
    /// First Levenberg shift tried when the control Hessian is not PD.
    pub levenberg_mu0: f64,
    /// Line-search step scales are `1, ½, …, 2^{−(line_search_steps − 1)}`.
    pub line_search_steps: usize,
}

impl PlanConfig {
    /// `Q = I`, `R = 0.01·I`, `H = 40`, ten iterations, actions within ±3.
    pub fn planar(n_z: usize, n_u: usize) -> Self {
        Self {
            horizon: 40,
            ilqr_iters: 10,
            q: Tensor::eye(n_z),
            r: Tensor::eye(n_u).scale(0.01),
            action_clip: 3.0,
            levenberg_mu0: 1e-6,
            line_search_steps: 7,
        }
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.ilqr_iters == 0 {
            return Err(PlannerError::Config("ilqr_iters must be positive"));
        }
        if !(self.action_clip > 0.0) {
            return Err(PlannerError::Config("action_clip must be positive"));
        }
        if !(self.levenberg_mu0 > 0.0) {
            return Err(PlannerError::Config("levenberg_mu0 must be positive"));
        }
        if self.line_search_steps == 0 {
            return Err(PlannerError::Config("line_search_steps must be positive"));
        }
        if self.q.rows() != self.q.cols() || self.r.rows() != self.r.cols() {
            return Err(PlannerError::Config("Q and R must be square"));
        }
        if self.r.cholesky().is_err() {
            return Err(PlannerError::Config("R must be positive definite"));
        }
        Ok(())
    }

    fn clip(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .map(|v| v.clamp(-self.action_clip, self.action_clip))
            .collect()
    }
}

/// Latents `z̄_0..z̄_H`, actions `ū_0..ū_{H−1}` and the dynamics linearized
/// at each `(z̄_t, ū_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub latents: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub dynamics: Vec<LocalLinearDynamics>,
}

impl ReferenceTrajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// Quadratic cost of the trajectory.
    pub fn cost(&self, goal: &[f64], q: &Tensor, r: &Tensor) -> Result<f64, TensorError> {
        trajectory_cost(&self.latents, &self.actions, goal, q, r)
    }

    /// One linear step per transition with the offset that makes the
    /// reference itself a solution of the linear model.
    pub fn linear_steps(&self) -> Result<Vec<LinearStep>, TensorError> {
        (0..self.horizon())
            .map(|t| {
                let d = &self.dynamics[t];
                let pred = d.forward(&self.latents[t], &self.actions[t])?;
                let offset = pred
                    .iter()
                    .zip(&self.latents[t + 1])
                    .map(|(p, z)| p - z)
                    .collect();
                Ok(LinearStep {
                    a: d.a(),
                    b: d.b().clone(),
                    offset,
                })
            })
            .collect()
    }
}

fn quad(m: &Tensor, x: &[f64]) -> Result<f64, TensorError> {
    let mx = m.matvec(x)?;
    Ok(x.iter().zip(&mx).map(|(a, b)| a * b).sum())
}

/// `Σ_t (z_{t+1} − g)ᵀQ(z_{t+1} − g) + u_tᵀ R u_t`.
pub fn trajectory_cost(
    latents: &[Vec<f64>],
    actions: &[Vec<f64>],
    goal: &[f64],
    q: &Tensor,
    r: &Tensor,
) -> Result<f64, TensorError> {
    let mut j = 0.0;
    for (t, u) in actions.iter().enumerate() {
        let e: Vec<f64> = latents[t + 1].iter().zip(goal).map(|(z, g)| z - g).collect();
        j += quad(q, &e)? + quad(r, u)?;
    }
    Ok(j)
}

/// Rolls `actions` through the model from `z_init`, linearizing at every
/// visited `(z̄_t, ū_t)`.
pub fn rollout_reference<M: LatentModel + ?Sized>(
    model: &M,
    z_init: &[f64],
    actions: &[Vec<f64>],
) -> Result<ReferenceTrajectory, TensorError> {
    let mut latents = Vec::with_capacity(actions.len() + 1);
    let mut dynamics = Vec::with_capacity(actions.len());
    latents.push(z_init.to_vec());
    for u in actions {
        let z = latents.last().expect("non-empty");
        let d = model.linearize(z, u)?;
        let next = d.forward(z, u)?;
        dynamics.push(d);
        latents.push(next);
    }
    Ok(ReferenceTrajectory {
        latents,
        actions: actions.to_vec(),
        dynamics,
    })
}

/// `y_{t+1} = A y_t + B v_t + offset` in deviation coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStep {
    pub a: Tensor,
    pub b: Tensor,
    pub offset: Vec<f64>,
}

/// Affine feedback on the augmented deviation state.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrPolicy {
    /// `K_t`, `n_u × (n_z + 1)`; `v_t = K_t [y_t; 1]`.
    pub gains: Vec<Tensor>,
    /// Cost-to-go matrices `V_0..V_H` on the augmented state.
    pub value: Vec<Tensor>,
    /// Levenberg shift that made every control Hessian PD.
    pub mu: f64,
}

impl LqrPolicy {
    /// Optimal cost of the linear-quadratic problem starting on the
    /// reference (`y_0 = 0`).
    pub fn expected_cost(&self) -> f64 {
        let v = &self.value[0];
        let n = v.rows() - 1;
        v.get(n, n)
    }

    /// `v_t = K_y y + α k`.
    pub fn control(&self, t: usize, y: &[f64], alpha: f64) -> Vec<f64> {
        let k = &self.gains[t];
        let n = y.len();
        (0..k.rows())
            .map(|i| {
                let fb: f64 = (0..n).map(|j| k.get(i, j) * y[j]).sum();
                fb + alpha * k.get(i, n)
            })
            .collect()
    }
}

fn augmented_state_cost(q: &Tensor, e: &[f64]) -> Result<Tensor, TensorError> {
    let n = e.len();
    let qe = q.matvec(e)?;
    let eqe: f64 = e.iter().zip(&qe).map(|(a, b)| a * b).sum();
    let mut out = Tensor::zeros(n + 1, n + 1);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, q.get(i, j));
        }
        out.set(i, n, qe[i]);
        out.set(n, i, qe[i]);
    }
    out.set(n, n, eqe);
    Ok(out)
}

impl LinearStep {
    /// `([[A, offset], [0, 1]], [[B], [0]])` acting on `[y; 1]`.
    pub fn augmented(&self) -> (Tensor, Tensor) {
        augment(self)
    }
}

fn augment(step: &LinearStep) -> (Tensor, Tensor) {
    let n = step.a.rows();
    let m = step.b.cols();
    let mut a = Tensor::zeros(n + 1, n + 1);
    let mut b = Tensor::zeros(n + 1, m);
    for i in 0..n {
        for j in 0..n {
            a.set(i, j, step.a.get(i, j));
        }
        a.set(i, n, step.offset[i]);
        for j in 0..m {
            b.set(i, j, step.b.get(i, j));
        }
    }
    a.set(n, n, 1.0);
    (a, b)
}

/// Riccati recursion for the affine problem given per-step linear models,
/// reference states `z̄_0..z̄_H`, reference actions and the goal.
pub fn lqr_backward_steps(
    steps: &[LinearStep],
    ref_latents: &[Vec<f64>],
    ref_actions: &[Vec<f64>],
    goal: &[f64],
    cfg: &PlanConfig,
) -> Result<LqrPolicy, PlannerError> {
    let h = steps.len();
    if ref_latents.len() != h + 1 || ref_actions.len() != h {
        return Err(PlannerError::Config("reference length does not match the horizon"));
    }
    let mut mu = 0.0;
    loop {
        match riccati(steps, ref_latents, ref_actions, goal, cfg, mu) {
            Ok(policy) => return Ok(policy),
            Err(PlannerError::NotPositiveDefinite { step, .. }) => {
                mu = if mu == 0.0 { cfg.levenberg_mu0 } else { mu * 10.0 };
                if mu > 1e6 {
                    return Err(PlannerError::NotPositiveDefinite { step, mu: 1e6 });
                }
            }
            Err(e) => return Err(e),
        }
    }
}

fn riccati(
    steps: &[LinearStep],
    ref_latents: &[Vec<f64>],
    ref_actions: &[Vec<f64>],
    goal: &[f64],
    cfg: &PlanConfig,
    mu: f64,
) -> Result<LqrPolicy, PlannerError> {
    let h = steps.len();
    let n = goal.len();
    let error = |t: usize| -> Vec<f64> { ref_latents[t].iter().zip(goal).map(|(z, g)| z - g).collect() };

    let mut value = vec![Tensor::zeros(n + 1, n + 1); h + 1];
    let mut gains = vec![Tensor::zeros(0, 0); h];
    value[h] = if h > 0 {
        augmented_state_cost(&cfg.q, &error(h))?
    } else {
        Tensor::zeros(n + 1, n + 1)
    };

    for t in (0..h).rev() {
        let (a, b) = augment(&steps[t]);
        let v = &value[t + 1];
        let m = b.cols();
        let ubar = &ref_actions[t];
        let r_ubar = cfg.r.matvec(ubar)?;

        let vb = v.matmul(&b)?;
        let mut quu = cfg.r.add(&b.transpose().matmul(&vb)?)?;
        for i in 0..m {
            quu.set(i, i, quu.get(i, i) + mu);
        }
        let quu = quu.symmetrize();
        let mut quy = vb.transpose().matmul(&a)?;
        for i in 0..m {
            quy.set(i, n, quy.get(i, n) + r_ubar[i]);
        }
        let mut qyy = a.transpose().matmul(&v.matmul(&a)?)?;
        let u_cost: f64 = ubar.iter().zip(&r_ubar).map(|(x, y)| x * y).sum();
        qyy.set(n, n, qyy.get(n, n) + u_cost);

        let sol = quu.solve_spd(&quy).map_err(|e| match e {
            TensorError::NotPositiveDefinite => PlannerError::NotPositiveDefinite { step: t, mu },
            other => other.into(),
        })?;
        let k = sol.scale(-1.0);
        let mut vt = qyy.add(&quy.transpose().matmul(&k)?)?.symmetrize();
        if t >= 1 {
            vt = vt.add(&augmented_state_cost(&cfg.q, &error(t))?)?;
        }
        if !k.is_finite() || !vt.is_finite() {
            return Err(PlannerError::NotPositiveDefinite { step: t, mu });
        }
        gains[t] = k;
        value[t] = vt;
    }
    Ok(LqrPolicy { gains, value, mu })
}

/// Riccati backward pass around a self-consistent model trajectory.
pub fn lqr_backward(traj: &ReferenceTrajectory, z_goal: &[f64], cfg: &PlanConfig) -> Result<LqrPolicy, PlannerError> {
    let steps = traj.linear_steps()?;
    lqr_backward_steps(&steps, &traj.latents, &traj.actions, z_goal, cfg)
}

/// Output of [`ilqr`].
#[derive(Debug, Clone, PartialEq)]
pub struct IlqrResult {
    pub actions: Vec<Vec<f64>>,
    pub cost: f64,
    /// Cost of the initial sequence followed by every accepted iterate.
    pub accepted_costs: Vec<f64>,
    pub trajectory: ReferenceTrajectory,
}

/// Applies `policy` around `reference` with feedforward scale `alpha`.
fn forward_pass<M: LatentModel + ?Sized>(
    model: &M,
    reference: &ReferenceTrajectory,
    policy: &LqrPolicy,
    alpha: f64,
    cfg: &PlanConfig,
) -> Result<ReferenceTrajectory, TensorError> {
    let h = reference.horizon();
    let mut latents = Vec::with_capacity(h + 1);
    let mut actions = Vec::with_capacity(h);
    let mut dynamics = Vec::with_capacity(h);
    latents.push(reference.latents[0].clone());
    for t in 0..h {
        let z = &latents[t];
        let y: Vec<f64> = z.iter().zip(&reference.latents[t]).map(|(a, b)| a - b).collect();
        let v = policy.control(t, &y, alpha);
        let u: Vec<f64> = reference.actions[t].iter().zip(&v).map(|(a, b)| a + b).collect();
        let u = cfg.clip(&u);
        let d = model.linearize(z, &u)?;
        let next = d.forward(z, &u)?;
        actions.push(u);
        dynamics.push(d);
        latents.push(next);
    }
    Ok(ReferenceTrajectory {
        latents,
        actions,
        dynamics,
    })
}

/// Iterative LQR with a backtracking line search on the feedforward term.
/// Returns the best sequence found; line-search exhaustion ends early.
pub fn ilqr<M: LatentModel + ?Sized>(
    model: &M,
    z_init: &[f64],
    z_goal: &[f64],
    init_actions: &[Vec<f64>],
    cfg: &PlanConfig,
) -> Result<IlqrResult, PlannerError> {
    let actions: Vec<Vec<f64>> = init_actions.iter().map(|u| cfg.clip(u)).collect();
    let mut best = rollout_reference(model, z_init, &actions).map_err(|e| match e {
        TensorError::Domain { .. } => PlannerError::NonFiniteReference,
        e => e.into(),
    })?;
    let mut best_cost = best.cost(z_goal, &cfg.q, &cfg.r)?;
    if !best_cost.is_finite() {
        return Err(PlannerError::NonFiniteReference);
    }
    let mut accepted = vec![best_cost];
    if best.horizon() == 0 {
        return Ok(IlqrResult {
            actions,
            cost: best_cost,
            accepted_costs: accepted,
            trajectory: best,
        });
    }
    for _ in 0..cfg.ilqr_iters {
        let policy = lqr_backward(&best, z_goal, cfg)?;
        let mut improved = false;
        let mut alpha = 1.0;
        for _ in 0..cfg.line_search_steps {
            // A candidate that leaves the model's domain is just rejected.
            let Ok(cand) = forward_pass(model, &best, &policy, alpha, cfg) else {
                alpha *= 0.5;
                continue;
            };
            let cost = cand.cost(z_goal, &cfg.q, &cfg.r)?;
            if cost.is_finite() && cost < best_cost {
                best = cand;
                best_cost = cost;
                accepted.push(cost);
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(IlqrResult {
        actions: best.actions.clone(),
        cost: best_cost,
        accepted_costs: accepted,
        trajectory: best,
    })
}

/// Everything executed during one receding-horizon episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// True states `s_0..s_T`.
    pub states: Vec<PlanarState>,
    /// Executed actions `u_0..u_{T−1}`.
    pub actions: Vec<[f64; 2]>,
    /// Rendered observation of every state.
    pub observations: Vec<Vec<f64>>,
    /// `‖z_t − z_goal‖` for every state's posterior mean.
    pub latent_goal_distance: Vec<f64>,
    /// Step at which planning failed, if it did.
    pub failed_at: Option<usize>,
}

impl Trace {
    pub fn failed(&self) -> bool {
        self.failed_at.is_some()
    }
}

fn random_actions<R: Rng + ?Sized>(n: usize, n_u: usize, clip: f64, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..n_u).map(|_| rng.random_range(-clip..=clip)).collect())
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    crate::math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Plans from `s_init` towards `s_goal` for `steps` real steps, re-planning
/// after each one with the previous plan shifted by one and a fresh random
/// action appended.
pub fn receding_horizon_control<M: LatentModel + ?Sized, R: Rng + ?Sized>(
    env_cfg: &EnvConfig,
    model: &M,
    s_init: PlanarState,
    s_goal: PlanarState,
    steps: usize,
    cfg: &PlanConfig,
    rng: &mut R,
) -> Result<Trace, PlannerError> {
    cfg.validate()?;
    let n_u = model.dims().n_u;
    if n_u != 2 || model.dims().n_x != env_cfg.n_x() {
        return Err(PlannerError::Config("model dimensions do not match the environment"));
    }
    let z_goal = model.encode(&env::render(env_cfg, &s_goal))?.mean().to_vec();
    let mut s = s_init;
    let mut x = env::render(env_cfg, &s);
    let mut z = model.encode(&x)?.mean().to_vec();
    let mut plan = random_actions(cfg.horizon, n_u, cfg.action_clip, rng);

    let mut trace = Trace {
        states: vec![s],
        actions: Vec::with_capacity(steps),
        observations: vec![x.clone()],
        latent_goal_distance: vec![dist(&z, &z_goal)],
        failed_at: None,
    };
    for t in 0..steps {
        let result = match ilqr(model, &z, &z_goal, &plan, cfg) {
            Ok(r) => r,
            Err(PlannerError::NotPositiveDefinite { .. } | PlannerError::NonFiniteReference) => {
                trace.failed_at = Some(t);
                return Ok(trace);
            }
            Err(e) => return Err(e),
        };
        let u = match result.actions.first() {
            Some(u) => [u[0], u[1]],
            None => [0.0, 0.0],
        };
        let noise = env::sample_noise(env_cfg, rng);
        s = env::step(env_cfg, &s, u, noise);
        x = env::render(env_cfg, &s);
        z = model.encode(&x)?.mean().to_vec();

        plan = result.actions.into_iter().skip(1).collect();
        plan.extend(random_actions(1, n_u, cfg.action_clip, rng));
        plan.truncate(cfg.horizon);

        trace.states.push(s);
        trace.actions.push(u);
        trace.observations.push(x.clone());
        trace.latent_goal_distance.push(dist(&z, &z_goal));
    }
    Ok(trace)
}
