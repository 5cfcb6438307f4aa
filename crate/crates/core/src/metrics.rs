//! Evaluation metrics: reconstruction and prediction cross-entropy,
//! true-state planning cost and goal-reaching success.

use alloc::vec::Vec;

use crate::distributions::bernoulli_log_likelihood;
use crate::env::{ObservationTriple, PlanarState};
use crate::math;
use crate::model::LatentModel;
use crate::planner::Trace;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("cannot evaluate an empty {0}")]
    Empty(&'static str),
    #[error("{traces} traces but {goals} goals")]
    GoalCount { traces: usize, goals: usize },
}

/// Mean and population standard deviation of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: math::sqrt(var),
        })
    }
}

/// Per-image binary cross-entropy of `decode(mean(encode(x_t)))` against `x_t`.
pub fn reconstruction_losses<M: LatentModel + ?Sized>(
    model: &M,
    data: &[ObservationTriple],
) -> Result<Vec<f64>, MetricError> {
    if data.is_empty() {
        return Err(MetricError::Empty("dataset"));
    }
    data.iter()
        .map(|d| {
            let z = model.encode(&d.x_t)?;
            let logits = model.decode(z.mean())?;
            Ok(-bernoulli_log_likelihood(&logits, &d.x_t)?)
        })
        .collect()
}

/// Per-image binary cross-entropy of the one-step prediction of `x_{t+1}`
/// through the posterior mean of `x_t` and the forward transition.
pub fn prediction_losses<M: LatentModel + ?Sized>(
    model: &M,
    data: &[ObservationTriple],
) -> Result<Vec<f64>, MetricError> {
    if data.is_empty() {
        return Err(MetricError::Empty("dataset"));
    }
    data.iter()
        .map(|d| {
            let z = model.encode(&d.x_t)?;
            let dynamics = model.linearize(z.mean(), &d.u_t)?;
            let z_next = dynamics.forward(z.mean(), &d.u_t)?;
            let logits = model.decode(&z_next)?;
            Ok(-bernoulli_log_likelihood(&logits, &d.x_next)?)
        })
        .collect()
}

pub fn reconstruction_loss<M: LatentModel + ?Sized>(
    model: &M,
    data: &[ObservationTriple],
) -> Result<Summary, MetricError> {
    let v = reconstruction_losses(model, data)?;
    Ok(Summary::of(&v).expect("non-empty"))
}

pub fn prediction_loss<M: LatentModel + ?Sized>(
    model: &M,
    data: &[ObservationTriple],
) -> Result<Summary, MetricError> {
    let v = prediction_losses(model, data)?;
    Ok(Summary::of(&v).expect("non-empty"))
}

/// Quadratic cost of an executed trajectory in true state space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanningLoss {
    pub value: f64,
    /// The planner gave up before the horizon; `value` covers the executed
    /// prefix only.
    pub failed: bool,
}

/// `Σ_{t=1..T} (s_t − g)ᵀQ(s_t − g) + u_{t−1}ᵀR u_{t−1}`, pairing each
/// state with the action that produced it. `q` and `r` are 2×2.
pub fn planning_loss(trace: &Trace, goal: PlanarState, q: &Tensor, r: &Tensor) -> Result<PlanningLoss, MetricError> {
    let mut value = 0.0;
    for (s, u) in trace.states.iter().skip(1).zip(&trace.actions) {
        let e = [s.position[0] - goal.position[0], s.position[1] - goal.position[1]];
        value += quad(q, &e)? + quad(r, u)?;
    }
    Ok(PlanningLoss {
        value,
        failed: trace.failed(),
    })
}

fn quad(m: &Tensor, v: &[f64]) -> Result<f64, TensorError> {
    let mv = m.matvec(v)?;
    Ok(v.iter().zip(&mv).map(|(a, b)| a * b).sum())
}

/// True if the states enter the `eps` ball around `goal` and never leave it
/// again.
pub fn reached_and_stayed(states: &[PlanarState], goal: PlanarState, eps: f64) -> bool {
    match states.iter().rposition(|s| s.distance(&goal) > eps) {
        None => !states.is_empty(),
        Some(last_out) => last_out + 1 < states.len(),
    }
}

/// Fraction of runs that reach and remain near their goal. Runs whose
/// planner failed count as failures.
pub fn success_rate(traces: &[Trace], goals: &[PlanarState], eps: f64) -> Result<f64, MetricError> {
    if traces.is_empty() {
        return Err(MetricError::Empty("trace set"));
    }
    if traces.len() != goals.len() {
        return Err(MetricError::GoalCount {
            traces: traces.len(),
            goals: goals.len(),
        });
    }
    let hits = traces
        .iter()
        .zip(goals)
        .filter(|(t, g)| !t.failed() && reached_and_stayed(&t.states, **g, eps))
        .count();
    Ok(hits as f64 / traces.len() as f64)
}

/// One row of the noise sweep.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExperimentReport {
    pub noise_sigma: f64,
    pub reconstruction_loss: Summary,
    pub prediction_loss: Summary,
    pub planning_loss: Summary,
    pub success_rate: f64,
    pub failed_runs: usize,
    pub runs: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn trace(path: &[[f64; 2]]) -> Trace {
        Trace {
            states: path.iter().map(|p| PlanarState::new(p[0], p[1])).collect(),
            actions: vec![[0.0, 0.0]; path.len().saturating_sub(1)],
            observations: Vec::new(),
            latent_goal_distance: Vec::new(),
            failed_at: None,
        }
    }

    #[test]
    fn summary_of_constant_has_zero_spread() {
        let s = Summary::of(&[3.0; 5]).unwrap();
        assert_eq!((s.mean, s.std), (3.0, 0.0));
        let s = Summary::of(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert!(Summary::of(&[]).is_none());
    }

    #[test]
    fn single_step_hand_value() {
        let t = trace(&[[5.0, 5.0], [6.0, 5.0]]);
        let goal = PlanarState::new(5.0, 5.0);
        let j = planning_loss(&t, goal, &Tensor::eye(2), &Tensor::eye(2).scale(0.01)).unwrap();
        assert_eq!(j.value, 1.0);
        assert!(!j.failed);
    }

    #[test]
    fn remain_clause() {
        let g = PlanarState::new(10.0, 10.0);
        let mut path = vec![[0.0, 0.0]; 41];
        for p in path.iter_mut().take(21).skip(10) {
            *p = [10.0, 10.0];
        }
        assert!(!reached_and_stayed(&trace(&path).states, g, 2.0));
        for p in path.iter_mut().skip(10) {
            *p = [10.5, 11.0];
        }
        assert!(reached_and_stayed(&trace(&path).states, g, 2.0));
        assert!(reached_and_stayed(&trace(&[[12.0, 10.0]]).states, g, 2.0));
        assert!(!reached_and_stayed(&[], g, 2.0));
    }
}
