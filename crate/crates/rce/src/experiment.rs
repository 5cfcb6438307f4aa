//! Planning runs, model evaluation and the noise sweep.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rce_core::env::{EnvConfig, PlanarState};
use rce_core::metrics::{self, ExperimentReport, MetricError, PlanningLoss, Summary};
use rce_core::model::LatentModel;
use rce_core::planner::{receding_horizon_control, PlanConfig, PlannerError, Trace};
use rce_core::training::{EpochMetrics, TrainConfig, TrainError, Trainer};
use rce_core::{RceParams, Tensor};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Env(#[from] rce_core::env::EnvError),
    #[error("invalid experiment config: {0}")]
    Config(&'static str),
}

/// How planning runs are set up and scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanningConfig {
    pub runs: usize,
    /// Real steps `T` per run.
    pub steps: usize,
    pub eps_goal: f64,
    /// Side of the square in each corner from which start and goal are drawn.
    pub corner_box: f64,
    pub planner: PlanConfig,
    /// True-state cost matrices used to score executed trajectories.
    pub q_true: Tensor,
    pub r_true: Tensor,
}

impl Default for PlanningConfig {
    fn default() -> Self {
        Self {
            runs: 20,
            steps: 40,
            eps_goal: 2.0,
            corner_box: 4.0,
            planner: PlanConfig::planar(2, 2),
            q_true: Tensor::eye(2),
            r_true: Tensor::eye(2).scale(0.01),
        }
    }
}

/// A start near a random corner and a goal near the opposite one.
pub fn corner_task<R: Rng + ?Sized>(env: &EnvConfig, corner_box: f64, rng: &mut R) -> (PlanarState, PlanarState) {
    let (lo, hi) = env.bounds();
    let corner: u8 = rng.random_range(0..4);
    let (fx, fy) = (corner & 1 == 1, corner & 2 == 2);
    let mut draw = |far: bool| {
        let d = rng.random_range(0.0..corner_box);
        if far {
            hi - d
        } else {
            lo + d
        }
    };
    let start = PlanarState::new(draw(fx), draw(fy));
    let goal = PlanarState::new(draw(!fx), draw(!fy));
    (start, goal)
}

/// One executed planning episode and its scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRun {
    pub start: PlanarState,
    pub goal: PlanarState,
    pub trace: Trace,
    pub loss: PlanningLoss,
    pub success: bool,
}

/// Runs `cfg.runs` corner-to-corner episodes. Run `i` draws its task and
/// all of its randomness from stream `i` of a generator seeded by `seed`.
pub fn run_planning<M: LatentModel + ?Sized>(
    env: &EnvConfig,
    model: &M,
    cfg: &PlanningConfig,
    seed: u64,
    mut on_run: impl FnMut(usize, &PlanRun),
) -> Result<Vec<PlanRun>, ExperimentError> {
    if cfg.runs == 0 {
        return Err(ExperimentError::Config("runs must be positive"));
    }
    let mut out = Vec::with_capacity(cfg.runs);
    for i in 0..cfg.runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let (start, goal) = corner_task(env, cfg.corner_box, &mut rng);
        let trace = receding_horizon_control(env, model, start, goal, cfg.steps, &cfg.planner, &mut rng)?;
        let loss = metrics::planning_loss(&trace, goal, &cfg.q_true, &cfg.r_true)?;
        let success = !trace.failed() && metrics::reached_and_stayed(&trace.states, goal, cfg.eps_goal);
        let run = PlanRun {
            start,
            goal,
            trace,
            loss,
            success,
        };
        on_run(i, &run);
        out.push(run);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub reconstruction: Summary,
    pub prediction: Summary,
}

pub fn evaluate<M: LatentModel + ?Sized>(model: &M, data: &Dataset) -> Result<Evaluation, ExperimentError> {
    Ok(Evaluation {
        reconstruction: metrics::reconstruction_loss(model, &data.triples)?,
        prediction: metrics::prediction_loss(model, &data.triples)?,
    })
}

pub fn report(sigma: f64, eval: &Evaluation, runs: &[PlanRun]) -> ExperimentReport {
    let losses: Vec<f64> = runs.iter().map(|r| r.loss.value).collect();
    let hits = runs.iter().filter(|r| r.success).count();
    ExperimentReport {
        noise_sigma: sigma,
        reconstruction_loss: eval.reconstruction,
        prediction_loss: eval.prediction,
        planning_loss: Summary::of(&losses).unwrap_or(Summary { mean: 0.0, std: 0.0 }),
        success_rate: hits as f64 / runs.len().max(1) as f64,
        failed_runs: runs.iter().filter(|r| r.loss.failed).count(),
        runs: runs.len(),
    }
}

/// Trains on `data`, reporting every epoch with its elapsed wall time.
pub fn train_model(
    data: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, f64, &RceParams),
) -> Result<(RceParams, Vec<EpochMetrics>), ExperimentError> {
    if data.triples.is_empty() {
        return Err(TrainError::EmptyDataset.into());
    }
    if data.header.n_x != config.arch.dims.n_x || data.header.n_u != config.arch.dims.n_u {
        return Err(ExperimentError::Config("dataset dimensions do not match the architecture"));
    }
    let clock = Instant::now();
    let mut trainer = Trainer::new(config.clone())?;
    let mut log = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let m = trainer.run_epoch(&data.triples)?;
        let wall = clock.elapsed().as_secs_f64();
        on_epoch(&m, wall, trainer.params());
        log.push(m);
    }
    Ok((trainer.into_params(), log))
}

/// Everything needed to reproduce a noise sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub sigmas: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub train: TrainConfig,
    pub planning: PlanningConfig,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![0.0, 1.0, 2.0, 5.0],
            n_train: 5000,
            n_test: 1000,
            train: TrainConfig::default(),
            planning: PlanningConfig::default(),
            seed: 0,
        }
    }
}

/// Seeds derived from the sweep seed so that every stage of every noise
/// level is independent and reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSeeds {
    pub train_data: u64,
    pub test_data: u64,
    pub training: u64,
    pub planning: u64,
}

impl StageSeeds {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            train_data: rng.random(),
            test_data: rng.random(),
            training: rng.random(),
            planning: rng.random(),
        }
    }
}

/// Result of one noise level of a sweep.
#[derive(Debug, Clone)]
pub struct SweepLevel {
    pub report: ExperimentReport,
    pub params: RceParams,
    pub training_log: Vec<EpochMetrics>,
    pub runs: Vec<PlanRun>,
}

/// Generates data, trains, evaluates on held-out triples and plans, for one
/// noise level.
pub fn sweep_level(
    cfg: &SweepConfig,
    sigma: f64,
    mut progress: impl FnMut(&str),
) -> Result<SweepLevel, ExperimentError> {
    let seeds = StageSeeds::new(cfg.seed);
    let train = Dataset::generate_planar(sigma, cfg.n_train, seeds.train_data)?;
    let test = Dataset::generate_planar(sigma, cfg.n_test, seeds.test_data)?;
    let train_cfg = TrainConfig {
        seed: seeds.training,
        ..cfg.train.clone()
    };
    let (params, training_log) = train_model(&train, &train_cfg, |m, wall, _| {
        progress(&format!(
            "sigma {sigma}: epoch {} loss {:.3} ({wall:.0}s)",
            m.epoch, m.mean_loss
        ))
    })?;
    let eval = evaluate(&params, &test)?;
    let env = EnvConfig::planar(sigma);
    let runs = run_planning(&env, &params, &cfg.planning, seeds.planning, |i, r| {
        progress(&format!(
            "sigma {sigma}: run {i} final distance {:.2}",
            r.trace.states.last().map_or(f64::NAN, |s| s.distance(&r.goal))
        ))
    })?;
    Ok(SweepLevel {
        report: report(sigma, &eval, &runs),
        params,
        training_log,
        runs,
    })
}
