//! CSV reports. Every file starts with one comment line carrying the hash of
//! the configuration that produced it and the seed.

use std::io::Write;
use std::path::Path;

use rce_core::metrics::ExperimentReport;
use rce_core::training::EpochMetrics;
use serde::Serialize;

use crate::experiment::PlanRun;

/// CRC-32 of the configuration's JSON form, as eight hex digits.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("configs are plain data");
    format!("{:08x}", crc32fast::hash(&json))
}

/// A CSV table with its provenance comment.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub config_hash: String,
    pub seed: u64,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(config_hash: String, seed: u64, columns: Vec<&'static str>) -> Self {
        Self {
            config_hash,
            seed,
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        writeln!(out, "# config_hash={} seed={}", self.config_hash, self.seed).expect("in-memory write");
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory write")
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }
}

fn f(v: f64) -> String {
    v.to_string()
}

/// Per-epoch training log. Wall-clock times are left out so that the file
/// depends only on the configuration and seed.
pub fn training_log(hash: String, seed: u64, epochs: &[EpochMetrics]) -> Table {
    let mut t = Table::new(
        hash,
        seed,
        vec!["epoch", "mean_loss", "bce_term", "kl_term", "entropy_term", "logp_term"],
    );
    for m in epochs {
        t.push(vec![
            m.epoch.to_string(),
            f(m.mean_loss),
            f(m.terms.bce),
            f(m.terms.kl),
            f(m.terms.entropy),
            f(m.terms.logp),
        ]);
    }
    t
}

/// One row per noise level, for comparing models across noise.
pub fn experiment_table(hash: String, seed: u64, reports: &[ExperimentReport]) -> Table {
    let mut t = Table::new(
        hash,
        seed,
        vec![
            "noise_sigma",
            "reconstruction_loss_mean",
            "reconstruction_loss_std",
            "prediction_loss_mean",
            "prediction_loss_std",
            "planning_loss_mean",
            "planning_loss_std",
            "success_rate",
            "failed_runs",
            "runs",
        ],
    );
    for r in reports {
        t.push(vec![
            f(r.noise_sigma),
            f(r.reconstruction_loss.mean),
            f(r.reconstruction_loss.std),
            f(r.prediction_loss.mean),
            f(r.prediction_loss.std),
            f(r.planning_loss.mean),
            f(r.planning_loss.std),
            f(r.success_rate),
            r.failed_runs.to_string(),
            r.runs.to_string(),
        ]);
    }
    t
}

/// One row per planning run.
pub fn plan_runs_table(hash: String, seed: u64, runs: &[PlanRun]) -> Table {
    let mut t = Table::new(
        hash,
        seed,
        vec![
            "run",
            "start_x",
            "start_y",
            "goal_x",
            "goal_y",
            "final_x",
            "final_y",
            "final_distance",
            "planning_loss",
            "success",
            "failed",
        ],
    );
    for (i, r) in runs.iter().enumerate() {
        let last = r.trace.states.last().copied().unwrap_or(r.start);
        t.push(vec![
            i.to_string(),
            f(r.start.position[0]),
            f(r.start.position[1]),
            f(r.goal.position[0]),
            f(r.goal.position[1]),
            f(last.position[0]),
            f(last.position[1]),
            f(last.distance(&r.goal)),
            f(r.loss.value),
            r.success.to_string(),
            r.loss.failed.to_string(),
        ]);
    }
    t
}

/// Step-by-step trace of one run.
pub fn trace_table(hash: String, seed: u64, run: &PlanRun) -> Table {
    let mut t = Table::new(
        hash,
        seed,
        vec!["step", "true_state_x", "true_state_y", "action_x", "action_y", "latent_goal_distance"],
    );
    let tr = &run.trace;
    for (i, s) in tr.states.iter().enumerate() {
        let (ax, ay) = match tr.actions.get(i) {
            Some(u) => (f(u[0]), f(u[1])),
            None => (String::new(), String::new()),
        };
        t.push(vec![
            i.to_string(),
            f(s.position[0]),
            f(s.position[1]),
            ax,
            ay,
            f(tr.latent_goal_distance[i]),
        ]);
    }
    t
}
