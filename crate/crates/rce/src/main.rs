use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rce::checkpoint::Checkpoint;
use rce::dataset::Dataset;
use rce::experiment::{self, PlanningConfig, SweepConfig};
use rce::report::{self, config_hash};
use rce::{seed, strip};
use rce_core::env::EnvConfig;
use rce_core::metrics::Summary;
use rce_core::training::TrainConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "rce", version, about = "Train latent models of the planar system and plan with them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Env {
    Planar,
}

#[derive(Subcommand)]
enum Command {
    /// Sample transition triples and write a dataset file.
    GenData {
        #[arg(long, value_enum, default_value = "planar")]
        env: Env,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset file.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON training config; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run corner-to-corner planning episodes with a trained model.
    Plan {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum, default_value = "planar")]
        env: Env,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON planning config; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        /// Directory for per-run trace CSVs and PNG strips.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Reconstruction and prediction losses of a model on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Generate, train, evaluate and plan for each noise level.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
        /// JSON sweep config; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Directory for the trained checkpoints and training logs.
        #[arg(long)]
        ckpt_dir: Option<PathBuf>,
    },
}

fn load_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn write_table(path: &Path, table: &report::Table) -> Result<()> {
    table.write(path).with_context(|| format!("writing {}", path.display()))
}

fn hash_of<T: Serialize>(v: &T) -> String {
    config_hash(v)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            env: Env::Planar,
            n,
            sigma,
            seed,
            out,
        } => {
            if n == 0 {
                bail!("--n must be positive");
            }
            let seed = seed::resolve(seed)?;
            let data = Dataset::generate_planar(sigma, n, seed)?;
            data.write(&out).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Train { data, config, out, log } => {
            let dataset = Dataset::read(&data).with_context(|| format!("reading {}", data.display()))?;
            let mut cfg: TrainConfig = load_json(config.as_deref())?;
            cfg.seed = seed::resolve(cfg.seed)?;
            cfg.validate()?;
            let every = cfg.checkpoint_every;
            let mut save_err = None;
            let (params, epochs) = experiment::train_model(&dataset, &cfg, |m, wall, params| {
                eprintln!(
                    "epoch {:>3}  loss {:>10.3}  bce {:>10.3}  kl {:>7.3}  entropy {:>7.3}  logp {:>7.3}  {wall:.0}s",
                    m.epoch, m.mean_loss, m.terms.bce, m.terms.kl, m.terms.entropy, m.terms.logp
                );
                if every > 0 && m.epoch % every == 0 && m.epoch < cfg.epochs {
                    let ckpt = Checkpoint {
                        params: params.clone(),
                        train_config: cfg.clone(),
                        epoch: m.epoch,
                    };
                    let path = out.with_extension(format!("epoch{}.ckpt", m.epoch));
                    if let Err(e) = ckpt.write(&path) {
                        save_err.get_or_insert(e);
                    }
                }
            })?;
            if let Some(e) = save_err {
                return Err(e.into());
            }
            let ckpt = Checkpoint {
                params,
                train_config: cfg.clone(),
                epoch: cfg.epochs,
            };
            ckpt.write(&out).with_context(|| format!("writing {}", out.display()))?;
            if let Some(log) = log {
                write_table(&log, &report::training_log(hash_of(&cfg), cfg.seed, &epochs))?;
            }
        }
        Command::Plan {
            ckpt,
            env: Env::Planar,
            sigma,
            runs,
            seed,
            config,
            report: out,
            traces,
        } => {
            let model = Checkpoint::read(&ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
            let mut cfg: PlanningConfig = load_json(config.as_deref())?;
            if let Some(r) = runs {
                cfg.runs = r;
            }
            cfg.planner.validate()?;
            let seed = seed::resolve(seed)?;
            let env = EnvConfig::planar(sigma);
            env.validate()?;
            let runs = experiment::run_planning(&env, &model.params, &cfg, seed, |i, r| {
                eprintln!(
                    "run {i:>2}  final distance {:>6.2}  success {}",
                    r.trace.states.last().map_or(f64::NAN, |s| s.distance(&r.goal)),
                    r.success
                )
            })?;
            let hash = hash_of(&(&cfg, sigma));
            write_table(&out, &report::plan_runs_table(hash.clone(), seed, &runs))?;
            if let Some(dir) = traces {
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                for (i, r) in runs.iter().enumerate() {
                    write_table(&dir.join(format!("run{i:02}.csv")), &report::trace_table(hash.clone(), seed, r))?;
                    let png = dir.join(format!("run{i:02}.png"));
                    let file = fs::File::create(&png).with_context(|| format!("writing {}", png.display()))?;
                    strip::png_strip(std::io::BufWriter::new(file), &r.trace.observations, env.side(), 4, 2)?;
                }
            }
            let losses: Vec<f64> = runs.iter().map(|r| r.loss.value).collect();
            let j = Summary::of(&losses).expect("at least one run");
            let hits = runs.iter().filter(|r| r.success).count();
            eprintln!(
                "success rate {:.2}  planning loss {:.1} ± {:.1}",
                hits as f64 / runs.len() as f64,
                j.mean,
                j.std
            );
        }
        Command::Eval { ckpt, data, report: out } => {
            let model = Checkpoint::read(&ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
            let dataset = Dataset::read(&data).with_context(|| format!("reading {}", data.display()))?;
            let eval = experiment::evaluate(&model.params, &dataset)?;
            let mut t = report::Table::new(
                hash_of(&(&model.train_config, &dataset.header)),
                dataset.header.seed,
                vec![
                    "noise_sigma",
                    "n",
                    "reconstruction_loss_mean",
                    "reconstruction_loss_std",
                    "prediction_loss_mean",
                    "prediction_loss_std",
                ],
            );
            t.push(vec![
                dataset.header.sigma.to_string(),
                dataset.triples.len().to_string(),
                eval.reconstruction.mean.to_string(),
                eval.reconstruction.std.to_string(),
                eval.prediction.mean.to_string(),
                eval.prediction.std.to_string(),
            ]);
            write_table(&out, &t)?;
        }
        Command::Sweep {
            sigmas,
            config,
            seed,
            out,
            ckpt_dir,
        } => {
            let mut cfg: SweepConfig = load_json(config.as_deref())?;
            if let Some(s) = sigmas {
                cfg.sigmas = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.seed = seed::resolve(cfg.seed)?;
            cfg.train.validate()?;
            cfg.planning.planner.validate()?;
            if cfg.sigmas.is_empty() {
                bail!("no noise levels given");
            }
            if let Some(dir) = &ckpt_dir {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let hash = hash_of(&cfg);
            let mut reports = Vec::with_capacity(cfg.sigmas.len());
            for &sigma in &cfg.sigmas {
                let level = experiment::sweep_level(&cfg, sigma, |msg| eprintln!("{msg}"))?;
                if let Some(dir) = &ckpt_dir {
                    let ckpt = Checkpoint {
                        params: level.params.clone(),
                        train_config: cfg.train.clone(),
                        epoch: cfg.train.epochs,
                    };
                    let path = dir.join(format!("sigma{sigma}.ckpt"));
                    ckpt.write(&path).with_context(|| format!("writing {}", path.display()))?;
                    let log = dir.join(format!("sigma{sigma}.log.csv"));
                    write_table(&log, &report::training_log(hash.clone(), cfg.seed, &level.training_log))?;
                }
                reports.push(level.report);
                write_table(&out, &report::experiment_table(hash.clone(), cfg.seed, &reports))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
