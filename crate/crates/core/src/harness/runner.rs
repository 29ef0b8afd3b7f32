//! Training runs: one seed per worker, checkpointed at every evaluation point.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::diagnostics::{q_bias, weight_trace, AggregateCurve};
use crate::envs::{make_env, Environment};
use crate::rl::{Agent, SamplingPolicy, Transition};
use crate::rng::{self, streams, Rng, RngState};
use crate::tensor::Real;
use crate::{Error, Result};

use super::aggregate::write_aggregate;
use super::config::{Precision, RunConfig};
use super::metrics::{header, LayerMetric, MetricRecord, Table};

/// Stream for bootstrap resampling during aggregation.
const AGGREGATE_STREAM: u64 = 6;

pub const CONFIG_FILE: &str = "config.ini";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.csv"))
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.ckpt"))
}

/// Stops a run early, as if the process had been killed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunControl {
    /// Return after the checkpoint at this environment step.
    pub stop_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SeedStatus {
    /// Nothing left to do.
    AlreadyComplete,
    Completed {
        resumed_from: Option<u64>,
    },
    Stopped {
        at: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub status: SeedStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub seeds: Vec<SeedOutcome>,
    /// Written once every seed has finished.
    pub aggregate: Option<PathBuf>,
}

struct Session<T: Real> {
    agent: Agent<T>,
    env: Box<dyn Environment>,
    obs: Vec<f64>,
    env_rng: Rng,
    eval_rng: Rng,
    qbias_rng: Rng,
    step: u64,
    wall_offset: f64,
}

fn rng_words(ck: &Checkpoint, name: &str) -> Result<Rng> {
    let r = ck
        .get(name)
        .ok_or_else(|| Error::Checkpoint(format!("`{name}` missing")))?;
    RngState::from_words(&r.data)
        .map(|s| s.restore())
        .ok_or_else(|| Error::Checkpoint(format!("`{name}` is not a valid stream position")))
}

impl<T: Real> Session<T> {
    fn fresh(cfg: &RunConfig, seed: u64) -> Result<Self> {
        let mut env = make_env(&cfg.env)?;
        let spec = env.spec().clone();
        let agent = Agent::new(cfg.agent.clone(), spec.obs_dim, spec.action_dim, seed)?;
        let mut env_rng = rng::stream(seed, streams::ENV);
        let obs = env.reset(&mut env_rng);
        Ok(Self {
            agent,
            env,
            obs,
            env_rng,
            eval_rng: rng::stream(seed, streams::EVAL),
            qbias_rng: rng::stream(seed, streams::QBIAS),
            step: 0,
            wall_offset: 0.0,
        })
    }

    fn checkpoint(&self, wall: f64) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.extend("agent.", self.agent.checkpoint());
        ck.push_raw("env.state", &[self.env.state().len()], self.env.state());
        ck.push_raw("env.obs", &[self.obs.len()], self.obs.clone());
        for (name, r) in [
            ("rng.env", &self.env_rng),
            ("rng.eval", &self.eval_rng),
            ("rng.qbias", &self.qbias_rng),
        ] {
            let w = RngState::capture(r).to_words();
            ck.push_raw(name, &[w.len()], w);
        }
        ck.push_scalar("step", self.step as f64);
        ck.push_scalar("wallclock", wall);
        ck
    }

    fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        self.agent.restore(&ck.section("agent."))?;
        let state = ck
            .get("env.state")
            .ok_or_else(|| Error::Checkpoint("`env.state` missing".into()))?;
        self.env.set_state(&state.data);
        self.obs = ck
            .get("env.obs")
            .ok_or_else(|| Error::Checkpoint("`env.obs` missing".into()))?
            .data
            .clone();
        self.env_rng = rng_words(ck, "rng.env")?;
        self.eval_rng = rng_words(ck, "rng.eval")?;
        self.qbias_rng = rng_words(ck, "rng.qbias")?;
        self.step = ck.scalar("step")? as u64;
        self.wall_offset = ck.scalar("wallclock")?;
        Ok(())
    }

    fn layer_names(&self) -> Vec<String> {
        weight_trace(&self.agent.critics, 0, 1.0)
            .layers
            .into_iter()
            .map(|l| l.name)
            .collect()
    }

    /// Mean return of `episodes` deterministic episodes on a private copy of the environment.
    fn evaluate_return(&mut self, episodes: usize) -> Result<f64> {
        let mut total = 0.0;
        for _ in 0..episodes {
            let mut env = self.env.boxed_clone();
            let mut obs = env.reset(&mut self.eval_rng);
            loop {
                let a = self.agent.act_greedy(&obs)?;
                let r = env.step(&a);
                total += r.reward;
                if r.episode_over() {
                    break;
                }
                obs = r.observation;
            }
        }
        Ok(total / episodes as f64)
    }

    fn record(&mut self, cfg: &RunConfig, wall: Option<f64>) -> Result<MetricRecord> {
        let mut reasons: Vec<(String, String)> = Vec::new();
        let episode_return = self.evaluate_return(cfg.eval_episodes)?;

        let mut q = [f64::NAN; 4];
        let why = if !cfg.qbias {
            Some("disabled")
        } else if !self.agent.warmed_up() {
            Some("warmup")
        } else {
            let est = q_bias(
                &self.agent.critics,
                &SamplingPolicy(&self.agent.actor),
                self.env.as_ref(),
                cfg.agent.gamma,
                &cfg.qbias_config,
                &mut self.qbias_rng,
            )?;
            q = [est.mean_bias, est.std_bias, est.normalized_mean_bias, est.mean_return];
            None
        };
        if let Some(why) = why {
            for col in ["qbias_mean", "qbias_std", "qbias_normalized", "qbias_mc_return"] {
                reasons.push((col.into(), why.into()));
            }
        }

        let last = self.agent.last;
        for (col, v) in [
            ("critic_loss", last.critic_loss),
            ("actor_loss", last.actor_loss),
            ("alpha_loss", last.alpha_loss),
            ("entropy", last.entropy),
        ] {
            if v.is_nan() {
                reasons.push((col.into(), "no_update".into()));
            }
        }
        if wall.is_none() {
            reasons.push(("wallclock_s".into(), "disabled".into()));
        }

        let layers = weight_trace(&self.agent.critics, self.step, cfg.agent.critic_lr)
            .layers
            .into_iter()
            .map(|l| LayerMetric {
                name: l.name,
                norm: l.frobenius,
                elr: l.elr,
            })
            .collect();
        let mut rec = MetricRecord {
            env_step: self.step,
            grad_step: self.agent.critic_updates,
            episode_return,
            qbias_mean: q[0],
            qbias_std: q[1],
            qbias_normalized: q[2],
            qbias_mc_return: q[3],
            alpha: self.agent.alpha(),
            critic_loss: last.critic_loss,
            actor_loss: last.actor_loss,
            alpha_loss: last.alpha_loss,
            entropy: last.entropy,
            resets: self.agent.inits - 1,
            wallclock_s: wall.unwrap_or(f64::NAN),
            layers,
            nan_reasons: reasons,
        };
        rec.complete_reasons();
        Ok(rec)
    }

    fn env_step(&mut self) -> Result<()> {
        let action = self.agent.act(&self.obs)?;
        let r = self.env.step(&action);
        self.agent.train_step(&Transition {
            obs: std::mem::take(&mut self.obs),
            action,
            reward: r.reward,
            next_obs: r.observation.clone(),
            done: r.terminated,
        })?;
        self.obs = if r.episode_over() {
            self.env.reset(&mut self.env_rng)
        } else {
            r.observation
        };
        self.step += 1;
        Ok(())
    }
}

fn append(path: &Path, text: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Keeps the version line, header and first `rows` data rows of a metrics file.
fn truncate_rows(path: &Path, rows: usize) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let complete = lines.iter().filter(|l| l.ends_with('\n')).count();
    if complete < rows + 2 {
        return Err(Error::Checkpoint(format!(
            "{} holds {} rows, checkpoint expects {rows}",
            path.display(),
            complete.saturating_sub(2)
        )));
    }
    write(path, &lines[..rows + 2].concat())
}

/// Trains one seed to completion, resuming from its checkpoint when present.
///
/// Rows are appended at step 0 and every `eval_interval` steps. Within a step
/// the order is: environment step and updates, evaluation, periodic reset,
/// checkpoint.
pub fn run_seed<T: Real>(cfg: &RunConfig, seed: u64, dir: &Path, control: RunControl) -> Result<SeedOutcome> {
    let csv = metrics_path(dir, seed);
    let ckpt = checkpoint_path(dir, seed);
    let started = Instant::now();
    let mut s = Session::<T>::fresh(cfg, seed)?;
    let wall = |s: &Session<T>| cfg.wallclock.then(|| s.wall_offset + started.elapsed().as_secs_f64());
    let outcome = |status| Ok(SeedOutcome { seed, status });

    if cfg.total_env_steps == 0 {
        if csv.exists() {
            return outcome(SeedStatus::AlreadyComplete);
        }
        write(&csv, &header(&s.layer_names()))?;
        return outcome(SeedStatus::Completed { resumed_from: None });
    }

    let mut resumed_from = None;
    if ckpt.exists() && csv.exists() {
        s.restore(&Checkpoint::load(&ckpt)?)?;
        if s.step == cfg.total_env_steps {
            return outcome(SeedStatus::AlreadyComplete);
        }
        if s.step > cfg.total_env_steps || s.step % cfg.eval_interval != 0 {
            return Err(Error::Checkpoint(format!(
                "{} is at step {}, not on this run's evaluation grid",
                ckpt.display(),
                s.step
            )));
        }
        truncate_rows(&csv, (s.step / cfg.eval_interval + 1) as usize)?;
        resumed_from = Some(s.step);
    } else {
        write(&csv, &header(&s.layer_names()))?;
        let rec = s.record(cfg, wall(&s))?;
        append(&csv, &rec.to_row())?;
        s.checkpoint(wall(&s).unwrap_or(0.0)).save(&ckpt)?;
        if control.stop_at == Some(0) {
            return outcome(SeedStatus::Stopped { at: 0 });
        }
    }

    while s.step < cfg.total_env_steps {
        s.env_step()?;
        let at_eval = s.step % cfg.eval_interval == 0;
        if at_eval {
            let rec = s.record(cfg, wall(&s))?;
            append(&csv, &rec.to_row())?;
        }
        s.agent.periodic_reset(s.step)?;
        if at_eval {
            s.checkpoint(wall(&s).unwrap_or(0.0)).save(&ckpt)?;
            if control.stop_at == Some(s.step) && s.step < cfg.total_env_steps {
                return outcome(SeedStatus::Stopped { at: s.step });
            }
        }
    }
    outcome(SeedStatus::Completed { resumed_from })
}

/// Settings that change results; scheduling and location are excluded.
fn canonical(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.workers = 1;
    c.output = PathBuf::from(".");
    c.render()
}

fn claim_dir(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(CONFIG_FILE);
    let text = canonical(cfg);
    match fs::read_to_string(&path) {
        Ok(existing) if existing == text => Ok(()),
        Ok(_) => Err(Error::Config(vec![format!(
            "{} holds a run with a different configuration",
            dir.display()
        )])),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => write(&path, &text),
        Err(e) => Err(Error::io(&path, e)),
    }
}

/// Aggregates the evaluation returns of every seed into one IQM curve.
pub fn aggregate_runs(cfg: &RunConfig, dir: &Path) -> Result<AggregateCurve> {
    let mut steps = None;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let t = Table::read(&metrics_path(dir, seed))?;
        let s = t.steps()?;
        if *steps.get_or_insert_with(|| s.clone()) != s {
            return Err(Error::contract(format!(
                "seed {seed} was evaluated on a different grid"
            )));
        }
        runs.push(t.floats("episode_return")?);
    }
    let steps = steps.ok_or_else(|| Error::contract("no seeds to aggregate"))?;
    if steps.is_empty() {
        return Ok(AggregateCurve {
            label: cfg.name.clone(),
            scope: cfg.env.clone(),
            level: cfg.ci_level,
            seeds: runs.len(),
            steps,
            iqm: vec![],
            lower: vec![],
            upper: vec![],
        });
    }
    let mut rng = rng::stream(0, AGGREGATE_STREAM);
    AggregateCurve::from_runs(&cfg.name, &cfg.env, steps, &runs, cfg.ci_level, cfg.n_boot, &mut rng)
}

/// Runs every seed on a pool of `workers` threads, then aggregates.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentOutcome> {
    run_experiment_with(cfg, RunControl::default())
}

pub fn run_experiment_with(cfg: &RunConfig, control: RunControl) -> Result<ExperimentOutcome> {
    let issues = cfg.issues();
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }
    let dir = cfg.output_dir();
    claim_dir(cfg, &dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::contract(format!("worker pool: {e}")))?;
    let results: Vec<Result<SeedOutcome>> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| match cfg.precision {
                Precision::F32 => run_seed::<f32>(cfg, seed, &dir, control),
                Precision::F64 => run_seed::<f64>(cfg, seed, &dir, control),
            })
            .collect()
    });
    let seeds = results.into_iter().collect::<Result<Vec<_>>>()?;
    let finished = seeds.iter().all(|s| !matches!(s.status, SeedStatus::Stopped { .. }));
    let aggregate = if finished {
        let curve = aggregate_runs(cfg, &dir)?;
        let path = dir.join(AGGREGATE_FILE);
        write_aggregate(&curve, &path)?;
        Some(path)
    } else {
        None
    };
    Ok(ExperimentOutcome { dir, seeds, aggregate })
}
