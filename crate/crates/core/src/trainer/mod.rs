//! Batched unrolled rollouts, backpropagation through time and the
//! optimization loop.

mod config;
pub mod env;
mod optim;
mod rollout;

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, AdError, GradCheckReport, Tape};
use crate::config::Config;
use crate::objective::{LossWeights, ObjectiveError};
use crate::perception::{Perception, PerceptionError};
use crate::policy::{PolicyError, PolicyParams, PolicyVars};
use crate::sim::rng::{stream_rng, stream_seed};
use crate::sim::{make_circle_swap, rotate_scene, Scenario, ScenarioConfig, SimError};

pub use config::TrainConfig;
pub use optim::{clip_global_norm, cosine_lr, AdamW};
pub use rollout::{rollout, CallRecord, EnvStats, Mode, Recording, RolloutContext, RolloutOutput, StepRecord};

const SAMPLE_TAG: u64 = 0x5A3F_0001;
const SCENE_TAG: u64 = 0x5A3F_0002;
const NOISE_TAG: u64 = 0x5A3F_0003;
/// Stream of training batches.
pub const TRAIN_STREAM: u64 = 1;
/// Stream of the fixed held-out batch.
pub const HELDOUT_STREAM: u64 = 2;

pub const POLICY_FILE: &str = "policy.ckpt";
pub const OPTIMIZER_FILE: &str = "optimizer.state";
pub const LOG_FILE: &str = "train_log.csv";
pub const EVAL_LOG_FILE: &str = "eval_log.csv";

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite {term} loss at step {step}, agent {agent}")]
    NonFiniteLoss { term: &'static str, step: usize, agent: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Tape(#[from] AdError),
}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        TrainError::Io(e.to_string())
    }
}

impl From<csv::Error> for TrainError {
    fn from(e: csv::Error) -> Self {
        TrainError::Io(e.to_string())
    }
}

/// One environment of a batch: a (possibly rotated) scenario and the seed of
/// its observation and perturbation noise.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub scenario: Scenario,
    pub noise_seed: u64,
}

/// Agents per environment: draws from `[agents_min, agents_max]` until the
/// batch is filled; a remainder below two agents joins the last environment.
pub fn split_batch<R: Rng>(rng: &mut R, batch: usize, lo: usize, hi: usize) -> Vec<usize> {
    let mut counts = Vec::new();
    let mut remaining = batch;
    while remaining > 0 {
        let k = rng.gen_range(lo..=hi).min(remaining);
        if k < 2 && !counts.is_empty() {
            *counts.last_mut().expect("non-empty") += k;
        } else {
            counts.push(k);
        }
        remaining -= k;
    }
    counts
}

/// Batch `iter` of stream `stream`: fresh circle-swap maps, each rotated by
/// ψ ~ U[−ψ_max, ψ_max].
pub fn sample_batch(cfg: &Config, stream: u64, iter: u64, batch: usize) -> Result<Vec<EnvSpec>, TrainError> {
    let t = &cfg.train;
    let seed = t.seed;
    let mut rng = stream_rng(seed, &[SAMPLE_TAG, stream, iter]);
    let counts = split_batch(&mut rng, batch, t.agents_min, t.agents_max);
    let mut envs = Vec::with_capacity(counts.len());
    for (e, &k) in counts.iter().enumerate() {
        let sc = ScenarioConfig { n_agents: k, ..cfg.scenario.clone() };
        let scen = make_circle_swap(&sc, stream_seed(seed, &[SCENE_TAG, stream, iter, e as u64]), &cfg.dynamics)?;
        let psi = if t.psi_max > 0.0 { rng.gen_range(-t.psi_max..=t.psi_max) } else { 0.0 };
        let scenario = if psi != 0.0 { rotate_scene(&scen, psi) } else { scen };
        envs.push(EnvSpec { scenario, noise_seed: stream_seed(seed, &[NOISE_TAG, stream, iter, e as u64]) });
    }
    Ok(envs)
}

/// Gradient of one environment's loss with respect to every parameter, in
/// canonical flat order, plus the loss value and telemetry.
pub fn env_gradient(
    params: &PolicyParams,
    ctx: RolloutContext,
    env: &EnvSpec,
) -> Result<(Vec<f64>, f64, EnvStats), TrainError> {
    let mut tape = Tape::new();
    let pv = PolicyVars::bind(&mut tape, params, true);
    let out = rollout(&mut tape, &pv, &env.scenario, ctx, Mode::Render { seed: env.noise_seed, record: false })?;
    let loss = tape.value(out.loss).item()?;
    let grads = tape.backward(out.loss)?;
    let mut flat = Vec::with_capacity(params.count());
    for &v in &pv.vars {
        match grads.get(v) {
            Some(g) => flat.extend_from_slice(g),
            None => flat.extend(std::iter::repeat(0.0).take(tape.value(v).len())),
        }
    }
    Ok((flat, loss, out.stats))
}

/// Forward-only rollout telemetry.
pub fn env_forward(params: &PolicyParams, ctx: RolloutContext, env: &EnvSpec) -> Result<(f64, EnvStats), TrainError> {
    let mut tape = Tape::new();
    let pv = PolicyVars::bind(&mut tape, params, false);
    let out = rollout(&mut tape, &pv, &env.scenario, ctx, Mode::Render { seed: env.noise_seed, record: false })?;
    Ok((tape.value(out.loss).item()?, out.stats))
}

/// Batch means of the logged quantities.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterStats {
    pub iteration: u64,
    pub total: f64,
    pub success: f64,
    pub ar: f64,
    pub loss_col: f64,
    pub loss_v: f64,
    pub loss_vhat: f64,
    pub loss_obj: f64,
    pub loss_acc: f64,
    pub loss_jrk: f64,
    pub jerk: f64,
    pub snap: f64,
    pub acc: f64,
    pub ground_affinity: f64,
    pub speed: f64,
    pub lr: f64,
}

impl IterStats {
    pub fn from_env_stats(iteration: u64, s: &EnvStats, weights: &LossWeights, lr: f64) -> Self {
        let denom = (s.agents * s.steps).max(1) as f64;
        let m: Vec<f64> = s.term_sums.iter().map(|x| x / denom).collect();
        let total = m.iter().zip(weights.as_array()).map(|(a, b)| a * b).sum();
        let ratio = |a: f64, n: usize| if n == 0 { 0.0 } else { a / n as f64 };
        Self {
            iteration,
            total,
            success: ratio(s.safe_agents as f64, s.agents),
            ar: ratio(s.ar_sum, s.agents),
            loss_v: m[0],
            loss_vhat: m[1],
            loss_col: m[2],
            loss_obj: m[3],
            loss_acc: m[4],
            loss_jrk: m[5],
            jerk: ratio(s.jerk_sum, s.jerk_n),
            snap: ratio(s.snap_sum, s.snap_n),
            acc: ratio(s.acc_sum, s.acc_n),
            ground_affinity: ratio(s.ground_sum, s.ground_n),
            speed: ratio(s.speed_sum, s.agents),
            lr,
        }
    }
}

/// Applies `f` to every environment, in parallel when a pool is given, and
/// returns results in environment order.
fn map_envs<T, F>(pool: Option<&rayon::ThreadPool>, envs: &[EnvSpec], f: F) -> Vec<Result<T, TrainError>>
where
    T: Send,
    F: Fn(&EnvSpec) -> Result<T, TrainError> + Sync + Send,
{
    match pool {
        Some(p) => p.install(|| envs.par_iter().map(&f).collect()),
        None => envs.iter().map(f).collect(),
    }
}

/// State of an optimization run.
pub struct TrainSession {
    pub config: Config,
    pub perception: Perception,
    pub params: PolicyParams,
    pub optimizer: AdamW,
    pool: Option<rayon::ThreadPool>,
}

impl TrainSession {
    pub fn new(config: Config) -> Result<Self, TrainError> {
        let params = PolicyParams::init(config.train.seed, &config.arch)?;
        Self::with_params(config, params, None)
    }

    fn with_params(config: Config, params: PolicyParams, optimizer: Option<AdamW>) -> Result<Self, TrainError> {
        config.validate().map_err(TrainError::Config)?;
        let perception = Perception::new(&config.perception)?;
        if perception.input_dims() != [config.arch.input_height, config.arch.input_width] {
            return Err(TrainError::Config(format!(
                "perception produces {:?} inputs but the network expects [{}, {}]",
                perception.input_dims(),
                config.arch.input_height,
                config.arch.input_width
            )));
        }
        let t = &config.train;
        let optimizer = optimizer.unwrap_or_else(|| AdamW::new(params.count(), t.beta1, t.beta2, t.eps, t.weight_decay));
        if optimizer.m.len() != params.count() {
            return Err(TrainError::Config(format!(
                "optimizer state has {} entries for {} parameters",
                optimizer.m.len(),
                params.count()
            )));
        }
        let pool = match t.workers {
            1 => None,
            w => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(w)
                    .build()
                    .map_err(|e| TrainError::Config(format!("thread pool: {}", e)))?,
            ),
        };
        Ok(Self { config, perception, params, optimizer, pool })
    }

    /// Continues from the checkpoint pair in `dir`.
    pub fn resume(config: Config, dir: &Path) -> Result<Self, TrainError> {
        let params = PolicyParams::load_for(&dir.join(POLICY_FILE), &config.arch)?;
        let optimizer = AdamW::load(&dir.join(OPTIMIZER_FILE))?;
        Self::with_params(config, params, Some(optimizer))
    }

    /// Completed iterations.
    pub fn iteration(&self) -> u64 {
        self.optimizer.step
    }

    pub fn context(&self, decay: Option<f64>, loss_scale: f64) -> RolloutContext<'_> {
        RolloutContext {
            perception: &self.perception,
            dynamics: &self.config.dynamics,
            loss: &self.config.loss,
            horizon: self.config.train.horizon,
            decay,
            loss_scale,
        }
    }

    /// Batch-mean gradient over `envs` (each environment's loss is scaled by
    /// 1/(agents·T) of the whole batch), summed in environment order.
    pub fn batch_gradient(&self, envs: &[EnvSpec]) -> Result<(Vec<f64>, f64, EnvStats), TrainError> {
        let agents: usize = envs.iter().map(|e| e.scenario.agents.len()).sum();
        let scale = 1.0 / (agents.max(1) * self.config.train.horizon.max(1)) as f64;
        let ctx = self.context(self.config.train.decay(), scale);
        let mut grad = vec![0.0; self.params.count()];
        let mut loss = 0.0;
        let mut stats = EnvStats::default();
        // Bounded chunks keep at most one gradient per worker alive.
        let chunk = self.pool.as_ref().map_or(1, |p| p.current_num_threads().max(1));
        for part in envs.chunks(chunk) {
            for r in map_envs(self.pool.as_ref(), part, |e| env_gradient(&self.params, ctx, e)) {
                let (g, l, s) = r?;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                loss += l;
                stats.merge(&s);
            }
        }
        Ok((grad, loss, stats))
    }

    /// One optimization step on the next training batch.
    pub fn step(&mut self) -> Result<IterStats, TrainError> {
        let t = &self.config.train;
        let iter = self.iteration();
        let lr = cosine_lr(iter, t.iterations, t.lr, t.lr_min);
        let envs = sample_batch(&self.config, TRAIN_STREAM, iter, t.batch_size)?;
        let (mut grad, _, stats) = self.batch_gradient(&envs)?;
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(TrainError::NonFinite(format!("gradient of parameter {} at iteration {}", i, iter)));
        }
        clip_global_norm(&mut grad, t.grad_clip);
        let mut flat = self.params.flat();
        self.optimizer.update(&mut flat, &grad, lr)?;
        self.params.set_flat(&flat)?;
        Ok(IterStats::from_env_stats(iter, &stats, &self.config.loss.weights, lr))
    }

    /// Telemetry of the current policy on the fixed held-out batch.
    pub fn evaluate_heldout(&self) -> Result<IterStats, TrainError> {
        evaluate_policy(&self.config, &self.perception, &self.params, self.pool.as_ref(), self.iteration())
    }

    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir)?;
        self.params.save(&dir.join(POLICY_FILE))?;
        self.optimizer.save(&dir.join(OPTIMIZER_FILE))
    }
}

/// Forward-only telemetry of `params` on the held-out batch of `cfg`
/// (`eval_envs` environments of `agents_min` agents each).
pub fn evaluate_policy(
    cfg: &Config,
    perception: &Perception,
    params: &PolicyParams,
    pool: Option<&rayon::ThreadPool>,
    iteration: u64,
) -> Result<IterStats, TrainError> {
    let t = &cfg.train;
    let envs = sample_batch(cfg, HELDOUT_STREAM, 0, t.eval_envs.max(1) * t.agents_min)?;
    let ctx = RolloutContext {
        perception,
        dynamics: &cfg.dynamics,
        loss: &cfg.loss,
        horizon: t.horizon,
        decay: None,
        loss_scale: 1.0,
    };
    let mut stats = EnvStats::default();
    for r in map_envs(pool, &envs, |e| env_forward(params, ctx, e)) {
        stats.merge(&r?.1);
    }
    Ok(IterStats::from_env_stats(iteration, &stats, &cfg.loss.weights, f64::NAN))
}

/// Central-difference check of a whole-rollout loss with respect to every
/// policy parameter. Observations, perturbations, nearest-hazard choices and
/// detached targets are recorded once and replayed, and neither adjoint
/// decay nor clipping is applied, so the loss is a smooth function of the
/// parameters.
pub fn rollout_gradcheck(
    cfg: &Config,
    params: &PolicyParams,
    scenario: &Scenario,
    noise_seed: u64,
    eps: f64,
) -> Result<GradCheckReport, TrainError> {
    let perception = Perception::new(&cfg.perception)?;
    let n = scenario.agents.len();
    let ctx = RolloutContext {
        perception: &perception,
        dynamics: &cfg.dynamics,
        loss: &cfg.loss,
        horizon: cfg.train.horizon,
        decay: None,
        loss_scale: 1.0 / (n * cfg.train.horizon.max(1)) as f64,
    };
    let recording = {
        let mut tape = Tape::new();
        let pv = PolicyVars::bind(&mut tape, params, false);
        rollout(&mut tape, &pv, scenario, ctx, Mode::Render { seed: noise_seed, record: true })?
            .recording
            .expect("recording requested")
    };
    let arch = params.arch.clone();
    let f = |tape: &mut Tape, vars: &[crate::autodiff::Var]| -> Result<crate::autodiff::Var, AdError> {
        let pv = PolicyVars::from_vars(vars.to_vec(), &arch);
        rollout(tape, &pv, scenario, ctx, Mode::Replay(&recording))
            .map(|o| o.loss)
            .map_err(|e| AdError::NonFinite(e.to_string()))
    };
    Ok(grad_check(f, &params.tensors, eps)?)
}

fn open_log(path: &Path, append: bool) -> Result<csv::Writer<std::fs::File>, TrainError> {
    let exists = append && path.exists() && std::fs::metadata(path)?.len() > 0;
    let file = OpenOptions::new().create(true).append(append).write(true).truncate(!append).open(path)?;
    Ok(csv::WriterBuilder::new().has_headers(!exists).from_writer(file))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub first: Option<IterStats>,
    pub last: Option<IterStats>,
    pub iterations: u64,
    pub log_path: PathBuf,
}

/// Runs (or, with `resume`, continues) training into `out_dir`: CSV log
/// rows every iteration, held-out rows every `eval_every`, checkpoints every
/// `checkpoint_every` and at the end.
pub fn train(
    config: &Config,
    out_dir: &Path,
    resume: bool,
    mut progress: impl FnMut(&IterStats),
) -> Result<TrainOutcome, TrainError> {
    std::fs::create_dir_all(out_dir)?;
    let mut session = if resume && out_dir.join(POLICY_FILE).exists() {
        TrainSession::resume(config.clone(), out_dir)?
    } else {
        TrainSession::new(config.clone())?
    };
    let log_path = out_dir.join(LOG_FILE);
    let mut log = open_log(&log_path, resume)?;
    let mut eval_log = if config.train.eval_every > 0 { Some(open_log(&out_dir.join(EVAL_LOG_FILE), resume)?) } else { None };
    let (mut first, mut last) = (None, None);
    let t = config.train.clone();
    while session.iteration() < t.iterations {
        let s = session.step()?;
        log.serialize(&s)?;
        log.flush()?;
        progress(&s);
        first.get_or_insert_with(|| s.clone());
        last = Some(s);
        let done = session.iteration();
        if t.checkpoint_every > 0 && done % t.checkpoint_every == 0 {
            session.save(out_dir)?;
        }
        if let Some(w) = eval_log.as_mut() {
            if done % t.eval_every == 0 {
                w.serialize(session.evaluate_heldout()?)?;
                w.flush()?;
            }
        }
    }
    session.save(out_dir)?;
    Ok(TrainOutcome { first, last, iterations: session.iteration(), log_path })
}

#[cfg(test)]
mod tests;
