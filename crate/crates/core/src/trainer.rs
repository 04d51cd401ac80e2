//! Advantage actor-critic training with asynchronous workers.
//!
//! Each worker owns an environment and a parameter snapshot. A worker loop
//! copies the shared parameters, collects one rollout (at most
//! `rollout_len` steps, never crossing an episode boundary), backpropagates
//! the loss through time and applies an Adam step to the shared parameters.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agent::{
    argmax, backward, forward_into, init_params, sample_categorical, AdamConfig, AdamStep, AgentConfig,
    AgentError, AgentParams, Checkpoint, ForwardOutput, HeadGrads, RecurrentState,
};
use crate::curriculum::{CurriculumError, CurriculumState, HorizonRule, SharedCurriculum, TaskSampler};
use crate::environment::{Action, EnvConfig, EnvError, Environment, Heading, World};
use crate::scalar::{entropy, Scalar};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid trainer configuration: {0}")]
    Config(String),
    #[error("configuration mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateMode {
    /// Updates serialised under one lock.
    #[default]
    Locked,
    /// Lock-free reads and writes of the shared parameters and moments.
    Relaxed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub rollout_len: usize,
    pub entropy_weight: f64,
    pub value_loss_weight: f64,
    pub probe_weight: f64,
    pub workers: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    pub width: usize,
    pub total_env_steps: u64,
    pub seed: u64,
    pub metrics_every: u64,
    pub mode: UpdateMode,
    pub n_c: u32,
    pub window: usize,
    pub threshold: f64,
    pub horizon: HorizonRule,
    /// Stop this many steps after the final curriculum level is reached.
    pub stop_after_final_level_steps: Option<u64>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.99,
            rollout_len: 50,
            entropy_weight: 5e-4,
            value_loss_weight: 0.5,
            probe_weight: 1.0,
            workers: 128,
            lr: 1e-4,
            adam: AdamConfig::default(),
            width: 256,
            total_env_steps: 5_000_000,
            seed: 0,
            metrics_every: 10_000,
            mode: UpdateMode::Locked,
            n_c: 100,
            window: 100,
            threshold: 0.8,
            horizon: HorizonRule::default(),
            stop_after_final_level_steps: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if self.rollout_len == 0 {
            return bad("rollout_len must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.width == 0 {
            return bad("width must be positive".into());
        }
        if self.metrics_every == 0 {
            return bad("metrics_every must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be finite and non-negative", self.lr));
        }
        for (name, v) in [
            ("entropy_weight", self.entropy_weight),
            ("value_loss_weight", self.value_loss_weight),
            ("probe_weight", self.probe_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be finite and non-negative"));
            }
        }
        CurriculumState::new(self.n_c, 1.0, self.window, self.threshold)?;
        Ok(())
    }
}

/// One step of experience. The observation and goal embedding are kept in
/// the matching forward cache of the rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<T> {
    pub prev_action: Option<usize>,
    pub action: usize,
    pub log_prob: T,
    pub reward: f64,
    pub value: T,
    pub done: bool,
    /// True node at the time of the observation; the probe target.
    pub node: u32,
}

#[derive(Debug, Clone)]
pub struct Rollout<T> {
    pub transitions: Vec<Transition<T>>,
    pub caches: Vec<ForwardOutput<T>>,
    pub bootstrap_value: T,
    pub initial_state: RecurrentState<T>,
    /// Set when the episode ended inside this rollout.
    pub episode_end: Option<EpisodeEnd>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeEnd {
    pub success: bool,
    pub steps: u32,
}

impl<T: Scalar> Rollout<T> {
    pub fn new(cfg: &AgentConfig) -> Self {
        Rollout {
            transitions: Vec::new(),
            caches: Vec::new(),
            bootstrap_value: T::zero(),
            initial_state: RecurrentState::zeros(cfg.width),
            episode_end: None,
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Recurrent state carried between the rollouts of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeCarry<T> {
    pub state: RecurrentState<T>,
    pub prev_action: Option<usize>,
}

impl<T: Scalar> EpisodeCarry<T> {
    pub fn new(width: usize) -> Self {
        EpisodeCarry {
            state: RecurrentState::zeros(width),
            prev_action: None,
        }
    }

    pub fn reset(&mut self) {
        self.state.reset();
        self.prev_action = None;
    }
}

/// Runs the policy for up to `max_len` steps from the environment's current
/// observation. Stops early at episode end, in which case the bootstrap
/// value is 0.
pub fn collect_rollout<T: Scalar, R: Rng + ?Sized>(
    env: &mut Environment<'_, T>,
    params: &AgentParams<T>,
    carry: &mut EpisodeCarry<T>,
    max_len: usize,
    greedy: bool,
    rng: &mut R,
    out: &mut Rollout<T>,
) -> Result<(), TrainError> {
    if env.is_done() {
        return Err(TrainError::Env(EnvError::StepAfterDone));
    }
    let cfg = params.cfg;
    if cfg.n_actions != env.action_count() {
        return Err(TrainError::Mismatch(format!(
            "agent has {} actions, environment {}",
            cfg.n_actions,
            env.action_count()
        )));
    }
    out.transitions.clear();
    out.episode_end = None;
    out.initial_state.h.copy_from_slice(&carry.state.h);
    out.initial_state.c.copy_from_slice(&carry.state.c);
    out.caches.truncate(max_len);
    for t in 0..max_len {
        if out.caches.len() <= t {
            out.caches.push(ForwardOutput::new(&cfg));
        }
        let node = env.state().node.0;
        let f = &mut out.caches[t];
        forward_into(params, env.observation(), env.goal_observation(), carry.prev_action, &carry.state, f)?;
        let a = if greedy {
            argmax(&f.policy)
        } else {
            sample_categorical(&f.policy, rng)
        };
        let step = env.step_in_place(Action::from_index(a, cfg.n_actions)?, rng)?;
        out.transitions.push(Transition {
            prev_action: carry.prev_action,
            action: a,
            log_prob: f.policy[a].ln(),
            reward: step.reward,
            value: f.value,
            done: step.done,
            node,
        });
        carry.state.h.copy_from_slice(&f.new_state.h);
        carry.state.c.copy_from_slice(&f.new_state.c);
        carry.prev_action = Some(a);
        if step.done {
            out.episode_end = Some(EpisodeEnd {
                success: step.info.reached_goal,
                steps: env.state().step,
            });
            break;
        }
    }
    out.caches.truncate(out.transitions.len());
    out.bootstrap_value = if out.episode_end.is_some() {
        T::zero()
    } else {
        let mut f = ForwardOutput::new(&cfg);
        forward_into(params, env.observation(), env.goal_observation(), carry.prev_action, &carry.state, &mut f)?;
        f.value
    };
    Ok(())
}

/// Discounted returns `R_t = r_t + gamma R_{t+1}` seeded with the bootstrap
/// value, and advantages `R_t - V_t`.
pub fn compute_returns<T: Scalar>(rollout: &Rollout<T>, gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rollout.len();
    let mut returns = vec![0.0; n];
    let mut r = rollout.bootstrap_value.f64();
    for t in (0..n).rev() {
        r = rollout.transitions[t].reward + gamma * r;
        returns[t] = r;
    }
    let adv = returns
        .iter()
        .zip(&rollout.transitions)
        .map(|(r, tr)| r - tr.value.f64())
        .collect();
    (returns, adv)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossWeights {
    pub value: f64,
    pub entropy: f64,
    pub probe: f64,
}

impl From<&TrainerConfig> for LossWeights {
    fn from(c: &TrainerConfig) -> Self {
        LossWeights {
            value: c.value_loss_weight,
            entropy: c.entropy_weight,
            probe: c.probe_weight,
        }
    }
}

/// Summed loss components over a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    /// `sum -log pi(a_t) A_t`
    pub policy: f64,
    /// `sum (R_t - V_t)^2`, unweighted.
    pub value: f64,
    /// `sum H(pi_t)`
    pub entropy: f64,
    /// `sum -log p_loc(node_t)`
    pub probe: f64,
    pub total: f64,
}

/// Composite loss and its gradient at the head pre-activations. Returns and
/// advantages are constants.
pub fn a3c_loss<T: Scalar>(
    caches: &[ForwardOutput<T>],
    transitions: &[Transition<T>],
    returns: &[f64],
    advantages: &[f64],
    w: &LossWeights,
    heads: &mut Vec<HeadGrads<T>>,
) -> LossParts {
    let n = transitions.len();
    assert!(caches.len() == n && returns.len() == n && advantages.len() == n);
    let mut parts = LossParts::default();
    if let Some(c) = caches.first() {
        heads.resize_with(n, || HeadGrads::zeros(c.policy.len(), c.loc_probs.len()));
    }
    for t in 0..n {
        let c = &caches[t];
        let tr = &transitions[t];
        let hg = &mut heads[t];
        let a_t = advantages[t];
        let h = entropy(&c.policy).f64();
        parts.policy -= c.policy[tr.action].f64().ln() * a_t;
        parts.value += (returns[t] - c.value.f64()).powi(2);
        parts.entropy += h;
        for (k, (g, &p)) in hg.logits.iter_mut().zip(&c.policy).enumerate() {
            let p = p.f64();
            let onehot = if k == tr.action { 1.0 } else { 0.0 };
            let lp = if p > 0.0 { p.ln() } else { 0.0 };
            *g = T::of(a_t * (p - onehot) + w.entropy * p * (lp + h));
        }
        hg.value = T::of(-2.0 * w.value * (returns[t] - c.value.f64()));
        let node = tr.node as usize;
        parts.probe -= c.loc_probs[node].f64().ln();
        for (k, (g, &p)) in hg.loc_logits.iter_mut().zip(&c.loc_probs).enumerate() {
            let onehot = if k == node { 1.0 } else { 0.0 };
            *g = T::of(w.probe * (p.f64() - onehot));
        }
    }
    parts.total = parts.policy + w.value * parts.value - w.entropy * parts.entropy + w.probe * parts.probe;
    parts
}

/// One line of the training metrics stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub level: u32,
    /// Success rate of the episodes finished since the previous record.
    pub success: f64,
    /// Mean optimal path length of those episodes, failures counted as 0.
    pub solved_len: f64,
    pub loss_pi: f64,
    pub loss_v: f64,
    pub entropy: f64,
    pub tps: f64,
}

impl fmt::Display for MetricsRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} level={} success={:.4} solved_len={:.4} loss_pi={:.6} loss_v={:.6} entropy={:.6} tps={:.1}",
            self.step, self.level, self.success, self.solved_len, self.loss_pi, self.loss_v, self.entropy, self.tps
        )
    }
}

impl FromStr for MetricsRecord {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut r = MetricsRecord {
            step: 0,
            level: 0,
            success: 0.0,
            solved_len: 0.0,
            loss_pi: 0.0,
            loss_v: 0.0,
            entropy: 0.0,
            tps: 0.0,
        };
        let mut seen = 0u8;
        for tok in s.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| format!("token {tok:?} is not key=value"))?;
            let num = |v: &str| v.parse::<f64>().map_err(|e| format!("{k}: {e}"));
            let bit = match k {
                "step" => {
                    r.step = v.parse().map_err(|e| format!("step: {e}"))?;
                    0
                }
                "level" => {
                    r.level = v.parse().map_err(|e| format!("level: {e}"))?;
                    1
                }
                "success" => {
                    r.success = num(v)?;
                    2
                }
                "solved_len" => {
                    r.solved_len = num(v)?;
                    3
                }
                "loss_pi" => {
                    r.loss_pi = num(v)?;
                    4
                }
                "loss_v" => {
                    r.loss_v = num(v)?;
                    5
                }
                "entropy" => {
                    r.entropy = num(v)?;
                    6
                }
                "tps" => {
                    r.tps = num(v)?;
                    7
                }
                _ => return Err(format!("unknown metrics key {k:?}")),
            };
            seen |= 1 << bit;
        }
        if seen != 0xff {
            return Err(format!("metrics line missing fields: {s:?}"));
        }
        Ok(r)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub total_steps: u64,
    pub episodes: u64,
    pub final_level: u32,
    /// Global step at which the last curriculum level was first reached.
    pub final_level_step: Option<u64>,
    pub metrics: Vec<MetricsRecord>,
}

#[derive(Debug, Default)]
struct Window {
    steps: u64,
    transitions: u64,
    loss_pi: f64,
    loss_v: f64,
    entropy: f64,
    episodes: u64,
    successes: u64,
    solved_len: f64,
}

#[derive(Debug)]
struct Progress {
    steps: u64,
    episodes: u64,
    next_record: u64,
    window: Window,
    window_start: Instant,
    final_level_step: Option<u64>,
}

enum Shared<T> {
    Locked(Mutex<Checkpoint<T>>),
    Relaxed {
        params: Vec<AtomicU64>,
        m: Vec<AtomicU64>,
        v: Vec<AtomicU64>,
        t: AtomicU64,
        adam: AdamConfig,
    },
}

fn atomics<T: Scalar>(v: &[T]) -> Vec<AtomicU64> {
    v.iter().map(|x| AtomicU64::new(x.to_bits64())).collect()
}

fn load<T: Scalar>(v: &[AtomicU64]) -> Vec<T> {
    v.iter().map(|x| T::from_bits64(x.load(Ordering::Relaxed))).collect()
}

impl<T: Scalar> Shared<T> {
    fn new(ck: Checkpoint<T>, mode: UpdateMode) -> Self {
        match mode {
            UpdateMode::Locked => Shared::Locked(Mutex::new(ck)),
            UpdateMode::Relaxed => Shared::Relaxed {
                params: atomics(&ck.params.data),
                m: atomics(&ck.adam.m),
                v: atomics(&ck.adam.v),
                t: AtomicU64::new(ck.adam.t),
                adam: ck.adam.cfg,
            },
        }
    }

    fn snapshot(&self, into: &mut [T]) {
        match self {
            Shared::Locked(m) => into.copy_from_slice(&m.lock().unwrap_or_else(|e| e.into_inner()).params.data),
            Shared::Relaxed { params, .. } => {
                for (o, x) in into.iter_mut().zip(params) {
                    *o = T::from_bits64(x.load(Ordering::Relaxed));
                }
            }
        }
    }

    fn update(&self, grads: &[T], lr: f64) -> Result<(), AgentError> {
        match self {
            Shared::Locked(m) => {
                let mut ck = m.lock().unwrap_or_else(|e| e.into_inner());
                let ck = &mut *ck;
                ck.adam.step(&mut ck.params.data, grads, lr)
            }
            Shared::Relaxed { params, m, v, t, adam } => {
                let step = t.fetch_add(1, Ordering::Relaxed) + 1;
                let k = AdamStep::<T>::new(adam, step, lr);
                for (i, &g) in grads.iter().enumerate() {
                    let mut p = T::from_bits64(params[i].load(Ordering::Relaxed));
                    let mut mi = T::from_bits64(m[i].load(Ordering::Relaxed));
                    let mut vi = T::from_bits64(v[i].load(Ordering::Relaxed));
                    k.apply(&mut p, g, &mut mi, &mut vi);
                    params[i].store(p.to_bits64(), Ordering::Relaxed);
                    m[i].store(mi.to_bits64(), Ordering::Relaxed);
                    v[i].store(vi.to_bits64(), Ordering::Relaxed);
                }
                Ok(())
            }
        }
    }

    fn into_checkpoint(self, cfg: AgentConfig) -> Result<Checkpoint<T>, AgentError> {
        match self {
            Shared::Locked(m) => Ok(m.into_inner().unwrap_or_else(|e| e.into_inner())),
            Shared::Relaxed { params, m, v, t, adam } => {
                let mut ck = Checkpoint::fresh(AgentParams::from_vec(cfg, load(&params))?, adam);
                ck.adam.m = load(&m);
                ck.adam.v = load(&v);
                ck.adam.t = t.into_inner();
                Ok(ck)
            }
        }
    }
}

pub fn agent_config_for(world: &World, width: usize) -> AgentConfig {
    AgentConfig {
        obs_dim: world.dim(),
        n_actions: world.action_count(),
        n_nodes: world.node_count(),
        width,
    }
}

/// Seed of worker `i`'s generator.
pub fn worker_seed(seed: u64, worker: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (worker as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Trains until the step budget is spent. Records go to `sink` in global
/// step order as they are produced. With one worker the run is
/// bit-reproducible and `tps` is reported as 0.
pub fn train<T: Scalar>(
    world: &World,
    env_cfg: EnvConfig,
    cfg: &TrainerConfig,
    init: Option<Checkpoint<T>>,
    mut sink: impl FnMut(&MetricsRecord),
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    env_cfg.validate()?;
    let acfg = agent_config_for(world, cfg.width);
    let ck = match init {
        Some(ck) => {
            if ck.params.cfg != acfg {
                return Err(TrainError::Mismatch(format!(
                    "checkpoint dims {:?} do not match world {:?}",
                    ck.params.cfg, acfg
                )));
            }
            ck
        }
        None => Checkpoint::fresh(init_params(acfg, cfg.seed)?, cfg.adam),
    };
    let sampler = TaskSampler::new(&world.distances, cfg.n_c)?;
    let curriculum = SharedCurriculum::new(CurriculumState::new(cfg.n_c, sampler.l_max(), cfg.window, cfg.threshold)?);
    let shared = Shared::new(ck, cfg.mode);
    let deterministic = cfg.workers == 1;
    let progress = Mutex::new(Progress {
        steps: 0,
        episodes: 0,
        next_record: cfg.metrics_every,
        window: Window::default(),
        window_start: Instant::now(),
        final_level_step: None,
    });
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<MetricsRecord>();

    let ctx = WorkerCtx {
        world,
        env_cfg,
        cfg,
        acfg,
        sampler: &sampler,
        curriculum: &curriculum,
        shared: &shared,
        progress: &progress,
        stop: &stop,
        deterministic,
    };
    let mut metrics = Vec::new();
    let result: Result<(), TrainError> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.workers)
            .map(|i| {
                let tx = tx.clone();
                let ctx = &ctx;
                s.spawn(move || {
                    let r = ctx.run(i, &tx);
                    if r.is_err() {
                        ctx.stop.store(true, Ordering::Relaxed);
                    }
                    r
                })
            })
            .collect();
        drop(tx);
        for rec in rx {
            sink(&rec);
            metrics.push(rec);
        }
        let mut first_err = Ok(());
        for h in handles {
            let r = h.join().unwrap_or_else(|_| Err(TrainError::Config("worker thread panicked".into())));
            if first_err.is_ok() {
                first_err = r;
            }
        }
        first_err
    });
    result?;
    let p = progress.into_inner().unwrap_or_else(|e| e.into_inner());
    let cur = curriculum.into_inner();
    Ok(TrainOutcome {
        checkpoint: shared.into_checkpoint(acfg)?,
        total_steps: p.steps,
        episodes: p.episodes,
        final_level: cur.level(),
        final_level_step: p.final_level_step,
        metrics,
    })
}

struct WorkerCtx<'a, T> {
    world: &'a World,
    env_cfg: EnvConfig,
    cfg: &'a TrainerConfig,
    acfg: AgentConfig,
    sampler: &'a TaskSampler,
    curriculum: &'a SharedCurriculum,
    shared: &'a Shared<T>,
    progress: &'a Mutex<Progress>,
    stop: &'a AtomicBool,
    deterministic: bool,
}

impl<T: Scalar> WorkerCtx<'_, T> {
    fn run(&self, worker: usize, tx: &mpsc::Sender<MetricsRecord>) -> Result<(), TrainError> {
        let cfg = self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(worker_seed(cfg.seed, worker));
        let mut env = Environment::<T>::new(self.world, self.env_cfg)?;
        let mut params = AgentParams::<T>::zeros(self.acfg)?;
        let mut carry = EpisodeCarry::new(self.acfg.width);
        let mut rollout = Rollout::new(&self.acfg);
        let mut heads = Vec::new();
        let mut grads = vec![T::zero(); params.len()];
        let weights = LossWeights::from(cfg);
        let mut need_reset = true;
        let mut task_m = 0.0;

        while !self.stop.load(Ordering::Relaxed) {
            if need_reset {
                let level = self.curriculum.level();
                let (start, goal) = self.sampler.sample(level, &mut rng)?;
                let heading = Heading::new(rng.random_range(0..4u8));
                let horizon = self.sampler.horizon(level, &cfg.horizon)?;
                env.reset_in_place(start, heading, goal, horizon, &mut rng)?;
                carry.reset();
                task_m = self.world.distances.meters(start, goal).unwrap_or(0.0);
                need_reset = false;
            }
            self.shared.snapshot(&mut params.data);
            collect_rollout(&mut env, &params, &mut carry, cfg.rollout_len, false, &mut rng, &mut rollout)?;
            let (returns, adv) = compute_returns(&rollout, cfg.gamma);
            let parts = a3c_loss(&rollout.caches, &rollout.transitions, &returns, &adv, &weights, &mut heads);
            backward(&params, &rollout.caches, &heads[..rollout.len()], &mut grads)?;
            self.shared.update(&grads, cfg.lr)?;

            let mut level = None;
            if let Some(end) = rollout.episode_end {
                level = Some(self.curriculum.record(end.success).0);
                need_reset = true;
            }
            self.account(&rollout, &parts, task_m, level, tx);
        }
        Ok(())
    }

    fn account(
        &self,
        rollout: &Rollout<T>,
        parts: &LossParts,
        task_m: f64,
        level_after: Option<u32>,
        tx: &mpsc::Sender<MetricsRecord>,
    ) {
        let cfg = self.cfg;
        let mut p = self.progress.lock().unwrap_or_else(|e| e.into_inner());
        let n = rollout.len() as u64;
        p.steps += n;
        let w = &mut p.window;
        w.steps += n;
        w.transitions += n;
        w.loss_pi += parts.policy;
        w.loss_v += parts.value;
        w.entropy += parts.entropy;
        if let Some(end) = rollout.episode_end {
            w.episodes += 1;
            if end.success {
                w.successes += 1;
                w.solved_len += task_m;
            }
            p.episodes += 1;
        }
        let level = level_after.unwrap_or_else(|| self.curriculum.level());
        if level == cfg.n_c && p.final_level_step.is_none() {
            p.final_level_step = Some(p.steps);
        }
        while p.steps >= p.next_record {
            let w = std::mem::take(&mut p.window);
            let now = Instant::now();
            let secs = now.duration_since(p.window_start).as_secs_f64();
            p.window_start = now;
            let per_t = w.transitions.max(1) as f64;
            let per_e = w.episodes.max(1) as f64;
            let rec = MetricsRecord {
                step: p.next_record,
                level,
                success: w.successes as f64 / per_e,
                solved_len: w.solved_len / per_e,
                loss_pi: w.loss_pi / per_t,
                loss_v: w.loss_v / per_t,
                entropy: w.entropy / per_t,
                tps: if self.deterministic || secs <= 0.0 {
                    0.0
                } else {
                    w.steps as f64 / secs
                },
            };
            p.next_record += cfg.metrics_every;
            let _ = tx.send(rec);
        }
        let budget_spent = p.steps >= cfg.total_env_steps;
        let tail_done = match (cfg.stop_after_final_level_steps, p.final_level_step) {
            (Some(extra), Some(at)) => p.steps >= at + extra,
            _ => false,
        };
        if budget_spent || tail_done {
            self.stop.store(true, Ordering::Relaxed);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rollout(rewards: &[f64], values: &[f64], bootstrap: f64) -> Rollout<f64> {
        Rollout {
            transitions: rewards
                .iter()
                .zip(values)
                .map(|(&r, &v)| Transition {
                    prev_action: None,
                    action: 0,
                    log_prob: 0.0,
                    reward: r,
                    value: v,
                    done: false,
                    node: 0,
                })
                .collect(),
            caches: vec![],
            bootstrap_value: bootstrap,
            initial_state: RecurrentState::zeros(1),
            episode_end: None,
        }
    }

    #[test]
    fn returns_analytic() {
        let (r, a) = compute_returns(&rollout(&[0.0, 0.0, 1.0], &[0.0, 0.5, 0.0], 0.0), 0.99);
        assert!((r[0] - 0.9801).abs() < 1e-12 && (r[1] - 0.99).abs() < 1e-12 && r[2] == 1.0);
        assert!((a[1] - 0.49).abs() < 1e-12);
        let (r, _) = compute_returns(&rollout(&[0.0, 0.0, 0.0], &[0.0; 3], 2.0), 0.5);
        assert_eq!(r, vec![0.25, 0.5, 1.0]);
        let (r, _) = compute_returns(&rollout(&[1.0, 0.0, 1.0], &[0.0; 3], 5.0), 0.0);
        assert_eq!(r, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn metrics_line_round_trip() {
        let rec = MetricsRecord {
            step: 10000,
            level: 3,
            success: 0.75,
            solved_len: 2.5,
            loss_pi: -0.125,
            loss_v: 0.5,
            entropy: 1.25,
            tps: 0.0,
        };
        let line = rec.to_string();
        assert_eq!(
            line,
            "step=10000 level=3 success=0.7500 solved_len=2.5000 loss_pi=-0.125000 loss_v=0.500000 entropy=1.250000 tps=0.0"
        );
        assert_eq!(line.parse::<MetricsRecord>().unwrap(), rec);
        assert!("step=1 level=2".parse::<MetricsRecord>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainerConfig::default().validate().is_ok());
        let bad = TrainerConfig {
            gamma: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainerConfig {
            workers: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}

#[cfg(test)]
mod gradcheck {
    use super::*;
    use crate::agent::forward;

    struct Inputs {
        obs: Vec<Vec<f64>>,
        goal: Vec<f64>,
        actions: Vec<usize>,
        nodes: Vec<u32>,
        returns: Vec<f64>,
        adv: Vec<f64>,
    }

    fn run(p: &AgentParams<f64>, x: &Inputs) -> (Vec<ForwardOutput<f64>>, Vec<Transition<f64>>) {
        let mut s = RecurrentState::zeros(p.cfg.width);
        let mut prev = None;
        let mut caches = vec![];
        let mut trs = vec![];
        for t in 0..x.obs.len() {
            let f = forward(p, &x.obs[t], &x.goal, prev, &s).unwrap();
            trs.push(Transition {
                prev_action: prev,
                action: x.actions[t],
                log_prob: f.policy[x.actions[t]].ln(),
                reward: 0.0,
                value: f.value,
                done: false,
                node: x.nodes[t],
            });
            s = f.new_state.clone();
            prev = Some(x.actions[t]);
            caches.push(f);
        }
        (caches, trs)
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cfg = AgentConfig {
            obs_dim: 6,
            n_actions: 4,
            n_nodes: 9,
            width: 8,
        };
        let w = LossWeights {
            value: 0.5,
            entropy: 5e-4,
            probe: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for set in 0..10 {
            let mut p = init_params::<f64>(cfg, set).unwrap();
            for v in &mut p.data {
                *v += rng.random_range(-0.5..0.5);
            }
            let x = Inputs {
                obs: (0..3).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
                goal: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
                actions: (0..3).map(|_| rng.random_range(0..4)).collect(),
                nodes: (0..3).map(|_| rng.random_range(0..9)).collect(),
                returns: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                adv: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            };
            let (caches, trs) = run(&p, &x);
            let mut heads = vec![];
            a3c_loss(&caches, &trs, &x.returns, &x.adv, &w, &mut heads);
            let mut g = vec![0.0; p.len()];
            backward(&p, &caches, &heads, &mut g).unwrap();
            // the probe term reaches only the probe weights
            let probe = p.layout.probe_range();
            for i in 0..p.len() {
                let wi = if probe.contains(&i) { w } else { LossWeights { probe: 0.0, ..w } };
                let loss_at = |delta: f64| {
                    let mut q = p.clone();
                    q.data[i] += delta;
                    let (c, t) = run(&q, &x);
                    a3c_loss(&c, &t, &x.returns, &x.adv, &wi, &mut vec![]).total
                };
                let n = (loss_at(1e-5) - loss_at(-1e-5)) / 2e-5;
                let r = (g[i] - n).abs() / g[i].abs().max(n.abs()).max(1e-6);
                assert!(r < 1e-4, "set {set} param {i}: {} vs {n}", g[i]);
            }
        }
    }
}
