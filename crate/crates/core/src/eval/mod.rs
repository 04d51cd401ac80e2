//! Policy evaluation, entropy probes, task generators, throughput bench and
//! plot-data files.

mod bench;
mod plot;

pub use bench::{bench, BenchMode, BenchReport};
pub use plot::{
    emit_plot_data, parse_table, percentile_bands, render_bands, render_plot_data, PlotInput, PlotKind, Provenance, Table,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::agent::{argmax, forward_into, sample_categorical, AgentError, AgentParams, ForwardOutput, RecurrentState};
use crate::environment::{Action, EnvConfig, EnvError, Environment, Heading, World};
use crate::navgraph::{DistanceMatrix, NavGraph, NodeId};
use crate::scalar::Scalar;
use crate::trainer::{agent_config_for, worker_seed};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("dimension mismatch: {0}")]
    Mismatch(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Who picks the actions.
#[derive(Debug, Clone, Copy)]
pub enum EvalPolicy<'a, T> {
    Oracle,
    Random,
    Agent { params: &'a AgentParams<T>, greedy: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub env: EnvConfig,
    pub horizon: u32,
    pub episodes_per_task: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub start: NodeId,
    pub goal: NodeId,
    pub success: bool,
    pub steps: u32,
    /// Edge traversals times the node spacing. Turns, stutters and blocked
    /// actions add nothing.
    pub path_m: f64,
    pub optimal_m: f64,
    /// `path_m / optimal_m` for successful episodes with a nonzero optimum.
    pub ratio: Option<f64>,
    /// Entropy of the policy and of the probe at each step (agent only).
    pub policy_entropy: Vec<f64>,
    pub probe_entropy: Vec<f64>,
    /// Node before the first step and after every step.
    pub trajectory: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Percentiles {
    pub p2_5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p97_5: f64,
}

impl Percentiles {
    /// Linear interpolation between order statistics. `sorted` must be
    /// ascending and non-empty.
    pub fn of_sorted(sorted: &[f64]) -> Self {
        Percentiles {
            p2_5: quantile(sorted, 0.025),
            p25: quantile(sorted, 0.25),
            p50: quantile(sorted, 0.5),
            p75: quantile(sorted, 0.75),
            p97_5: quantile(sorted, 0.975),
        }
    }
}

pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean over successful episodes; `None` without any.
    pub mean_ratio: Option<f64>,
    pub ratio_percentiles: Option<Percentiles>,
}

/// Summary statistics; independent of record order.
pub fn summarize(records: &[EpisodeRecord]) -> Summary {
    let successes = records.iter().filter(|r| r.success).count();
    let mut ratios: Vec<f64> = records.iter().filter_map(|r| r.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    let (mean_ratio, ratio_percentiles) = if ratios.is_empty() {
        (None, None)
    } else {
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        (Some(mean), Some(Percentiles::of_sorted(&ratios)))
    };
    Summary {
        episodes: records.len(),
        successes,
        success_rate: if records.is_empty() {
            0.0
        } else {
            successes as f64 / records.len() as f64
        },
        mean_ratio,
        ratio_percentiles,
    }
}

fn entropy<T: Scalar>(p: &[T]) -> f64 {
    -p.iter()
        .map(|&x| {
            let x = x.f64();
            if x > 0.0 {
                x * x.ln()
            } else {
                0.0
            }
        })
        .sum::<f64>()
}

/// Runs `episodes_per_task` episodes of every task, in parallel. Episode
/// `k` draws from its own generator, so records do not depend on the thread
/// count.
pub fn evaluate<T: Scalar>(
    world: &World,
    policy: EvalPolicy<'_, T>,
    tasks: &[(NodeId, NodeId)],
    cfg: &EvalConfig,
) -> Result<(Vec<EpisodeRecord>, Summary), EvalError> {
    cfg.env.validate()?;
    if let EvalPolicy::Agent { params, .. } = policy {
        let want = agent_config_for(world, params.cfg.width);
        if params.cfg != want {
            return Err(EvalError::Mismatch(format!(
                "checkpoint dims {:?} do not match world {:?}",
                params.cfg, want
            )));
        }
    }
    for &(s, g) in tasks {
        for n in [s, g] {
            if !world.graph.contains(n) {
                return Err(EnvError::InvalidNode(n).into());
            }
        }
    }
    let total = tasks.len() * cfg.episodes_per_task;
    let records: Result<Vec<_>, EvalError> = (0..total)
        .into_par_iter()
        .map_init(
            || Runner::new(world, policy, cfg.env),
            |runner, k| {
                let runner = runner.as_mut().map_err(|e| e.clone())?;
                let (start, goal) = tasks[k / cfg.episodes_per_task];
                let mut rng = ChaCha8Rng::seed_from_u64(worker_seed(cfg.seed, k));
                runner.episode(start, goal, cfg.horizon, &mut rng)
            },
        )
        .collect();
    let records = records?;
    let summary = summarize(&records);
    Ok((records, summary))
}

struct Runner<'w, 'a, T> {
    env: Environment<'w, T>,
    policy: EvalPolicy<'a, T>,
    out: Option<ForwardOutput<T>>,
    state: RecurrentState<T>,
}

impl<'w, 'a, T: Scalar> Runner<'w, 'a, T> {
    fn new(world: &'w World, policy: EvalPolicy<'a, T>, env: EnvConfig) -> Result<Self, EvalError> {
        let (out, width) = match policy {
            EvalPolicy::Agent { params, .. } => (Some(ForwardOutput::new(&params.cfg)), params.cfg.width),
            _ => (None, 0),
        };
        Ok(Runner {
            env: Environment::new(world, env)?,
            policy,
            out,
            state: RecurrentState::zeros(width),
        })
    }

    fn episode<R: Rng>(&mut self, start: NodeId, goal: NodeId, horizon: u32, rng: &mut R) -> Result<EpisodeRecord, EvalError> {
        let world = self.env.world();
        let spacing = world.graph.node_spacing_m();
        let n_a = world.action_count();
        let heading = Heading::new(rng.random_range(0..4u8));
        self.env.reset_in_place(start, heading, goal, horizon, rng)?;
        self.state.reset();
        let mut prev = None;
        let mut rec = EpisodeRecord {
            start,
            goal,
            success: false,
            steps: 0,
            path_m: 0.0,
            optimal_m: world.distances.meters(start, goal).unwrap_or(f64::NAN),
            ratio: None,
            policy_entropy: Vec::new(),
            probe_entropy: Vec::new(),
            trajectory: vec![start],
        };
        loop {
            let a = match self.policy {
                EvalPolicy::Oracle => self.env.oracle_action().index(),
                EvalPolicy::Random => rng.random_range(0..n_a),
                EvalPolicy::Agent { params, greedy } => {
                    let f = self.out.as_mut().expect("agent runner has a forward buffer");
                    forward_into(params, self.env.observation(), self.env.goal_observation(), prev, &self.state, f)?;
                    self.state.h.copy_from_slice(&f.new_state.h);
                    self.state.c.copy_from_slice(&f.new_state.c);
                    rec.policy_entropy.push(entropy(&f.policy));
                    rec.probe_entropy.push(entropy(&f.loc_probs));
                    if greedy {
                        argmax(&f.policy)
                    } else {
                        sample_categorical(&f.policy, rng)
                    }
                }
            };
            let tr = self.env.step_in_place(Action::from_index(a, n_a)?, rng)?;
            prev = Some(a);
            if tr.info.moved {
                rec.path_m += spacing;
            }
            rec.trajectory.push(self.env.state().node);
            if tr.done {
                rec.success = tr.info.reached_goal;
                rec.steps = self.env.state().step;
                break;
            }
        }
        if rec.success && rec.optimal_m > 0.0 {
            rec.ratio = Some(rec.path_m / rec.optimal_m);
        }
        Ok(rec)
    }
}

/// Uniformly drawn ordered pairs at least `min_hops` apart (and at least one
/// hop).
pub fn random_tasks<R: Rng + ?Sized>(
    distances: &DistanceMatrix,
    n: usize,
    min_hops: u32,
    rng: &mut R,
) -> Result<Vec<(NodeId, NodeId)>, EvalError> {
    let min_hops = min_hops.max(1);
    let count = distances.node_count();
    if count < 2 || distances.max_hops() < min_hops {
        return Err(EvalError::Parameter(format!(
            "no pair is {min_hops} hops apart (longest path {} hops)",
            distances.max_hops()
        )));
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let a = NodeId(rng.random_range(0..count as u32));
        let b = NodeId(rng.random_range(0..count as u32));
        if distances.hops(a, b) >= min_hops {
            out.push((a, b));
        }
    }
    Ok(out)
}

/// Fixed-goal scenario: the goal is the node with the most nodes within
/// `density_radius_m` (lowest id on ties); starts are chosen by farthest-point
/// sampling from the goal.
pub fn fixed_goal_tasks(
    graph: &NavGraph,
    distances: &DistanceMatrix,
    n_starts: usize,
    density_radius_m: f64,
) -> Result<Vec<(NodeId, NodeId)>, EvalError> {
    let n = graph.node_count();
    if n_starts == 0 || n_starts >= n {
        return Err(EvalError::Parameter(format!(
            "need between 1 and {} starts, got {n_starts}",
            n.saturating_sub(1)
        )));
    }
    let spacing = graph.node_spacing_m();
    let radius_hops = (density_radius_m / spacing + 1e-9).floor() as u32;
    let goal = (0..n)
        .max_by_key(|&a| {
            let density = distances.row(NodeId(a as u32)).iter().filter(|&&h| h <= radius_hops).count();
            (density, std::cmp::Reverse(a))
        })
        .map(|a| NodeId(a as u32))
        .expect("graph has nodes");
    let mut nearest: Vec<u32> = distances.row(goal).to_vec();
    let mut starts = Vec::with_capacity(n_starts);
    for _ in 0..n_starts {
        let pick = (0..n)
            .max_by_key(|&a| (nearest[a], std::cmp::Reverse(a)))
            .map(|a| NodeId(a as u32))
            .expect("graph has nodes");
        starts.push((pick, goal));
        for (m, &h) in nearest.iter_mut().zip(distances.row(pick)) {
            *m = (*m).min(h);
        }
    }
    Ok(starts)
}

/// Mean entropy per episode step over the episodes still running at it.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyCurves {
    pub policy: Vec<f64>,
    pub probe: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn entropy_curves(records: &[EpisodeRecord]) -> EntropyCurves {
    let len = records.iter().map(|r| r.policy_entropy.len()).max().unwrap_or(0);
    let mut c = EntropyCurves {
        policy: vec![0.0; len],
        probe: vec![0.0; len],
        counts: vec![0; len],
    };
    for r in records {
        for (t, (&p, &q)) in r.policy_entropy.iter().zip(&r.probe_entropy).enumerate() {
            c.policy[t] += p;
            c.probe[t] += q;
            c.counts[t] += 1;
        }
    }
    for t in 0..len {
        c.policy[t] /= c.counts[t] as f64;
        c.probe[t] /= c.counts[t] as f64;
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Policy,
    Probe,
}

/// One-sided paired t-test of "entropy at step `early` exceeds entropy at
/// step `late`" (steps counted from 1) over episodes that reach `late`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub n: usize,
    pub mean_early: f64,
    pub mean_late: f64,
    pub t: f64,
    pub p_value: f64,
}

pub fn paired_decrease(records: &[EpisodeRecord], head: Head, early: usize, late: usize) -> Result<PairedTest, EvalError> {
    if early == 0 || late <= early {
        return Err(EvalError::Parameter(format!("need 1 <= early < late, got {early}, {late}")));
    }
    let pairs: Vec<(f64, f64)> = records
        .iter()
        .map(|r| match head {
            Head::Policy => &r.policy_entropy,
            Head::Probe => &r.probe_entropy,
        })
        .filter(|e| e.len() >= late)
        .map(|e| (e[early - 1], e[late - 1]))
        .collect();
    let n = pairs.len();
    if n < 2 {
        return Err(EvalError::Empty(format!("{n} episodes last {late} steps; need at least 2")));
    }
    let nf = n as f64;
    let mean_early = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_late = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let md = mean_early - mean_late;
    let var = pairs.iter().map(|p| (p.0 - p.1 - md).powi(2)).sum::<f64>() / (nf - 1.0);
    let (t, p_value) = if var > 0.0 {
        let t = md / (var / nf).sqrt();
        let dist = StudentsT::new(0.0, 1.0, nf - 1.0).map_err(|e| EvalError::Parameter(e.to_string()))?;
        (t, 1.0 - dist.cdf(t))
    } else if md > 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        (if md < 0.0 { f64::NEG_INFINITY } else { 0.0 }, 1.0)
    };
    Ok(PairedTest {
        n,
        mean_early,
        mean_late,
        t,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{AgentConfig, AgentParams};
    use crate::embedstore::{precompute, FrameSource, PrecomputeParams};
    use crate::navgraph::generate_grid;

    fn world() -> World {
        let g = generate_grid(5, 5, 1.0).unwrap();
        let p = PrecomputeParams {
            dim: 8,
            rotations: 2,
            seed: 3,
            ..Default::default()
        };
        let s = precompute(&g, FrameSource::Synthetic { frames_per_edge: 4 }, &p).unwrap();
        World::new(g, s).unwrap()
    }

    fn cfg(env: EnvConfig) -> EvalConfig {
        EvalConfig {
            env,
            horizon: 100,
            episodes_per_task: 2,
            seed: 5,
        }
    }

    #[test]
    fn oracle_is_optimal() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tasks = random_tasks(&w.distances, 30, 1, &mut rng).unwrap();
        let (recs, s) = evaluate::<f64>(&w, EvalPolicy::Oracle, &tasks, &cfg(EnvConfig::deterministic())).unwrap();
        assert_eq!(s.success_rate, 1.0);
        assert!(recs.iter().all(|r| r.ratio == Some(1.0)));
        assert_eq!(s.mean_ratio, Some(1.0));
        for r in &recs {
            assert_eq!(*r.trajectory.last().unwrap(), r.goal);
        }
    }

    #[test]
    fn random_policy_is_worse_than_oracle() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tasks = random_tasks(&w.distances, 50, 4, &mut rng).unwrap();
        let c = EvalConfig {
            horizon: 20,
            ..cfg(EnvConfig::default())
        };
        let (_, s) = evaluate::<f64>(&w, EvalPolicy::Random, &tasks, &c).unwrap();
        assert!(s.success_rate < 0.5, "{}", s.success_rate);
    }

    #[test]
    fn zero_agent_has_flat_uniform_entropy() {
        let w = world();
        let acfg = agent_config_for(&w, 6);
        let params = AgentParams::<f64>::zeros(acfg).unwrap();
        let tasks = vec![(NodeId(0), NodeId(24)); 3];
        let c = EvalConfig {
            horizon: 15,
            ..cfg(EnvConfig::default())
        };
        let (recs, _) = evaluate(&w, EvalPolicy::Agent { params: &params, greedy: false }, &tasks, &c).unwrap();
        let curves = entropy_curves(&recs);
        let ln_na = (acfg.n_actions as f64).ln();
        assert!(curves.policy.iter().all(|&h| (h - ln_na).abs() < 1e-12));
        assert!(curves.probe.iter().all(|&h| (h - (25f64).ln()).abs() < 1e-12));
    }

    #[test]
    fn dims_checked() {
        let w = world();
        let bad = AgentConfig {
            obs_dim: 3,
            n_actions: 4,
            n_nodes: 25,
            width: 4,
        };
        let params = AgentParams::<f64>::zeros(bad).unwrap();
        let r = evaluate(&w, EvalPolicy::Agent { params: &params, greedy: true }, &[(NodeId(0), NodeId(1))], &cfg(EnvConfig::default()));
        assert!(matches!(r, Err(EvalError::Mismatch(_))));
    }

    #[test]
    fn records_do_not_depend_on_thread_count() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tasks = random_tasks(&w.distances, 20, 2, &mut rng).unwrap();
        let c = cfg(EnvConfig::default());
        let (a, _) = evaluate::<f64>(&w, EvalPolicy::Random, &tasks, &c).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let (b, _) = pool.install(|| evaluate::<f64>(&w, EvalPolicy::Random, &tasks, &c)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn summary_ignores_order() {
        let rec = |ratio: Option<f64>| EpisodeRecord {
            start: NodeId(0),
            goal: NodeId(1),
            success: ratio.is_some(),
            steps: 3,
            path_m: ratio.unwrap_or(0.0),
            optimal_m: 1.0,
            ratio,
            policy_entropy: vec![],
            probe_entropy: vec![],
            trajectory: vec![],
        };
        let mut recs = vec![rec(Some(1.0)), rec(None), rec(Some(1.3)), rec(Some(2.0))];
        let a = summarize(&recs);
        recs.reverse();
        assert_eq!(a, summarize(&recs));
        assert_eq!(a.successes, 3);
        assert!((a.mean_ratio.unwrap() - 4.3 / 3.0).abs() < 1e-12);
        assert_eq!(a.ratio_percentiles.unwrap().p50, 1.3);
    }

    #[test]
    fn fixed_goal_on_grid_is_central() {
        let g = generate_grid(5, 5, 1.0).unwrap();
        let d = DistanceMatrix::new(&g);
        let tasks = fixed_goal_tasks(&g, &d, 4, 2.0).unwrap();
        assert!(tasks.iter().all(|t| t.1 == NodeId(12)));
        let starts: Vec<u32> = tasks.iter().map(|t| t.0 .0).collect();
        assert_eq!(starts, vec![0, 4, 20, 24]);
    }

    #[test]
    fn paired_test_detects_decrease() {
        let mk = |e: Vec<f64>| EpisodeRecord {
            start: NodeId(0),
            goal: NodeId(1),
            success: false,
            steps: e.len() as u32,
            path_m: 0.0,
            optimal_m: 1.0,
            ratio: None,
            probe_entropy: e.clone(),
            policy_entropy: e,
            trajectory: vec![],
        };
        let recs: Vec<_> = (0..50).map(|i| mk(vec![1.0 + 0.01 * (i % 7) as f64, 0.5, 0.2 + 0.01 * (i % 3) as f64])).collect();
        let t = paired_decrease(&recs, Head::Policy, 1, 3).unwrap();
        assert_eq!(t.n, 50);
        assert!(t.p_value < 1e-10);
        let t = paired_decrease(&recs, Head::Probe, 2, 3).unwrap();
        assert!(t.mean_late < t.mean_early);
        let flat: Vec<_> = (0..5).map(|_| mk(vec![1.0, 1.0])).collect();
        assert_eq!(paired_decrease(&flat, Head::Policy, 1, 2).unwrap().p_value, 1.0);
        assert!(paired_decrease(&recs, Head::Policy, 1, 4).is_err());
    }
}
