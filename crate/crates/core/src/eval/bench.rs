use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::agent::{forward_into, sample_categorical, AgentParams, ForwardOutput, RecurrentState};
use crate::environment::{Action, EnvConfig, Environment, Heading, World};
use crate::navgraph::NodeId;
use crate::scalar::Scalar;
use crate::trainer::{agent_config_for, worker_seed};

/// Counts are published to the shared total every this many steps.
const PUBLISH_EVERY: u64 = 1024;
const WARMUP: u8 = 0;
const MEASURE: u8 = 1;
const STOP: u8 = 2;

#[derive(Debug, Clone, Copy)]
pub enum BenchMode<'a, T> {
    /// Uniformly random actions: stepping, observation sampling and noise.
    EnvOnly,
    /// Actions sampled from the policy, one forward pass per step.
    EnvForward(&'a AgentParams<T>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    pub workers: usize,
    pub transitions: u64,
    pub secs: f64,
    /// Zero when nothing was measured.
    pub tps: f64,
}

/// Steps `workers` independent environments on random tasks for
/// `duration_s` seconds after `warmup_s` seconds of warmup. `progress` is
/// called from the coordinating thread about every `progress_every_s`
/// seconds with the transitions counted so far.
#[allow(clippy::too_many_arguments)]
pub fn bench<T: Scalar>(
    world: &World,
    env_cfg: EnvConfig,
    mode: BenchMode<'_, T>,
    workers: usize,
    warmup_s: f64,
    duration_s: f64,
    seed: u64,
    mut progress: Option<(f64, &mut dyn FnMut(u64, f64))>,
) -> Result<BenchReport, EvalError> {
    env_cfg.validate()?;
    if workers == 0 {
        return Err(EvalError::Parameter("bench needs at least one worker".into()));
    }
    if !(warmup_s >= 0.0) || !(duration_s >= 0.0) || !duration_s.is_finite() || !warmup_s.is_finite() {
        return Err(EvalError::Parameter(format!("bad durations: warmup {warmup_s}, run {duration_s}")));
    }
    if let BenchMode::EnvForward(p) = mode {
        let want = agent_config_for(world, p.cfg.width);
        if p.cfg != want {
            return Err(EvalError::Mismatch(format!("checkpoint dims {:?} do not match world {:?}", p.cfg, want)));
        }
    }
    if duration_s == 0.0 {
        return Ok(BenchReport {
            workers,
            transitions: 0,
            secs: 0.0,
            tps: 0.0,
        });
    }
    let phase = AtomicU8::new(WARMUP);
    let total = AtomicU64::new(0);
    let secs = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|i| {
                let (phase, total) = (&phase, &total);
                s.spawn(move || run_worker(world, env_cfg, mode, worker_seed(seed, i), phase, total))
            })
            .collect();
        std::thread::sleep(Duration::from_secs_f64(warmup_s));
        phase.store(MEASURE, Ordering::Release);
        let start = Instant::now();
        let end = start + Duration::from_secs_f64(duration_s);
        loop {
            let now = Instant::now();
            if now >= end {
                break;
            }
            let nap = match &progress {
                Some((every, _)) => Duration::from_secs_f64(every.max(1e-3)).min(end - now),
                None => end - now,
            };
            std::thread::sleep(nap);
            if let Some((_, f)) = progress.as_mut() {
                f(total.load(Ordering::Relaxed), start.elapsed().as_secs_f64());
            }
        }
        phase.store(STOP, Ordering::Release);
        let secs = start.elapsed().as_secs_f64();
        let mut first_err = Ok(());
        for h in handles {
            let r = h.join().unwrap_or_else(|_| Err(EvalError::Parameter("bench worker panicked".into())));
            if first_err.is_ok() {
                first_err = r;
            }
        }
        first_err.map(|_| secs)
    })?;
    let transitions = total.load(Ordering::Acquire);
    Ok(BenchReport {
        workers,
        transitions,
        secs,
        tps: if secs > 0.0 { transitions as f64 / secs } else { 0.0 },
    })
}

fn run_worker<T: Scalar>(
    world: &World,
    env_cfg: EnvConfig,
    mode: BenchMode<'_, T>,
    seed: u64,
    phase: &AtomicU8,
    total: &AtomicU64,
) -> Result<(), EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = Environment::<T>::new(world, env_cfg)?;
    let n = world.node_count() as u32;
    let n_a = world.action_count();
    let mut fwd = match mode {
        BenchMode::EnvForward(p) => Some((ForwardOutput::new(&p.cfg), RecurrentState::zeros(p.cfg.width))),
        BenchMode::EnvOnly => None,
    };
    let mut prev = None;
    let mut need_reset = true;
    let mut local = 0u64;
    loop {
        let ph = phase.load(Ordering::Relaxed);
        if ph == STOP {
            break;
        }
        if need_reset {
            let start = NodeId(rng.random_range(0..n));
            let goal = NodeId(rng.random_range(0..n));
            env.reset_in_place(start, Heading::new(rng.random_range(0..4u8)), goal, 100, &mut rng)?;
            if let Some((_, st)) = fwd.as_mut() {
                st.reset();
            }
            prev = None;
        }
        let a = match (mode, fwd.as_mut()) {
            (BenchMode::EnvForward(p), Some((out, st))) => {
                forward_into(p, env.observation(), env.goal_observation(), prev, st, out)?;
                st.h.copy_from_slice(&out.new_state.h);
                st.c.copy_from_slice(&out.new_state.c);
                sample_categorical(&out.policy, &mut rng)
            }
            _ => rng.random_range(0..n_a),
        };
        let tr = env.step_in_place(Action::from_index(a, n_a)?, &mut rng)?;
        prev = Some(a);
        need_reset = tr.done;
        if ph == MEASURE {
            local += 1;
            if local == PUBLISH_EVERY {
                total.fetch_add(local, Ordering::Relaxed);
                local = 0;
            }
        }
    }
    total.fetch_add(local, Ordering::Release);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedstore::{precompute, FrameSource, PrecomputeParams};
    use crate::navgraph::generate_grid;

    fn world() -> World {
        let g = generate_grid(4, 4, 1.0).unwrap();
        let p = PrecomputeParams {
            dim: 8,
            ..Default::default()
        };
        let s = precompute(&g, FrameSource::Synthetic { frames_per_edge: 4 }, &p).unwrap();
        World::new(g, s).unwrap()
    }

    #[test]
    fn zero_duration_reports_nothing() {
        let w = world();
        let r = bench::<f32>(&w, EnvConfig::default(), BenchMode::EnvOnly, 2, 0.0, 0.0, 1, None).unwrap();
        assert_eq!(r.transitions, 0);
        assert_eq!(r.tps, 0.0);
    }

    #[test]
    fn short_run_counts_steps() {
        let w = world();
        let mut calls = 0;
        let mut cb = |_: u64, _: f64| calls += 1;
        let r = bench::<f32>(&w, EnvConfig::default(), BenchMode::EnvOnly, 2, 0.01, 0.1, 1, Some((0.02, &mut cb))).unwrap();
        assert!(r.transitions > 0 && r.tps > 0.0);
        assert!(calls >= 2);
        let p = AgentParams::<f32>::zeros(agent_config_for(&w, 4)).unwrap();
        let r = bench(&w, EnvConfig::default(), BenchMode::EnvForward(&p), 1, 0.0, 0.05, 1, None).unwrap();
        assert!(r.transitions > 0);
    }

    #[test]
    fn rejects_bad_input() {
        let w = world();
        assert!(bench::<f32>(&w, EnvConfig::default(), BenchMode::EnvOnly, 0, 0.0, 1.0, 1, None).is_err());
        assert!(bench::<f32>(&w, EnvConfig::default(), BenchMode::EnvOnly, 1, -1.0, 1.0, 1, None).is_err());
    }
}
