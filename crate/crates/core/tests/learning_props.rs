use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use replaynav::agent::{backward, forward, init_params, HeadGrads, RecurrentState};
use replaynav::curriculum::{level_pairs, CurriculumState, HorizonRule, TaskSampler};
use replaynav::embedstore::{precompute, FrameSource, PrecomputeParams};
use replaynav::environment::{Action, EnvConfig, Environment, Heading, World};
use replaynav::eval::{evaluate, parse_table, random_tasks, render_plot_data, EvalConfig, EvalPolicy, PlotInput, PlotKind, Provenance};
use replaynav::navgraph::{generate_grid_campus, generate_random_lattice, BuildingSpec, DistanceMatrix, NodeId};
use replaynav::trainer::{
    a3c_loss, agent_config_for, collect_rollout, compute_returns, train, EpisodeCarry, LossWeights, Rollout,
    TrainerConfig, Transition,
};

fn store_for(g: &replaynav::navgraph::NavGraph, dim: usize) -> replaynav::embedstore::EmbeddingStore {
    let p = PrecomputeParams {
        dim,
        rotations: 2,
        ..Default::default()
    };
    precompute(g, FrameSource::Synthetic { frames_per_edge: 4 }, &p).unwrap()
}

fn campus_world() -> World {
    let b = BuildingSpec {
        x: 0,
        y: 0,
        floors: 2,
        footprint_hops: 2,
    };
    let g = generate_grid_campus(4, 4, 1.0, &[b]).unwrap();
    let s = store_for(&g, 6);
    World::new(g, s).unwrap()
}

fn small_cfg() -> TrainerConfig {
    TrainerConfig {
        width: 8,
        workers: 1,
        total_env_steps: 2_000,
        metrics_every: 500,
        rollout_len: 20,
        n_c: 4,
        window: 10,
        lr: 1e-3,
        seed: 7,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn episodes_end_on_goal_or_horizon(seed in any::<u64>(), horizon in 1u32..40) {
        let w = campus_world();
        let mut env = Environment::<f64>::new(&w, EnvConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = w.node_count() as u32;
        let (s, g) = (NodeId(rng.random_range(0..n)), NodeId(rng.random_range(0..n)));
        env.reset(s, Heading::new(rng.random_range(0..4)), g, horizon, &mut rng).unwrap();
        let mut steps = 0;
        loop {
            let a = Action::from_index(rng.random_range(0..w.action_count()), w.action_count()).unwrap();
            let r = env.step(a, &mut rng).unwrap();
            steps += 1;
            let at_goal = env.state().node == g;
            prop_assert_eq!(r.info.reached_goal, at_goal);
            prop_assert_eq!(r.reward, if at_goal { 1.0 } else { 0.0 });
            if r.done {
                prop_assert!(at_goal || steps == horizon);
                break;
            }
            prop_assert!(steps < horizon);
        }
        prop_assert!(env.step(Action::TurnLeft, &mut rng).is_err());
    }

    #[test]
    fn oracle_reaches_goal_in_hops_plus_turns(seed in any::<u64>()) {
        let w = campus_world();
        let d = DistanceMatrix::new(&w.graph);
        let mut env = Environment::<f64>::new(&w, EnvConfig::deterministic()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = w.node_count() as u32;
        let (s, g) = (NodeId(rng.random_range(0..n)), NodeId(rng.random_range(0..n)));
        prop_assume!(s != g);
        env.reset(s, Heading::new(rng.random_range(0..4)), g, 1000, &mut rng).unwrap();
        let turns = env.oracle_turns();
        let budget = d.hops(s, g) + turns;
        let mut steps = 0;
        while !env.is_done() {
            let a = env.oracle_action();
            env.step(a, &mut rng).unwrap();
            steps += 1;
        }
        prop_assert_eq!(env.state().node, g);
        prop_assert_eq!(steps, budget);
    }

    #[test]
    fn forward_outputs_are_distributions(seed in any::<u64>(), width in 1usize..12, prev in prop::option::of(0usize..5)) {
        let w = campus_world();
        let cfg = agent_config_for(&w, width);
        let p = init_params::<f64>(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs: Vec<f64> = (0..cfg.obs_dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let goal: Vec<f64> = (0..cfg.obs_dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut st = RecurrentState::zeros(width);
        for v in st.h.iter_mut().chain(st.c.iter_mut()) {
            *v = rng.random_range(-1.0..1.0);
        }
        let out = forward(&p, &obs, &goal, prev.map(|a| a % cfg.n_actions), &st).unwrap();
        for probs in [&out.policy, &out.loc_probs] {
            prop_assert!(probs.iter().all(|&x| x >= 0.0 && x.is_finite()));
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        prop_assert!(out.value.is_finite());
        prop_assert!(out.new_state.h.iter().all(|x| x.abs() <= 1.0));

        // zeroing the carried state gives the same first step as a fresh state
        let fresh = forward(&p, &obs, &goal, None, &RecurrentState::zeros(width)).unwrap();
        st.reset();
        let again = forward(&p, &obs, &goal, None, &st).unwrap();
        prop_assert_eq!(fresh.value.to_bits(), again.value.to_bits());
        prop_assert_eq!(fresh.policy, again.policy);
    }

    #[test]
    fn returns_match_direct_sums(rewards in prop::collection::vec(prop::sample::select(vec![0.0, 1.0]), 1..30),
                                 gamma in 0.0f64..=1.0, boot in -2.0f64..2.0) {
        let w = campus_world();
        let mut r = Rollout::<f64>::new(&agent_config_for(&w, 2));
        r.bootstrap_value = boot;
        for (i, &rw) in rewards.iter().enumerate() {
            r.transitions.push(Transition { prev_action: None, action: 0, log_prob: 0.0, reward: rw, value: i as f64 * 0.1, done: false, node: 0 });
        }
        let (ret, adv) = compute_returns(&r, gamma);
        let n = rewards.len();
        for t in 0..n {
            let mut want = gamma.powi((n - t) as i32) * boot;
            for (k, &rw) in rewards[t..].iter().enumerate() {
                want += gamma.powi(k as i32) * rw;
            }
            prop_assert!((ret[t] - want).abs() <= 1e-9 * (1.0 + want.abs()));
            prop_assert!((adv[t] - (want - t as f64 * 0.1)).abs() <= 1e-9 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn curriculum_levels_nest(seed in any::<u64>(), n_c in 1u32..12, wd in 2u32..6, ht in 2u32..6, p in 0.0f64..0.4) {
        let g = generate_random_lattice(seed, wd, ht, p, 1.0).unwrap();
        let d = DistanceMatrix::new(&g);
        let mut prev = Vec::new();
        for level in 1..=n_c {
            let pool = level_pairs(&d, level, n_c).unwrap();
            let bound = (level as f64 / n_c as f64 * d.max_m()).max(1.0);
            for &(a, b) in &pool.pairs {
                prop_assert!(a != b);
                prop_assert!(d.hops(a, b) as f64 <= bound + 1e-9);
            }
            let set: std::collections::BTreeSet<_> = pool.pairs.iter().copied().collect();
            prop_assert!(prev.iter().all(|x| set.contains(x)));
            prev = pool.pairs;
        }
        let n = g.node_count();
        prop_assert_eq!(prev.len(), n * (n - 1));
    }
}

#[test]
fn scripted_successes_advance_one_level_per_full_window() {
    let mut c = CurriculumState::new(5, 10.0, 4, 0.75).unwrap();
    for _ in 0..3 {
        assert!(!c.record_and_maybe_advance(true));
    }
    assert!(c.record_and_maybe_advance(true));
    assert_eq!((c.level(), c.window_len()), (2, 0));
    for s in [false, true, true, true] {
        assert!(!c.record_and_maybe_advance(s) || s);
    }
    assert_eq!(c.level(), 3);
    for _ in 0..100 {
        c.record_and_maybe_advance(true);
    }
    assert_eq!(c.level(), 5);
    assert!(c.at_final_level());
}

#[test]
fn horizon_follows_longest_task() {
    let w = campus_world();
    let d = DistanceMatrix::new(&w.graph);
    let s = TaskSampler::new(&d, 4).unwrap();
    let rule = HorizonRule { min_steps: 3, per_hop: 4 };
    for level in 1..=4 {
        let longest = s.pool(level).unwrap().pairs.iter().map(|&(a, b)| d.hops(a, b)).max().unwrap();
        let bound_hops = (level as f64 / 4.0 * d.max_m()).max(1.0).ceil() as u32;
        assert!(longest <= bound_hops);
        assert_eq!(s.horizon(level, &rule).unwrap(), (4 * bound_hops).max(3));
    }
}

#[test]
fn advantage_is_not_differentiated() {
    let w = campus_world();
    let cfg = agent_config_for(&w, 6);
    let params = init_params::<f64>(cfg, 3).unwrap();
    let mut env = Environment::<f64>::new(&w, EnvConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    env.reset(NodeId(0), Heading::new(0), NodeId(9), 100, &mut rng).unwrap();
    let mut carry = EpisodeCarry::new(cfg.width);
    let mut roll = Rollout::new(&cfg);
    collect_rollout(&mut env, &params, &mut carry, 15, false, &mut rng, &mut roll).unwrap();
    let (ret, adv) = compute_returns(&roll, 0.99);
    let mut heads: Vec<HeadGrads<f64>> = Vec::new();
    let wts = LossWeights {
        value: 0.0,
        entropy: 0.01,
        probe: 0.0,
    };
    a3c_loss(&roll.caches, &roll.transitions, &ret, &adv, &wts, &mut heads);
    let mut grads = vec![0.0; params.len()];
    backward(&params, &roll.caches, &heads, &mut grads).unwrap();
    // with the value term off, the policy term must not reach the value head
    let l = &params.layout;
    assert!(grads[l.w_v.clone()].iter().chain(&grads[l.b_v.clone()]).all(|&g| g == 0.0));
    assert!(grads[l.w_pi.clone()].iter().any(|&g| g != 0.0));

    // the policy-logit gradient is A_t (pi - onehot) plus the entropy term
    for (t, h) in heads.iter().enumerate() {
        let pi = &roll.caches[t].policy;
        let ent: f64 = -pi.iter().map(|p| p * p.ln()).sum::<f64>();
        for (k, &g) in h.logits.iter().enumerate() {
            let onehot = if k == roll.transitions[t].action { 1.0 } else { 0.0 };
            let want = adv[t] * (pi[k] - onehot) + 0.01 * pi[k] * (pi[k].ln() + ent);
            assert!((g - want).abs() < 1e-12);
        }
    }
}

#[test]
fn one_worker_runs_are_bit_identical() {
    let w = campus_world();
    let cfg = small_cfg();
    let a = train::<f64>(&w, EnvConfig::default(), &cfg, None, |_| {}).unwrap();
    let b = train::<f64>(&w, EnvConfig::default(), &cfg, None, |_| {}).unwrap();
    assert_eq!(a.metrics, b.metrics);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.checkpoint.params.data), bits(&b.checkpoint.params.data));
    assert!(a.metrics.iter().all(|m| m.tps == 0.0));
}

#[test]
fn step_accounting_is_conserved() {
    let w = campus_world();
    for workers in [1, 3] {
        let cfg = TrainerConfig { workers, ..small_cfg() };
        let mut seen = Vec::new();
        let out = train::<f32>(&w, EnvConfig::default(), &cfg, None, |m| seen.push(m.step)).unwrap();
        assert!(out.total_steps >= cfg.total_env_steps);
        assert!(out.total_steps < cfg.total_env_steps + (workers * cfg.rollout_len) as u64);
        let want: Vec<u64> = (1..=out.total_steps / cfg.metrics_every).map(|k| k * cfg.metrics_every).collect();
        assert_eq!(seen, want);
        assert_eq!(out.metrics.iter().map(|m| m.step).collect::<Vec<_>>(), want);
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let w = campus_world();
    let cfg = TrainerConfig { lr: 0.0, ..small_cfg() };
    let out = train::<f64>(&w, EnvConfig::default(), &cfg, None, |_| {}).unwrap();
    let init = init_params::<f64>(agent_config_for(&w, cfg.width), cfg.seed).unwrap();
    assert_eq!(out.checkpoint.params.data, init.data);
}

#[test]
fn evaluated_paths_are_never_shorter_than_optimal() {
    let w = campus_world();
    let d = DistanceMatrix::new(&w.graph);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tasks = random_tasks(&d, 40, 1, &mut rng).unwrap();
    let ecfg = EvalConfig {
        env: EnvConfig::default(),
        horizon: 60,
        episodes_per_task: 1,
        seed: 3,
    };
    let params = init_params::<f32>(agent_config_for(&w, 8), 1).unwrap();
    for policy in [EvalPolicy::Random, EvalPolicy::Oracle, EvalPolicy::Agent { params: &params, greedy: false }] {
        let (recs, sum) = evaluate(&w, policy, &tasks, &ecfg).unwrap();
        for r in &recs {
            assert!(r.path_m + 1e-9 >= r.optimal_m || !r.success);
            if let Some(x) = r.ratio {
                assert!(x >= 1.0 - 1e-12);
            }
        }
        if let EvalPolicy::Oracle = policy {
            // stutter only delays, so the oracle walks exactly the optimal path
            assert_eq!(sum.successes, 40);
            assert!((sum.mean_ratio.unwrap() - 1.0).abs() < 1e-12);
        }
        let text = render_plot_data(PlotKind::PathScatter, PlotInput::Episodes(&recs), &Provenance::new(None, Some(3))).unwrap();
        let t = parse_table(&text).unwrap();
        assert_eq!(t.rows.len(), recs.len());
        assert_eq!(t.column("optimal_m").unwrap(), recs.iter().map(|r| r.optimal_m).collect::<Vec<_>>());
    }
}
