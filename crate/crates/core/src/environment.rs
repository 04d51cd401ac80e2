//! The navigation POMDP.
//!
//! State is `(node, heading, goal)` plus the episode step counter and the
//! correlated brightness noise. Observations are embeddings drawn from the
//! current node's frame pool for the current heading, augmented with
//! feature-space noise. The only reward is 1.0 on reaching the goal node.

use rand::Rng;
use thiserror::Error;

use crate::augment::{apply_noise_into, AugmentError, NoiseConfig, OuState};
use crate::embedstore::{EmbeddingStore, FrameId};
use crate::navgraph::{bearing_quadrant, DistanceMatrix, EdgeKind, NavGraph, NodeId, UNREACHABLE};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("node {0} is not in the graph")]
    InvalidNode(NodeId),
    #[error("action index {index} outside the {count}-action space")]
    InvalidAction { index: usize, count: usize },
    #[error("step called after the episode ended")]
    StepAfterDone,
    #[error("step called before reset")]
    NotReset,
    #[error("node {0} has no frames in its observation pool")]
    EmptyPool(NodeId),
    #[error("graph/store mismatch: {0}")]
    Mismatch(String),
    #[error("invalid environment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Noise(#[from] AugmentError),
}

/// Graph, embeddings and all-pairs distances shared read-only by every
/// environment instance.
#[derive(Debug)]
pub struct World {
    pub graph: NavGraph,
    pub store: EmbeddingStore,
    pub distances: DistanceMatrix,
}

impl World {
    pub fn new(graph: NavGraph, store: EmbeddingStore) -> Result<Self, EnvError> {
        if store.node_count() != graph.node_count() {
            return Err(EnvError::Mismatch(format!(
                "store pools cover {} nodes, graph has {}",
                store.node_count(),
                graph.node_count()
            )));
        }
        if let Some(n) = graph.nodes().iter().find(|n| store.node_pool(n.id).is_empty()) {
            return Err(EnvError::EmptyPool(n.id));
        }
        let distances = DistanceMatrix::new(&graph);
        Ok(World {
            graph,
            store,
            distances,
        })
    }

    /// `3 + floor count`: turn left, turn right, forward, one elevator
    /// action per floor.
    pub fn action_count(&self) -> usize {
        3 + self.graph.floor_count() as usize
    }

    pub fn dim(&self) -> usize {
        self.store.dim()
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }
}

/// Heading quadrant: 0, 1, 2, 3 for bearings 0°, 90°, 180°, 270° (clockwise
/// from east).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Heading(u8);

impl Heading {
    pub const ALL: [Heading; 4] = [Heading(0), Heading(1), Heading(2), Heading(3)];

    pub fn new(quadrant: u8) -> Self {
        Heading(quadrant % 4)
    }

    pub fn quadrant(self) -> u8 {
        self.0
    }

    pub fn bearing_deg(self) -> f64 {
        self.0 as f64 * 90.0
    }

    pub fn turn_left(self) -> Self {
        Heading((self.0 + 3) % 4)
    }

    pub fn turn_right(self) -> Self {
        Heading((self.0 + 1) % 4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    TurnLeft,
    TurnRight,
    Forward,
    /// Ride to the given floor index.
    Elevator(u32),
}

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::TurnLeft => 0,
            Action::TurnRight => 1,
            Action::Forward => 2,
            Action::Elevator(f) => 3 + f as usize,
        }
    }

    pub fn from_index(index: usize, count: usize) -> Result<Self, EnvError> {
        if index >= count {
            return Err(EnvError::InvalidAction { index, count });
        }
        Ok(match index {
            0 => Action::TurnLeft,
            1 => Action::TurnRight,
            2 => Action::Forward,
            i => Action::Elevator((i - 3) as u32),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub p_stutter: f64,
    pub noise: NoiseConfig,
    /// Reset the OU brightness state at every episode start.
    pub reset_noise_each_episode: bool,
    /// Apply noise to the goal embedding as well.
    pub noise_goal: bool,
    /// Goal counts as reached within this path distance; 0 means exact node.
    pub goal_radius_m: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            p_stutter: 0.05,
            noise: NoiseConfig::default(),
            reset_noise_each_episode: true,
            noise_goal: false,
            goal_radius_m: 0.0,
        }
    }
}

impl EnvConfig {
    /// No stutter and no observation noise.
    pub fn deterministic() -> Self {
        EnvConfig {
            p_stutter: 0.0,
            noise: NoiseConfig::ZERO,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        self.noise.validate()?;
        if !(0.0..=1.0).contains(&self.p_stutter) {
            return Err(EnvError::Config(format!("p_stutter {} outside [0, 1]", self.p_stutter)));
        }
        if !(self.goal_radius_m >= 0.0) {
            return Err(EnvError::Config(format!("goal radius {} is negative", self.goal_radius_m)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState<T> {
    pub node: NodeId,
    pub heading: Heading,
    pub goal: NodeId,
    pub step: u32,
    pub ou: OuState<T>,
    pub episode_horizon: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepInfo {
    pub reached_goal: bool,
    pub stuttered: bool,
    pub blocked: bool,
    /// A move or elevator edge was traversed.
    pub moved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult<T> {
    pub observation: Vec<T>,
    pub goal_observation: Vec<T>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Outcome of a step without the observation copies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
struct OraclePlan {
    goal: NodeId,
    /// Minimal remaining turns per (node, heading) along hop-shortest paths.
    turns: Vec<[u32; 4]>,
}

fn turn_count(from: u8, to: u8) -> u32 {
    let d = (to + 4 - from) % 4;
    d.min(4 - d) as u32
}

/// One environment instance; confined to a single worker at a time.
pub struct Environment<'w, T> {
    world: &'w World,
    cfg: EnvConfig,
    state: EnvState<T>,
    sigma_local: T,
    started: bool,
    done: bool,
    obs: Vec<T>,
    goal_obs: Vec<T>,
    oracle: Option<OraclePlan>,
}

impl<'w, T: Scalar> Environment<'w, T> {
    pub fn new(world: &'w World, cfg: EnvConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let dim = world.dim();
        Ok(Environment {
            world,
            cfg,
            state: EnvState {
                node: NodeId(0),
                heading: Heading(0),
                goal: NodeId(0),
                step: 0,
                ou: OuState::new(&cfg.noise),
                episode_horizon: 0,
            },
            sigma_local: T::of(cfg.noise.sigma_local),
            started: false,
            done: false,
            obs: vec![T::zero(); dim],
            goal_obs: vec![T::zero(); dim],
            oracle: None,
        })
    }

    pub fn world(&self) -> &'w World {
        self.world
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EnvState<T> {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observation(&self) -> &[T] {
        &self.obs
    }

    pub fn goal_observation(&self) -> &[T] {
        &self.goal_obs
    }

    pub fn action_count(&self) -> usize {
        self.world.action_count()
    }

    /// Starts an episode without allocating; see [`Environment::reset`].
    pub fn reset_in_place<R: Rng + ?Sized>(
        &mut self,
        start: NodeId,
        heading: Heading,
        goal: NodeId,
        horizon: u32,
        rng: &mut R,
    ) -> Result<(), EnvError> {
        let g = &self.world.graph;
        for n in [start, goal] {
            if !g.contains(n) {
                return Err(EnvError::InvalidNode(n));
            }
        }
        if horizon == 0 {
            return Err(EnvError::Config("episode horizon must be positive".into()));
        }
        self.state.node = start;
        self.state.heading = heading;
        self.state.goal = goal;
        self.state.step = 0;
        self.state.episode_horizon = horizon;
        if self.cfg.reset_noise_each_episode || !self.started {
            self.state.ou.reset();
        }
        if self.oracle.as_ref().is_some_and(|p| p.goal != goal) {
            self.oracle = None;
        }
        self.started = true;
        self.done = false;

        let pool = self.world.store.node_pool(goal);
        if pool.is_empty() {
            return Err(EnvError::EmptyPool(goal));
        }
        let frame = FrameId(pool[rng.random_range(0..pool.len())]);
        let rec = self.world.store.record(frame, 0);
        if self.cfg.noise_goal {
            apply_noise_into(rec.phi, rec.jac, self.state.ou.xi, self.sigma_local, rng, &mut self.goal_obs);
        } else {
            for (o, &p) in self.goal_obs.iter_mut().zip(rec.phi) {
                *o = T::of(p as f64);
            }
        }
        self.sample_into_obs(rng)
    }

    /// Starts an episode. Never terminates by itself, even when
    /// `start == goal`: the goal check applies after the next transition.
    pub fn reset<R: Rng + ?Sized>(
        &mut self,
        start: NodeId,
        heading: Heading,
        goal: NodeId,
        horizon: u32,
        rng: &mut R,
    ) -> Result<StepResult<T>, EnvError> {
        self.reset_in_place(start, heading, goal, horizon, rng)?;
        Ok(StepResult {
            observation: self.obs.clone(),
            goal_observation: self.goal_obs.clone(),
            reward: 0.0,
            done: false,
            info: StepInfo::default(),
        })
    }

    fn sample_into_obs<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(), EnvError> {
        let store = &self.world.store;
        let pool = store.heading_pool(self.state.node, self.state.heading.quadrant());
        if pool.is_empty() {
            return Err(EnvError::EmptyPool(self.state.node));
        }
        let frame = FrameId(pool[rng.random_range(0..pool.len())]);
        let variant = rng.random_range(0..store.rotations_per_frame());
        let rec = store.record(frame, variant);
        apply_noise_into(rec.phi, rec.jac, self.state.ou.xi, self.sigma_local, rng, &mut self.obs);
        Ok(())
    }

    /// Fresh augmented observation of the current state.
    pub fn sample_observation<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<T>, EnvError> {
        self.sample_into_obs(rng)?;
        Ok(self.obs.clone())
    }

    fn reached(&self, node: NodeId) -> bool {
        if node == self.state.goal {
            return true;
        }
        self.cfg.goal_radius_m > 0.0
            && self
                .world
                .distances
                .meters(node, self.state.goal)
                .is_some_and(|d| d <= self.cfg.goal_radius_m + 1e-9)
    }

    /// Advances one timestep, leaving the new observation in
    /// [`Environment::observation`].
    pub fn step_in_place<R: Rng + ?Sized>(&mut self, action: Action, rng: &mut R) -> Result<Transition, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        let count = self.action_count();
        if action.index() >= count {
            return Err(EnvError::InvalidAction {
                index: action.index(),
                count,
            });
        }
        let g = &self.world.graph;
        let mut info = StepInfo::default();
        match action {
            Action::TurnLeft => self.state.heading = self.state.heading.turn_left(),
            Action::TurnRight => self.state.heading = self.state.heading.turn_right(),
            Action::Forward => match g.forward_target(self.state.node, self.state.heading.quadrant()) {
                None => info.blocked = true,
                Some(next) => {
                    if self.cfg.p_stutter > 0.0 && rng.random::<f64>() < self.cfg.p_stutter {
                        info.stuttered = true;
                    } else {
                        self.state.node = next;
                        info.moved = true;
                    }
                }
            },
            Action::Elevator(floor) => match g.elevator_target(self.state.node, floor) {
                Some(next) => {
                    self.state.node = next;
                    info.moved = true;
                }
                None => info.blocked = true,
            },
        }
        self.state.step += 1;
        self.state.ou.step(rng);
        self.sample_into_obs(rng)?;
        info.reached_goal = self.reached(self.state.node);
        let reward = if info.reached_goal { 1.0 } else { 0.0 };
        self.done = info.reached_goal || self.state.step >= self.state.episode_horizon;
        Ok(Transition {
            reward,
            done: self.done,
            info,
        })
    }

    pub fn step<R: Rng + ?Sized>(&mut self, action: Action, rng: &mut R) -> Result<StepResult<T>, EnvError> {
        let t = self.step_in_place(action, rng)?;
        Ok(StepResult {
            observation: self.obs.clone(),
            goal_observation: self.goal_obs.clone(),
            reward: t.reward,
            done: t.done,
            info: t.info,
        })
    }

    fn plan(&self, goal: NodeId) -> OraclePlan {
        let g = &self.world.graph;
        let dist = &self.world.distances;
        let n = g.node_count();
        let mut order: Vec<NodeId> = (0..n as u32)
            .map(NodeId)
            .filter(|&v| dist.hops(v, goal) != UNREACHABLE)
            .collect();
        order.sort_by_key(|&v| dist.hops(v, goal));
        let mut turns = vec![[u32::MAX; 4]; n];
        for v in order {
            if v == goal {
                turns[v.index()] = [0; 4];
                continue;
            }
            let d = dist.hops(v, goal);
            let mut best = [u32::MAX; 4];
            for e in g.edges(v) {
                if dist.hops(e.to, goal) != d - 1 {
                    continue;
                }
                let next = turns[e.to.index()];
                for h in 0..4u8 {
                    let c = match e.kind {
                        EdgeKind::Move { bearing_deg } => {
                            let q = bearing_quadrant(bearing_deg);
                            turn_count(h, q) + next[q as usize]
                        }
                        EdgeKind::Elevator { .. } => next[h as usize],
                    };
                    best[h as usize] = best[h as usize].min(c);
                }
            }
            turns[v.index()] = best;
        }
        OraclePlan { goal, turns }
    }

    /// An action on a hop-shortest path to the goal that also minimises the
    /// remaining number of turns. 180° turns go right.
    pub fn oracle_action(&mut self) -> Action {
        let goal = self.state.goal;
        if self.oracle.as_ref().is_none_or(|p| p.goal != goal) {
            self.oracle = Some(self.plan(goal));
        }
        let plan = self.oracle.as_ref().expect("plan computed above");
        let (node, h) = (self.state.node, self.state.heading.quadrant());
        if node == goal {
            return Action::TurnRight;
        }
        let g = &self.world.graph;
        let dist = &self.world.distances;
        let d = dist.hops(node, goal);
        if d == UNREACHABLE {
            return Action::TurnRight;
        }
        let mut best: Option<(u32, Action)> = None;
        for e in g.edges(node) {
            if dist.hops(e.to, goal) != d - 1 {
                continue;
            }
            let next = plan.turns[e.to.index()];
            let (cost, action) = match e.kind {
                EdgeKind::Move { bearing_deg } => {
                    let q = bearing_quadrant(bearing_deg);
                    let action = match (q + 4 - h) % 4 {
                        0 => Action::Forward,
                        3 => Action::TurnLeft,
                        _ => Action::TurnRight,
                    };
                    (turn_count(h, q).saturating_add(next[q as usize]), action)
                }
                EdgeKind::Elevator { destination_floor } => (next[h as usize], Action::Elevator(destination_floor)),
            };
            // edges are sorted by target id, so ties keep the lowest id
            if best.is_none_or(|(c, _)| cost < c) {
                best = Some((cost, action));
            }
        }
        best.map_or(Action::TurnRight, |(_, a)| a)
    }

    /// Minimal remaining turns from the current state along hop-shortest
    /// paths.
    pub fn oracle_turns(&mut self) -> u32 {
        let goal = self.state.goal;
        if self.oracle.as_ref().is_none_or(|p| p.goal != goal) {
            self.oracle = Some(self.plan(goal));
        }
        self.oracle.as_ref().expect("plan computed above").turns[self.state.node.index()]
            [self.state.heading.quadrant() as usize]
    }
}
