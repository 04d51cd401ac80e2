//! Distance-bounded task pools and success-triggered level advancement.

use std::collections::VecDeque;
use std::sync::Mutex;

use rand::Rng;
use thiserror::Error;

use crate::navgraph::{DistanceMatrix, NodeId, UNREACHABLE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurriculumError {
    #[error("level {level} outside [1, {n_c}]")]
    LevelRange { level: u32, n_c: u32 },
    #[error("task pool is empty")]
    EmptyPool,
    #[error("invalid curriculum configuration: {0}")]
    Config(String),
}

/// Absolute slack on the distance bound so that level `N_c` reproduces
/// `L_max` exactly despite rounding in `(i / N_c) · L_max`.
const BOUND_EPS: f64 = 1e-9;

/// `(level / n_c) · L_max`, but never below one hop so that every level
/// has at least the adjacent pairs.
fn level_bound(level: u32, n_c: u32, l_max: f64, spacing: f64) -> f64 {
    (level as f64 / n_c as f64 * l_max).max(spacing.min(l_max)) + BOUND_EPS
}

fn check_level(level: u32, n_c: u32) -> Result<(), CurriculumError> {
    if n_c == 0 || level == 0 || level > n_c {
        return Err(CurriculumError::LevelRange { level, n_c });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskPool {
    pub level: u32,
    pub pairs: Vec<(NodeId, NodeId)>,
}

impl TaskPool {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Ordered pairs with `0 < d(start, goal) <= max((level / n_c) · L_max, spacing)`,
/// sorted by `(start, goal)`.
pub fn level_pairs(distances: &DistanceMatrix, level: u32, n_c: u32) -> Result<TaskPool, CurriculumError> {
    check_level(level, n_c)?;
    let bound = level_bound(level, n_c, distances.max_m(), distances.spacing_m());
    let n = distances.node_count() as u32;
    let mut pairs = Vec::new();
    for a in 0..n {
        for b in 0..n {
            let h = distances.hops(NodeId(a), NodeId(b));
            if a != b && h != UNREACHABLE && h as f64 * distances.spacing_m() <= bound {
                pairs.push((NodeId(a), NodeId(b)));
            }
        }
    }
    Ok(TaskPool { level, pairs })
}

pub fn sample_task<R: Rng + ?Sized>(pool: &TaskPool, rng: &mut R) -> Result<(NodeId, NodeId), CurriculumError> {
    if pool.is_empty() {
        return Err(CurriculumError::EmptyPool);
    }
    Ok(pool.pairs[rng.random_range(0..pool.len())])
}

/// All pairs sorted by distance, with the pool of every level a prefix.
#[derive(Debug, Clone)]
pub struct TaskSampler {
    n_c: u32,
    l_max: f64,
    spacing: f64,
    pairs: Vec<(NodeId, NodeId)>,
    /// `prefix[i - 1]` = size of the level-`i` pool.
    prefix: Vec<usize>,
}

impl TaskSampler {
    pub fn new(distances: &DistanceMatrix, n_c: u32) -> Result<Self, CurriculumError> {
        if n_c == 0 {
            return Err(CurriculumError::Config("N_c must be positive".into()));
        }
        let n = distances.node_count() as u32;
        let mut keyed = Vec::new();
        for a in 0..n {
            for (b, &h) in distances.row(NodeId(a)).iter().enumerate() {
                if a != b as u32 && h != UNREACHABLE {
                    keyed.push((h, NodeId(a), NodeId(b as u32)));
                }
            }
        }
        keyed.sort_unstable();
        let l_max = distances.max_m();
        let spacing = distances.spacing_m();
        let prefix = (1..=n_c)
            .map(|i| {
                let bound = level_bound(i, n_c, l_max, spacing);
                keyed.partition_point(|&(h, _, _)| h as f64 * spacing <= bound)
            })
            .collect();
        Ok(TaskSampler {
            n_c,
            l_max,
            spacing,
            pairs: keyed.into_iter().map(|(_, a, b)| (a, b)).collect(),
            prefix,
        })
    }

    pub fn n_c(&self) -> u32 {
        self.n_c
    }

    pub fn l_max(&self) -> f64 {
        self.l_max
    }

    pub fn pool_len(&self, level: u32) -> Result<usize, CurriculumError> {
        check_level(level, self.n_c)?;
        Ok(self.prefix[level as usize - 1])
    }

    /// Longest path in the level's pool, metres.
    pub fn level_max_m(&self, level: u32) -> Result<f64, CurriculumError> {
        check_level(level, self.n_c)?;
        Ok(level_bound(level, self.n_c, self.l_max, self.spacing).min(self.l_max))
    }

    /// Same set as [`level_pairs`], in lexicographic order.
    pub fn pool(&self, level: u32) -> Result<TaskPool, CurriculumError> {
        let len = self.pool_len(level)?;
        let mut pairs = self.pairs[..len].to_vec();
        pairs.sort_unstable();
        Ok(TaskPool { level, pairs })
    }

    pub fn sample<R: Rng + ?Sized>(&self, level: u32, rng: &mut R) -> Result<(NodeId, NodeId), CurriculumError> {
        let len = self.pool_len(level)?;
        if len == 0 {
            return Err(CurriculumError::EmptyPool);
        }
        Ok(self.pairs[rng.random_range(0..len)])
    }

    /// Episode step limit for a level: `max(100, 4 · ceil(level_max / spacing))`.
    pub fn horizon(&self, level: u32, rule: &HorizonRule) -> Result<u32, CurriculumError> {
        Ok(rule.horizon(self.level_max_m(level)?, self.spacing))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonRule {
    pub min_steps: u32,
    pub per_hop: u32,
}

impl Default for HorizonRule {
    fn default() -> Self {
        HorizonRule {
            min_steps: 100,
            per_hop: 4,
        }
    }
}

impl HorizonRule {
    pub fn horizon(&self, max_path_m: f64, spacing_m: f64) -> u32 {
        let hops = (max_path_m / spacing_m - BOUND_EPS).ceil().max(0.0) as u32;
        self.min_steps.max(self.per_hop.saturating_mul(hops))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumState {
    level: u32,
    n_c: u32,
    l_max: f64,
    window: VecDeque<bool>,
    capacity: usize,
    threshold: f64,
}

impl CurriculumState {
    pub fn new(n_c: u32, l_max: f64, capacity: usize, threshold: f64) -> Result<Self, CurriculumError> {
        if n_c == 0 {
            return Err(CurriculumError::Config("N_c must be positive".into()));
        }
        if capacity == 0 {
            return Err(CurriculumError::Config("success window must hold at least one episode".into()));
        }
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(CurriculumError::Config(format!("threshold {threshold} outside (0, 1]")));
        }
        Ok(CurriculumState {
            level: 1,
            n_c,
            l_max,
            window: VecDeque::with_capacity(capacity),
            capacity,
            threshold,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn n_c(&self) -> u32 {
        self.n_c
    }

    pub fn l_max(&self) -> f64 {
        self.l_max
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    /// Mean of the current window; 0 when empty.
    pub fn success_rate(&self) -> f64 {
        if self.window.is_empty() {
            return 0.0;
        }
        self.window.iter().filter(|&&s| s).count() as f64 / self.window.len() as f64
    }

    pub fn at_final_level(&self) -> bool {
        self.level == self.n_c
    }

    /// Pushes one episode outcome; advances and clears the window when it is
    /// full and its mean reaches the threshold.
    pub fn record_and_maybe_advance(&mut self, success: bool) -> bool {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(success);
        if self.window.len() == self.capacity && self.success_rate() >= self.threshold && self.level < self.n_c {
            self.level += 1;
            self.window.clear();
            return true;
        }
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumSnapshot {
    pub level: u32,
    pub success_rate: f64,
}

/// Curriculum state shared between workers; every update is serialised.
#[derive(Debug)]
pub struct SharedCurriculum {
    inner: Mutex<CurriculumState>,
}

impl SharedCurriculum {
    pub fn new(state: CurriculumState) -> Self {
        SharedCurriculum {
            inner: Mutex::new(state),
        }
    }

    pub fn level(&self) -> u32 {
        self.lock().level
    }

    pub fn snapshot(&self) -> CurriculumSnapshot {
        let s = self.lock();
        CurriculumSnapshot {
            level: s.level,
            success_rate: s.success_rate(),
        }
    }

    /// Returns the level after the update and whether it advanced.
    pub fn record(&self, success: bool) -> (u32, bool) {
        let mut s = self.lock();
        let adv = s.record_and_maybe_advance(success);
        (s.level, adv)
    }

    pub fn into_inner(self) -> CurriculumState {
        self.inner.into_inner().unwrap_or_else(|e| e.into_inner())
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, CurriculumState> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}
