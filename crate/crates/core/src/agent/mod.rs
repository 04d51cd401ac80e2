//! Goal-conditioned recurrent actor-critic network.
//!
//! Per step: `h1 = relu(W_fc [obs; goal] + b_fc)`, an LSTM over
//! `[h1; one_hot(prev_action)]`, then three heads on the LSTM output `h`:
//! policy softmax, scalar value, and a node-classification probe whose
//! gradient is stopped at `h`.
//!
//! All weights live in one flat vector. Tensor order (also the checkpoint
//! order), matrices row-major `[out][in]`:
//!
//! | tensor  | shape              |
//! |---------|--------------------|
//! | `w_fc`  | `H × 2D`           |
//! | `b_fc`  | `H`                |
//! | `w_ih`  | `4H × (H + N_a)`   |
//! | `w_hh`  | `4H × H`           |
//! | `b_lstm`| `4H`               |
//! | `w_pi`  | `N_a × H`          |
//! | `b_pi`  | `N_a`              |
//! | `w_v`   | `1 × H`            |
//! | `b_v`   | `1`                |
//! | `w_loc` | `N_nodes × H`      |
//! | `b_loc` | `N_nodes`          |
//!
//! LSTM gate blocks are ordered input, forget, cell, output.

mod adam;
mod backward;
mod checkpoint;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::{dot, softmax_into, Scalar};

pub(crate) use adam::AdamStep;
pub use adam::{Adam, AdamConfig};
pub use backward::{backward, HeadGrads};
pub use checkpoint::{
    load_checkpoint, read_checkpoint_bytes, save_checkpoint, write_checkpoint_bytes, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward needs one cache per step, got {caches} caches and {heads} head gradients")]
    CacheMissing { caches: usize, heads: usize },
    #[error("bad checkpoint magic {0:?}, expected \"AGNT\"")]
    Magic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("I/O error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AgentConfig {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub n_nodes: usize,
    pub width: usize,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.obs_dim == 0 || self.n_actions == 0 || self.n_nodes == 0 || self.width == 0 {
            return Err(AgentError::Shape(format!("all dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Offsets of every tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub w_fc: Range<usize>,
    pub b_fc: Range<usize>,
    pub w_ih: Range<usize>,
    pub w_hh: Range<usize>,
    pub b_lstm: Range<usize>,
    pub w_pi: Range<usize>,
    pub b_pi: Range<usize>,
    pub w_v: Range<usize>,
    pub b_v: Range<usize>,
    pub w_loc: Range<usize>,
    pub b_loc: Range<usize>,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &AgentConfig) -> Self {
        let (d, a, n, h) = (cfg.obs_dim, cfg.n_actions, cfg.n_nodes, cfg.width);
        let mut at = 0;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let w_fc = take(h * 2 * d);
        let b_fc = take(h);
        let w_ih = take(4 * h * (h + a));
        let w_hh = take(4 * h * h);
        let b_lstm = take(4 * h);
        let w_pi = take(a * h);
        let b_pi = take(a);
        let w_v = take(h);
        let b_v = take(1);
        let w_loc = take(n * h);
        let b_loc = take(n);
        Layout {
            w_fc,
            b_fc,
            w_ih,
            w_hh,
            b_lstm,
            w_pi,
            b_pi,
            w_v,
            b_v,
            w_loc,
            b_loc,
            total: at,
        }
    }

    /// `(name, range, fan_in, fan_out)` for every tensor, in storage order.
    pub fn tensors(&self, cfg: &AgentConfig) -> [(&'static str, Range<usize>, usize, usize); 11] {
        let (d, a, n, h) = (cfg.obs_dim, cfg.n_actions, cfg.n_nodes, cfg.width);
        [
            ("w_fc", self.w_fc.clone(), 2 * d, h),
            ("b_fc", self.b_fc.clone(), 0, 0),
            ("w_ih", self.w_ih.clone(), h + a, 4 * h),
            ("w_hh", self.w_hh.clone(), h, 4 * h),
            ("b_lstm", self.b_lstm.clone(), 0, 0),
            ("w_pi", self.w_pi.clone(), h, a),
            ("b_pi", self.b_pi.clone(), 0, 0),
            ("w_v", self.w_v.clone(), h, 1),
            ("b_v", self.b_v.clone(), 0, 0),
            ("w_loc", self.w_loc.clone(), h, n),
            ("b_loc", self.b_loc.clone(), 0, 0),
        ]
    }

    /// Parameters that only the probe loss touches.
    pub fn probe_range(&self) -> Range<usize> {
        self.w_loc.start..self.b_loc.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams<T> {
    pub cfg: AgentConfig,
    pub layout: Layout,
    pub data: Vec<T>,
}

impl<T: Scalar> AgentParams<T> {
    pub fn zeros(cfg: AgentConfig) -> Result<Self, AgentError> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let data = vec![T::zero(); layout.total];
        Ok(AgentParams { cfg, layout, data })
    }

    pub fn from_vec(cfg: AgentConfig, data: Vec<T>) -> Result<Self, AgentError> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if data.len() != layout.total {
            return Err(AgentError::Shape(format!(
                "{} parameters given, layout needs {}",
                data.len(),
                layout.total
            )));
        }
        Ok(AgentParams { cfg, layout, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Forget-gate slice of the LSTM bias.
    pub fn forget_bias(&self) -> &[T] {
        let h = self.cfg.width;
        &self.data[self.layout.b_lstm.start + h..self.layout.b_lstm.start + 2 * h]
    }

    pub fn cast<U: Scalar>(&self) -> AgentParams<U> {
        AgentParams {
            cfg: self.cfg,
            layout: self.layout.clone(),
            data: self.data.iter().map(|x| U::of(x.f64())).collect(),
        }
    }
}

/// Glorot-uniform weights, zero biases, forget-gate bias 1.
pub fn init_params<T: Scalar>(cfg: AgentConfig, seed: u64) -> Result<AgentParams<T>, AgentError> {
    let mut p = AgentParams::<T>::zeros(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, range, fan_in, fan_out) in p.layout.tensors(&cfg) {
        if fan_in == 0 {
            continue;
        }
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for x in &mut p.data[range] {
            *x = T::of(rng.random_range(-a..a));
        }
    }
    let h = cfg.width;
    let start = p.layout.b_lstm.start;
    for x in &mut p.data[start + h..start + 2 * h] {
        *x = T::one();
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> RecurrentState<T> {
    pub fn zeros(width: usize) -> Self {
        RecurrentState {
            h: vec![T::zero(); width],
            c: vec![T::zero(); width],
        }
    }

    pub fn reset(&mut self) {
        self.h.fill(T::zero());
        self.c.fill(T::zero());
    }
}

/// Outputs of one forward step plus the activations backward needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    pub policy: Vec<T>,
    pub value: T,
    pub loc_probs: Vec<T>,
    pub new_state: RecurrentState<T>,
    pub(crate) x: Vec<T>,
    pub(crate) h1: Vec<T>,
    pub(crate) prev_action: Option<usize>,
    pub(crate) prev: RecurrentState<T>,
    /// Post-activation gates `[i; f; g; o]`.
    pub(crate) gates: Vec<T>,
    pub(crate) tanh_c: Vec<T>,
}

impl<T: Scalar> ForwardOutput<T> {
    pub fn new(cfg: &AgentConfig) -> Self {
        let h = cfg.width;
        ForwardOutput {
            policy: vec![T::zero(); cfg.n_actions],
            value: T::zero(),
            loc_probs: vec![T::zero(); cfg.n_nodes],
            new_state: RecurrentState::zeros(h),
            x: vec![T::zero(); 2 * cfg.obs_dim],
            h1: vec![T::zero(); h],
            prev_action: None,
            prev: RecurrentState::zeros(h),
            gates: vec![T::zero(); 4 * h],
            tanh_c: vec![T::zero(); h],
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// One network step. `prev_action` is `None` at episode start (all-zero
/// one-hot).
pub fn forward<T: Scalar>(
    params: &AgentParams<T>,
    obs: &[T],
    goal: &[T],
    prev_action: Option<usize>,
    state: &RecurrentState<T>,
) -> Result<ForwardOutput<T>, AgentError> {
    let mut out = ForwardOutput::new(&params.cfg);
    forward_into(params, obs, goal, prev_action, state, &mut out)?;
    Ok(out)
}

/// [`forward`] into a reusable output buffer.
pub fn forward_into<T: Scalar>(
    params: &AgentParams<T>,
    obs: &[T],
    goal: &[T],
    prev_action: Option<usize>,
    state: &RecurrentState<T>,
    out: &mut ForwardOutput<T>,
) -> Result<(), AgentError> {
    let cfg = &params.cfg;
    let (d, a, h) = (cfg.obs_dim, cfg.n_actions, cfg.width);
    if obs.len() != d || goal.len() != d {
        return Err(AgentError::Shape(format!(
            "observation {} and goal {} must both have length {d}",
            obs.len(),
            goal.len()
        )));
    }
    if prev_action.is_some_and(|p| p >= a) {
        return Err(AgentError::Shape(format!("previous action {prev_action:?} outside {a} actions")));
    }
    if state.h.len() != h || state.c.len() != h || out.h1.len() != h || out.policy.len() != a {
        return Err(AgentError::Shape("recurrent state or output buffer width mismatch".into()));
    }
    let p = &params.data;
    let l = &params.layout;

    out.x[..d].copy_from_slice(obs);
    out.x[d..].copy_from_slice(goal);
    out.prev_action = prev_action;
    out.prev.h.copy_from_slice(&state.h);
    out.prev.c.copy_from_slice(&state.c);

    let w_fc = &p[l.w_fc.clone()];
    let b_fc = &p[l.b_fc.clone()];
    for (j, o) in out.h1.iter_mut().enumerate() {
        let z = b_fc[j] + dot(&w_fc[j * 2 * d..(j + 1) * 2 * d], &out.x);
        *o = z.max(T::zero());
    }

    let w_ih = &p[l.w_ih.clone()];
    let w_hh = &p[l.w_hh.clone()];
    let b = &p[l.b_lstm.clone()];
    let row_ih = h + a;
    for (r, g) in out.gates.iter_mut().enumerate() {
        let wi = &w_ih[r * row_ih..(r + 1) * row_ih];
        let mut z = b[r] + dot(&wi[..h], &out.h1) + dot(&w_hh[r * h..(r + 1) * h], &state.h);
        if let Some(pa) = prev_action {
            z = z + wi[h + pa];
        }
        *g = if (2 * h..3 * h).contains(&r) { z.tanh() } else { sigmoid(z) };
    }
    for j in 0..h {
        let (i, f, g, o) = (out.gates[j], out.gates[h + j], out.gates[2 * h + j], out.gates[3 * h + j]);
        let c = f * state.c[j] + i * g;
        let tc = c.tanh();
        out.new_state.c[j] = c;
        out.tanh_c[j] = tc;
        out.new_state.h[j] = o * tc;
    }
    let hv = &out.new_state.h;

    let w_pi = &p[l.w_pi.clone()];
    let b_pi = &p[l.b_pi.clone()];
    for (k, o) in out.policy.iter_mut().enumerate() {
        *o = b_pi[k] + dot(&w_pi[k * h..(k + 1) * h], hv);
    }
    let logits = out.policy.clone();
    softmax_into(&logits, &mut out.policy);

    out.value = p[l.b_v.start] + dot(&p[l.w_v.clone()], hv);

    let w_loc = &p[l.w_loc.clone()];
    let b_loc = &p[l.b_loc.clone()];
    for (k, o) in out.loc_probs.iter_mut().enumerate() {
        *o = b_loc[k] + dot(&w_loc[k * h..(k + 1) * h], hv);
    }
    let logits = out.loc_probs.clone();
    softmax_into(&logits, &mut out.loc_probs);
    Ok(())
}

/// Index of the largest probability; lowest index on ties.
pub fn argmax<T: Scalar>(p: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<T: Scalar, R: Rng + ?Sized>(p: &[T], rng: &mut R) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x.f64();
        if u < acc {
            return i;
        }
    }
    // rounding left the total just below 1
    p.iter().rposition(|&x| x > T::zero()).unwrap_or(p.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::entropy;

    fn cfg() -> AgentConfig {
        AgentConfig {
            obs_dim: 6,
            n_actions: 4,
            n_nodes: 9,
            width: 8,
        }
    }

    fn inputs(seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        (o, g)
    }

    #[test]
    fn layout_covers_everything_once() {
        let c = cfg();
        let l = Layout::new(&c);
        let mut end = 0;
        for (_, r, _, _) in l.tensors(&c) {
            assert_eq!(r.start, end);
            end = r.end;
        }
        assert_eq!(end, l.total);
        assert_eq!(l.total, 8 * 12 + 8 + 32 * 12 + 32 * 8 + 32 + 4 * 8 + 4 + 8 + 1 + 9 * 8 + 9);
    }

    #[test]
    fn init_is_seeded_and_biases_fixed() {
        let a = init_params::<f64>(cfg(), 3).unwrap();
        let b = init_params::<f64>(cfg(), 3).unwrap();
        assert_eq!(a, b);
        assert!(a.forget_bias().iter().all(|&x| x == 1.0));
        let l = &a.layout;
        let h = 8;
        let bl = &a.data[l.b_lstm.clone()];
        assert!(bl[..h].iter().chain(&bl[2 * h..]).all(|&x| x == 0.0));
        for r in [&l.b_fc, &l.b_pi, &l.b_v, &l.b_loc] {
            assert!(a.data[r.clone()].iter().all(|&x| x == 0.0));
        }
        let bound = (6.0f64 / (12 + 8) as f64).sqrt();
        assert!(a.data[l.w_fc.clone()].iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn zero_params_give_uniform_policy() {
        let p = AgentParams::<f64>::zeros(cfg()).unwrap();
        let (o, g) = inputs(1);
        let out = forward(&p, &o, &g, None, &RecurrentState::zeros(8)).unwrap();
        assert!(out.policy.iter().all(|&x| x == 0.25));
        assert_eq!(out.value, 0.0);
        assert!((entropy(&out.policy) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn forward_contract() {
        let p = init_params::<f64>(cfg(), 9).unwrap();
        let (o, g) = inputs(2);
        let s = RecurrentState::zeros(8);
        let a = forward(&p, &o, &g, Some(2), &s).unwrap();
        let b = forward(&p, &o, &g, Some(2), &s).unwrap();
        assert_eq!(a, b);
        assert!((a.policy.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(a.policy.iter().all(|&x| x > 0.0 && x < 1.0));
        assert!((a.loc_probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(forward(&p, &o[..5], &g, None, &s).is_err());
        assert!(forward(&p, &o, &g, Some(4), &s).is_err());
    }

    #[test]
    fn sampling_respects_zero_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert_eq!(sample_categorical(&[0.0f64, 1.0, 0.0], &mut rng), 1);
        }
        assert_eq!(argmax(&[0.2f64, 0.4, 0.4]), 1);
    }
}
