use super::{AgentError, AgentParams, ForwardOutput};
use crate::scalar::{axpy, Scalar};

/// Loss gradient with respect to the head pre-activations of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads<T> {
    /// d loss / d policy logits, length `N_a`.
    pub logits: Vec<T>,
    pub value: T,
    /// d loss / d probe logits, length `N_nodes`. Reaches only the probe
    /// weights.
    pub loc_logits: Vec<T>,
}

impl<T: Scalar> HeadGrads<T> {
    pub fn zeros(n_actions: usize, n_nodes: usize) -> Self {
        HeadGrads {
            logits: vec![T::zero(); n_actions],
            value: T::zero(),
            loc_logits: vec![T::zero(); n_nodes],
        }
    }
}

/// Backpropagation through time over one rollout. `grads` is overwritten
/// with the gradient of the summed loss; the recurrent state entering the
/// first step is treated as a constant.
pub fn backward<T: Scalar>(
    params: &AgentParams<T>,
    caches: &[ForwardOutput<T>],
    heads: &[HeadGrads<T>],
    grads: &mut [T],
) -> Result<(), AgentError> {
    if caches.is_empty() || caches.len() != heads.len() {
        return Err(AgentError::CacheMissing {
            caches: caches.len(),
            heads: heads.len(),
        });
    }
    let cfg = &params.cfg;
    let l = &params.layout;
    if grads.len() != l.total {
        return Err(AgentError::Shape(format!("gradient buffer {} != {}", grads.len(), l.total)));
    }
    let (d, a, n, h) = (cfg.obs_dim, cfg.n_actions, cfg.n_nodes, cfg.width);
    for hg in heads {
        if hg.logits.len() != a || hg.loc_logits.len() != n {
            return Err(AgentError::Shape("head gradient length mismatch".into()));
        }
    }
    grads.fill(T::zero());
    let p = &params.data;
    let w_ih = &p[l.w_ih.clone()];
    let w_hh = &p[l.w_hh.clone()];
    let w_pi = &p[l.w_pi.clone()];
    let w_v = &p[l.w_v.clone()];
    let row_ih = h + a;
    let steps = caches.len();
    let one = T::one();

    // Reverse pass: only the recurrence. Weight gradients are accumulated
    // afterwards one row at a time over all steps.
    let mut da_all = vec![T::zero(); steps * 4 * h];
    let mut dh_next = vec![T::zero(); h];
    let mut dc_next = vec![T::zero(); h];
    let mut dh = vec![T::zero(); h];
    for t in (0..steps).rev() {
        let c = &caches[t];
        let hg = &heads[t];
        dh.copy_from_slice(&dh_next);
        for k in 0..a {
            if hg.logits[k] != T::zero() {
                axpy(hg.logits[k], &w_pi[k * h..(k + 1) * h], &mut dh);
            }
        }
        axpy(hg.value, w_v, &mut dh);

        let da = &mut da_all[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let (i, f, g, o) = (c.gates[j], c.gates[h + j], c.gates[2 * h + j], c.gates[3 * h + j]);
            let tc = c.tanh_c[j];
            let d_o = dh[j] * tc;
            let dc = dc_next[j] + dh[j] * o * (one - tc * tc);
            da[j] = dc * g * i * (one - i);
            da[h + j] = dc * c.prev.c[j] * f * (one - f);
            da[2 * h + j] = dc * i * (one - g * g);
            da[3 * h + j] = d_o * o * (one - o);
            dc_next[j] = dc * f;
        }
        if t > 0 {
            dh_next.fill(T::zero());
            for (r, &g) in da.iter().enumerate() {
                if g != T::zero() {
                    axpy(g, &w_hh[r * h..(r + 1) * h], &mut dh_next);
                }
            }
        }
    }

    // heads
    for k in 0..a {
        let at = l.w_pi.start + k * h;
        for (c, hg) in caches.iter().zip(heads) {
            let g = hg.logits[k];
            if g != T::zero() {
                axpy(g, &c.new_state.h, &mut grads[at..at + h]);
            }
            grads[l.b_pi.start + k] = grads[l.b_pi.start + k] + g;
        }
    }
    for (c, hg) in caches.iter().zip(heads) {
        axpy(hg.value, &c.new_state.h, &mut grads[l.w_v.clone()]);
        grads[l.b_v.start] = grads[l.b_v.start] + hg.value;
    }
    for k in 0..n {
        let at = l.w_loc.start + k * h;
        for (c, hg) in caches.iter().zip(heads) {
            let g = hg.loc_logits[k];
            if g != T::zero() {
                axpy(g, &c.new_state.h, &mut grads[at..at + h]);
            }
            grads[l.b_loc.start + k] = grads[l.b_loc.start + k] + g;
        }
    }

    // lstm weights, and the gradient reaching the input layer
    let mut dh1_all = vec![T::zero(); steps * h];
    for r in 0..4 * h {
        let gi = l.w_ih.start + r * row_ih;
        let gh = l.w_hh.start + r * h;
        let w_row = &w_ih[r * row_ih..r * row_ih + h];
        for (t, c) in caches.iter().enumerate() {
            let g = da_all[t * 4 * h + r];
            if g == T::zero() {
                continue;
            }
            axpy(g, &c.h1, &mut grads[gi..gi + h]);
            if let Some(pa) = c.prev_action {
                grads[gi + h + pa] = grads[gi + h + pa] + g;
            }
            axpy(g, &c.prev.h, &mut grads[gh..gh + h]);
            grads[l.b_lstm.start + r] = grads[l.b_lstm.start + r] + g;
            axpy(g, w_row, &mut dh1_all[t * h..(t + 1) * h]);
        }
    }

    // input layer
    for j in 0..h {
        let at = l.w_fc.start + j * 2 * d;
        for (t, c) in caches.iter().enumerate() {
            let g = dh1_all[t * h + j];
            if c.h1[j] > T::zero() && g != T::zero() {
                axpy(g, &c.x, &mut grads[at..at + 2 * d]);
                grads[l.b_fc.start + j] = grads[l.b_fc.start + j] + g;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{forward, init_params, AgentConfig, RecurrentState};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> AgentConfig {
        AgentConfig {
            obs_dim: 3,
            n_actions: 3,
            n_nodes: 4,
            width: 5,
        }
    }

    fn rollout(p: &AgentParams<f64>, rng: &mut ChaCha8Rng, len: usize) -> Vec<ForwardOutput<f64>> {
        let mut s = RecurrentState::zeros(p.cfg.width);
        let mut prev = None;
        let mut out = Vec::new();
        for t in 0..len {
            let o: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = forward(p, &o, &g, prev, &s).unwrap();
            s = f.new_state.clone();
            prev = Some(t % 3);
            out.push(f);
        }
        out
    }

    #[test]
    fn zero_head_grads_give_zero() {
        let p = init_params::<f64>(cfg(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let caches = rollout(&p, &mut rng, 3);
        let heads = vec![HeadGrads::zeros(3, 4); 3];
        let mut g = vec![1.0; p.len()];
        backward(&p, &caches, &heads, &mut g).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn probe_gradient_is_stopped() {
        let p = init_params::<f64>(cfg(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let caches = rollout(&p, &mut rng, 4);
        let heads: Vec<_> = (0..4)
            .map(|_| HeadGrads {
                logits: vec![0.0; 3],
                value: 0.0,
                loc_logits: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        let mut g = vec![0.0; p.len()];
        backward(&p, &caches, &heads, &mut g).unwrap();
        let probe = p.layout.probe_range();
        assert!(g[..probe.start].iter().all(|&x| x == 0.0));
        assert!(g[probe].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let p = init_params::<f64>(cfg(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let caches = rollout(&p, &mut rng, 2);
        let mut g = vec![0.0; p.len()];
        let err = backward(&p, &caches, &[HeadGrads::zeros(3, 4)], &mut g).unwrap_err();
        assert_eq!(err, AgentError::CacheMissing { caches: 2, heads: 1 });
    }
}
