//! Synthetic smooth encoder standing in for a frozen visual network.
//!
//! `phi = sin(W2 · sin(W1 · u + b1) + b2)` with
//! `u = [x, y, z, cos yaw, sin yaw, brightness]`. All weights are drawn from
//! a seeded generator; spatial frequencies of the first layer span
//! 0.1..2.0 rad/m so poses a few metres apart decorrelate while nearby
//! poses stay close.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::StoreError;

const INPUTS: usize = 6;
const HIDDEN: usize = 64;
const MIN_FREQ: f64 = 0.1;
const MAX_FREQ: f64 = 2.0;
const BRIGHTNESS_SCALE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw_deg: f64,
}

#[derive(Debug, Clone)]
pub struct SynthEncoder {
    dim: usize,
    w1: Vec<[f64; INPUTS]>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

impl SynthEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self, StoreError> {
        if dim < 1 {
            return Err(StoreError::Dimension(format!("encoder dimension {dim} must be at least 1")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e4c0_de00_0001);
        let tau = std::f64::consts::TAU;
        let mut w1 = Vec::with_capacity(HIDDEN);
        let mut b1 = Vec::with_capacity(HIDDEN);
        for _ in 0..HIDDEN {
            let f = log_uniform(&mut rng, MIN_FREQ, MAX_FREQ);
            let angle = rng.random::<f64>() * tau;
            let fz = log_uniform(&mut rng, MIN_FREQ, MAX_FREQ) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            let wc: f64 = StandardNormal.sample(&mut rng);
            let ws: f64 = StandardNormal.sample(&mut rng);
            let wb = (rng.random::<f64>() * 4.0 - 2.0) * BRIGHTNESS_SCALE;
            w1.push([f * angle.cos(), f * angle.sin(), fz, wc, ws, wb]);
            b1.push(rng.random::<f64>() * tau);
        }
        let scale = 1.5 / (HIDDEN as f64).sqrt();
        let w2 = (0..dim * HIDDEN)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        let b2 = (0..dim).map(|_| rng.random::<f64>() * tau).collect();
        Ok(SynthEncoder { dim, w1, b1, w2, b2 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn encode_into(&self, pose: &Pose, brightness: f64, out: &mut [f64]) {
        let yaw = pose.yaw_deg.to_radians();
        let u = [pose.x, pose.y, pose.z, yaw.cos(), yaw.sin(), brightness];
        let mut hidden = [0.0f64; HIDDEN];
        for (h, (w, b)) in hidden.iter_mut().zip(self.w1.iter().zip(&self.b1)) {
            let a: f64 = w.iter().zip(&u).map(|(wi, ui)| wi * ui).sum();
            *h = (a + b).sin();
        }
        for (j, o) in out.iter_mut().enumerate().take(self.dim) {
            let row = &self.w2[j * HIDDEN..(j + 1) * HIDDEN];
            let a: f64 = row.iter().zip(&hidden).map(|(w, h)| w * h).sum();
            *o = (a + self.b2[j]).sin();
        }
    }

    pub fn encode(&self, pose: &Pose, brightness: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.encode_into(pose, brightness, &mut out);
        out
    }
}

/// One-shot encoding; builds the seeded encoder on every call.
pub fn synth_encode(pose: &Pose, brightness: f64, dim: usize, seed: u64) -> Result<Vec<f64>, StoreError> {
    Ok(SynthEncoder::new(dim, seed)?.encode(pose, brightness))
}

/// Central finite difference of `encode` with respect to a global additive
/// brightness shift: `(phi(b + delta) - phi(b - delta)) / (2 delta)`.
pub fn brightness_jacobian<F>(encode: F, brightness: f64, delta: f64) -> Result<Vec<f64>, StoreError>
where
    F: Fn(f64) -> Vec<f64>,
{
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(StoreError::Parameter(format!("finite-difference step {delta} must be positive")));
    }
    let plus = encode(brightness + delta);
    let minus = encode(brightness - delta);
    let inv = 1.0 / (2.0 * delta);
    Ok(plus.iter().zip(&minus).map(|(p, m)| (p - m) * inv).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(x: f64, y: f64) -> Pose {
        Pose {
            x,
            y,
            z: 0.0,
            yaw_deg: 30.0,
        }
    }

    #[test]
    fn deterministic() {
        let a = synth_encode(&pose(1.0, 2.0), 0.5, 32, 9).unwrap();
        let b = synth_encode(&pose(1.0, 2.0), 0.5, 32, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_dim_is_rejected() {
        assert!(matches!(synth_encode(&pose(0.0, 0.0), 0.5, 0, 1), Err(StoreError::Dimension(_))));
    }

    #[test]
    fn smooth_in_brightness() {
        let dim = 64;
        let a = synth_encode(&pose(3.0, -1.0), 0.5, dim, 4).unwrap();
        let b = synth_encode(&pose(3.0, -1.0), 0.5 + 1e-6, dim, 4).unwrap();
        let norm: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(norm < 1e-4 * (dim as f64).sqrt(), "{norm}");
    }

    #[test]
    fn jacobian_of_constant_is_zero() {
        let j = brightness_jacobian(|_| vec![3.0, -1.0], 0.5, 1e-3).unwrap();
        assert_eq!(j, vec![0.0, 0.0]);
    }

    #[test]
    fn jacobian_of_linear_map_is_exact() {
        let c = [0.5, -2.0, 4.0];
        for delta in [1e-3, 0.25] {
            let j = brightness_jacobian(|b| c.iter().map(|ci| ci * b).collect(), 0.5, delta).unwrap();
            for (ji, ci) in j.iter().zip(&c) {
                assert!((ji - ci).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobian_step_halving_is_stable() {
        let enc = SynthEncoder::new(64, 3).unwrap();
        let p = pose(5.0, 7.0);
        let coarse = brightness_jacobian(|b| enc.encode(&p, b), 0.5, 1e-2).unwrap();
        let fine = brightness_jacobian(|b| enc.encode(&p, b), 0.5, 5e-3).unwrap();
        let scale = fine.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (c, f) in coarse.iter().zip(&fine) {
            // relative to the component, with a floor for near-zero entries
            assert!((c - f).abs() <= 0.01 * f.abs().max(1e-3 * scale), "{c} vs {f}");
        }
    }
}
