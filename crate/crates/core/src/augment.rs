//! Feature-space observation noise.
//!
//! Brightness drift is modelled as a scalar Ornstein–Uhlenbeck process `xi`
//! shared by all features of an observation and propagated to first order
//! through the frame's brightness Jacobian. On top of that every feature gets
//! independent Gaussian noise scaled by its own sensitivity `|jac_j|`.

use rand::Rng;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("phi has {phi} entries but jac has {jac}")]
    LengthMismatch { phi: usize, jac: usize },
    #[error("invalid noise configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub sigma_global: f64,
    pub theta_global: f64,
    pub sigma_local: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma_global: 0.01,
            theta_global: 0.15,
            sigma_local: 0.01,
        }
    }
}

impl NoiseConfig {
    pub const ZERO: NoiseConfig = NoiseConfig {
        sigma_global: 0.0,
        theta_global: 0.0,
        sigma_local: 0.0,
    };

    pub fn validate(&self) -> Result<(), AugmentError> {
        let ok = self.sigma_global >= 0.0
            && self.sigma_local >= 0.0
            && (0.0..=1.0).contains(&self.theta_global)
            && self.sigma_global.is_finite()
            && self.sigma_local.is_finite();
        if ok {
            Ok(())
        } else {
            Err(AugmentError::Config(format!(
                "need sigma_global, sigma_local >= 0 and theta_global in [0, 1], got {self:?}"
            )))
        }
    }

    /// Stationary standard deviation of the discretised OU process,
    /// `sigma / sqrt(2 theta - theta^2)`.
    pub fn stationary_std(&self) -> f64 {
        let t = self.theta_global;
        self.sigma_global / (2.0 * t - t * t).sqrt()
    }
}

/// Correlated brightness noise state of one environment instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuState<T> {
    pub xi: T,
    pub sigma_global: T,
    pub theta_global: T,
}

impl<T: Scalar> OuState<T> {
    pub fn new(cfg: &NoiseConfig) -> Self {
        OuState {
            xi: T::zero(),
            sigma_global: T::of(cfg.sigma_global),
            theta_global: T::of(cfg.theta_global),
        }
    }

    pub fn reset(&mut self) {
        self.xi = T::zero();
    }

    /// `xi <- xi - theta xi + sigma eps`, `eps ~ N(0, 1)`, unit timestep.
    #[inline]
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let eps = if self.sigma_global > T::zero() {
            T::standard_normal(rng)
        } else {
            T::zero()
        };
        self.xi = self.xi - self.theta_global * self.xi + self.sigma_global * eps;
    }
}

/// Writes `phi_j + xi jac_j + sigma_local |jac_j| eps_j` into `out`.
#[inline]
pub fn apply_noise_into<T: Scalar, R: Rng + ?Sized>(
    phi: &[f32],
    jac: &[f32],
    xi: T,
    sigma_local: T,
    rng: &mut R,
    out: &mut [T],
) {
    debug_assert!(phi.len() == jac.len() && phi.len() == out.len());
    if sigma_local > T::zero() {
        for ((o, &p), &j) in out.iter_mut().zip(phi).zip(jac) {
            let j = T::of(j as f64);
            let eps = T::standard_normal(rng);
            *o = T::of(p as f64) + xi * j + sigma_local * j.abs() * eps;
        }
    } else {
        for ((o, &p), &j) in out.iter_mut().zip(phi).zip(jac) {
            *o = T::of(p as f64) + xi * T::of(j as f64);
        }
    }
}

pub fn apply_noise<T: Scalar, R: Rng + ?Sized>(
    phi: &[f32],
    jac: &[f32],
    ou: &OuState<T>,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<Vec<T>, AugmentError> {
    if phi.len() != jac.len() {
        return Err(AugmentError::LengthMismatch {
            phi: phi.len(),
            jac: jac.len(),
        });
    }
    let mut out = vec![T::zero(); phi.len()];
    apply_noise_into(phi, jac, ou.xi, T::of(cfg.sigma_local), rng, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noise_free_decay() {
        let cfg = NoiseConfig {
            sigma_global: 0.0,
            theta_global: 0.15,
            sigma_local: 0.0,
        };
        let mut ou = OuState::<f64>::new(&cfg);
        ou.xi = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut expect = 1.0f64;
        for _ in 0..20 {
            ou.step(&mut rng);
            expect = expect - 0.15 * expect;
            assert_eq!(ou.xi, expect);
        }
        assert!((ou.xi - 0.85f64.powi(20)).abs() < 1e-15);
    }

    #[test]
    fn identity_without_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = [0.3f32, -1.5, 2.0];
        let jac = [1.0f32, 0.0, -4.0];
        let ou = OuState::<f64>::new(&NoiseConfig::ZERO);
        let out = apply_noise(&phi, &jac, &ou, &NoiseConfig::ZERO, &mut rng).unwrap();
        assert_eq!(out, vec![0.3f32 as f64, -1.5, 2.0]);
    }

    #[test]
    fn linear_propagation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ou = OuState::<f64>::new(&NoiseConfig::ZERO);
        ou.xi = 0.5;
        let out = apply_noise(&[0.0, 0.0], &[1.0, -2.0], &ou, &NoiseConfig::ZERO, &mut rng).unwrap();
        assert_eq!(out, vec![0.5, -1.0]);
    }

    #[test]
    fn zero_sensitivity_means_zero_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = NoiseConfig::default();
        let mut ou = OuState::<f64>::new(&cfg);
        let phi = [0.25f32, 0.75];
        let jac = [0.0f32, 1.0];
        for _ in 0..10_000 {
            ou.step(&mut rng);
            let out = apply_noise(&phi, &jac, &ou, &cfg, &mut rng).unwrap();
            assert_eq!(out[0], 0.25);
        }
    }

    #[test]
    fn length_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ou = OuState::<f32>::new(&NoiseConfig::default());
        let err = apply_noise(&[0.0, 1.0], &[0.0], &ou, &NoiseConfig::default(), &mut rng).unwrap_err();
        assert_eq!(err, AugmentError::LengthMismatch { phi: 2, jac: 1 });
    }

    #[test]
    fn stationary_std_closed_form() {
        let s = NoiseConfig::default().stationary_std();
        assert!((s - 0.01 / 0.2775f64.sqrt()).abs() < 1e-15);
        assert!((s - 0.01899).abs() < 1e-5);
    }

    #[test]
    fn config_validation() {
        assert!(NoiseConfig::default().validate().is_ok());
        let bad = NoiseConfig {
            theta_global: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
