use super::AgentError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(len: usize, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64) -> Result<(), AgentError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(AgentError::Shape(format!(
                "adam state {} vs params {} and grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let k = AdamStep::new(&self.cfg, self.t, lr);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            k.apply(p, g, m, v);
        }
        Ok(())
    }
}

/// Per-step constants of one Adam update.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AdamStep<T> {
    b1: T,
    b2: T,
    c1: T,
    c2: T,
    eps: T,
    lr: T,
}

impl<T: Scalar> AdamStep<T> {
    pub(crate) fn new(cfg: &AdamConfig, t: u64, lr: f64) -> Self {
        AdamStep {
            b1: T::of(cfg.beta1),
            b2: T::of(cfg.beta2),
            c1: T::of(1.0 - cfg.beta1.powf(t as f64)),
            c2: T::of(1.0 - cfg.beta2.powf(t as f64)),
            eps: T::of(cfg.eps),
            lr: T::of(lr),
        }
    }

    #[inline]
    pub(crate) fn apply(&self, p: &mut T, g: T, m: &mut T, v: &mut T) {
        let one = T::one();
        *m = self.b1 * *m + (one - self.b1) * g;
        *v = self.b2 * *v + (one - self.b2) * g * g;
        let mh = *m / self.c1;
        let vh = *v / self.c2;
        *p = *p - self.lr * mh / (vh.sqrt() + self.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut a = Adam::<f64>::new(3, AdamConfig::default());
        let mut p = vec![0.5, -1.0, 2.0];
        a.step(&mut p, &[0.0; 3], 1e-3).unwrap();
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn first_step_magnitude() {
        let mut a = Adam::<f64>::new(1, AdamConfig::default());
        let mut p = vec![0.0];
        a.step(&mut p, &[1.0], 1e-4).unwrap();
        assert!((p[0] + 1e-4 / (1.0 + 1e-8)).abs() < 1e-9);
    }

    #[test]
    fn constant_gradient_descends_monotonically() {
        let mut a = Adam::<f64>::new(1, AdamConfig::default());
        let mut p = vec![1.0];
        let mut last = p[0];
        for _ in 0..100 {
            a.step(&mut p, &[0.3], 1e-2).unwrap();
            assert!(p[0] < last);
            last = p[0];
        }
    }

    #[test]
    fn shape_checked() {
        let mut a = Adam::<f32>::new(2, AdamConfig::default());
        assert!(a.step(&mut [0.0; 3], &[0.0; 3], 1e-3).is_err());
    }
}
