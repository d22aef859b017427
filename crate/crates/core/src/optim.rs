//! Adam with bias-corrected moment estimates.

use crate::error::{LeganError, Result};
use crate::networks::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators for one parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Param<T>]) -> Self {
        AdamState {
            m: params
                .iter()
                .map(|p| vec![T::zero(); p.value.len()])
                .collect(),
            v: params
                .iter()
                .map(|p| vec![T::zero(); p.value.len()])
                .collect(),
            t: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of `params` in place from `grads` (same order and shapes).
    pub fn step(
        &mut self,
        params: &mut [Param<T>],
        grads: &[Tensor<T>],
        cfg: &AdamConfig,
    ) -> Result<()> {
        const OP: &str = "adam_step";
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(LeganError::shape(
                OP,
                format!(
                    "{} params, {} gradients, state for {}",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.value.shape() != g.shape() || m.len() != p.value.len() {
                return Err(LeganError::shape(
                    OP,
                    format!(
                        "{}: param {:?} vs gradient {:?}",
                        p.name,
                        p.value.shape(),
                        g.shape()
                    ),
                ));
            }
        }
        if !(cfg.lr >= 0.0) {
            return Err(LeganError::invalid(
                OP,
                format!("learning rate {} is negative", cfg.lr),
            ));
        }
        self.t += 1;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(v: &[f64]) -> Vec<Param<f64>> {
        vec![Param {
            name: "w".into(),
            value: Tensor::from_vec(v.to_vec()),
        }]
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = params(&[0.5]);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig::default();
        s.step(&mut p, &[Tensor::from_vec(vec![1.0])], &cfg)
            .unwrap();
        // m̂ = 1, v̂ = 1 → Δ = lr / (1 + eps)
        let expected = 0.5 - 1e-4 / (1.0 + 1e-8);
        assert!((p[0].value.data()[0] - expected).abs() < 1e-15);
        assert_eq!(s.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = params(&[0.5, -2.0]);
        let mut s = AdamState::new(&p);
        for _ in 0..10 {
            s.step(&mut p, &[Tensor::zeros(vec![2])], &AdamConfig::default())
                .unwrap();
        }
        assert_eq!(p[0].value.data(), &[0.5, -2.0]);
        assert_eq!(s.steps(), 10);
    }

    #[test]
    fn deterministic_from_identical_state() {
        let g = [Tensor::from_vec(vec![0.3, -0.1])];
        let (mut p1, mut p2) = (params(&[1.0, 2.0]), params(&[1.0, 2.0]));
        let mut s1 = AdamState::new(&p1);
        let mut s2 = s1.clone();
        s1.step(&mut p1, &g, &AdamConfig::default()).unwrap();
        s2.step(&mut p2, &g, &AdamConfig::default()).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = params(&[1.0, 2.0]);
        let mut s = AdamState::new(&p);
        let err = s.step(&mut p, &[Tensor::zeros(vec![3])], &AdamConfig::default());
        assert!(err.is_err());
        assert_eq!(s.steps(), 0);
    }
}
