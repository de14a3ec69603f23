use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW-style) weight decay.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<DenseMatrix>,
    second: Vec<DenseMatrix>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .values()
                .iter()
                .map(|v| DenseMatrix::zeros(v.rows(), v.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One Adam update from the gradients currently held by `params`.
    ///
    /// The gradients are consumed: a second call without a fresh
    /// evaluation is rejected.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if !params.grads_ready() {
            return Err(Error::NoGradient);
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            let g = params.grad(i).clone();
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let p = params.value_mut(i);
            for (((pe, &ge), me), ve) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *me = beta1 * *me + (1.0 - beta1) * ge;
                *ve = beta2 * *ve + (1.0 - beta2) * ge * ge;
                let m_hat = *me / bc1;
                let v_hat = *ve / bc2;
                *pe -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *pe);
            }
        }
        params.mark_consumed();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::params::value_and_grad;

    fn quadratic(params: &mut ParamStore, center: f64) -> f64 {
        value_and_grad(params, |t, v| {
            let c = t.constant(DenseMatrix::scalar(-center));
            let d = t.add(v[0], c)?;
            let sq = t.mul(d, d)?;
            Ok(t.sum(sq))
        })
        .unwrap()
    }

    fn no_decay(lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            weight_decay: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn step_without_gradient_errors() {
        let mut p = ParamStore::new();
        p.add("x", DenseMatrix::scalar(1.0));
        let mut s = AdamState::new(&p, AdamConfig::default());
        assert!(matches!(s.step(&mut p), Err(Error::NoGradient)));
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = ParamStore::new();
        p.add("x", DenseMatrix::from_vec(1, 2, vec![0.3, -2.0]).unwrap());
        let mut s = AdamState::new(&p, no_decay(0.1));
        value_and_grad(&mut p, |t, _| Ok(t.constant(DenseMatrix::scalar(1.0)))).unwrap();
        s.step(&mut p).unwrap();
        assert_eq!(p.value(0).data(), &[0.3, -2.0]);
        assert_eq!(s.steps(), 1);
    }

    #[test]
    fn one_step_descends() {
        let mut p = ParamStore::new();
        p.add("x", DenseMatrix::scalar(1.0));
        let mut s = AdamState::new(&p, no_decay(0.1));
        quadratic(&mut p, 0.0);
        s.step(&mut p).unwrap();
        let x = p.value(0).item();
        assert!(x < 1.0 && x > 0.0);
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut p = ParamStore::new();
        p.add("x", DenseMatrix::scalar(0.0));
        let mut s = AdamState::new(&p, no_decay(0.05));
        let mut last = 0;
        for _ in 0..500 {
            quadratic(&mut p, 3.0);
            s.step(&mut p).unwrap();
            last += 1;
        }
        assert_eq!(s.steps(), last);
        assert!(
            (p.value(0).item() - 3.0).abs() < 1e-2,
            "{}",
            p.value(0).item()
        );
    }

    #[test]
    fn weight_decay_shrinks_with_zero_gradient() {
        let mut p = ParamStore::new();
        p.add("x", DenseMatrix::scalar(2.0));
        let mut s = AdamState::new(
            &p,
            AdamConfig {
                lr: 0.1,
                weight_decay: 0.5,
                ..Default::default()
            },
        );
        value_and_grad(&mut p, |t, _| Ok(t.constant(DenseMatrix::scalar(0.0)))).unwrap();
        s.step(&mut p).unwrap();
        assert!((p.value(0).item() - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }
}
