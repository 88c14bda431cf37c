//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Betas (0.5, 0.999), the usual setting for adversarial training.
    pub fn gan(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Betas (0.9, 0.999).
    pub fn classifier(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "betas must lie in [0, 1), got ({}, {})",
                self.beta1, self.beta2
            )));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Moment estimates for one parameter set.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: AdamState::default(),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn steps(&self) -> u64 {
        self.state.t
    }

    /// Applies one update to every tensor and clears their gradients.
    /// Moments are kept in f64 regardless of the parameter precision.
    pub fn step<T: Element>(&mut self, params: &mut [Tensor<T>]) -> Result<()> {
        if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
            return Err(Error::Contract(format!("parameter {i} has no gradient")));
        }
        let st = &mut self.state;
        if st.m.is_empty() {
            st.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            st.v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        } else if st.m.len() != params.len()
            || st
                .m
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.len() != p.numel())
        {
            return Err(Error::Contract(
                "parameter set changed shape between Adam steps".into(),
            ));
        }
        st.t += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(st.t as i32);
        let c2 = 1.0 - b2.powi(st.t as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut st.m).zip(&mut st.v) {
            let g: Vec<f64> = p
                .grad()
                .expect("checked above")
                .iter()
                .map(|x| x.as_f64())
                .collect();
            for (((w, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(&g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w = T::from_f64(w.as_f64() - lr * mhat / (vhat.sqrt() + eps));
            }
            p.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_grad(value: f64, g: f64) -> Tensor<f64> {
        let mut t = Tensor::new([1], vec![value]).unwrap().with_grad();
        t.accumulate_grad(&[g]).unwrap();
        t
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = Adam::new(AdamConfig::classifier(1e-3)).unwrap();
        let mut p = vec![with_grad(1.0, 0.5)];
        opt.step(&mut p).unwrap();
        assert!((p[0].data()[0] - (1.0 - 1e-3)).abs() < 1e-6);
        assert!(p[0].grad().is_none());
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut opt = Adam::new(AdamConfig::gan(2e-4)).unwrap();
        let mut p = vec![with_grad(0.25, 0.0)];
        opt.step(&mut p).unwrap();
        assert_eq!(p[0].data()[0], 0.25);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut opt = Adam::new(AdamConfig::gan(2e-4)).unwrap();
        let mut p = vec![Tensor::<f32>::zeros([3])];
        assert!(matches!(opt.step(&mut p), Err(Error::Contract(_))));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(Adam::new(AdamConfig::gan(0.0)).is_err());
        let mut c = AdamConfig::gan(1e-3);
        c.eps = 0.0;
        assert!(Adam::new(c).is_err());
    }
}
