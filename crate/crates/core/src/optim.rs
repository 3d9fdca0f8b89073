//! Adam with bias correction, and learning-rate halving when the
//! convergence measure stops improving.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Moment estimates for one network. Never shared between networks.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>, learning_rate: f64) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            learning_rate,
        }
    }

    /// One bias-corrected Adam update. `names` label parameters in diagnostics.
    ///
    /// Nothing is modified when any gradient is non-finite or mis-shaped.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor<T>>,
        grads: &[Tensor<T>],
        names: &[&str],
    ) -> Result<()> {
        let params: Vec<&mut Tensor<T>> = params.into_iter().collect();
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} params, {} grads, {} moment slots",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[i].shape() != g.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("param {:?} with grad {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                let name = names.get(i).copied().unwrap_or("?");
                return Err(Error::NonFiniteGradient(format!("{name} (#{i})")));
            }
        }

        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gf = gi.to_acc();
                let mf = b1 * mi.to_acc() + (1.0 - b1) * gf;
                let vf = b2 * vi.to_acc() + (1.0 - b2) * gf * gf;
                let m_hat = mf / c1;
                let v_hat = vf / c2;
                *pi = T::from_acc(pi.to_acc() - self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon));
                *mi = T::from_acc(mf);
                *vi = T::from_acc(vf);
            }
        }
        Ok(())
    }
}

/// Halves the learning rate when the convergence measure has not improved
/// by more than [`StallDetector::MIN_IMPROVEMENT`] for `patience` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct StallDetector {
    pub best: f64,
    pub steps_since_improvement: u64,
    pub patience: u64,
}

impl StallDetector {
    pub const MIN_IMPROVEMENT: f64 = 1e-6;
    pub const DECAY_FACTOR: f64 = 2.0;
    pub const DEFAULT_PATIENCE: u64 = 2000;

    pub fn new(patience: u64) -> Self {
        StallDetector {
            best: f64::INFINITY,
            steps_since_improvement: 0,
            patience,
        }
    }

    /// Feed one measurement; returns the learning rate to use from now on.
    pub fn maybe_decay(&mut self, m_global: f64, lr: f64) -> f64 {
        if m_global < self.best - Self::MIN_IMPROVEMENT {
            self.best = m_global;
            self.steps_since_improvement = 0;
            return lr;
        }
        self.steps_since_improvement += 1;
        if self.steps_since_improvement >= self.patience {
            self.steps_since_improvement = 0;
            return lr / Self::DECAY_FACTOR;
        }
        lr
    }
}

impl Default for StallDetector {
    fn default() -> Self {
        Self::new(Self::DEFAULT_PATIENCE)
    }
}
