//! Boundary-equilibrium training: reconstruction losses, the
//! proportional controller on `k`, the convergence measure, and the loop
//! that ties them to the networks and optimizers.

mod loss;
mod step;
mod train;

pub use loss::{
    autoencoder_loss, discriminator_loss, generator_loss, global_measure, tape_autoencoder_loss,
    wasserstein_lower_bound, LossStats, Norm,
};
pub use step::{train_step, train_step_with_latents, Optimizers, StepSettings};
pub use train::{train_loop, MetricsSink, NoObserver, TrainConfig, TrainObserver, Trainer};

use crate::error::{Error, Result};

/// Proportional controller keeping `E[L(G(z))] = gamma * E[L(x)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EquilibriumController {
    /// Weight of the generated-sample term in the discriminator loss, kept in `[0, 1]`.
    pub k: f64,
    /// Diversity ratio.
    pub gamma: f64,
    /// Proportional gain.
    pub lambda_k: f64,
}

impl EquilibriumController {
    pub const DEFAULT_LAMBDA_K: f64 = 0.001;

    pub fn new(gamma: f64, lambda_k: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::OutOfRange {
                what: "gamma",
                value: gamma,
                range: "[0, 1]",
            });
        }
        if !(lambda_k > 0.0 && lambda_k.is_finite()) {
            return Err(Error::OutOfRange {
                what: "lambda_k",
                value: lambda_k,
                range: "(0, inf)",
            });
        }
        Ok(EquilibriumController { k: 0.0, gamma, lambda_k })
    }

    /// `gamma * L(x) - L(G(z_G))`.
    pub fn process_error(&self, loss_real: f64, loss_fake_g: f64) -> f64 {
        self.gamma * loss_real - loss_fake_g
    }

    /// `k <- clamp(k + lambda_k * (gamma * L(x) - L(G(z_G))), 0, 1)`; returns the new `k`.
    pub fn update(&mut self, loss_real: f64, loss_fake_g: f64) -> f64 {
        let raw = self.k + self.lambda_k * self.process_error(loss_real, loss_fake_g);
        self.k = raw.clamp(0.0, 1.0);
        self.k
    }
}

/// Telemetry for one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    /// `L(x)` on the real batch.
    pub loss_real: f64,
    /// `L(G(z_D))`, the generated term of the discriminator loss.
    pub loss_fake_d: f64,
    /// `L(G(z_G))`, the generator loss.
    pub loss_fake_g: f64,
    /// `k_t` used by this step's discriminator loss.
    pub k: f64,
    pub m_global: f64,
    pub lr: f64,
    pub carry: f64,
}

impl StepRecord {
    pub fn is_finite(&self) -> bool {
        [
            self.loss_real,
            self.loss_fake_d,
            self.loss_fake_g,
            self.k,
            self.m_global,
            self.lr,
            self.carry,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// `L(G(z_G)) / L(x)`, the observed diversity ratio.
    pub fn ratio(&self) -> f64 {
        self.loss_fake_g / self.loss_real
    }
}
