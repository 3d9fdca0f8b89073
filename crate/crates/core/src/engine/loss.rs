use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Target norm of the pixel-wise reconstruction loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Norm {
    #[default]
    L1,
    L2,
}

impl Norm {
    pub fn from_exponent(eta: u32) -> Result<Self> {
        match eta {
            1 => Ok(Norm::L1),
            2 => Ok(Norm::L2),
            _ => Err(Error::OutOfRange {
                what: "eta",
                value: eta as f64,
                range: "{1, 2}",
            }),
        }
    }

    pub fn exponent(self) -> u32 {
        match self {
            Norm::L1 => 1,
            Norm::L2 => 2,
        }
    }
}

/// Batch estimates of the mean real and generated reconstruction losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossStats {
    pub m1: f64,
    pub m2: f64,
}

/// `|m1 - m2|`, the mean-gap lower bound on the distance between loss distributions.
pub fn wasserstein_lower_bound(stats: LossStats) -> f64 {
    (stats.m1 - stats.m2).abs()
}

/// `L(x) - k * L(G(z_D))`.
pub fn discriminator_loss(loss_real: f64, loss_fake_d: f64, k: f64) -> f64 {
    loss_real - k * loss_fake_d
}

/// `L(G(z_G))`.
pub fn generator_loss(loss_fake_g: f64) -> f64 {
    loss_fake_g
}

/// `L(x) + |gamma * L(x) - L(G(z_G))|`.
pub fn global_measure(loss_real: f64, loss_fake_g: f64, gamma: f64) -> f64 {
    loss_real + (gamma * loss_real - loss_fake_g).abs()
}

/// Recorded `L(v) = |v - D(v)|^eta`: per-sample mean over pixels, then mean over the batch.
pub fn tape_autoencoder_loss<T: Scalar>(tape: &mut Tape<T>, v: Var, reconstruction: Var, norm: Norm) -> Result<Var> {
    let (sv, sr) = (tape.value(v).shape(), tape.value(reconstruction).shape());
    if sv != sr || sv.is_empty() {
        return Err(Error::shape("autoencoder_loss", format!("{sv:?} vs {sr:?}")));
    }
    let rank = sv.len();
    let diff = tape.sub(v, reconstruction)?;
    let err = match norm {
        Norm::L1 => tape.abs(diff)?,
        Norm::L2 => tape.square(diff)?,
    };
    let axes: Vec<usize> = (1..rank).collect();
    let per_sample = if axes.is_empty() { err } else { tape.mean_axes(err, &axes)? };
    tape.mean(per_sample)
}

pub fn autoencoder_loss<T: Scalar>(v: &Tensor<T>, reconstruction: &Tensor<T>, norm: Norm) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(v.clone());
    let b = tape.constant(reconstruction.clone());
    let l = tape_autoencoder_loss(&mut tape, a, b, norm)?;
    Ok(tape.value(l).data()[0].to_acc())
}
