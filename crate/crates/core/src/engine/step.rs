use rand::Rng;

use super::{global_measure, tape_autoencoder_loss, EquilibriumController, Norm, StepRecord};
use crate::error::{Error, Result};
use crate::latent::sample_z_tensor;
use crate::nn::{decode, encode, ModelParams};
use crate::optim::AdamState;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

/// Separate Adam states for the discriminator and the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers<T> {
    pub discriminator: AdamState<T>,
    pub generator: AdamState<T>,
}

impl<T: Scalar> Optimizers<T> {
    pub fn new(params: &ModelParams<T>, learning_rate: f64) -> Self {
        Optimizers {
            discriminator: AdamState::new(params.discriminator_tensors(), learning_rate),
            generator: AdamState::new(params.generator.tensors(), learning_rate),
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.discriminator.learning_rate = lr;
        self.generator.learning_rate = lr;
    }

    pub fn learning_rate(&self) -> f64 {
        self.discriminator.learning_rate
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepSettings {
    pub step: u64,
    pub norm: Norm,
    pub carry: f64,
}

struct Losses<T> {
    real: f64,
    fake_d: f64,
    fake_g: f64,
    grads_d: Vec<Tensor<T>>,
    grads_g: Vec<Tensor<T>>,
}

#[derive(Default)]
struct Partial {
    real: Option<f64>,
    fake_d: Option<f64>,
    fake_g: Option<f64>,
}

/// Forward both objectives on one tape and differentiate their sum.
///
/// In the discriminator objective the generated batch is a constant, and in
/// the generator objective the discriminator parameters are constants, so a
/// single sweep yields `dL_D/dθ_D` and `dL_G/dθ_G` with no cross terms.
fn forward_backward<T: Scalar>(
    params: &ModelParams<T>,
    batch: &Tensor<T>,
    z_d: &Tensor<T>,
    z_g: &Tensor<T>,
    k: f64,
    settings: StepSettings,
    partial: &mut Partial,
) -> Result<Losses<T>> {
    let cfg = &params.config;
    let (enc_l, dec_l, gen_l) = (cfg.encoder_layout(), cfg.decoder_layout(), cfg.generator_layout());
    let carry = T::from_acc(settings.carry);
    let mut tape = Tape::new();

    let enc = params.encoder.bind(&mut tape, true);
    let dec = params.decoder.bind(&mut tape, true);
    let gen = params.generator.bind(&mut tape, true);
    let gen_frozen = params.generator.bind(&mut tape, false);
    let enc_frozen = params.encoder.bind(&mut tape, false);
    let dec_frozen = params.decoder.bind(&mut tape, false);

    // L(x)
    let x = tape.constant(batch.clone());
    let h = encode(&mut tape, &enc_l, &enc, x, carry)?;
    let rx = decode(&mut tape, &dec_l, &dec, h, carry)?;
    let loss_real = tape_autoencoder_loss(&mut tape, x, rx, settings.norm)?;
    partial.real = Some(tape.value(loss_real).data()[0].to_acc());

    // L(G(z_D)), generator frozen
    let zd = tape.constant(z_d.clone());
    let fake_d = decode(&mut tape, &gen_l, &gen_frozen, zd, carry)?;
    let h = encode(&mut tape, &enc_l, &enc, fake_d, carry)?;
    let rfd = decode(&mut tape, &dec_l, &dec, h, carry)?;
    let loss_fake_d = tape_autoencoder_loss(&mut tape, fake_d, rfd, settings.norm)?;
    partial.fake_d = Some(tape.value(loss_fake_d).data()[0].to_acc());

    // L(G(z_G)), discriminator frozen
    let zg = tape.constant(z_g.clone());
    let fake_g = decode(&mut tape, &gen_l, &gen, zg, carry)?;
    let h = encode(&mut tape, &enc_l, &enc_frozen, fake_g, carry)?;
    let rfg = decode(&mut tape, &dec_l, &dec_frozen, h, carry)?;
    let loss_fake_g = tape_autoencoder_loss(&mut tape, fake_g, rfg, settings.norm)?;
    partial.fake_g = Some(tape.value(loss_fake_g).data()[0].to_acc());

    let weighted = tape.scale(loss_fake_d, T::from_acc(k))?;
    let loss_d = tape.sub(loss_real, weighted)?;
    let total = tape.add(loss_d, loss_fake_g)?;
    let mut grads = tape.backward(total)?;

    let grads_d = enc
        .iter()
        .chain(&dec)
        .zip(params.discriminator_tensors())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    let grads_g = gen
        .iter()
        .zip(params.generator.tensors())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    Ok(Losses {
        real: partial.real.unwrap_or(f64::NAN),
        fake_d: partial.fake_d.unwrap_or(f64::NAN),
        fake_g: partial.fake_g.unwrap_or(f64::NAN),
        grads_d,
        grads_g,
    })
}

/// One simultaneous update of both networks and of `k` with caller-supplied latents.
pub fn train_step_with_latents<T: Scalar>(
    params: &mut ModelParams<T>,
    optimizers: &mut Optimizers<T>,
    ctrl: &mut EquilibriumController,
    batch: &Tensor<T>,
    z_d: &Tensor<T>,
    z_g: &Tensor<T>,
    settings: StepSettings,
) -> Result<StepRecord> {
    let k = ctrl.k;
    let mut record = StepRecord {
        step: settings.step,
        loss_real: f64::NAN,
        loss_fake_d: f64::NAN,
        loss_fake_g: f64::NAN,
        k,
        m_global: f64::NAN,
        lr: optimizers.learning_rate(),
        carry: settings.carry,
    };
    let mut partial = Partial::default();
    let losses = match forward_backward(params, batch, z_d, z_g, k, settings, &mut partial) {
        Ok(l) => l,
        Err(Error::NonFinite { .. }) => {
            record.loss_real = partial.real.unwrap_or(f64::NAN);
            record.loss_fake_d = partial.fake_d.unwrap_or(f64::NAN);
            record.loss_fake_g = partial.fake_g.unwrap_or(f64::NAN);
            return Err(Error::Diverged(Box::new(record)));
        }
        Err(e) => return Err(e),
    };
    record.loss_real = losses.real;
    record.loss_fake_d = losses.fake_d;
    record.loss_fake_g = losses.fake_g;
    record.m_global = global_measure(losses.real, losses.fake_g, ctrl.gamma);
    if !record.is_finite() {
        return Err(Error::Diverged(Box::new(record)));
    }

    let names_d: Vec<String> = params
        .encoder
        .iter()
        .chain(params.decoder.iter())
        .map(|p| p.name.clone())
        .collect();
    let names_g: Vec<String> = params.generator.iter().map(|p| p.name.clone()).collect();

    // validate both before touching either network
    for (g, name) in losses
        .grads_d
        .iter()
        .zip(&names_d)
        .chain(losses.grads_g.iter().zip(&names_g))
    {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    let nd: Vec<&str> = names_d.iter().map(String::as_str).collect();
    let ng: Vec<&str> = names_g.iter().map(String::as_str).collect();

    optimizers
        .discriminator
        .step(params.encoder.tensors_mut().chain(params.decoder.tensors_mut()), &losses.grads_d, &nd)?;
    optimizers
        .generator
        .step(params.generator.tensors_mut(), &losses.grads_g, &ng)?;
    ctrl.update(losses.real, losses.fake_g);
    Ok(record)
}

/// [`train_step_with_latents`] drawing `z_D` then `z_G` uniformly from `rng`.
pub fn train_step<T: Scalar, R: Rng + ?Sized>(
    params: &mut ModelParams<T>,
    optimizers: &mut Optimizers<T>,
    ctrl: &mut EquilibriumController,
    batch: &Tensor<T>,
    rng: &mut R,
    settings: StepSettings,
) -> Result<StepRecord> {
    let b = batch.shape().first().copied().unwrap_or(0);
    let nz = params.config.latent_dim;
    let z_d = sample_z_tensor(rng, b, nz);
    let z_g = sample_z_tensor(rng, b, nz);
    train_step_with_latents(params, optimizers, ctrl, batch, &z_d, &z_g, settings)
}
