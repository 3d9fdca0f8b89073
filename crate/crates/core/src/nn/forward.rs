use super::{ConvLayer, DecoderLayout, EncoderLayout, ModelParams, BASE_RESOLUTION};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Carry for vanishing residuals: linear from 1 at step 0 to 0 at `decay_steps`.
pub fn carry_schedule(step: u64, decay_steps: u64) -> f64 {
    if decay_steps == 0 {
        return 0.0;
    }
    (1.0 - step as f64 / decay_steps as f64).max(0.0)
}

fn check_carry(carry: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&carry) {
        return Err(Error::OutOfRange {
            what: "carry",
            value: carry,
            range: "[0, 1]",
        });
    }
    Ok(())
}

/// `carry * layer_in + (1 - carry) * layer_out`.
pub fn residual_mix<T: Scalar>(layer_in: &Tensor<T>, layer_out: &Tensor<T>, carry: T) -> Result<Tensor<T>> {
    check_carry(carry.to_acc())?;
    if layer_in.shape() != layer_out.shape() {
        return Err(Error::shape(
            "residual_mix",
            format!("{:?} vs {:?}", layer_in.shape(), layer_out.shape()),
        ));
    }
    let keep = T::one() - carry;
    let data = layer_in
        .data()
        .iter()
        .zip(layer_out.data())
        .map(|(&a, &b)| carry * a + keep * b)
        .collect();
    Tensor::from_vec(layer_in.shape().to_vec(), data)
}

/// Recorded form of [`residual_mix`].
pub fn tape_residual_mix<T: Scalar>(tape: &mut Tape<T>, layer_in: Var, layer_out: Var, carry: T) -> Result<Var> {
    check_carry(carry.to_acc())?;
    if tape.value(layer_in).shape() != tape.value(layer_out).shape() {
        return Err(Error::shape("residual_mix", "input and output shapes differ"));
    }
    if carry == T::one() {
        return Ok(layer_in);
    }
    if carry == T::zero() {
        return Ok(layer_out);
    }
    let a = tape.scale(layer_in, carry)?;
    let b = tape.scale(layer_out, T::one() - carry)?;
    tape.add(a, b)
}

fn upsample_to<T: Scalar>(h0: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let mut t = h0.clone();
    while t.shape()[2] < size {
        t = crate::tensor::kernels::upsample_nearest2(&t)?;
    }
    Ok(t)
}

fn check_skip_sizes(h0: &[usize], out: &[usize]) -> Result<()> {
    let ok = h0.len() == 4
        && out.len() == 4
        && h0[0] == out[0]
        && h0[2] == h0[3]
        && out[2] == out[3]
        && out[2] >= h0[2]
        && h0[2] > 0
        && out[2].is_multiple_of(h0[2])
        && (out[2] / h0[2]).is_power_of_two();
    if ok {
        Ok(())
    } else {
        Err(Error::shape("skip_concat", format!("h0 {h0:?} with layer output {out:?}")))
    }
}

/// Append `h0`, nearest-neighbour up-sampled to the layer's spatial size, as extra channels.
pub fn skip_concat<T: Scalar>(h0: &Tensor<T>, layer_out: &Tensor<T>) -> Result<Tensor<T>> {
    check_skip_sizes(h0.shape(), layer_out.shape())?;
    let up = upsample_to(h0, layer_out.shape()[2])?;
    crate::tensor::kernels::concat_channels(layer_out, &up)
}

pub fn tape_skip_concat<T: Scalar>(tape: &mut Tape<T>, h0: Var, layer_out: Var) -> Result<Var> {
    check_skip_sizes(tape.value(h0).shape(), tape.value(layer_out).shape())?;
    let size = tape.value(layer_out).shape()[2];
    let mut up = h0;
    while tape.value(up).shape()[2] < size {
        up = tape.upsample_nearest2(up)?;
    }
    tape.concat_channels(layer_out, up)
}

fn conv_elu<T: Scalar>(
    tape: &mut Tape<T>,
    layer: &ConvLayer,
    params: &mut std::slice::Iter<'_, Var>,
    x: Var,
    carry: T,
) -> Result<Var> {
    let (w, b) = (*params.next().expect("w"), *params.next().expect("b"));
    if layer.residual && carry == T::one() {
        // the convolution's contribution is multiplied by zero
        return Ok(x);
    }
    let y = tape.conv2d_3x3(x, w, b)?;
    let y = tape.elu(y)?;
    if layer.residual {
        tape_residual_mix(tape, x, y, carry)
    } else {
        Ok(y)
    }
}

/// Encoder forward pass `[b, C, H, W] -> [b, N_h]`. `params` are the encoder vars in set order.
pub fn encode<T: Scalar>(tape: &mut Tape<T>, layout: &EncoderLayout, params: &[Var], x: Var, carry: T) -> Result<Var> {
    let mut it = params.iter();
    let mut h = x;
    for (i, level) in layout.levels.iter().enumerate() {
        if i > 0 {
            h = tape.subsample2(h)?;
        }
        for layer in level {
            h = conv_elu(tape, layer, &mut it, h, carry)?;
        }
    }
    let b = tape.value(h).shape()[0];
    let flat = tape.reshape(h, &[b, layout.fc_in])?;
    let (w, bias) = (*it.next().expect("fc w"), *it.next().expect("fc b"));
    tape.fully_connected(flat, w, bias)
}

/// Decoder/generator forward pass `[b, input_dim] -> [b, C, H, W]`.
pub fn decode<T: Scalar>(tape: &mut Tape<T>, layout: &DecoderLayout, params: &[Var], h: Var, carry: T) -> Result<Var> {
    let mut it = params.iter();
    let b = tape.value(h).shape()[0];
    let (w, bias) = (*it.next().expect("fc w"), *it.next().expect("fc b"));
    let proj = tape.fully_connected(h, w, bias)?;
    let h0 = tape.reshape(proj, &[b, layout.base_filters, BASE_RESOLUTION, BASE_RESOLUTION])?;
    let mut x = h0;
    for (j, level) in layout.levels.iter().enumerate() {
        if j > 0 {
            x = tape.upsample_nearest2(x)?;
            if layout.skip {
                x = tape_skip_concat(tape, h0, x)?;
            }
        }
        for layer in level {
            x = conv_elu(tape, layer, &mut it, x, carry)?;
        }
    }
    let (w, bias) = (*it.next().expect("out w"), *it.next().expect("out b"));
    tape.conv2d_3x3(x, w, bias)
}

fn check_image<T: Scalar>(params: &ModelParams<T>, x: &Tensor<T>) -> Result<()> {
    let c = &params.config;
    match *x.shape() {
        [_, ch, h, w] if ch == c.channels && h == c.image_size && w == c.image_size => Ok(()),
        ref s => Err(Error::shape(
            "discriminate",
            format!(
                "expected [b, {}, {}, {}], got {s:?}",
                c.channels, c.image_size, c.image_size
            ),
        )),
    }
}

pub(crate) fn check_latent<T: Scalar>(params: &ModelParams<T>, z: &Tensor<T>) -> Result<()> {
    match *z.shape() {
        [_, d] if d == params.config.latent_dim => {}
        ref s => {
            return Err(Error::shape(
                "generate",
                format!("expected [b, {}], got {s:?}", params.config.latent_dim),
            ))
        }
    }
    if let Some(v) = z.data().iter().find(|v| !(v.abs() <= T::one())) {
        return Err(Error::OutOfRange {
            what: "latent component",
            value: v.to_acc(),
            range: "[-1, 1]",
        });
    }
    Ok(())
}

/// Reconstruction `D(x)` with frozen parameters.
pub fn discriminate<T: Scalar>(params: &ModelParams<T>, x: &Tensor<T>, carry: T) -> Result<Tensor<T>> {
    check_image(params, x)?;
    check_carry(carry.to_acc())?;
    let mut tape = Tape::new();
    let enc = params.encoder.bind(&mut tape, false);
    let dec = params.decoder.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let h = encode(&mut tape, &params.config.encoder_layout(), &enc, xv, carry)?;
    let y = decode(&mut tape, &params.config.decoder_layout(), &dec, h, carry)?;
    Ok(tape.value(y).clone())
}

/// `G(z)` with frozen parameters. Rejects latent components outside `[-1, 1]`.
pub fn generate<T: Scalar>(params: &ModelParams<T>, z: &Tensor<T>, carry: T) -> Result<Tensor<T>> {
    check_latent(params, z)?;
    check_carry(carry.to_acc())?;
    let mut tape = Tape::new();
    let gen = params.generator.bind(&mut tape, false);
    let zv = tape.constant(z.clone());
    let y = decode(&mut tape, &params.config.generator_layout(), &gen, zv, carry)?;
    Ok(tape.value(y).clone())
}
