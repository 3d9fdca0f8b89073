//! Latent sampling, inversion of the generator by gradient descent, and
//! linear interpolation between latent points.

use rand::Rng;

use crate::engine::{tape_autoencoder_loss, Norm};
use crate::error::{Error, Result};
use crate::nn::{decode, generate, ModelParams};
use crate::optim::AdamState;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

/// A latent vector with every component in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPoint<T>(Vec<T>);

impl<T: Scalar> LatentPoint<T> {
    pub fn new(z: Vec<T>) -> Result<Self> {
        if let Some(v) = z.iter().find(|v| !(v.abs() <= T::one())) {
            return Err(Error::OutOfRange {
                what: "latent component",
                value: v.to_acc(),
                range: "[-1, 1]",
            });
        }
        Ok(LatentPoint(z))
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Row vector `[1, N_z]`.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_vec(vec![1, self.0.len()], self.0.clone()).expect("shape")
    }

    /// `[n, N_z]` batch of points.
    pub fn stack(points: &[LatentPoint<T>]) -> Result<Tensor<T>> {
        let dim = points
            .first()
            .ok_or_else(|| Error::shape("stack", "no latent points"))?
            .dim();
        let mut data = Vec::with_capacity(dim * points.len());
        for p in points {
            if p.dim() != dim {
                return Err(Error::shape("stack", "latent dimensions differ"));
            }
            data.extend_from_slice(&p.0);
        }
        Tensor::from_vec(vec![points.len(), dim], data)
    }

    fn project(z: &[T]) -> Self {
        LatentPoint(z.iter().map(|v| v.max(-T::one()).min(T::one())).collect())
    }
}

fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::from_acc(2.0 * rng.gen::<f64>() - 1.0)
}

/// `batch` i.i.d. uniform points in `[-1, 1]^nz`.
pub fn sample_z<T: Scalar, R: Rng + ?Sized>(rng: &mut R, batch: usize, nz: usize) -> Vec<LatentPoint<T>> {
    (0..batch)
        .map(|_| LatentPoint((0..nz).map(|_| uniform(rng)).collect()))
        .collect()
}

/// Same draws as [`sample_z`], laid out as a `[batch, nz]` tensor.
pub fn sample_z_tensor<T: Scalar, R: Rng + ?Sized>(rng: &mut R, batch: usize, nz: usize) -> Tensor<T> {
    let data = (0..batch * nz).map(|_| uniform(rng)).collect();
    Tensor::from_vec(vec![batch, nz], data).expect("shape")
}

#[derive(Clone, Debug)]
pub struct EmbedOptions {
    pub steps: usize,
    pub learning_rate: f64,
    /// Independent random initializations; the best result is kept.
    pub restarts: usize,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        EmbedOptions {
            steps: 200,
            learning_rate: 0.01,
            restarts: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmbeddingResult<T> {
    /// Best latent found.
    pub z: LatentPoint<T>,
    /// `e_r` at the start point and after every step.
    pub error_trace: Vec<f64>,
    /// `e_r` of `z`.
    pub error: f64,
}

impl<T> EmbeddingResult<T> {
    pub fn initial_error(&self) -> f64 {
        self.error_trace.first().copied().unwrap_or(f64::NAN)
    }
}

fn check_target<T: Scalar>(params: &ModelParams<T>, x_r: &Tensor<T>) -> Result<Tensor<T>> {
    let c = &params.config;
    let want3 = [c.channels, c.image_size, c.image_size];
    match x_r.shape() {
        s if s == want3 => x_r.reshape(vec![1, c.channels, c.image_size, c.image_size]),
        s if s.len() == 4 && s[0] == 1 && s[1..] == want3 => Ok(x_r.clone()),
        s => Err(Error::shape(
            "embed_image",
            format!("target {s:?} for a {want3:?} model"),
        )),
    }
}

/// Minimize `e_r = mean|x_r - G(z)|` over `z` with Adam from `init`,
/// projecting `z` into `[-1, 1]` after every step. Returns the best point seen.
pub fn embed_from<T: Scalar>(
    params: &ModelParams<T>,
    x_r: &Tensor<T>,
    init: LatentPoint<T>,
    steps: usize,
    learning_rate: f64,
) -> Result<EmbeddingResult<T>> {
    let target = check_target(params, x_r)?;
    if init.dim() != params.config.latent_dim {
        return Err(Error::shape("embed_image", "initial latent has the wrong dimension"));
    }
    let layout = params.config.generator_layout();
    let mut z = init.to_tensor();
    let mut adam = AdamState::new([&z], learning_rate);
    let mut trace = Vec::with_capacity(steps + 1);
    let mut best = (f64::INFINITY, init);

    for i in 0..=steps {
        let mut tape = Tape::new();
        let gen = params.generator.bind(&mut tape, false);
        let zv = tape.leaf(z.clone(), true);
        let out = decode(&mut tape, &layout, &gen, zv, T::zero())?;
        let tv = tape.constant(target.clone());
        let e = tape_autoencoder_loss(&mut tape, tv, out, Norm::L1)?;
        let err = tape.value(e).data()[0].to_acc();
        if !err.is_finite() {
            return Err(Error::NonFinite { op: "embed_image" });
        }
        trace.push(err);
        if err < best.0 {
            best = (err, LatentPoint(z.data().to_vec()));
        }
        if i == steps {
            break;
        }
        let grads = tape.backward(e)?;
        let g = grads.wrt(zv, &z);
        adam.step([&mut z], &[g], &["z"])?;
        let projected = LatentPoint::project(z.data());
        z.data_mut().copy_from_slice(projected.values());
    }
    Ok(EmbeddingResult {
        z: best.1,
        error_trace: trace,
        error: best.0,
    })
}

/// Embed a real image starting from uniform random latents.
pub fn embed_image<T: Scalar, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    x_r: &Tensor<T>,
    options: &EmbedOptions,
    rng: &mut R,
) -> Result<EmbeddingResult<T>> {
    let mut best: Option<EmbeddingResult<T>> = None;
    for _ in 0..options.restarts.max(1) {
        let init = sample_z(rng, 1, params.config.latent_dim).remove(0);
        let r = embed_from(params, x_r, init, options.steps, options.learning_rate)?;
        if best.as_ref().is_none_or(|b| r.error < b.error) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// `count` evenly spaced points from `a` to `b`, both endpoints included exactly.
pub fn interpolate<T: Scalar>(a: &LatentPoint<T>, b: &LatentPoint<T>, count: usize) -> Result<Vec<LatentPoint<T>>> {
    if count < 2 {
        return Err(Error::OutOfRange {
            what: "interpolation count",
            value: count as f64,
            range: "[2, inf)",
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::shape("interpolate", format!("{} vs {}", a.dim(), b.dim())));
    }
    let last = count - 1;
    Ok((0..count)
        .map(|i| {
            if i == 0 {
                return a.clone();
            }
            if i == last {
                return b.clone();
            }
            let t = T::from_acc(i as f64 / last as f64);
            let z: Vec<T> = a.0.iter().zip(&b.0).map(|(&x, &y)| x + t * (y - x)).collect();
            LatentPoint::project(&z)
        })
        .collect())
}

pub struct MirrorInterpolation<T> {
    pub original: EmbeddingResult<T>,
    pub mirrored: EmbeddingResult<T>,
    /// Decoded frames from the original's embedding to the mirror's.
    pub frames: Vec<Tensor<T>>,
}

/// Embed `x_r` and its horizontal mirror, then decode `count` points between the two embeddings.
pub fn mirror_interpolate<T: Scalar, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    x_r: &Tensor<T>,
    options: &EmbedOptions,
    count: usize,
    rng: &mut R,
) -> Result<MirrorInterpolation<T>> {
    let mirror = x_r.flip_horizontal()?;
    let original = embed_image(params, x_r, options, rng)?;
    let mirrored = embed_image(params, &mirror, options, rng)?;
    let frames = decode_points(params, &interpolate(&original.z, &mirrored.z, count)?)?;
    Ok(MirrorInterpolation {
        original,
        mirrored,
        frames,
    })
}

/// `G(z)` for each point, one `[C, H, W]` image per point.
pub fn decode_points<T: Scalar>(params: &ModelParams<T>, points: &[LatentPoint<T>]) -> Result<Vec<Tensor<T>>> {
    let z = LatentPoint::stack(points)?;
    let images = generate(params, &z, T::zero())?;
    (0..points.len()).map(|i| images.batch_item(i)).collect()
}
