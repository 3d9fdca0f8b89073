//! Central finite-difference checks of every recorded op and of both objectives.

use began_core::engine::{tape_autoencoder_loss, Norm};
use began_core::nn::{
    build_models, decode, discriminate, encode, tape_residual_mix, tape_skip_concat, ArchConfig, ModelParams,
};
use began_core::tensor::{Tape, Tensor, Var};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error: the difference quotient carries
/// about `1e-10` of rounding noise, which dominates gradients below this.
pub const FLOOR: f64 = 1e-5;
pub const CASES: usize = 20;
/// Coordinates probed per input tensor; smaller tensors are probed exhaustively.
const PROBES: usize = 48;

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

pub struct Case {
    pub inputs: Vec<Tensor<f64>>,
    pub f: Build,
}

#[derive(Debug, Clone)]
pub struct OpReport {
    pub op: &'static str,
    pub cases: usize,
    pub checked: usize,
    pub max_rel: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.cases >= CASES && self.max_rel <= TOLERANCE
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_f64(shape.to_vec(), &data).unwrap()
}

/// Away from zero by at least `gap`, for ops with a kink there.
fn random_off_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let t = random(rng, shape, -1.0, 1.0);
    t.map(|v| if v.abs() < gap { v.signum() * gap + v } else { v })
}

fn eval(case: &Case, inputs: &[Tensor<f64>], grads: bool, head: &dyn Fn(&mut Tape<f64>, Var) -> Var) -> (f64, Vec<Tensor<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = (case.f)(&mut tape, &vars);
    let loss = head(&mut tape, out);
    let value = tape.value(loss).data()[0];
    if !grads {
        return (value, Vec::new());
    }
    let g = tape.backward(loss).unwrap();
    (value, vars.iter().zip(inputs).map(|(&v, t)| g.wrt(v, t)).collect())
}

/// Analytic against central differences on up to [`PROBES`] coordinates per input.
/// A scalar-valued build is checked as is; anything else is reduced by
/// `mean((out - target)^2)` with a random target.
pub fn check_case(case: &Case, rng: &mut ChaCha8Rng) -> (usize, f64) {
    let mut probe = Tape::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| probe.constant(t.clone())).collect();
    let out = (case.f)(&mut probe, &vars);
    let out_shape = probe.value(out).shape().to_vec();
    let head: Box<dyn Fn(&mut Tape<f64>, Var) -> Var> = if out_shape.is_empty() {
        Box::new(|_, v| v)
    } else {
        let target = random(rng, &out_shape, -1.0, 1.0);
        Box::new(move |tape, v| {
            let t = tape.constant(target.clone());
            let d = tape.sub(v, t).unwrap();
            let sq = tape.square(d).unwrap();
            tape.mean(sq).unwrap()
        })
    };

    let (_, analytic) = eval(case, &case.inputs, true, &*head);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (i, input) in case.inputs.iter().enumerate() {
        let idx: Vec<usize> = if input.len() <= PROBES {
            (0..input.len()).collect()
        } else {
            sample(rng, input.len(), PROBES).into_vec()
        };
        for j in idx {
            let mut shifted = case.inputs.clone();
            let orig = input.data()[j];
            shifted[i].data_mut()[j] = orig + STEP;
            let up = eval(case, &shifted, false, &*head).0;
            shifted[i].data_mut()[j] = orig - STEP;
            let down = eval(case, &shifted, false, &*head).0;
            let numeric = (up - down) / (2.0 * STEP);
            let e = rel_err(analytic[i].data()[j], numeric);
            worst = worst.max(e);
            checked += 1;
        }
    }
    (checked, worst)
}

fn run(op: &'static str, seed: u64, build: impl Fn(&mut ChaCha8Rng) -> Case) -> OpReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OpReport {
        op,
        cases: 0,
        checked: 0,
        max_rel: 0.0,
    };
    for _ in 0..CASES {
        let case = build(&mut rng);
        let (n, worst) = check_case(&case, &mut rng);
        report.cases += 1;
        report.checked += n;
        report.max_rel = report.max_rel.max(worst);
    }
    report
}

fn dims(rng: &mut ChaCha8Rng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.gen_range(1..5)).collect()
}

fn any_dims(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = rng.gen_range(1..5);
    dims(rng, rank)
}

fn image_dims(rng: &mut ChaCha8Rng) -> [usize; 4] {
    [rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..7), rng.gen_range(1..7)]
}

fn tiny_arch(rng: &mut ChaCha8Rng) -> ArchConfig {
    let residual = rng.gen_bool(0.5);
    ArchConfig {
        image_size: if rng.gen_bool(0.8) { 16 } else { 32 },
        channels: rng.gen_range(1..3),
        base_filters: rng.gen_range(1..4),
        repeats_per_block: rng.gen_range(1..3),
        hidden_dim: rng.gen_range(1..6),
        latent_dim: rng.gen_range(1..6),
        use_skip_connections: rng.gen_bool(0.5),
        use_vanishing_residuals: residual,
        carry_decay_steps: 100,
    }
}

fn carry_for(cfg: &ArchConfig, rng: &mut ChaCha8Rng) -> f64 {
    if cfg.use_vanishing_residuals {
        rng.gen_range(0.0..1.0)
    } else {
        0.0
    }
}

/// Every op and both objectives, in a fixed order.
pub fn gradient_suite() -> Vec<OpReport> {
    let mut out = Vec::new();
    out.push(run("conv2d_3x3", 1, |rng| {
        let [b, ci, h, w] = image_dims(rng);
        let co = rng.gen_range(1..4);
        Case {
            inputs: vec![
                random(rng, &[b, ci, h, w], -1.0, 1.0),
                random(rng, &[co, ci, 3, 3], -1.0, 1.0),
                random(rng, &[co], -1.0, 1.0),
            ],
            f: Box::new(|t, v| t.conv2d_3x3(v[0], v[1], v[2]).unwrap()),
        }
    }));
    out.push(run("fully_connected", 2, |rng| {
        let (b, i, o) = (rng.gen_range(1..4), rng.gen_range(1..9), rng.gen_range(1..9));
        Case {
            inputs: vec![
                random(rng, &[b, i], -1.0, 1.0),
                random(rng, &[o, i], -1.0, 1.0),
                random(rng, &[o], -1.0, 1.0),
            ],
            f: Box::new(|t, v| t.fully_connected(v[0], v[1], v[2]).unwrap()),
        }
    }));
    out.push(run("elu", 3, |rng| {
        let shape = any_dims(rng);
        Case {
            inputs: vec![random(rng, &shape, -3.0, 3.0)],
            f: Box::new(|t, v| t.elu(v[0]).unwrap()),
        }
    }));
    out.push(run("subsample2", 4, |rng| {
        let [b, c, h, w] = image_dims(rng);
        Case {
            inputs: vec![random(rng, &[b, c, 2 * h, 2 * w], -1.0, 1.0)],
            f: Box::new(|t, v| t.subsample2(v[0]).unwrap()),
        }
    }));
    out.push(run("upsample_nearest2", 5, |rng| {
        let [b, c, h, w] = image_dims(rng);
        Case {
            inputs: vec![random(rng, &[b, c, h, w], -1.0, 1.0)],
            f: Box::new(|t, v| t.upsample_nearest2(v[0]).unwrap()),
        }
    }));
    out.push(run("concat_channels", 6, |rng| {
        let [b, c, h, w] = image_dims(rng);
        let c2 = rng.gen_range(1..4);
        Case {
            inputs: vec![random(rng, &[b, c, h, w], -1.0, 1.0), random(rng, &[b, c2, h, w], -1.0, 1.0)],
            f: Box::new(|t, v| t.concat_channels(v[0], v[1]).unwrap()),
        }
    }));
    out.push(run("add", 7, |rng| {
        let shape = any_dims(rng);
        Case {
            inputs: vec![random(rng, &shape, -1.0, 1.0), random(rng, &shape, -1.0, 1.0)],
            f: Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
        }
    }));
    out.push(run("sub", 8, |rng| {
        let shape = any_dims(rng);
        Case {
            inputs: vec![random(rng, &shape, -1.0, 1.0), random(rng, &shape, -1.0, 1.0)],
            f: Box::new(|t, v| t.sub(v[0], v[1]).unwrap()),
        }
    }));
    out.push(run("scale", 9, |rng| {
        let shape = any_dims(rng);
        let c: f64 = rng.gen_range(-2.0..2.0);
        Case {
            inputs: vec![random(rng, &shape, -1.0, 1.0)],
            f: Box::new(move |t, v| t.scale(v[0], c).unwrap()),
        }
    }));
    out.push(run("abs", 10, |rng| {
        let shape = any_dims(rng);
        Case {
            inputs: vec![random_off_zero(rng, &shape, 1e-3)],
            f: Box::new(|t, v| t.abs(v[0]).unwrap()),
        }
    }));
    out.push(run("square", 11, |rng| {
        let shape = any_dims(rng);
        Case {
            inputs: vec![random(rng, &shape, -1.0, 1.0)],
            f: Box::new(|t, v| t.square(v[0]).unwrap()),
        }
    }));
    out.push(run("mean_axes", 12, |rng| {
        let rank = rng.gen_range(1..5);
        let shape = dims(rng, rank);
        let mut axes: Vec<usize> = (0..rank).filter(|_| rng.gen_bool(0.5)).collect();
        if axes.is_empty() {
            axes.push(rng.gen_range(0..rank));
        }
        Case {
            inputs: vec![random(rng, &shape, -1.0, 1.0)],
            f: Box::new(move |t, v| t.mean_axes(v[0], &axes).unwrap()),
        }
    }));
    out.push(run("mean", 13, |rng| {
        let shape = any_dims(rng);
        Case {
            inputs: vec![random(rng, &shape, -1.0, 1.0)],
            f: Box::new(|t, v| t.mean(v[0]).unwrap()),
        }
    }));
    out.push(run("reshape", 14, |rng| {
        let shape = any_dims(rng);
        let n: usize = shape.iter().product();
        Case {
            inputs: vec![random(rng, &shape, -1.0, 1.0)],
            f: Box::new(move |t, v| t.reshape(v[0], &[1, n]).unwrap()),
        }
    }));
    out.push(run("residual_mix", 15, |rng| {
        let shape = image_dims(rng);
        let carry: f64 = rng.gen_range(0.0..1.0);
        Case {
            inputs: vec![random(rng, &shape, -1.0, 1.0), random(rng, &shape, -1.0, 1.0)],
            f: Box::new(move |t, v| tape_residual_mix(t, v[0], v[1], carry).unwrap()),
        }
    }));
    out.push(run("skip_concat", 16, |rng| {
        let [b, c, s, _] = image_dims(rng);
        let f = 1 << rng.gen_range(0..3);
        let c2 = rng.gen_range(1..4);
        Case {
            inputs: vec![random(rng, &[b, c, s, s], -1.0, 1.0), random(rng, &[b, c2, s * f, s * f], -1.0, 1.0)],
            f: Box::new(|t, v| tape_skip_concat(t, v[0], v[1]).unwrap()),
        }
    }));
    out.push(run("autoencoder_loss", 17, |rng| {
        let shape = image_dims(rng);
        let v = random(rng, &shape, -1.0, 1.0);
        // keep |v - r| off the L1 kink
        let r = random_off_zero(rng, &shape, 1e-3).map(|d| d * 0.5);
        let r = Tensor::from_vec(
            shape.to_vec(),
            v.data().iter().zip(r.data()).map(|(a, d)| a - d).collect(),
        )
        .unwrap();
        let norm = if rng.gen_bool(0.5) { Norm::L1 } else { Norm::L2 };
        Case {
            inputs: vec![v, r],
            f: Box::new(move |t, x| tape_autoencoder_loss(t, x[0], x[1], norm).unwrap()),
        }
    }));
    out.push(run("discriminator_objective", 18, discriminator_case));
    out.push(run("generator_objective", 19, generator_case));
    out
}

/// Minimum `|v - D(v)|` required before an L1 objective is differentiated numerically.
const KINK_GAP: f64 = 1e-3;

/// Distance of the closest pixel residual to the kink of `|v - D(v)|`.
fn kink_gap(params: &ModelParams<f64>, v: &Tensor<f64>, carry: f64) -> f64 {
    let r = discriminate(params, v, carry).unwrap();
    v.data().iter().zip(r.data()).map(|(a, b)| (a - b).abs()).fold(f64::INFINITY, f64::min)
}

fn latents(rng: &mut ChaCha8Rng, b: usize, nz: usize) -> Tensor<f64> {
    random(rng, &[b, nz], -1.0, 1.0)
}

/// `L(x) - k L(G(z_D))` as a function of the encoder and decoder parameters.
fn discriminator_case(rng: &mut ChaCha8Rng) -> Case {
    let cfg = tiny_arch(rng);
    let params = build_models::<f64>(&cfg, rng.gen()).unwrap();
    let carry = carry_for(&cfg, rng);
    let b = rng.gen_range(1..3);
    let x = random(rng, &[b, cfg.channels, cfg.image_size, cfg.image_size], -1.0, 1.0);
    let z = latents(rng, b, cfg.latent_dim);
    let k: f64 = rng.gen_range(0.0..1.0);
    let norm = if rng.gen_bool(0.5) { Norm::L1 } else { Norm::L2 };
    let fake = began_core::nn::generate(&params, &z, carry).unwrap();
    if norm == Norm::L1 && (kink_gap(&params, &x, carry) < KINK_GAP || kink_gap(&params, &fake, carry) < KINK_GAP) {
        return discriminator_case(rng);
    }
    let n_enc = params.encoder.len();
    let inputs: Vec<Tensor<f64>> = params.discriminator_tensors().cloned().collect();
    Case {
        inputs,
        f: Box::new(move |t, v| {
            let (enc, dec) = v.split_at(n_enc);
            let (el, dl) = (cfg.encoder_layout(), cfg.decoder_layout());
            let xv = t.constant(x.clone());
            let h = encode(t, &el, enc, xv, carry).unwrap();
            let r = decode(t, &dl, dec, h, carry).unwrap();
            let lx = tape_autoencoder_loss(t, xv, r, norm).unwrap();
            let fv = t.constant(fake.clone());
            let h = encode(t, &el, enc, fv, carry).unwrap();
            let r = decode(t, &dl, dec, h, carry).unwrap();
            let lf = tape_autoencoder_loss(t, fv, r, norm).unwrap();
            let weighted = t.scale(lf, k).unwrap();
            t.sub(lx, weighted).unwrap()
        }),
    }
}

/// `L(G(z_G))` as a function of the generator parameters.
fn generator_case(rng: &mut ChaCha8Rng) -> Case {
    let cfg = tiny_arch(rng);
    let params = build_models::<f64>(&cfg, rng.gen()).unwrap();
    let carry = carry_for(&cfg, rng);
    let b = rng.gen_range(1..3);
    let z = latents(rng, b, cfg.latent_dim);
    let norm = if rng.gen_bool(0.5) { Norm::L1 } else { Norm::L2 };
    if norm == Norm::L1 {
        let fake = began_core::nn::generate(&params, &z, carry).unwrap();
        if kink_gap(&params, &fake, carry) < KINK_GAP {
            return generator_case(rng);
        }
    }
    let disc = params.clone();
    Case {
        inputs: params.generator.tensors().cloned().collect(),
        f: Box::new(move |t, v| {
            let enc = disc.encoder.bind(t, false);
            let dec = disc.decoder.bind(t, false);
            let zv = t.constant(z.clone());
            let g = decode(t, &cfg.generator_layout(), v, zv, carry).unwrap();
            let h = encode(t, &cfg.encoder_layout(), &enc, g, carry).unwrap();
            let r = decode(t, &cfg.decoder_layout(), &dec, h, carry).unwrap();
            tape_autoencoder_loss(t, g, r, norm).unwrap()
        }),
    }
}
