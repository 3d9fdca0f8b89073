//! Loop-by-loop reference networks, losses and Adam, written without the tape.

use std::collections::HashMap;

use began_core::nn::{ArchConfig, ModelParams};

#[derive(Clone, Debug)]
pub struct Img {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Img {
    pub fn zeros(b: usize, c: usize, h: usize, w: usize) -> Self {
        Img {
            b,
            c,
            h,
            w,
            data: vec![0.0; b * c * h * w],
        }
    }

    fn at(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

pub type Grads = HashMap<String, Vec<f64>>;
pub type Weights = HashMap<String, Vec<f64>>;

pub fn weights_of(params: &ModelParams<f64>) -> Weights {
    params
        .sets()
        .iter()
        .flat_map(|(_, set)| set.iter())
        .map(|p| (p.name.clone(), p.value.data().to_vec()))
        .collect()
}

fn add_into(grads: &mut Grads, name: &str, g: Vec<f64>) {
    match grads.get_mut(name) {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => {
            grads.insert(name.to_string(), g);
        }
    }
}

pub fn conv(x: &Img, w: &[f64], bias: &[f64]) -> Img {
    let co = bias.len();
    let mut out = Img::zeros(x.b, co, x.h, x.w);
    for n in 0..x.b {
        for o in 0..co {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let mut s = bias[o];
                    for i in 0..x.c {
                        for dy in 0..3 {
                            for dx in 0..3 {
                                let (sy, sx) = (y as isize + dy as isize - 1, xx as isize + dx as isize - 1);
                                if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                    continue;
                                }
                                s += w[((o * x.c + i) * 3 + dy) * 3 + dx] * x.data[x.at(n, i, sy as usize, sx as usize)];
                            }
                        }
                    }
                    let idx = out.at(n, o, y, xx);
                    out.data[idx] = s;
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw, db)`.
pub fn conv_back(x: &Img, w: &[f64], gy: &Img) -> (Img, Vec<f64>, Vec<f64>) {
    let co = gy.c;
    let mut gx = Img::zeros(x.b, x.c, x.h, x.w);
    let mut gw = vec![0.0; co * x.c * 9];
    let mut gb = vec![0.0; co];
    for n in 0..x.b {
        for o in 0..co {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let g = gy.data[gy.at(n, o, y, xx)];
                    gb[o] += g;
                    for i in 0..x.c {
                        for dy in 0..3 {
                            for dx in 0..3 {
                                let (sy, sx) = (y as isize + dy as isize - 1, xx as isize + dx as isize - 1);
                                if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                    continue;
                                }
                                let src = x.at(n, i, sy as usize, sx as usize);
                                let k = ((o * x.c + i) * 3 + dy) * 3 + dx;
                                gw[k] += g * x.data[src];
                                gx.data[src] += g * w[k];
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

/// `y[r][o] = b[o] + sum_i w[o][i] x[r][i]`.
pub fn fc(x: &[f64], rows: usize, w: &[f64], bias: &[f64]) -> Vec<f64> {
    let (n_out, n_in) = (bias.len(), x.len() / rows);
    let mut y = vec![0.0; rows * n_out];
    for r in 0..rows {
        for o in 0..n_out {
            let mut s = bias[o];
            for i in 0..n_in {
                s += w[o * n_in + i] * x[r * n_in + i];
            }
            y[r * n_out + o] = s;
        }
    }
    y
}

pub fn fc_back(x: &[f64], rows: usize, w: &[f64], gy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n_in = x.len() / rows;
    let n_out = gy.len() / rows;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; n_out];
    for r in 0..rows {
        for o in 0..n_out {
            let g = gy[r * n_out + o];
            gb[o] += g;
            for i in 0..n_in {
                gw[o * n_in + i] += g * x[r * n_in + i];
                gx[r * n_in + i] += g * w[o * n_in + i];
            }
        }
    }
    (gx, gw, gb)
}

fn elu(v: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        v.exp() - 1.0
    }
}

fn elu_slope(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        v.exp()
    }
}

fn subsample(x: &Img) -> Img {
    let mut out = Img::zeros(x.b, x.c, x.h / 2, x.w / 2);
    for n in 0..x.b {
        for c in 0..x.c {
            for y in 0..x.h / 2 {
                for xx in 0..x.w / 2 {
                    let i = out.at(n, c, y, xx);
                    out.data[i] = x.data[x.at(n, c, 2 * y, 2 * xx)];
                }
            }
        }
    }
    out
}

fn subsample_back(x: &Img, g: &Img) -> Img {
    let mut gx = Img::zeros(x.b, x.c, x.h, x.w);
    for n in 0..g.b {
        for c in 0..g.c {
            for y in 0..g.h {
                for xx in 0..g.w {
                    let i = gx.at(n, c, 2 * y, 2 * xx);
                    gx.data[i] = g.data[g.at(n, c, y, xx)];
                }
            }
        }
    }
    gx
}

/// Nearest-neighbour enlargement by an integer factor.
fn enlarge(x: &Img, f: usize) -> Img {
    let mut out = Img::zeros(x.b, x.c, x.h * f, x.w * f);
    for n in 0..x.b {
        for c in 0..x.c {
            for y in 0..x.h * f {
                for xx in 0..x.w * f {
                    let i = out.at(n, c, y, xx);
                    out.data[i] = x.data[x.at(n, c, y / f, xx / f)];
                }
            }
        }
    }
    out
}

fn enlarge_back(g: &Img, f: usize) -> Img {
    let mut gx = Img::zeros(g.b, g.c, g.h / f, g.w / f);
    for n in 0..g.b {
        for c in 0..g.c {
            for y in 0..g.h {
                for xx in 0..g.w {
                    let i = gx.at(n, c, y / f, xx / f);
                    gx.data[i] += g.data[g.at(n, c, y, xx)];
                }
            }
        }
    }
    gx
}

fn concat(a: &Img, b: &Img) -> Img {
    let mut out = Img::zeros(a.b, a.c + b.c, a.h, a.w);
    for n in 0..a.b {
        for c in 0..a.c + b.c {
            for y in 0..a.h {
                for x in 0..a.w {
                    let v = if c < a.c {
                        a.data[a.at(n, c, y, x)]
                    } else {
                        b.data[b.at(n, c - a.c, y, x)]
                    };
                    let i = out.at(n, c, y, x);
                    out.data[i] = v;
                }
            }
        }
    }
    out
}

fn split(g: &Img, ca: usize) -> (Img, Img) {
    let mut a = Img::zeros(g.b, ca, g.h, g.w);
    let mut b = Img::zeros(g.b, g.c - ca, g.h, g.w);
    for n in 0..g.b {
        for c in 0..g.c {
            for y in 0..g.h {
                for x in 0..g.w {
                    let v = g.data[g.at(n, c, y, x)];
                    if c < ca {
                        let i = a.at(n, c, y, x);
                        a.data[i] = v;
                    } else {
                        let i = b.at(n, c - ca, y, x);
                        b.data[i] = v;
                    }
                }
            }
        }
    }
    (a, b)
}

#[derive(Clone, Debug)]
enum Layer {
    /// Convolution, ELU, and optionally the vanishing-residual mix.
    Conv { name: String, residual: bool },
    Subsample,
    Upsample,
    /// Concatenate the enlarged 8×8 projection as extra channels.
    Skip,
    Flatten,
    /// Reshape to `[b, c, 8, 8]`; its output is the skip source.
    Unflatten { c: usize },
    Fc { name: String },
    OutConv { name: String },
}

/// Input to a layer plus what its backward step needs.
#[derive(Clone, Debug)]
enum Saved {
    Img(Img),
    Flat(Vec<f64>, usize),
    Conv { x: Img, pre: Img },
}

pub struct Net {
    layers: Vec<Layer>,
}

fn levels(cfg: &ArchConfig) -> usize {
    (cfg.image_size / 8).trailing_zeros() as usize + 1
}

impl Net {
    pub fn encoder(cfg: &ArchConfig) -> Net {
        let mut layers = Vec::new();
        let mut c_in = cfg.channels;
        for i in 0..levels(cfg) {
            if i > 0 {
                layers.push(Layer::Subsample);
            }
            let c = (i + 1) * cfg.base_filters;
            for r in 0..cfg.repeats_per_block {
                layers.push(Layer::Conv {
                    name: format!("enc.l{i}.c{r}"),
                    residual: cfg.use_vanishing_residuals && c_in == c,
                });
                c_in = c;
            }
        }
        layers.push(Layer::Flatten);
        layers.push(Layer::Fc { name: "enc.fc".into() });
        Net { layers }
    }

    pub fn decoder(cfg: &ArchConfig, prefix: &str) -> Net {
        let n = cfg.base_filters;
        let mut layers = vec![Layer::Fc { name: format!("{prefix}.fc") }, Layer::Unflatten { c: n }];
        for j in 0..levels(cfg) {
            let mut c_in = n;
            if j > 0 {
                layers.push(Layer::Upsample);
                if cfg.use_skip_connections {
                    layers.push(Layer::Skip);
                    c_in = 2 * n;
                }
            }
            for r in 0..cfg.repeats_per_block {
                layers.push(Layer::Conv {
                    name: format!("{prefix}.l{j}.c{r}"),
                    residual: cfg.use_vanishing_residuals && c_in == n,
                });
                c_in = n;
            }
        }
        layers.push(Layer::OutConv { name: format!("{prefix}.out") });
        Net { layers }
    }

    pub fn then(mut self, other: Net) -> Net {
        self.layers.extend(other.layers);
        self
    }
}

/// Activation flowing through a [`Net`]: an image or a `[rows, width]` matrix.
#[derive(Clone, Debug)]
pub enum Act {
    Img(Img),
    Flat(Vec<f64>, usize),
}

impl Act {
    pub fn img(self) -> Img {
        match self {
            Act::Img(i) => i,
            Act::Flat(..) => panic!("expected an image"),
        }
    }
}

pub struct Trace {
    saved: Vec<Saved>,
}

pub fn forward(net: &Net, w: &Weights, input: Act, carry: f64) -> (Act, Trace) {
    let mut saved = Vec::new();
    let mut h0: Option<Img> = None;
    let mut cur = input;
    for layer in &net.layers {
        cur = match (layer, cur) {
            (Layer::Conv { name, residual }, Act::Img(x)) => {
                let pre = conv(&x, &w[&format!("{name}.w")], &w[&format!("{name}.b")]);
                let mut y = pre.clone();
                for (i, v) in y.data.iter_mut().enumerate() {
                    let e = elu(pre.data[i]);
                    *v = if *residual { carry * x.data[i] + (1.0 - carry) * e } else { e };
                }
                saved.push(Saved::Conv { x, pre });
                Act::Img(y)
            }
            (Layer::OutConv { name }, Act::Img(x)) => {
                let y = conv(&x, &w[&format!("{name}.w")], &w[&format!("{name}.b")]);
                saved.push(Saved::Img(x));
                Act::Img(y)
            }
            (Layer::Subsample, Act::Img(x)) => {
                let y = subsample(&x);
                saved.push(Saved::Img(x));
                Act::Img(y)
            }
            (Layer::Upsample, Act::Img(x)) => {
                let y = enlarge(&x, 2);
                saved.push(Saved::Img(x));
                Act::Img(y)
            }
            (Layer::Skip, Act::Img(x)) => {
                let src = h0.as_ref().expect("skip after projection");
                let y = concat(&x, &enlarge(src, x.h / src.h));
                saved.push(Saved::Img(x));
                Act::Img(y)
            }
            (Layer::Flatten, Act::Img(x)) => {
                let rows = x.b;
                saved.push(Saved::Img(x.clone()));
                Act::Flat(x.data, rows)
            }
            (Layer::Unflatten { c }, Act::Flat(v, rows)) => {
                saved.push(Saved::Flat(v.clone(), rows));
                let img = Img {
                    b: rows,
                    c: *c,
                    h: 8,
                    w: 8,
                    data: v,
                };
                h0 = Some(img.clone());
                Act::Img(img)
            }
            (Layer::Fc { name }, Act::Flat(v, rows)) => {
                let y = fc(&v, rows, &w[&format!("{name}.w")], &w[&format!("{name}.b")]);
                saved.push(Saved::Flat(v, rows));
                Act::Flat(y, rows)
            }
            (l, _) => panic!("layer {l:?} got the wrong activation kind"),
        };
    }
    (cur, Trace { saved })
}

/// Chain rule from the output gradient back to parameter and input gradients.
pub fn backward(net: &Net, w: &Weights, trace: &Trace, grad_out: Act, carry: f64, grads: &mut Grads) -> Act {
    let mut g = grad_out;
    let mut g_h0: Option<Img> = None;
    for (layer, saved) in net.layers.iter().zip(&trace.saved).rev() {
        g = match (layer, saved, g) {
            (Layer::Conv { name, residual }, Saved::Conv { x, pre }, Act::Img(gy)) => {
                let mut gpre = gy.clone();
                for (i, v) in gpre.data.iter_mut().enumerate() {
                    let through = if *residual { (1.0 - carry) * gy.data[i] } else { gy.data[i] };
                    *v = through * elu_slope(pre.data[i]);
                }
                let (mut gx, gw, gb) = conv_back(x, &w[&format!("{name}.w")], &gpre);
                if *residual {
                    gx.data.iter_mut().zip(&gy.data).for_each(|(a, b)| *a += carry * b);
                }
                add_into(grads, &format!("{name}.w"), gw);
                add_into(grads, &format!("{name}.b"), gb);
                Act::Img(gx)
            }
            (Layer::OutConv { name }, Saved::Img(x), Act::Img(gy)) => {
                let (gx, gw, gb) = conv_back(x, &w[&format!("{name}.w")], &gy);
                add_into(grads, &format!("{name}.w"), gw);
                add_into(grads, &format!("{name}.b"), gb);
                Act::Img(gx)
            }
            (Layer::Subsample, Saved::Img(x), Act::Img(gy)) => Act::Img(subsample_back(x, &gy)),
            (Layer::Upsample, Saved::Img(_), Act::Img(gy)) => Act::Img(enlarge_back(&gy, 2)),
            (Layer::Skip, Saved::Img(x), Act::Img(gy)) => {
                let (gx, gs) = split(&gy, x.c);
                let gsrc = enlarge_back(&gs, x.h / 8);
                match g_h0.as_mut() {
                    Some(acc) => acc.data.iter_mut().zip(&gsrc.data).for_each(|(a, b)| *a += b),
                    None => g_h0 = Some(gsrc),
                }
                Act::Img(gx)
            }
            (Layer::Flatten, Saved::Img(x), Act::Flat(gv, _)) => Act::Img(Img { data: gv, ..x.clone() }),
            (Layer::Unflatten { .. }, Saved::Flat(_, rows), Act::Img(mut gy)) => {
                if let Some(extra) = g_h0.take() {
                    gy.data.iter_mut().zip(&extra.data).for_each(|(a, b)| *a += b);
                }
                Act::Flat(gy.data, *rows)
            }
            (Layer::Fc { name }, Saved::Flat(x, rows), Act::Flat(gy, _)) => {
                let (gx, gw, gb) = fc_back(x, *rows, &w[&format!("{name}.w")], &gy);
                add_into(grads, &format!("{name}.w"), gw);
                add_into(grads, &format!("{name}.b"), gb);
                Act::Flat(gx, *rows)
            }
            (l, _, _) => panic!("inconsistent trace at {l:?}"),
        };
    }
    g
}

/// `(loss, dL/dv, dL/dr)` for the per-sample-mean, batch-mean reconstruction loss.
pub fn recon_loss(v: &Img, r: &Img, eta: u32) -> (f64, Img, Img) {
    let per = (v.c * v.h * v.w) as f64;
    let scale = 1.0 / (per * v.b as f64);
    let mut gv = v.clone();
    let mut sums = vec![0.0; v.b];
    let plane = v.c * v.h * v.w;
    for (i, (&a, &b)) in v.data.iter().zip(&r.data).enumerate() {
        let d = a - b;
        let (val, slope) = if eta == 1 {
            (d.abs(), if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 })
        } else {
            (d * d, 2.0 * d)
        };
        sums[i / plane] += val;
        gv.data[i] = slope * scale;
    }
    let loss = sums.iter().map(|s| s / per).sum::<f64>() / v.b as f64;
    let mut gr = gv.clone();
    gr.data.iter_mut().for_each(|g| *g = -*g);
    (loss, gv, gr)
}

pub struct Models {
    pub cfg: ArchConfig,
    pub disc: Net,
    pub gen: Net,
}

impl Models {
    pub fn new(cfg: &ArchConfig) -> Self {
        Models {
            cfg: cfg.clone(),
            disc: Net::encoder(cfg).then(Net::decoder(cfg, "dec")),
            gen: Net::decoder(cfg, "gen"),
        }
    }

    fn latent(&self, z: &[f64]) -> Act {
        Act::Flat(z.to_vec(), z.len() / self.cfg.latent_dim)
    }

    pub fn generate(&self, w: &Weights, z: &[f64], carry: f64) -> Img {
        forward(&self.gen, w, self.latent(z), carry).0.img()
    }

    pub fn reconstruct(&self, w: &Weights, x: &Img, carry: f64) -> Img {
        forward(&self.disc, w, Act::Img(x.clone()), carry).0.img()
    }
}

pub struct StepOut {
    pub loss_real: f64,
    pub loss_fake_d: f64,
    pub loss_fake_g: f64,
    pub grads_d: Grads,
    pub grads_g: Grads,
}

/// Both objective gradients: `L(x) - k L(G(z_D))` for the discriminator and
/// `L(G(z_G))` for the generator, each with the other network held fixed.
pub fn objective_grads(m: &Models, w: &Weights, x: &Img, z_d: &[f64], z_g: &[f64], k: f64, eta: u32, carry: f64) -> StepOut {
    let mut grads_d = Grads::new();

    let (rx, tx) = forward(&m.disc, w, Act::Img(x.clone()), carry);
    let (loss_real, _, gr) = recon_loss(x, &rx.img(), eta);
    backward(&m.disc, w, &tx, Act::Img(gr), carry, &mut grads_d);

    let fake_d = m.generate(w, z_d, carry);
    let (rfd, tfd) = forward(&m.disc, w, Act::Img(fake_d.clone()), carry);
    let (loss_fake_d, _, mut gr) = recon_loss(&fake_d, &rfd.img(), eta);
    gr.data.iter_mut().for_each(|g| *g *= -k);
    backward(&m.disc, w, &tfd, Act::Img(gr), carry, &mut grads_d);

    let (fake_g, tg) = forward(&m.gen, w, m.latent(z_g), carry);
    let fake_g = fake_g.img();
    let (rfg, tfg) = forward(&m.disc, w, Act::Img(fake_g.clone()), carry);
    let (loss_fake_g, gv, gr) = recon_loss(&fake_g, &rfg.img(), eta);
    let mut unused = Grads::new();
    let through_d = backward(&m.disc, w, &tfg, Act::Img(gr), carry, &mut unused).img();
    let mut g_fake = gv;
    g_fake.data.iter_mut().zip(&through_d.data).for_each(|(a, b)| *a += b);
    let mut grads_g = Grads::new();
    backward(&m.gen, w, &tg, Act::Img(g_fake), carry, &mut grads_g);

    StepOut {
        loss_real,
        loss_fake_d,
        loss_fake_g,
        grads_d,
        grads_g,
    }
}

/// One bias-corrected Adam update with `(0.9, 0.999, 1e-8)`; `t` is the post-increment step count.
pub fn adam(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64) {
    let c1 = 1.0 - 0.9f64.powi(t as i32);
    let c2 = 1.0 - 0.999f64.powi(t as i32);
    for i in 0..p.len() {
        m[i] = 0.9 * m[i] + 0.1 * g[i];
        v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
    }
}

/// Largest absolute disagreements between the library and the reference after one step.
#[derive(Debug, Clone, Copy)]
pub struct StepComparison {
    pub params: f64,
    pub moments: f64,
    pub losses: f64,
    pub k: f64,
}

impl StepComparison {
    pub fn max(&self) -> f64 {
        self.params.max(self.moments).max(self.losses).max(self.k)
    }
}

fn img_of(t: &began_core::tensor::Tensor<f64>) -> Img {
    let s = t.shape();
    Img {
        b: s[0],
        c: s[1],
        h: s[2],
        w: s[3],
        data: t.data().to_vec(),
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One `train_step_with_latents` on a two-image batch against the reference
/// forward, chain rule and Adam. Both optimizers start from a random
/// mid-run state so the update depends on gradient magnitudes, not just signs.
pub fn single_step_comparison(cfg: &ArchConfig, eta: u32, carry: f64, seed: u64) -> StepComparison {
    use began_core::data::{Dataset, ShapeFamily, SyntheticDataset, SyntheticSpec};
    use began_core::engine::{train_step_with_latents, EquilibriumController, Norm, Optimizers, StepSettings};
    use began_core::latent::sample_z_tensor;
    use began_core::nn::build_models;
    use began_core::optim::AdamState;
    use began_core::rng::RunRng;
    use began_core::tensor::Tensor;
    use rand::Rng;

    let mut rng = RunRng::new(seed, 99);
    let mut params = build_models::<f64>(cfg, seed).unwrap();
    let ds = SyntheticDataset {
        spec: SyntheticSpec::new(ShapeFamily::Ellipses, seed),
        items: 2,
        channels: cfg.channels,
        image_size: cfg.image_size,
    };
    let mut pixels = ds.item(0).unwrap();
    pixels.extend(ds.item(1).unwrap());
    let batch = Tensor::from_f64(vec![2, cfg.channels, cfg.image_size, cfg.image_size], &pixels).unwrap();
    let z_d = sample_z_tensor::<f64, _>(&mut rng, 2, cfg.latent_dim);
    let z_g = sample_z_tensor::<f64, _>(&mut rng, 2, cfg.latent_dim);

    let lr = 2e-3;
    let mut opt = Optimizers::new(&params, lr);
    let mut scramble = |st: &mut AdamState<f64>| {
        st.t = 7;
        for m in &mut st.m {
            m.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1e-3..1e-3));
        }
        for v in &mut st.v {
            v.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(1e-8..1e-5));
        }
    };
    scramble(&mut opt.discriminator);
    scramble(&mut opt.generator);
    let mut ctrl = EquilibriumController::new(0.5, 0.001).unwrap();
    ctrl.k = 0.37;

    // reference
    let models = Models::new(cfg);
    let w = weights_of(&params);
    let out = objective_grads(&models, &w, &img_of(&batch), z_d.data(), z_g.data(), ctrl.k, eta, carry);
    let mut expected_params = w.clone();
    let mut expected_moments: HashMap<String, (Vec<f64>, Vec<f64>)> = HashMap::new();
    let d_names: Vec<String> = params.encoder.iter().chain(params.decoder.iter()).map(|p| p.name.clone()).collect();
    let g_names: Vec<String> = params.generator.iter().map(|p| p.name.clone()).collect();
    for (names, st, grads) in [
        (&d_names, &opt.discriminator, &out.grads_d),
        (&g_names, &opt.generator, &out.grads_g),
    ] {
        for (i, name) in names.iter().enumerate() {
            let mut m = st.m[i].data().to_vec();
            let mut v = st.v[i].data().to_vec();
            let p = expected_params.get_mut(name).unwrap();
            let zero = vec![0.0; p.len()];
            let g = grads.get(name).unwrap_or(&zero);
            adam(p, g, &mut m, &mut v, st.t + 1, lr);
            expected_moments.insert(name.clone(), (m, v));
        }
    }
    let mut expected_ctrl = ctrl.clone();
    expected_ctrl.k = (ctrl.k + 0.001 * (0.5 * out.loss_real - out.loss_fake_g)).clamp(0.0, 1.0);

    // library
    let settings = StepSettings {
        step: 0,
        norm: Norm::from_exponent(eta).unwrap(),
        carry,
    };
    let record = train_step_with_latents(&mut params, &mut opt, &mut ctrl, &batch, &z_d, &z_g, settings).unwrap();

    let mut cmp = StepComparison {
        params: 0.0,
        moments: 0.0,
        losses: 0.0,
        k: (ctrl.k - expected_ctrl.k).abs(),
    };
    for (_, set) in params.sets() {
        for p in set.iter() {
            cmp.params = cmp.params.max(max_diff(p.value.data(), &expected_params[&p.name]));
        }
    }
    for (names, st) in [(&d_names, &opt.discriminator), (&g_names, &opt.generator)] {
        for (i, name) in names.iter().enumerate() {
            let (m, v) = &expected_moments[name];
            cmp.moments = cmp.moments.max(max_diff(st.m[i].data(), m)).max(max_diff(st.v[i].data(), v));
        }
    }
    cmp.losses = (record.loss_real - out.loss_real)
        .abs()
        .max((record.loss_fake_d - out.loss_fake_d).abs())
        .max((record.loss_fake_g - out.loss_fake_g).abs());
    cmp
}
