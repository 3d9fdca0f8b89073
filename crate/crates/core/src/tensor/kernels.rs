//! Forward and backward kernels on plain tensors.
//!
//! All reductions (convolution, matrix products, means) accumulate in
//! `f64` in a fixed order, so results are bit-reproducible for a given
//! input regardless of the storage type.
//!
//! The 3×3 convolution works on a zero-padded copy of each plane whose row
//! pitch is `w + 2`. With that layout every tap of the kernel becomes one
//! contiguous axpy over `h * (w + 2)` elements; the two extra columns per
//! row are scratch and are dropped when the result is cropped.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Define `fn` once and, on x86-64, also compile it with AVX2 enabled,
/// picking the AVX2 copy at run time when the CPU has it. Bodies only use
/// element-wise arithmetic in a fixed order, so both copies round identically.
macro_rules! multiversion {
    ($(#[$m:meta])* $vis:vis fn $name:ident($($arg:ident: $ty:ty),* $(,)?) $(-> $ret:ty)? $body:block) => {
        $(#[$m])*
        #[inline]
        $vis fn $name($($arg: $ty),*) $(-> $ret)? {
            #[inline(always)]
            fn body($($arg: $ty),*) $(-> $ret)? $body

            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2")]
                unsafe fn avx2($($arg: $ty),*) $(-> $ret)? {
                    body($($arg),*)
                }
                if std::is_x86_feature_detected!("avx2") {
                    // SAFETY: the running CPU supports AVX2.
                    return unsafe { avx2($($arg),*) };
                }
            }
            body($($arg),*)
        }
    };
}

multiversion! {
/// Dot product with four independent partial sums combined in a fixed order.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        lanes[0] += x[0] * y[0];
        lanes[1] += x[1] * y[1];
        lanes[2] += x[2] * y[2];
        lanes[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}
}

multiversion! {
/// `acc[i] += sum_k kern[k] * src[i + offsets[k]]`, taps added in order.
fn taps9(kern: &[f64; 9], src: &[f64], p: usize, acc: &mut [f64]) {
    let n = acc.len();
    let row = |r: usize, c: usize| &src[r * p + c..r * p + c + n];
    let (s0, s1, s2) = (row(0, 0), row(0, 1), row(0, 2));
    let (s3, s4, s5) = (row(1, 0), row(1, 1), row(1, 2));
    let (s6, s7, s8) = (row(2, 0), row(2, 1), row(2, 2));
    let [k0, k1, k2, k3, k4, k5, k6, k7, k8] = *kern;
    for i in 0..n {
        let mut v = acc[i];
        v += k0 * s0[i];
        v += k1 * s1[i];
        v += k2 * s2[i];
        v += k3 * s3[i];
        v += k4 * s4[i];
        v += k5 * s5[i];
        v += k6 * s6[i];
        v += k7 * s7[i];
        v += k8 * s8[i];
        acc[i] = v;
    }
}
}

multiversion! {
/// `[sum_i g[i] * src[i + k] for k in 0..3]`, each with four fixed
/// partial-sum lanes.
fn dot3(g: &[f64], src: &[f64]) -> [f64; 3] {
    let n = g.len();
    let (a, b, c) = (&src[..n], &src[1..n + 1], &src[2..n + 2]);
    let mut la = [0.0f64; 4];
    let mut lb = [0.0f64; 4];
    let mut lc = [0.0f64; 4];
    let full = n - n % 4;
    for ((gq, (aq, bq)), cq) in g[..full]
        .chunks_exact(4)
        .zip(a[..full].chunks_exact(4).zip(b[..full].chunks_exact(4)))
        .zip(c[..full].chunks_exact(4))
    {
        for l in 0..4 {
            la[l] += gq[l] * aq[l];
            lb[l] += gq[l] * bq[l];
            lc[l] += gq[l] * cq[l];
        }
    }
    let mut out = [0.0; 3];
    for (o, (lanes, t)) in out.iter_mut().zip([(la, a), (lb, b), (lc, c)]) {
        let mut tail = 0.0;
        for j in full..n {
            tail += g[j] * t[j];
        }
        *o = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail;
    }
    out
}
}

/// [`dot3`] for each kernel row: the nine 3×3 tap correlations.
fn dot9(g: &[f64], src: &[f64], p: usize) -> [f64; 9] {
    let mut out = [0.0; 9];
    for ky in 0..3 {
        out[ky * 3..ky * 3 + 3].copy_from_slice(&dot3(g, &src[ky * p..]));
    }
    out
}

multiversion! {
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
}

fn to_f64<T: Scalar>(data: &[T]) -> Vec<f64> {
    data.iter().map(|v| v.to_acc()).collect()
}

fn from_f64<T: Scalar>(data: &[f64]) -> Vec<T> {
    data.iter().map(|&v| T::from_acc(v)).collect()
}

fn dims4<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<[usize; 4]> {
    match *t.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        ref s => Err(Error::shape(op, format!("expected rank-4 tensor, got {s:?}"))),
    }
}

/// Geometry of a zero-padded plane with row pitch `w + 2`.
#[derive(Clone, Copy)]
struct Padded {
    h: usize,
    w: usize,
}

impl Padded {
    fn pitch(self) -> usize {
        self.w + 2
    }

    /// Length of the strided output span covering all `h` rows.
    fn span(self) -> usize {
        self.h * self.pitch()
    }

    /// Buffer length: `h + 2` padded rows plus two elements of overrun for the last tap.
    fn buf_len(self) -> usize {
        (self.h + 2) * self.pitch() + 2
    }

    /// Copy a dense `h × w` plane into a padded buffer at row/column offset 1.
    /// Only the interior is written; the border must already be zero.
    fn fill<T: Scalar>(self, plane: &[T], buf: &mut [f64]) {
        let p = self.pitch();
        for y in 0..self.h {
            let dst = &mut buf[(y + 1) * p + 1..(y + 1) * p + 1 + self.w];
            for (d, s) in dst.iter_mut().zip(&plane[y * self.w..(y + 1) * self.w]) {
                *d = s.to_acc();
            }
        }
    }

    /// Copy a dense plane into the strided span layout (no offset). The
    /// scratch columns must already be zero.
    fn fill_span<T: Scalar>(self, plane: &[T], buf: &mut [f64]) {
        let p = self.pitch();
        for y in 0..self.h {
            for (d, s) in buf[y * p..y * p + self.w]
                .iter_mut()
                .zip(&plane[y * self.w..(y + 1) * self.w])
            {
                *d = s.to_acc();
            }
        }
    }

    fn crop<T: Scalar>(self, span: &[f64], plane: &mut [T]) {
        let p = self.pitch();
        for y in 0..self.h {
            for (d, s) in plane[y * self.w..(y + 1) * self.w]
                .iter_mut()
                .zip(&span[y * p..y * p + self.w])
            {
                *d = T::from_acc(*s);
            }
        }
    }
}

pub fn conv2d_3x3<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [b, c_in, h, w] = dims4("conv2d_3x3", input)?;
    let [c_out, wc_in, kh, kw] = dims4("conv2d_3x3", weights)?;
    if wc_in != c_in || kh != 3 || kw != 3 {
        return Err(Error::shape(
            "conv2d_3x3",
            format!("input {:?} with weights {:?}", input.shape(), weights.shape()),
        ));
    }
    if bias.shape() != [c_out] {
        return Err(Error::shape(
            "conv2d_3x3",
            format!("bias {:?} for {c_out} output channels", bias.shape()),
        ));
    }
    if h == 0 || w == 0 {
        return Err(Error::shape("conv2d_3x3", "empty spatial extent"));
    }
    let geo = Padded { h, w };
    let (p, span, plane) = (geo.pitch(), geo.span(), h * w);
    let wf = to_f64(weights.data());
    let mut padded = vec![0.0; c_in * geo.buf_len()];
    let mut acc = vec![0.0; span];
    let mut out = vec![T::zero(); b * c_out * plane];

    for n in 0..b {
        for ci in 0..c_in {
            let src = &input.data()[(n * c_in + ci) * plane..(n * c_in + ci + 1) * plane];
            geo.fill(src, &mut padded[ci * geo.buf_len()..(ci + 1) * geo.buf_len()]);
        }
        for co in 0..c_out {
            let b0 = bias.data()[co].to_acc();
            acc.iter_mut().for_each(|v| *v = b0);
            for ci in 0..c_in {
                let src = &padded[ci * geo.buf_len()..(ci + 1) * geo.buf_len()];
                let kern: &[f64; 9] = wf[(co * c_in + ci) * 9..(co * c_in + ci + 1) * 9].try_into().unwrap();
                taps9(kern, src, p, &mut acc);
            }
            geo.crop(&acc, &mut out[(n * c_out + co) * plane..(n * c_out + co + 1) * plane]);
        }
    }
    Tensor::from_vec(vec![b, c_out, h, w], out)
}

/// Gradients of a 3×3 same-padded convolution. `None` entries are skipped.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_3x3_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    want: [bool; 3],
) -> Result<ConvGrads<T>> {
    let [b, c_in, h, w] = dims4("conv2d_3x3_backward", input)?;
    let c_out = weights.shape()[0];
    if grad_out.shape() != [b, c_out, h, w] {
        return Err(Error::shape(
            "conv2d_3x3_backward",
            format!("upstream gradient {:?}", grad_out.shape()),
        ));
    }
    let geo = Padded { h, w };
    let (p, span, plane, blen) = (geo.pitch(), geo.span(), h * w, geo.buf_len());
    let wf = to_f64(weights.data());

    let mut grad_in = want[0].then(|| vec![T::zero(); b * c_in * plane]);
    let mut gw = want[1].then(|| vec![0.0f64; c_out * c_in * 9]);
    let mut gb = want[2].then(|| vec![0.0f64; c_out]);

    // padded upstream gradient (offset 1) for the input gradient, strided
    // upstream gradient (no offset) and padded input for the weight gradient
    let mut gpad = vec![0.0; c_out * blen];
    let mut gspan = vec![0.0; if want[1] { c_out * span } else { 0 }];
    let mut ipad = vec![0.0; c_in * blen];
    let mut acc = vec![0.0; span];

    for n in 0..b {
        let g_n = &grad_out.data()[n * c_out * plane..(n + 1) * c_out * plane];
        if let Some(gb) = gb.as_mut() {
            for co in 0..c_out {
                gb[co] += g_n[co * plane..(co + 1) * plane]
                    .iter()
                    .map(|v| v.to_acc())
                    .sum::<f64>();
            }
        }
        if let Some(gw) = gw.as_mut() {
            for co in 0..c_out {
                geo.fill_span(&g_n[co * plane..(co + 1) * plane], &mut gspan[co * span..(co + 1) * span]);
            }
            for ci in 0..c_in {
                let src = &input.data()[(n * c_in + ci) * plane..(n * c_in + ci + 1) * plane];
                geo.fill(src, &mut ipad[ci * blen..(ci + 1) * blen]);
            }
            for co in 0..c_out {
                let g = &gspan[co * span..(co + 1) * span];
                for ci in 0..c_in {
                    let sums = dot9(g, &ipad[ci * blen..(ci + 1) * blen], p);
                    let dst = &mut gw[(co * c_in + ci) * 9..(co * c_in + ci + 1) * 9];
                    for (d, v) in dst.iter_mut().zip(sums) {
                        *d += v;
                    }
                }
            }
        }
        if let Some(gi) = grad_in.as_mut() {
            for co in 0..c_out {
                geo.fill(&g_n[co * plane..(co + 1) * plane], &mut gpad[co * blen..(co + 1) * blen]);
            }
            for ci in 0..c_in {
                acc.iter_mut().for_each(|v| *v = 0.0);
                for co in 0..c_out {
                    let src = &gpad[co * blen..(co + 1) * blen];
                    let kern = &wf[(co * c_in + ci) * 9..(co * c_in + ci + 1) * 9];
                    let mut flipped = [0.0; 9];
                    for (f, k) in flipped.iter_mut().zip(kern.iter().rev()) {
                        *f = *k;
                    }
                    taps9(&flipped, src, p, &mut acc);
                }
                geo.crop(&acc, &mut gi[(n * c_in + ci) * plane..(n * c_in + ci + 1) * plane]);
            }
        }
    }

    Ok(ConvGrads {
        input: grad_in
            .map(|d| Tensor::from_vec(input.shape().to_vec(), d))
            .transpose()?,
        weights: gw
            .map(|d| Tensor::from_vec(weights.shape().to_vec(), from_f64(&d)))
            .transpose()?,
        bias: gb
            .map(|d| Tensor::from_vec(vec![c_out], from_f64(&d)))
            .transpose()?,
    })
}

pub fn fully_connected<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (b, n_in) = match *input.shape() {
        [b, n] => (b, n),
        ref s => return Err(Error::shape("fully_connected", format!("input {s:?} is not rank 2"))),
    };
    let n_out = match *weights.shape() {
        [o, i] if i == n_in => o,
        ref s => {
            return Err(Error::shape(
                "fully_connected",
                format!("weights {s:?} for input width {n_in}"),
            ))
        }
    };
    if bias.shape() != [n_out] {
        return Err(Error::shape(
            "fully_connected",
            format!("bias {:?} for {n_out} outputs", bias.shape()),
        ));
    }
    let xf = to_f64(input.data());
    let wf = to_f64(weights.data());
    let mut out = Vec::with_capacity(b * n_out);
    for r in 0..b {
        let x = &xf[r * n_in..(r + 1) * n_in];
        for o in 0..n_out {
            let v = bias.data()[o].to_acc() + dot(x, &wf[o * n_in..(o + 1) * n_in]);
            out.push(T::from_acc(v));
        }
    }
    Tensor::from_vec(vec![b, n_out], out)
}

pub struct FcGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn fully_connected_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    want: [bool; 3],
) -> Result<FcGrads<T>> {
    let (b, n_in) = (input.shape()[0], input.shape()[1]);
    let n_out = weights.shape()[0];
    if grad_out.shape() != [b, n_out] {
        return Err(Error::shape(
            "fully_connected_backward",
            format!("upstream gradient {:?}", grad_out.shape()),
        ));
    }
    let gf = to_f64(grad_out.data());
    let grad_in = if want[0] {
        let wf = to_f64(weights.data());
        let mut gi = vec![0.0; b * n_in];
        for r in 0..b {
            let dst = &mut gi[r * n_in..(r + 1) * n_in];
            for o in 0..n_out {
                axpy(gf[r * n_out + o], &wf[o * n_in..(o + 1) * n_in], dst);
            }
        }
        Some(Tensor::from_vec(vec![b, n_in], from_f64(&gi))?)
    } else {
        None
    };
    let grad_w = if want[1] {
        let xf = to_f64(input.data());
        let mut gw = vec![0.0; n_out * n_in];
        for o in 0..n_out {
            let dst = &mut gw[o * n_in..(o + 1) * n_in];
            for r in 0..b {
                axpy(gf[r * n_out + o], &xf[r * n_in..(r + 1) * n_in], dst);
            }
        }
        Some(Tensor::from_vec(vec![n_out, n_in], from_f64(&gw))?)
    } else {
        None
    };
    let grad_b = if want[2] {
        let gb: Vec<f64> = (0..n_out)
            .map(|o| (0..b).map(|r| gf[r * n_out + o]).sum())
            .collect();
        Some(Tensor::from_vec(vec![n_out], from_f64(&gb))?)
    } else {
        None
    };
    Ok(FcGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_b,
    })
}

/// `x` for `x >= 0`, `exp(x) - 1` otherwise.
pub fn elu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x >= T::zero() { x } else { x.exp_m1() })
}

/// Backward of [`elu`] expressed through its output: slope is `y + 1` on the negative branch.
pub fn elu_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y >= T::zero() { g } else { g * (y + T::one()) })
        .collect();
    Tensor::from_vec(output.shape().to_vec(), data).expect("same shape")
}

/// Keep the top-left element of every 2×2 block.
pub fn subsample2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = dims4("subsample2", input)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("subsample2", format!("odd spatial extent {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(b * c * ho * wo);
    for plane in input.data().chunks_exact(h * w) {
        for y in 0..ho {
            for x in 0..wo {
                out.push(plane[2 * y * w + 2 * x]);
            }
        }
    }
    Tensor::from_vec(vec![b, c, ho, wo], out)
}

pub fn subsample2_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (ho, wo) = (h / 2, w / 2);
    let mut gi = Tensor::zeros(input_shape);
    for (dst, src) in gi
        .data_mut()
        .chunks_exact_mut(h * w)
        .zip(grad_out.data().chunks_exact(ho * wo))
    {
        for y in 0..ho {
            for x in 0..wo {
                dst[2 * y * w + 2 * x] = src[y * wo + x];
            }
        }
    }
    gi
}

/// Nearest-neighbour upsampling: each pixel becomes a 2×2 block.
pub fn upsample_nearest2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = dims4("upsample_nearest2", input)?;
    let wo = 2 * w;
    let mut out = vec![T::zero(); b * c * 4 * h * w];
    for (dst, src) in out.chunks_exact_mut(4 * h * w).zip(input.data().chunks_exact(h * w)) {
        for y in 0..2 * h {
            for x in 0..wo {
                dst[y * wo + x] = src[(y / 2) * w + x / 2];
            }
        }
    }
    Tensor::from_vec(vec![b, c, 2 * h, 2 * w], out)
}

/// Block-sum of the upstream gradient over each 2×2 block.
pub fn upsample_nearest2_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let wo = 2 * w;
    let mut gi = Vec::with_capacity(grad_out.len() / 4);
    for src in grad_out.data().chunks_exact(4 * h * w) {
        for y in 0..h {
            for x in 0..w {
                let s = src[2 * y * wo + 2 * x].to_acc()
                    + src[2 * y * wo + 2 * x + 1].to_acc()
                    + src[(2 * y + 1) * wo + 2 * x].to_acc()
                    + src[(2 * y + 1) * wo + 2 * x + 1].to_acc();
                gi.push(T::from_acc(s));
            }
        }
    }
    Tensor::from_vec(input_shape.to_vec(), gi).expect("block count matches")
}

/// Concatenate two `[b, c, h, w]` tensors along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, ca, h, w] = dims4("concat_channels", a)?;
    let [nb, cb, hb, wb] = dims4("concat_channels", b)?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::shape(
            "concat_channels",
            format!("{:?} with {:?}", a.shape(), b.shape()),
        ));
    }
    let (sa, sb) = (ca * h * w, cb * h * w);
    let mut out = Vec::with_capacity(a.len() + b.len());
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * sa..(i + 1) * sa]);
        out.extend_from_slice(&b.data()[i * sb..(i + 1) * sb]);
    }
    Tensor::from_vec(vec![n, ca + cb, h, w], out)
}

pub fn concat_channels_backward<T: Scalar>(
    a_shape: &[usize],
    b_shape: &[usize],
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let n = a_shape[0];
    let sa: usize = a_shape[1..].iter().product();
    let sb: usize = b_shape[1..].iter().product();
    let mut ga = Vec::with_capacity(n * sa);
    let mut gb = Vec::with_capacity(n * sb);
    for chunk in grad_out.data().chunks_exact(sa + sb) {
        ga.extend_from_slice(&chunk[..sa]);
        gb.extend_from_slice(&chunk[sa..]);
    }
    (
        Tensor::from_vec(a_shape.to_vec(), ga).expect("shape"),
        Tensor::from_vec(b_shape.to_vec(), gb).expect("shape"),
    )
}

/// Mean over the given axes; the reduced axes are removed from the shape.
pub fn mean_axes<T: Scalar>(input: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let shape = input.shape();
    let mut reduce = vec![false; shape.len()];
    for &a in axes {
        if a >= shape.len() || reduce[a] {
            return Err(Error::shape("mean_axes", format!("bad axis {a} for shape {shape:?}")));
        }
        reduce[a] = true;
    }
    let out_shape: Vec<usize> = shape
        .iter()
        .zip(&reduce)
        .filter(|(_, &r)| !r)
        .map(|(&d, _)| d)
        .collect();
    let count: usize = shape
        .iter()
        .zip(&reduce)
        .filter(|(_, &r)| r)
        .map(|(&d, _)| d)
        .product();
    if count == 0 {
        return Err(Error::shape("mean_axes", "mean over an empty axis"));
    }
    let out_len: usize = out_shape.iter().product();
    let mut acc = vec![0.0f64; out_len];
    for (flat, v) in input.data().iter().enumerate() {
        acc[reduced_index(shape, &reduce, flat)] += v.to_acc();
    }
    let inv = count as f64;
    Tensor::from_vec(out_shape, acc.iter().map(|s| T::from_acc(s / inv)).collect())
}

pub fn mean_axes_backward<T: Scalar>(
    input_shape: &[usize],
    axes: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut reduce = vec![false; input_shape.len()];
    for &a in axes {
        reduce[a] = true;
    }
    let count: usize = input_shape
        .iter()
        .zip(&reduce)
        .filter(|(_, &r)| r)
        .map(|(&d, _)| d)
        .product();
    let inv = count as f64;
    let n: usize = input_shape.iter().product();
    let data = (0..n)
        .map(|flat| T::from_acc(grad_out.data()[reduced_index(input_shape, &reduce, flat)].to_acc() / inv))
        .collect();
    Tensor::from_vec(input_shape.to_vec(), data).expect("shape")
}

fn reduced_index(shape: &[usize], reduce: &[bool], mut flat: usize) -> usize {
    let mut out = 0;
    let mut stride = 1;
    for (d, &dim) in shape.iter().enumerate().rev() {
        let idx = flat % dim;
        flat /= dim;
        if !reduce[d] {
            out += idx * stride;
            stride *= dim;
        }
    }
    out
}
