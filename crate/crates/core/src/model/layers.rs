//! Layers with explicit forward and backward passes over `[batch, channel,
//! frequency, time]` tensors.
//!
//! Training-mode forwards keep whatever the backward pass needs; `backward`
//! consumes that cache, accumulates parameter gradients and returns the
//! gradient with respect to the layer input. Evaluation-mode forwards take
//! `&self` and keep nothing.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{
    Array1, Array2, Array4, ArrayD, ArrayViewD, ArrayViewMutD, Axis, LinalgScalar,
    ScalarOperand, Zip, concatenate, s,
};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use ndarray::linalg::general_mat_mul;
use rand::rngs::SmallRng;
use rand::{Rng, RngCore, SeedableRng};

use super::kernels::{Geometry, OB, TB, correlate, pad_rows, round_up, weight_grad};

/// Floating point type a network can be instantiated with.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }

    /// `exp(v) - 1`, only called with `v <= 0`.
    fn expm1_neg(v: Self) -> Self {
        v.exp_m1()
    }
}

impl Real for f32 {
    /// Polynomial approximation (relative error near 1e-7) that the compiler
    /// can vectorise, unlike the libm call.
    #[inline]
    fn expm1_neg(v: f32) -> f32 {
        const ROUND: f32 = 12_582_912.0;
        let x = v.max(-87.0);
        let n = (x * std::f32::consts::LOG2_E + ROUND) - ROUND;
        let r = x - n * 0.693_359_4 + n * 2.121_944_4e-4;
        let mut p = 1.987_569_1e-4f32;
        p = p * r + 1.398_199_9e-3;
        p = p * r + 8.333_452e-3;
        p = p * r + 4.166_579_6e-2;
        p = p * r + 1.666_666_5e-1;
        p = p * r + 5.000_000_1e-1;
        let e = p * r * r + r + 1.0;
        let scale = f32::from_bits(((n as i32 + 127) as u32) << 23);
        e * scale - 1.0
    }
}

impl Real for f64 {}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
}

impl<F: Real> Param<F> {
    pub fn new(value: ArrayD<F>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Common interface of all layers.
pub trait Module<F: Real> {
    fn forward_train<R: Rng>(&mut self, x: Array4<F>, rng: &mut R) -> Array4<F>;
    fn forward_eval(&self, x: Array4<F>) -> Array4<F>;
    fn backward(&mut self, dy: Array4<F>) -> Array4<F>;

    fn params(&self) -> Vec<&Param<F>> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        Vec::new()
    }
    /// Every stored tensor (parameters and buffers) under a stable name.
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        Vec::new()
    }
    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        Vec::new()
    }
    /// Drops any training cache.
    fn clear_cache(&mut self) {}
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalisation with learnable scale and shift.
#[derive(Debug, Clone)]
pub struct BatchNorm<F> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    cache: Option<(Array4<F>, Vec<F>)>,
}

impl<F: Real> BatchNorm<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(ArrayD::ones(vec![channels])),
            beta: Param::new(ArrayD::zeros(vec![channels])),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

impl<F: Real> Module<F> for BatchNorm<F> {
    fn forward_train<R: Rng>(&mut self, x: Array4<F>, _rng: &mut R) -> Array4<F> {
        let mut x = x.as_standard_layout().into_owned();
        let (n, channels, h, w) = x.dim();
        let count = n * h * w;
        let mut inv_stds = Vec::with_capacity(channels);
        let mut y = Array4::zeros(x.raw_dim());
        for c in 0..channels {
            let (mut sum, mut sq) = (0.0f64, 0.0f64);
            for i in 0..n {
                let plane = x.slice(s![i, c, .., ..]);
                let plane = plane.as_slice().expect("standard layout");
                let (ps, pq) = sum_and_squares(plane);
                sum += ps;
                sq += pq;
            }
            let mean = sum / count as f64;
            let var = (sq / count as f64 - mean * mean).max(0.0);
            let inv_std = 1.0 / (var + BN_EPS).sqrt();
            let (mean_f, inv_f) = (F::of(mean), F::of(inv_std));
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for i in 0..n {
                let mut xc = x.slice_mut(s![i, c, .., ..]);
                let mut yc = y.slice_mut(s![i, c, .., ..]);
                let xs = xc.as_slice_mut().expect("standard layout");
                let ys = yc.as_slice_mut().expect("standard layout");
                for (h, o) in xs.iter_mut().zip(ys.iter_mut()) {
                    *h = (*h - mean_f) * inv_f;
                    *o = g * *h + b;
                }
            }

            let m = F::of(BN_MOMENTUM);
            let unbiased = if count > 1 {
                var * count as f64 / (count - 1) as f64
            } else {
                var
            };
            self.running_mean[c] = (F::one() - m) * self.running_mean[c] + m * mean_f;
            self.running_var[c] = (F::one() - m) * self.running_var[c] + m * F::of(unbiased);
            inv_stds.push(inv_f);
        }
        self.cache = Some((x, inv_stds));
        y
    }

    fn forward_eval(&self, mut x: Array4<F>) -> Array4<F> {
        for c in 0..self.channels() {
            let inv = F::one() / (self.running_var[c] + F::of(BN_EPS)).sqrt();
            let scale = self.gamma.value[c] * inv;
            let shift = self.beta.value[c] - self.running_mean[c] * scale;
            x.index_axis_mut(Axis(1), c).mapv_inplace(|v| v * scale + shift);
        }
        x
    }

    fn backward(&mut self, mut dy: Array4<F>) -> Array4<F> {
        let (xhat, inv_stds) = self.cache.take().expect("backward without forward");
        let count = F::of((dy.len() / dy.dim().1) as f64);
        for c in 0..self.channels() {
            let xc = xhat.index_axis(Axis(1), c);
            let mut dc = dy.index_axis_mut(Axis(1), c);
            let (mut dgamma, mut dbeta) = (F::zero(), F::zero());
            Zip::from(&dc).and(&xc).for_each(|&d, &h| {
                dgamma += d * h;
                dbeta += d;
            });
            self.gamma.grad[c] += dgamma;
            self.beta.grad[c] += dbeta;
            let k = self.gamma.value[c] * inv_stds[c] / count;
            Zip::from(&mut dc)
                .and(&xc)
                .for_each(|d, &h| *d = k * (count * *d - dbeta - h * dgamma));
        }
        dy
    }

    fn params(&self) -> Vec<&Param<F>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        vec![
            ("gamma".into(), self.gamma.value.view()),
            ("beta".into(), self.beta.value.view()),
            ("running_mean".into(), self.running_mean.view().into_dyn()),
            ("running_var".into(), self.running_var.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        vec![
            ("gamma".into(), self.gamma.value.view_mut()),
            ("beta".into(), self.beta.value.view_mut()),
            ("running_mean".into(), self.running_mean.view_mut().into_dyn()),
            ("running_var".into(), self.running_var.view_mut().into_dyn()),
        ]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Sum and sum of squares with eight independent accumulators (so the loop
/// vectorises), reduced in f64.
fn sum_and_squares<F: Real>(v: &[F]) -> (f64, f64) {
    let mut s = [F::zero(); 8];
    let mut q = [F::zero(); 8];
    let chunks = v.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for l in 0..8 {
            s[l] += c[l];
            q[l] += c[l] * c[l];
        }
    }
    let mut sum: f64 = s.iter().map(|v| v.to_f64().unwrap()).sum();
    let mut sq: f64 = q.iter().map(|v| v.to_f64().unwrap()).sum();
    for &v in tail {
        let v = v.to_f64().unwrap();
        sum += v;
        sq += v * v;
    }
    (sum, sq)
}

/// `1 x k` convolution along time, stride one, "same" padding (the extra
/// zero goes on the right for even `k`). The frequency axis is untouched.
#[derive(Debug, Clone)]
pub struct ConvTime<F> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `[out, in, kernel]`
    pub weight: Param<F>,
    pub bias: Param<F>,
    cache: Option<Array4<F>>,
}

impl<F: Real> ConvTime<F> {
    pub fn new<R: Rng>(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut R) -> Self {
        let fan_in = (in_channels * kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let weight = ArrayD::from_shape_fn(vec![out_channels, in_channels, kernel], |_| {
            F::of(rng.random_range(-bound..bound))
        });
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: Param::new(weight),
            bias: Param::new(ArrayD::zeros(vec![out_channels])),
            cache: None,
        }
    }

    fn pad_left(&self) -> usize {
        (self.kernel - 1) / 2
    }

    fn geometry(&self, rows: usize, width: usize) -> Geometry {
        let wpad = round_up(width, TB);
        Geometry {
            n_out: round_up(self.out_channels, OB),
            n_in: self.in_channels,
            k: self.kernel,
            rows,
            lp: wpad + self.kernel,
            wpad,
        }
    }

    /// Weights with the output axis zero-padded to a multiple of `OB`.
    fn padded_weight(&self, n_out: usize) -> Vec<F> {
        let mut w = vec![F::zero(); n_out * self.in_channels * self.kernel];
        for (d, &s) in w.iter_mut().zip(self.weight.value.iter()) {
            *d = s;
        }
        w
    }

    /// `[in][out][k]` weights reversed in time, for the input gradient.
    fn flipped_weight(&self, n_in_pad: usize) -> Vec<F> {
        let (o_n, c_n, k) = (self.out_channels, self.in_channels, self.kernel);
        let w = self.weight.value.as_slice().expect("contiguous weight");
        let mut out = vec![F::zero(); n_in_pad * o_n * k];
        for o in 0..o_n {
            for c in 0..c_n {
                for j in 0..k {
                    out[(c * o_n + o) * k + (k - 1 - j)] = w[(o * c_n + c) * k + j];
                }
            }
        }
        out
    }

    fn run(&self, x: &Array4<F>) -> Array4<F> {
        let (n, _, h, w) = x.dim();
        let g = self.geometry(h, w);
        let wbuf = self.padded_weight(g.n_out);
        let x = x.as_standard_layout();
        let mut y = Array4::zeros((n, self.out_channels, h, w));
        let mut buf = vec![F::zero(); g.n_out * h * g.wpad];
        for i in 0..n {
            let xi = x.index_axis(Axis(0), i);
            let src = xi.as_slice().expect("standard layout");
            let xp = pad_rows(src, self.in_channels, h, w, self.in_channels, self.pad_left(), g.lp);
            correlate(g, &wbuf, &xp, &mut buf);
            let mut yi = y.index_axis_mut(Axis(0), i);
            for (o, &b) in self.bias.value.iter().enumerate() {
                for f in 0..h {
                    let src = &buf[(o * h + f) * g.wpad..][..w];
                    let mut dst = yi.slice_mut(s![o, f, ..]);
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = v + b;
                    }
                }
            }
        }
        y
    }
}

impl<F: Real> Module<F> for ConvTime<F> {
    fn forward_train<R: Rng>(&mut self, x: Array4<F>, _rng: &mut R) -> Array4<F> {
        let y = self.run(&x);
        self.cache = Some(x);
        y
    }

    fn forward_eval(&self, x: Array4<F>) -> Array4<F> {
        self.run(&x)
    }

    fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        let x = self.cache.take().expect("backward without forward");
        let (n, _, h, w) = x.dim();
        let (c_n, o_n, k) = (self.in_channels, self.out_channels, self.kernel);
        let g = self.geometry(h, w);
        let gx = Geometry {
            n_out: round_up(c_n, OB),
            n_in: o_n,
            ..g
        };
        let wflip = self.flipped_weight(gx.n_out);
        let x = x.as_standard_layout();
        let dy = dy.as_standard_layout();
        let mut dw = vec![F::zero(); g.n_out * c_n * k];
        let mut dx = Array4::zeros((n, c_n, h, w));
        let mut dxbuf = vec![F::zero(); gx.n_out * h * g.wpad];
        for i in 0..n {
            let xi = x.index_axis(Axis(0), i);
            let xs = xi.as_slice().expect("standard layout");
            let dyi = dy.index_axis(Axis(0), i);
            let ds = dyi.as_slice().expect("standard layout");
            let xp = pad_rows(xs, c_n, h, w, c_n, self.pad_left(), g.lp);
            let dyw = pad_rows(ds, o_n, h, w, g.n_out, 0, w);
            weight_grad(g, w, &dyw, &xp, &mut dw);
            for (o, gb) in self.bias.grad.iter_mut().enumerate() {
                *gb += ds[o * h * w..(o + 1) * h * w].iter().copied().sum::<F>();
            }
            let dyq = pad_rows(ds, o_n, h, w, o_n, k - 1 - self.pad_left(), g.lp);
            correlate(gx, &wflip, &dyq, &mut dxbuf);
            let mut dxi = dx.index_axis_mut(Axis(0), i);
            for c in 0..c_n {
                for f in 0..h {
                    let src = &dxbuf[(c * h + f) * g.wpad..][..w];
                    dxi.slice_mut(s![c, f, ..])
                        .iter_mut()
                        .zip(src)
                        .for_each(|(d, &v)| *d = v);
                }
            }
        }
        for (gw, &v) in self.weight.grad.iter_mut().zip(&dw) {
            *gw += v;
        }
        dx
    }

    fn params(&self) -> Vec<&Param<F>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        vec![
            ("weight".into(), self.weight.value.view()),
            ("bias".into(), self.bias.value.view()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        vec![
            ("weight".into(), self.weight.value.view_mut()),
            ("bias".into(), self.bias.value.view_mut()),
        ]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Parallel time convolutions of different lengths over the same input,
/// concatenated along the channel axis.
#[derive(Debug, Clone)]
pub struct MultiConv<F> {
    pub branches: Vec<ConvTime<F>>,
}

impl<F: Real> MultiConv<F> {
    pub fn new<R: Rng>(in_channels: usize, filters: usize, kernels: &[usize], rng: &mut R) -> Self {
        Self {
            branches: kernels
                .iter()
                .map(|&k| ConvTime::new(in_channels, filters, k, rng))
                .collect(),
        }
    }

    fn concat(parts: Vec<Array4<F>>) -> Array4<F> {
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        concatenate(Axis(1), &views).expect("branch shapes agree")
    }
}

impl<F: Real> Module<F> for MultiConv<F> {
    fn forward_train<R: Rng>(&mut self, x: Array4<F>, rng: &mut R) -> Array4<F> {
        let outs = self
            .branches
            .iter_mut()
            .map(|b| b.forward_train(x.clone(), rng))
            .collect();
        Self::concat(outs)
    }

    fn forward_eval(&self, x: Array4<F>) -> Array4<F> {
        let outs = self.branches.iter().map(|b| b.run(&x)).collect();
        Self::concat(outs)
    }

    fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        let mut dx: Option<Array4<F>> = None;
        let mut offset = 0;
        for b in &mut self.branches {
            let part = dy.slice(s![.., offset..offset + b.out_channels, .., ..]).to_owned();
            offset += b.out_channels;
            let g = b.backward(part);
            match dx.as_mut() {
                Some(acc) => *acc += &g,
                None => dx = Some(g),
            }
        }
        dx.expect("at least one branch")
    }

    fn params(&self) -> Vec<&Param<F>> {
        self.branches.iter().flat_map(|b| b.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        self.branches.iter_mut().flat_map(|b| b.params_mut()).collect()
    }

    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        self.branches
            .iter()
            .enumerate()
            .flat_map(|(i, b)| {
                b.tensors()
                    .into_iter()
                    .map(move |(name, t)| (format!("k{}.{name}", i), t))
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        self.branches
            .iter_mut()
            .enumerate()
            .flat_map(|(i, b)| {
                b.tensors_mut()
                    .into_iter()
                    .map(move |(name, t)| (format!("k{}.{name}", i), t))
            })
            .collect()
    }

    fn clear_cache(&mut self) {
        self.branches.iter_mut().for_each(|b| b.clear_cache());
    }
}

/// Exponential linear unit with `alpha = 1`.
#[derive(Debug, Clone, Default)]
pub struct Elu<F> {
    cache: Option<Array4<F>>,
}

impl<F: Real> Elu<F> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    fn apply(mut x: Array4<F>) -> Array4<F> {
        let f = |v: &mut F| {
            let e = F::expm1_neg(v.min(F::zero()));
            *v = if *v > F::zero() { *v } else { e };
        };
        match x.as_slice_mut() {
            Some(s) => s.iter_mut().for_each(f),
            None => x.iter_mut().for_each(f),
        }
        x
    }
}

impl<F: Real> Module<F> for Elu<F> {
    fn forward_train<R: Rng>(&mut self, x: Array4<F>, _rng: &mut R) -> Array4<F> {
        let y = Self::apply(x);
        self.cache = Some(y.clone());
        y
    }

    fn forward_eval(&self, x: Array4<F>) -> Array4<F> {
        Self::apply(x)
    }

    fn backward(&mut self, mut dy: Array4<F>) -> Array4<F> {
        let y = self.cache.take().expect("backward without forward");
        Zip::from(&mut dy).and(&y).for_each(|d, &o| {
            *d = if o > F::zero() { *d } else { *d * (o + F::one()) };
        });
        dy
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Inverted dropout: kept activations are scaled by `1 / (1 - p)` during
/// training so evaluation is the identity.
#[derive(Debug, Clone)]
pub struct Dropout<F> {
    pub p: f64,
    cache: Option<Array4<F>>,
}

impl<F: Real> Dropout<F> {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1)");
        Self { p, cache: None }
    }
}

impl<F: Real> Module<F> for Dropout<F> {
    fn forward_train<R: Rng>(&mut self, mut x: Array4<F>, rng: &mut R) -> Array4<F> {
        if self.p == 0.0 {
            self.cache = Some(Array4::ones((0, 0, 0, 0)));
            return x;
        }
        let scale = F::of(1.0 / (1.0 - self.p));
        let threshold = (self.p * 4_294_967_296.0) as u64;
        let mut fast = SmallRng::seed_from_u64(rng.next_u64());
        let mut mask = Array4::zeros(x.raw_dim());
        for pair in mask.as_slice_mut().expect("fresh array").chunks_mut(2) {
            let bits = fast.next_u64();
            for (m, word) in pair.iter_mut().zip([bits as u32, (bits >> 32) as u32]) {
                *m = if (word as u64) < threshold { F::zero() } else { scale };
            }
        }
        x *= &mask;
        self.cache = Some(mask);
        x
    }

    fn forward_eval(&self, x: Array4<F>) -> Array4<F> {
        x
    }

    fn backward(&mut self, mut dy: Array4<F>) -> Array4<F> {
        let mask = self.cache.take().expect("backward without forward");
        if self.p > 0.0 {
            dy *= &mask;
        }
        dy
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Average pooling over `factor` adjacent frequency rows (`factor x 1`).
#[derive(Debug, Clone)]
pub struct PoolFreq {
    pub factor: usize,
    in_rows: Option<usize>,
}

impl PoolFreq {
    pub fn new(factor: usize) -> Self {
        assert!(factor > 0);
        Self {
            factor,
            in_rows: None,
        }
    }

    fn run<F: Real>(&self, x: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        let out_h = h / self.factor;
        let inv = F::of(1.0 / self.factor as f64);
        let mut y = Array4::zeros((n, c, out_h, w));
        for r in 0..out_h {
            let mut dst = y.slice_mut(s![.., .., r, ..]);
            for k in 0..self.factor {
                dst += &x.slice(s![.., .., r * self.factor + k, ..]);
            }
            dst *= inv;
        }
        y
    }
}

impl<F: Real> Module<F> for PoolFreq {
    fn forward_train<R: Rng>(&mut self, x: Array4<F>, _rng: &mut R) -> Array4<F> {
        self.in_rows = Some(x.dim().2);
        self.run(&x)
    }

    fn forward_eval(&self, x: Array4<F>) -> Array4<F> {
        self.run(&x)
    }

    fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        let rows = self.in_rows.take().expect("backward without forward");
        let (n, c, out_h, w) = dy.dim();
        let inv = F::of(1.0 / self.factor as f64);
        let mut dx = Array4::zeros((n, c, rows, w));
        for r in 0..out_h {
            let g = dy.slice(s![.., .., r, ..]).mapv(|v| v * inv);
            for k in 0..self.factor {
                dx.slice_mut(s![.., .., r * self.factor + k, ..]).assign(&g);
            }
        }
        dx
    }

    fn clear_cache(&mut self) {
        self.in_rows = None;
    }
}

/// Average pooling over `window` adjacent time frames (`1 x window`).
#[derive(Debug, Clone)]
pub struct PoolTime {
    pub window: usize,
    in_cols: Option<usize>,
}

impl PoolTime {
    pub fn new(window: usize) -> Self {
        assert!(window > 0);
        Self {
            window,
            in_cols: None,
        }
    }

    fn run<F: Real>(&self, x: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        let out_w = w / self.window;
        let inv = F::of(1.0 / self.window as f64);
        let mut y = Array4::zeros((n, c, h, out_w));
        Zip::from(y.lanes_mut(Axis(3)))
            .and(x.lanes(Axis(3)))
            .for_each(|mut dst, src| {
                for (o, chunk) in dst.iter_mut().zip(src.exact_chunks(self.window)) {
                    *o = chunk.sum() * inv;
                }
            });
        y
    }
}

impl<F: Real> Module<F> for PoolTime {
    fn forward_train<R: Rng>(&mut self, x: Array4<F>, _rng: &mut R) -> Array4<F> {
        self.in_cols = Some(x.dim().3);
        self.run(&x)
    }

    fn forward_eval(&self, x: Array4<F>) -> Array4<F> {
        self.run(&x)
    }

    fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        let cols = self.in_cols.take().expect("backward without forward");
        let (n, c, h, out_w) = dy.dim();
        let inv = F::of(1.0 / self.window as f64);
        let mut dx = Array4::zeros((n, c, h, cols));
        Zip::from(dx.lanes_mut(Axis(3)))
            .and(dy.lanes(Axis(3)))
            .for_each(|mut dst, src| {
                for o in 0..out_w {
                    dst.slice_mut(s![o * self.window..(o + 1) * self.window])
                        .fill(src[o] * inv);
                }
            });
        dx
    }

    fn clear_cache(&mut self) {
        self.in_cols = None;
    }
}

/// Fully connected layer over the flattened `[channel, frequency, time]`
/// features. Output shape is `[batch, out, 1, 1]`.
#[derive(Debug, Clone)]
pub struct Dense<F> {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out, in]`
    pub weight: Param<F>,
    pub bias: Param<F>,
    cache: Option<(Array2<F>, (usize, usize, usize, usize))>,
}

impl<F: Real> Dense<F> {
    pub fn new<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = (6.0 / in_features as f64).sqrt();
        let weight = ArrayD::from_shape_fn(vec![out_features, in_features], |_| {
            F::of(rng.random_range(-bound..bound))
        });
        Self {
            in_features,
            out_features,
            weight: Param::new(weight),
            bias: Param::new(ArrayD::zeros(vec![out_features])),
            cache: None,
        }
    }

    fn flatten(&self, x: Array4<F>) -> Array2<F> {
        let n = x.dim().0;
        assert_eq!(x.len() / n.max(1), self.in_features, "dense input size");
        x.as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, self.in_features))
            .expect("flatten")
    }

    fn run(&self, x2: &Array2<F>) -> Array4<F> {
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("weight rank");
        let b = self
            .bias
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("bias rank");
        let y = x2.dot(&w.t()) + &b;
        let n = y.nrows();
        y.into_shape_with_order((n, self.out_features, 1, 1))
            .expect("dense output")
    }
}

impl<F: Real> Module<F> for Dense<F> {
    fn forward_train<R: Rng>(&mut self, x: Array4<F>, _rng: &mut R) -> Array4<F> {
        let shape = x.dim();
        let x2 = self.flatten(x);
        let y = self.run(&x2);
        self.cache = Some((x2, shape));
        y
    }

    fn forward_eval(&self, x: Array4<F>) -> Array4<F> {
        self.run(&self.flatten(x))
    }

    fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        let (x2, shape) = self.cache.take().expect("backward without forward");
        let n = dy.dim().0;
        let dy2 = dy
            .into_shape_with_order((n, self.out_features))
            .expect("dense grad");
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("weight rank");
        let mut gw = self
            .weight
            .grad
            .view_mut()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("weight rank");
        general_mat_mul(F::one(), &dy2.t(), &x2, F::one(), &mut gw);
        for (g, col) in self.bias.grad.iter_mut().zip(dy2.columns()) {
            *g += col.sum();
        }
        dy2.dot(&w).into_shape_with_order(shape).expect("dense input grad")
    }

    fn params(&self) -> Vec<&Param<F>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        vec![
            ("weight".into(), self.weight.value.view()),
            ("bias".into(), self.bias.value.view()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        vec![
            ("weight".into(), self.weight.value.view_mut()),
            ("bias".into(), self.bias.value.view_mut()),
        ]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Row-wise softmax of `[batch, classes]` logits.
pub fn softmax<F: Real>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean categorical cross-entropy of softmax(logits) against class indices,
/// with its gradient with respect to the logits.
pub fn softmax_cross_entropy<F: Real>(logits: &Array2<F>, labels: &[usize]) -> (F, Array2<F>) {
    assert_eq!(logits.nrows(), labels.len());
    let n = F::of(labels.len() as f64);
    let mut grad = softmax(logits);
    let mut loss = F::zero();
    for (mut row, &label) in grad.rows_mut().into_iter().zip(labels) {
        loss -= row[label].max(F::min_positive_value()).ln();
        row[label] -= F::one();
        row.mapv_inplace(|v| v / n);
    }
    (loss / n, grad)
}

/// Every concrete layer type.
#[derive(Debug, Clone)]
pub enum Layer<F> {
    BatchNorm(BatchNorm<F>),
    Conv(ConvTime<F>),
    MultiConv(MultiConv<F>),
    Elu(Elu<F>),
    Dropout(Dropout<F>),
    PoolFreq(PoolFreq),
    PoolTime(PoolTime),
    Dense(Dense<F>),
}

impl<F> Layer<F> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::BatchNorm(_) => "bn",
            Layer::Conv(_) => "conv",
            Layer::MultiConv(_) => "mfconv",
            Layer::Elu(_) => "elu",
            Layer::Dropout(_) => "dropout",
            Layer::PoolFreq(_) => "pool_freq",
            Layer::PoolTime(_) => "pool_time",
            Layer::Dense(_) => "dense",
        }
    }
}

macro_rules! dispatch {
    ($self:expr, $l:ident => $body:expr) => {
        match $self {
            Layer::BatchNorm($l) => $body,
            Layer::Conv($l) => $body,
            Layer::MultiConv($l) => $body,
            Layer::Elu($l) => $body,
            Layer::Dropout($l) => $body,
            Layer::PoolFreq($l) => $body,
            Layer::PoolTime($l) => $body,
            Layer::Dense($l) => $body,
        }
    };
}

impl<F: Real> Module<F> for Layer<F> {
    fn forward_train<R: Rng>(&mut self, x: Array4<F>, rng: &mut R) -> Array4<F> {
        dispatch!(self, l => l.forward_train(x, rng))
    }

    fn forward_eval(&self, x: Array4<F>) -> Array4<F> {
        dispatch!(self, l => l.forward_eval(x))
    }

    fn backward(&mut self, dy: Array4<F>) -> Array4<F> {
        dispatch!(self, l => l.backward(dy))
    }

    fn params(&self) -> Vec<&Param<F>> {
        dispatch!(self, l => l.params())
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        dispatch!(self, l => l.params_mut())
    }

    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        dispatch!(self, l => l.tensors())
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        dispatch!(self, l => l.tensors_mut())
    }

    fn clear_cache(&mut self) {
        dispatch!(self, l => Module::<F>::clear_cache(l))
    }
}
