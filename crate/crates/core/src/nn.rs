//! Affine maps, layer normalization and GELU with explicit backward passes.
//!
//! Gradients are accumulated into a parameter struct of the same shape as
//! the one used in the forward pass, so `grads.visit(..)` and
//! `params.visit(..)` walk matching tensors in matching order.

use crate::linalg::{col_sums, matmul, matmul_nt, matmul_tn, Matrix};
use crate::real::Real;
use crate::rng::SplitMix64;

/// Uniform tensor traversal over a parameter set, in a fixed order.
pub trait ParamSet<T: Real> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix<T>));
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix<T>));

    /// Same shapes, all zeros.
    fn zeroed(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, m| m.as_mut_slice().iter_mut().for_each(|v| *v = T::zero()));
        z
    }

    /// Mutable references to every tensor, in visit order.
    fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out = Vec::new();
        self.visit_mut("", &mut |_, m| out.push(m));
        out
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit("", &mut |n, _| names.push(n));
        names
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, m| n += m.len());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Matrix<T>,
    pub bias: Matrix<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear { weight: Matrix::zeros(input, output), bias: Matrix::zeros(1, output) }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, zero bias.
    pub fn init(input: usize, output: usize, rng: &mut SplitMix64) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = Matrix::from_fn(input, output, |_, _| T::of(rng.uniform(-bound, bound)));
        Linear { weight, bias: Matrix::zeros(1, output) }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        let mut y = matmul(x, &self.weight);
        y.add_row_broadcast(self.bias.as_slice());
        y
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dx`.
    pub fn backward(&self, x: &Matrix<T>, dy: &Matrix<T>, grad: &mut Linear<T>) -> Matrix<T> {
        grad.weight.add_assign(&matmul_tn(x, dy));
        for (g, s) in grad.bias.as_mut_slice().iter_mut().zip(col_sums(dy)) {
            *g = *g + s;
        }
        matmul_nt(dy, &self.weight)
    }
}

impl<T: Real> ParamSet<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row normalization over channels with learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub scale: Matrix<T>,
    pub shift: Matrix<T>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Matrix<T>,
    inv_std: Vec<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(width: usize) -> Self {
        LayerNorm { scale: Matrix::filled(1, width, T::one()), shift: Matrix::zeros(1, width) }
    }

    pub fn forward(&self, x: &Matrix<T>) -> (Matrix<T>, LayerNormCache<T>) {
        let c = x.cols();
        let inv_c = T::one() / T::of(c as f64);
        let eps = T::of(LAYER_NORM_EPS);
        let mut xhat = Matrix::zeros(x.rows(), c);
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().copied().sum::<T>() * inv_c;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (o, &v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let mut y = xhat.clone();
        let (g, b) = (self.scale.as_slice(), self.shift.as_slice());
        for r in 0..y.rows() {
            for ((o, &gv), &bv) in y.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gv + bv;
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache<T>, dy: &Matrix<T>, grad: &mut LayerNorm<T>) -> Matrix<T> {
        let (n, c) = dy.shape();
        let mut dscale_src = Matrix::zeros(n, c);
        for r in 0..n {
            for ((o, &d), &xh) in dscale_src.row_mut(r).iter_mut().zip(dy.row(r)).zip(cache.xhat.row(r)) {
                *o = d * xh;
            }
        }
        for (g, s) in grad.scale.as_mut_slice().iter_mut().zip(col_sums(&dscale_src)) {
            *g = *g + s;
        }
        for (g, s) in grad.shift.as_mut_slice().iter_mut().zip(col_sums(dy)) {
            *g = *g + s;
        }
        let inv_c = T::one() / T::of(c as f64);
        let gamma = self.scale.as_slice();
        let mut dx = Matrix::zeros(n, c);
        for r in 0..n {
            let xh = cache.xhat.row(r);
            let dxhat: Vec<T> = dy.row(r).iter().zip(gamma).map(|(&d, &g)| d * g).collect();
            let mean_d = dxhat.iter().copied().sum::<T>() * inv_c;
            let mean_dx = dxhat.iter().zip(xh).map(|(&d, &h)| d * h).sum::<T>() * inv_c;
            let is = cache.inv_std[r];
            for ((o, &d), &h) in dx.row_mut(r).iter_mut().zip(&dxhat).zip(xh) {
                *o = is * (d - mean_d - h * mean_dx);
            }
        }
        dx
    }
}

impl<T: Real> ParamSet<T> for LayerNorm<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix<T>)) {
        f(join(prefix, "scale"), &self.scale);
        f(join(prefix, "shift"), &self.shift);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix<T>)) {
        f(join(prefix, "scale"), &mut self.scale);
        f(join(prefix, "shift"), &mut self.shift);
    }
}

// tanh-approximation GELU:
//   gelu(x) = 0.5 x (1 + tanh(k0 (x + k1 x^3)))
//   k0 = sqrt(2/pi) = 0.7978845608028654, k1 = 0.044715
const GELU_K0: f64 = 0.797_884_560_802_865_4;
const GELU_K1: f64 = 0.044_715;

#[inline]
pub fn gelu_scalar<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_K0) * (x + T::of(GELU_K1) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    let k0 = T::of(GELU_K0);
    let k1 = T::of(GELU_K1);
    let t = (k0 * (x + k1 * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k0 * (T::one() + T::of(3.0) * k1 * x * x)
}

pub fn gelu<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    x.map(gelu_scalar)
}

pub fn gelu_backward<T: Real>(x: &Matrix<T>, dy: &Matrix<T>) -> Matrix<T> {
    let mut out = dy.clone();
    for (o, &xv) in out.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *o = *o * gelu_grad_scalar(xv);
    }
    out
}

/// `Linear -> GELU -> Linear`, used for the feed-forward block and the heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub hidden: Linear<T>,
    pub out: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    input: Matrix<T>,
    pre: Matrix<T>,
    act: Matrix<T>,
}

impl<T: Real> Mlp<T> {
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut SplitMix64) -> Self {
        Mlp { hidden: Linear::init(input, hidden, rng), out: Linear::init(hidden, output, rng) }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Mlp { hidden: Linear::zeros(input, hidden), out: Linear::zeros(hidden, output) }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        self.out.forward(&gelu(&self.hidden.forward(x)))
    }

    pub fn forward_cached(&self, x: &Matrix<T>) -> (Matrix<T>, MlpCache<T>) {
        let pre = self.hidden.forward(x);
        let act = gelu(&pre);
        let y = self.out.forward(&act);
        (y, MlpCache { input: x.clone(), pre, act })
    }

    pub fn backward(&self, cache: &MlpCache<T>, dy: &Matrix<T>, grad: &mut Mlp<T>) -> Matrix<T> {
        let dact = self.out.backward(&cache.act, dy, &mut grad.out);
        let dpre = gelu_backward(&cache.pre, &dact);
        self.hidden.backward(&cache.input, &dpre, &mut grad.hidden)
    }
}

impl<T: Real> ParamSet<T> for Mlp<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix<T>)) {
        self.hidden.visit(&join(prefix, "hidden"), f);
        self.out.visit(&join(prefix, "out"), f);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix<T>)) {
        self.hidden.visit_mut(&join(prefix, "hidden"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}
