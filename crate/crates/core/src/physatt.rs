//! Physics attention: points are softly assigned to `M` learned slices,
//! each slice is pooled into a token, tokens attend to each other, and the
//! transformed tokens are broadcast back to the points through the same
//! slice weights.
//!
//! With `H` heads the channel dimension is split into `H` blocks of width
//! `d = C / H`. Each head slices its own channel block with its own
//! `d x M` projection (stacked into the `C x M` slice matrix), so every head
//! produces its own `N x M` weights and `M x d` tokens. Token attention
//! projects the concatenated `M x C` tokens with full `C x C` maps and runs
//! scaled dot-product attention per head with scale `sqrt(d)`. `H = 1` is
//! the plain single-head formulation.

use crate::error::{Error, Result};
use crate::linalg::{
    col_sums, matmul, matmul_nt, matmul_tn, pairwise_sum, softmax_rows, softmax_rows_backward, Matrix,
};
use crate::nn::{join, LayerNorm, LayerNormCache, Linear, Mlp, MlpCache, ParamSet};
use crate::real::Real;
use crate::rng::SplitMix64;

/// Initial slice temperature.
pub const INITIAL_TEMPERATURE: f64 = 0.5;

const DENOMINATOR_FLOOR: f64 = 1e-30;

/// Row-stochastic slice weights `N x M` and the pooled tokens `M x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceAssignment<T> {
    pub weights: Matrix<T>,
    pub tokens: Matrix<T>,
}

impl<T: Real> SliceAssignment<T> {
    pub fn compute(x: &Matrix<T>, projection: &Matrix<T>, bias: &[T], temperature: T) -> Result<Self> {
        let weights = slice(x, projection, bias, temperature)?;
        let tokens = aggregate_tokens(x, &weights);
        Ok(SliceAssignment { weights, tokens })
    }
}

/// `w = softmax((x P + b) / tau)` over the slice dimension of each point.
pub fn slice<T: Real>(x: &Matrix<T>, projection: &Matrix<T>, bias: &[T], temperature: T) -> Result<Matrix<T>> {
    if projection.cols() == 0 {
        return Err(Error::Shape("slice projection needs at least one slice".into()));
    }
    if x.cols() != projection.rows() {
        return Err(Error::Shape(format!(
            "features have {} channels, slice projection expects {}",
            x.cols(),
            projection.rows()
        )));
    }
    let mut logits = matmul(x, projection);
    logits.add_row_broadcast(bias);
    let inv_tau = T::one() / temperature;
    logits.scale(inv_tau);
    if !logits.all_finite() {
        return Err(Error::NonFinite { what: "slice logits".into() });
    }
    softmax_rows(&mut logits);
    Ok(logits)
}

/// `z_j = sum_i w_ij x_i / sum_i w_ij`.
pub fn aggregate_tokens<T: Real>(x: &Matrix<T>, w: &Matrix<T>) -> Matrix<T> {
    assert_eq!(x.rows(), w.rows(), "aggregate_tokens: point counts differ");
    let mut tokens = matmul_tn(w, x);
    let floor = T::of(DENOMINATOR_FLOOR);
    for (j, s) in col_sums(w).into_iter().enumerate() {
        let inv = T::one() / s.max(floor);
        tokens.row_mut(j).iter_mut().for_each(|v| *v = *v * inv);
    }
    tokens
}

/// `x'_i = sum_j w_ij z'_j`.
pub fn deslice<T: Real>(tokens: &Matrix<T>, w: &Matrix<T>) -> Matrix<T> {
    matmul(w, tokens)
}

/// Query/key/value/output maps acting on the `M x C` token matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenAttention<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct AttentionOutput<T> {
    /// Transformed tokens after the output projection, `M x C`.
    pub tokens: Matrix<T>,
    /// Attention weights per head, each `M x M` and row-stochastic.
    pub weights: Vec<Matrix<T>>,
}

#[derive(Debug, Clone)]
struct AttentionCache<T> {
    input: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    attn: Vec<Matrix<T>>,
    mixed: Matrix<T>,
}

impl<T: Real> TokenAttention<T> {
    pub fn init(channels: usize, rng: &mut SplitMix64) -> Self {
        TokenAttention {
            query: Linear::init(channels, channels, rng),
            key: Linear::init(channels, channels, rng),
            value: Linear::init(channels, channels, rng),
            output: Linear::init(channels, channels, rng),
        }
    }

    fn forward_cached(&self, z: &Matrix<T>, heads: usize) -> (AttentionOutput<T>, AttentionCache<T>) {
        let c = z.cols();
        let d = c / heads;
        let q = self.query.forward(z);
        let k = self.key.forward(z);
        let v = self.value.forward(z);
        let inv_sqrt_d = T::one() / T::of(d as f64).sqrt();
        let mut mixed = Matrix::zeros(z.rows(), c);
        let mut attn = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = (q.col_block(h * d, d), k.col_block(h * d, d), v.col_block(h * d, d));
            let mut scores = matmul_nt(&qh, &kh);
            scores.scale(inv_sqrt_d);
            softmax_rows(&mut scores);
            mixed.set_col_block(h * d, &matmul(&scores, &vh));
            attn.push(scores);
        }
        let tokens = self.output.forward(&mixed);
        let out = AttentionOutput { tokens, weights: attn.clone() };
        (out, AttentionCache { input: z.clone(), q, k, v, attn, mixed })
    }

    fn backward(
        &self,
        cache: &AttentionCache<T>,
        dtokens: &Matrix<T>,
        heads: usize,
        grad: &mut TokenAttention<T>,
    ) -> Matrix<T> {
        let (m, c) = cache.input.shape();
        let d = c / heads;
        let inv_sqrt_d = T::one() / T::of(d as f64).sqrt();
        let dmixed = self.output.backward(&cache.mixed, dtokens, &mut grad.output);
        let mut dq = Matrix::zeros(m, c);
        let mut dk = Matrix::zeros(m, c);
        let mut dv = Matrix::zeros(m, c);
        for h in 0..heads {
            let a = &cache.attn[h];
            let (qh, kh, vh) = (cache.q.col_block(h * d, d), cache.k.col_block(h * d, d), cache.v.col_block(h * d, d));
            let dout = dmixed.col_block(h * d, d);
            let da = matmul_nt(&dout, &vh);
            dv.set_col_block(h * d, &matmul_tn(a, &dout));
            let mut ds = softmax_rows_backward(a, &da);
            ds.scale(inv_sqrt_d);
            dq.set_col_block(h * d, &matmul(&ds, &kh));
            dk.set_col_block(h * d, &matmul_tn(&ds, &qh));
        }
        let mut dz = self.query.backward(&cache.input, &dq, &mut grad.query);
        dz.add_assign(&self.key.backward(&cache.input, &dk, &mut grad.key));
        dz.add_assign(&self.value.backward(&cache.input, &dv, &mut grad.value));
        dz
    }
}

impl<T: Real> ParamSet<T> for TokenAttention<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix<T>)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix<T>)) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// Scaled dot-product attention among tokens followed by the output
/// projection.
pub fn token_attention<T: Real>(z: &Matrix<T>, attention: &TokenAttention<T>, heads: usize) -> AttentionOutput<T> {
    attention.forward_cached(z, heads).0
}

/// Parameters of one residual physics-attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub heads: usize,
    /// `C x M`; rows `h*d .. (h+1)*d` are head `h`'s projection.
    pub slice_weight: Matrix<T>,
    /// `H x M`.
    pub slice_bias: Matrix<T>,
    /// `1 x 1`, the slice temperature is `exp(log_temperature)`.
    pub log_temperature: Matrix<T>,
    pub attention: TokenAttention<T>,
    pub ffn: Mlp<T>,
    pub norm_attn: LayerNorm<T>,
    pub norm_ffn: LayerNorm<T>,
}

#[derive(Debug, Clone)]
struct HeadCache<T> {
    input: Matrix<T>,
    raw_logits: Matrix<T>,
    weights: Matrix<T>,
    mass: Vec<T>,
    tokens: Matrix<T>,
}

#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    ln1: LayerNormCache<T>,
    heads: Vec<HeadCache<T>>,
    attention: AttentionCache<T>,
    ln2: LayerNormCache<T>,
    ffn: MlpCache<T>,
}

impl<T: Real> LayerCache<T> {
    /// Slice weights of each head from the forward pass.
    pub fn slice_weights(&self) -> impl Iterator<Item = &Matrix<T>> {
        self.heads.iter().map(|h| &h.weights)
    }

    pub fn attention_weights(&self) -> &[Matrix<T>] {
        &self.attention.attn
    }
}

impl<T: Real> LayerParams<T> {
    pub fn init(channels: usize, slices: usize, heads: usize, ffn_width: usize, rng: &mut SplitMix64) -> Self {
        let d = channels / heads;
        let bound = 1.0 / (d as f64).sqrt();
        let slice_weight = Matrix::from_fn(channels, slices, |_, _| T::of(rng.uniform(-bound, bound)));
        let attention = TokenAttention::init(channels, rng);
        let ffn = Mlp::init(channels, ffn_width, channels, rng);
        LayerParams {
            heads,
            slice_weight,
            slice_bias: Matrix::zeros(heads, slices),
            log_temperature: Matrix::filled(1, 1, T::of(INITIAL_TEMPERATURE.ln())),
            attention,
            ffn,
            norm_attn: LayerNorm::new(channels),
            norm_ffn: LayerNorm::new(channels),
        }
    }

    /// All projections and biases zero, layer norms at scale 1 / shift 0.
    pub fn zeros(channels: usize, slices: usize, heads: usize, ffn_width: usize) -> Self {
        let z = |r, c| Linear::zeros(r, c);
        LayerParams {
            heads,
            slice_weight: Matrix::zeros(channels, slices),
            slice_bias: Matrix::zeros(heads, slices),
            log_temperature: Matrix::filled(1, 1, T::of(INITIAL_TEMPERATURE.ln())),
            attention: TokenAttention {
                query: z(channels, channels),
                key: z(channels, channels),
                value: z(channels, channels),
                output: z(channels, channels),
            },
            ffn: Mlp::zeros(channels, ffn_width, channels),
            norm_attn: LayerNorm::new(channels),
            norm_ffn: LayerNorm::new(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.slice_weight.rows()
    }

    pub fn slices(&self) -> usize {
        self.slice_weight.cols()
    }

    pub fn head_width(&self) -> usize {
        self.channels() / self.heads
    }

    pub fn temperature(&self) -> T {
        self.log_temperature.get(0, 0).exp()
    }

    fn head_projection(&self, h: usize) -> Matrix<T> {
        let d = self.head_width();
        self.slice_weight.row_block(h * d, d)
    }

    /// Physics attention (slice, aggregate, attend, deslice) on already
    /// normalized features.
    fn physics_attention(&self, u: &Matrix<T>) -> (Matrix<T>, Vec<HeadCache<T>>, AttentionCache<T>) {
        let (n, c) = u.shape();
        let d = self.head_width();
        let inv_tau = T::one() / self.temperature();
        let mut heads = Vec::with_capacity(self.heads);
        let mut all_tokens = Matrix::zeros(self.slices(), c);
        for h in 0..self.heads {
            let uh = u.col_block(h * d, d);
            let mut raw = matmul(&uh, &self.head_projection(h));
            raw.add_row_broadcast(self.slice_bias.row(h));
            let mut w = raw.clone();
            w.scale(inv_tau);
            softmax_rows(&mut w);
            let mass = col_sums(&w);
            let tokens = aggregate_tokens(&uh, &w);
            all_tokens.set_col_block(h * d, &tokens);
            heads.push(HeadCache { input: uh, raw_logits: raw, weights: w, mass, tokens });
        }
        let (att, att_cache) = self.attention.forward_cached(&all_tokens, self.heads);
        let mut out = Matrix::zeros(n, c);
        for (h, hc) in heads.iter().enumerate() {
            out.set_col_block(h * d, &deslice(&att.tokens.col_block(h * d, d), &hc.weights));
        }
        (out, heads, att_cache)
    }

    pub fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Matrix<T>) -> (Matrix<T>, LayerCache<T>) {
        let (u, ln1) = self.norm_attn.forward(x);
        let (pa, heads, attention) = self.physics_attention(&u);
        let attended = pa.add(x);
        let (v, ln2) = self.norm_ffn.forward(&attended);
        let (f, ffn) = self.ffn.forward_cached(&v);
        let out = f.add(&attended);
        (out, LayerCache { ln1, heads, attention, ln2, ffn })
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, cache: &LayerCache<T>, dout: &Matrix<T>, grad: &mut LayerParams<T>) -> Matrix<T> {
        let dv = self.ffn.backward(&cache.ffn, dout, &mut grad.ffn);
        let mut dattended = self.norm_ffn.backward(&cache.ln2, &dv, &mut grad.norm_ffn);
        dattended.add_assign(dout);
        let du = self.physics_attention_backward(cache, &dattended, grad);
        let mut dx = self.norm_attn.backward(&cache.ln1, &du, &mut grad.norm_attn);
        dx.add_assign(&dattended);
        dx
    }

    fn physics_attention_backward(
        &self,
        cache: &LayerCache<T>,
        dpa: &Matrix<T>,
        grad: &mut LayerParams<T>,
    ) -> Matrix<T> {
        let (n, c) = dpa.shape();
        let m = self.slices();
        let d = self.head_width();
        let tau = self.temperature();
        let inv_tau = T::one() / tau;
        let out_tokens = self.attention.output.forward(&cache.attention.mixed);

        // Deslice: x'_h = w_h T_h.
        let mut dtokens = Matrix::zeros(m, c);
        let mut dweights = Vec::with_capacity(self.heads);
        for (h, hc) in cache.heads.iter().enumerate() {
            let dh = dpa.col_block(h * d, d);
            dtokens.set_col_block(h * d, &matmul_tn(&hc.weights, &dh));
            dweights.push(matmul_nt(&dh, &out_tokens.col_block(h * d, d)));
        }

        let dz = self.attention.backward(&cache.attention, &dtokens, self.heads, &mut grad.attention);

        let mut du = Matrix::zeros(n, c);
        let mut dlog_tau = T::zero();
        for (h, hc) in cache.heads.iter().enumerate() {
            let dzh = dz.col_block(h * d, d);
            let floor = T::of(DENOMINATOR_FLOOR);
            // z_j = num_j / s_j
            let mut dnum = dzh.clone();
            let mut dmass = vec![T::zero(); m];
            for j in 0..m {
                let s = hc.mass[j].max(floor);
                let inv = T::one() / s;
                dnum.row_mut(j).iter_mut().for_each(|v| *v = *v * inv);
                let dot: T = dzh.row(j).iter().zip(hc.tokens.row(j)).map(|(&a, &b)| a * b).sum();
                dmass[j] = if hc.mass[j] > floor { -dot * inv } else { T::zero() };
            }
            let mut dw = dweights[h].clone();
            dw.add_assign(&matmul_nt(&hc.input, &dnum));
            dw.add_row_broadcast(&dmass);
            let mut duh = matmul(&hc.weights, &dnum);

            let dlogits = softmax_rows_backward(&hc.weights, &dw);
            let prod: Vec<T> = dlogits.as_slice().iter().zip(hc.raw_logits.as_slice()).map(|(&a, &b)| a * b).collect();
            dlog_tau = dlog_tau - pairwise_sum(&prod) * inv_tau;
            let mut draw = dlogits;
            draw.scale(inv_tau);

            let dproj = matmul_tn(&hc.input, &draw);
            let block = &mut grad.slice_weight.as_mut_slice()[h * d * m..(h + 1) * d * m];
            for (g, &v) in block.iter_mut().zip(dproj.as_slice()) {
                *g = *g + v;
            }
            for (g, s) in grad.slice_bias.row_mut(h).iter_mut().zip(col_sums(&draw)) {
                *g = *g + s;
            }
            duh.add_assign(&matmul_nt(&draw, &self.head_projection(h)));
            du.add_col_block(h * d, &duh);
        }
        let lt = grad.log_temperature.get(0, 0);
        grad.log_temperature.set(0, 0, lt + dlog_tau);
        du
    }
}

impl<T: Real> ParamSet<T> for LayerParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix<T>)) {
        f(join(prefix, "slice.weight"), &self.slice_weight);
        f(join(prefix, "slice.bias"), &self.slice_bias);
        f(join(prefix, "slice.log_temperature"), &self.log_temperature);
        self.attention.visit(&join(prefix, "attention"), f);
        self.ffn.visit(&join(prefix, "ffn"), f);
        self.norm_attn.visit(&join(prefix, "norm_attn"), f);
        self.norm_ffn.visit(&join(prefix, "norm_ffn"), f);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix<T>)) {
        f(join(prefix, "slice.weight"), &mut self.slice_weight);
        f(join(prefix, "slice.bias"), &mut self.slice_bias);
        f(join(prefix, "slice.log_temperature"), &mut self.log_temperature);
        self.attention.visit_mut(&join(prefix, "attention"), f);
        self.ffn.visit_mut(&join(prefix, "ffn"), f);
        self.norm_attn.visit_mut(&join(prefix, "norm_attn"), f);
        self.norm_ffn.visit_mut(&join(prefix, "norm_ffn"), f);
    }
}

/// One residual layer:
/// `x^ = PhysAttn(LN(x)) + x`, `out = FFN(LN(x^)) + x^`.
pub fn transolver_layer<T: Real>(x: &Matrix<T>, params: &LayerParams<T>) -> Matrix<T> {
    params.forward(x)
}
