//! Brute-force reference implementations written with nested loops over
//! plain `Vec<Vec<f64>>`, sharing no code with the library kernels.

#![allow(dead_code, clippy::needless_range_loop)]

use pasurf_core::linalg::Matrix;
use pasurf_core::model::ModelState;
use pasurf_core::nn::{LayerNorm, Linear, Mlp};
use pasurf_core::physatt::{LayerParams, TokenAttention};

pub type Grid = Vec<Vec<f64>>;

pub fn grid(m: &Matrix<f64>) -> Grid {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn max_abs_diff(a: &Grid, b: &Matrix<f64>) -> f64 {
    assert_eq!(a.len(), b.rows());
    let mut worst: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        assert_eq!(row.len(), b.cols());
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((v - b.get(i, j)).abs());
        }
    }
    worst
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn linear(x: &Grid, l: &Linear<f64>) -> Grid {
    let (fan_in, fan_out) = (l.weight.rows(), l.weight.cols());
    x.iter()
        .map(|row| {
            (0..fan_out)
                .map(|o| {
                    let mut s = l.bias.get(0, o);
                    for i in 0..fan_in {
                        s += row[i] * l.weight.get(i, o);
                    }
                    s
                })
                .collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn mlp(x: &Grid, m: &Mlp<f64>) -> Grid {
    let h: Grid = linear(x, &m.hidden).into_iter().map(|r| r.into_iter().map(gelu).collect()).collect();
    linear(&h, &m.out)
}

pub fn layer_norm(x: &Grid, ln: &LayerNorm<f64>) -> Grid {
    x.iter()
        .map(|row| {
            let c = row.len() as f64;
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c;
            row.iter()
                .enumerate()
                .map(|(k, v)| (v - mean) / (var + 1e-5).sqrt() * ln.scale.get(0, k) + ln.shift.get(0, k))
                .collect()
        })
        .collect()
}

/// `softmax((x P + b) / tau)` row by row.
pub fn slice(x: &Grid, projection: &[Vec<f64>], bias: &[f64], tau: f64) -> Grid {
    let m = bias.len();
    x.iter()
        .map(|row| {
            let logits: Vec<f64> = (0..m)
                .map(|j| {
                    let mut s = bias[j];
                    for (k, v) in row.iter().enumerate() {
                        s += v * projection[k][j];
                    }
                    s / tau
                })
                .collect();
            softmax(&logits)
        })
        .collect()
}

pub fn aggregate(x: &Grid, w: &Grid) -> Grid {
    let m = w[0].len();
    let c = x[0].len();
    (0..m)
        .map(|j| {
            let mass: f64 = w.iter().map(|r| r[j]).sum();
            (0..c).map(|k| x.iter().zip(w).map(|(xr, wr)| wr[j] * xr[k]).sum::<f64>() / mass.max(1e-30)).collect()
        })
        .collect()
}

pub fn deslice(z: &Grid, w: &Grid) -> Grid {
    let c = z[0].len();
    w.iter().map(|wr| (0..c).map(|k| wr.iter().zip(z).map(|(wj, zr)| wj * zr[k]).sum()).collect()).collect()
}

/// Token self-attention with `heads` heads followed by the output map.
pub fn attend(z: &Grid, att: &TokenAttention<f64>, heads: usize) -> (Grid, Vec<Grid>) {
    let q = linear(z, &att.query);
    let k = linear(z, &att.key);
    let v = linear(z, &att.value);
    let (m, c) = (z.len(), z[0].len());
    let d = c / heads;
    let mut mixed = vec![vec![0.0; c]; m];
    let mut weights = Vec::new();
    for h in 0..heads {
        let mut a = vec![vec![0.0; m]; m];
        for i in 0..m {
            let scores: Vec<f64> = (0..m)
                .map(|j| (0..d).map(|t| q[i][h * d + t] * k[j][h * d + t]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            a[i] = softmax(&scores);
            for t in 0..d {
                mixed[i][h * d + t] = (0..m).map(|j| a[i][j] * v[j][h * d + t]).sum();
            }
        }
        weights.push(a);
    }
    (linear(&mixed, &att.output), weights)
}

pub struct LayerTrace {
    pub slice_weights: Vec<Grid>,
    pub tokens: Vec<Grid>,
    pub attended_tokens: Grid,
    pub output: Grid,
}

pub fn layer(x: &Grid, p: &LayerParams<f64>) -> LayerTrace {
    let heads = p.heads;
    let c = x[0].len();
    let d = c / heads;
    let m = p.slice_weight.cols();
    let tau = p.log_temperature.get(0, 0).exp();
    let u = layer_norm(x, &p.norm_attn);
    let mut slice_weights = Vec::new();
    let mut tokens = Vec::new();
    let mut all_tokens = vec![vec![0.0; c]; m];
    for h in 0..heads {
        let uh: Grid = u.iter().map(|r| r[h * d..(h + 1) * d].to_vec()).collect();
        let proj: Grid = (0..d).map(|k| (0..m).map(|j| p.slice_weight.get(h * d + k, j)).collect()).collect();
        let w = slice(&uh, &proj, p.slice_bias.row(h), tau);
        let z = aggregate(&uh, &w);
        for j in 0..m {
            all_tokens[j][h * d..(h + 1) * d].copy_from_slice(&z[j]);
        }
        slice_weights.push(w);
        tokens.push(z);
    }
    let (att, _) = attend(&all_tokens, &p.attention, heads);
    let mut pa = vec![vec![0.0; c]; x.len()];
    for h in 0..heads {
        let zh: Grid = att.iter().map(|r| r[h * d..(h + 1) * d].to_vec()).collect();
        let back = deslice(&zh, &slice_weights[h]);
        for (i, r) in back.iter().enumerate() {
            pa[i][h * d..(h + 1) * d].copy_from_slice(r);
        }
    }
    let attended: Grid = pa.iter().zip(x).map(|(a, b)| a.iter().zip(b).map(|(s, t)| s + t).collect()).collect();
    let f = mlp(&layer_norm(&attended, &p.norm_ffn), &p.ffn);
    let output = f.iter().zip(&attended).map(|(a, b)| a.iter().zip(b).map(|(s, t)| s + t).collect()).collect();
    LayerTrace { slice_weights, tokens, attended_tokens: att, output }
}

pub struct ModelOutput {
    pub drag: f64,
    pub pressure: Vec<f64>,
    pub velocity: Grid,
}

/// Full network on an already assembled input matrix, surface rows first.
pub fn model(input: &Grid, n_surface: usize, state: &ModelState<f64>) -> ModelOutput {
    let p = &state.params;
    let mut x = linear(input, &p.embedding);
    for l in &p.layers {
        x = layer(&x, l).output;
    }
    let c = x[0].len();
    let pooled: Vec<f64> =
        (0..c).map(|k| x[..n_surface].iter().map(|r| r[k]).sum::<f64>() / n_surface as f64).collect();
    let drag = mlp(&vec![pooled], &p.drag_head)[0][0];
    let pressure = mlp(&x[..n_surface].to_vec(), &p.pressure_head).into_iter().map(|r| r[0]).collect();
    let velocity = if x.len() > n_surface { mlp(&x[n_surface..].to_vec(), &p.velocity_head) } else { Vec::new() };
    ModelOutput { drag, pressure, velocity }
}
