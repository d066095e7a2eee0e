//! Full surrogate: embedding, `L` physics-attention layers, and three heads.
//!
//! Surface and volume points share one sequence. Each point is embedded
//! from `[position, normal?, observed features, role flag]`, where the role
//! flag is 1 for surface points and 0 for volume points. After the layer
//! stack the drag head reads the mean of the surface-point features, the
//! pressure head maps each surface point, and the velocity head maps each
//! volume point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{col_means, Matrix};
use crate::nn::{join, Linear, Mlp, MlpCache, ParamSet};
use crate::physatt::{LayerCache, LayerParams};
use crate::pointcloud::{normalize_cloud, NormalizationStats, PointCloud, Vec3};
use crate::real::Real;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub channels: usize,
    pub slices: usize,
    pub heads: usize,
    pub ffn_width: usize,
    /// 3 for positions only, 6 for positions plus normals.
    pub geometry_width: usize,
    /// Observed per-point channels.
    pub feature_width: usize,
    pub head_width: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Full-size configuration: 6 layers, 256 channels, 64 slices.
    fn default() -> Self {
        ModelConfig::with_dims(6, 256, 64, 8)
    }
}

impl ModelConfig {
    /// Feed-forward width `2C`, head width `C`, normals as input.
    pub fn with_dims(layers: usize, channels: usize, slices: usize, heads: usize) -> Self {
        ModelConfig {
            layers,
            channels,
            slices,
            heads,
            ffn_width: 2 * channels,
            geometry_width: 6,
            feature_width: 0,
            head_width: channels,
            seed: 0,
        }
    }

    /// Workstation-sized profile used for training checks.
    pub fn desk() -> Self {
        ModelConfig::with_dims(2, 64, 16, 4)
    }

    /// Smallest useful model, for gradient and oracle checks.
    pub fn tiny() -> Self {
        ModelConfig::with_dims(1, 4, 2, 1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("channels", self.channels),
            ("slices", self.slices),
            ("heads", self.heads),
            ("ffn_width", self.ffn_width),
            ("head_width", self.head_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid("model config", format!("{name} must be positive")));
            }
        }
        if !self.channels.is_multiple_of(self.heads) {
            return Err(Error::invalid(
                "model config",
                format!("channels ({}) must be divisible by heads ({})", self.channels, self.heads),
            ));
        }
        if self.geometry_width != 3 && self.geometry_width != 6 {
            return Err(Error::invalid("model config", "geometry_width must be 3 or 6"));
        }
        Ok(())
    }

    /// Total scalar parameter count, or `None` on overflow.
    pub fn num_params(&self) -> Option<usize> {
        let (c, m, h, f, w) = (self.channels, self.slices, self.heads, self.ffn_width, self.head_width);
        let linear = |i: usize, o: usize| i.checked_mul(o)?.checked_add(o);
        let mlp = |i, hid, o| linear(i, hid)?.checked_add(linear(hid, o)?);
        let layer = c
            .checked_mul(m)?
            .checked_add(h.checked_mul(m)?)?
            .checked_add(1)?
            .checked_add(linear(c, c)?.checked_mul(4)?)?
            .checked_add(mlp(c, f, c)?)?
            .checked_add(c.checked_mul(4)?)?;
        linear(self.input_width(), c)?
            .checked_add(layer.checked_mul(self.layers)?)?
            .checked_add(mlp(c, w, 1)?.checked_mul(2)?)?
            .checked_add(mlp(c, w, 3)?)
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// Embedding input width: geometry, observed features, role flag.
    pub fn input_width(&self) -> usize {
        self.geometry_width + self.feature_width + 1
    }
}

/// All trainable tensors. Gradients and optimizer moments use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub embedding: Linear<T>,
    pub layers: Vec<LayerParams<T>>,
    pub drag_head: Mlp<T>,
    pub pressure_head: Mlp<T>,
    pub velocity_head: Mlp<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SplitMix64::new(config.seed);
        let c = config.channels;
        let embedding = Linear::init(config.input_width(), c, &mut rng);
        let layers = (0..config.layers)
            .map(|_| LayerParams::init(c, config.slices, config.heads, config.ffn_width, &mut rng))
            .collect();
        Ok(ModelParams {
            embedding,
            layers,
            drag_head: Mlp::init(c, config.head_width, 1, &mut rng),
            pressure_head: Mlp::init(c, config.head_width, 1, &mut rng),
            velocity_head: Mlp::init(c, config.head_width, 3, &mut rng),
        })
    }
}

impl<T: Real> ParamSet<T> for ModelParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix<T>)) {
        self.embedding.visit(&join(prefix, "embedding"), f);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layers.{i}")), f);
        }
        self.drag_head.visit(&join(prefix, "heads.drag"), f);
        self.pressure_head.visit(&join(prefix, "heads.pressure"), f);
        self.velocity_head.visit(&join(prefix, "heads.velocity"), f);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix<T>)) {
        self.embedding.visit_mut(&join(prefix, "embedding"), f);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layers.{i}")), f);
        }
        self.drag_head.visit_mut(&join(prefix, "heads.drag"), f);
        self.pressure_head.visit_mut(&join(prefix, "heads.pressure"), f);
        self.velocity_head.visit_mut(&join(prefix, "heads.velocity"), f);
    }
}

/// Trained (or freshly initialized) model with the statistics its inputs
/// must be normalized with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub config: ModelConfig,
    pub stats: NormalizationStats,
    pub params: ModelParams<T>,
}

pub fn init_model<T: Real>(config: &ModelConfig, stats: NormalizationStats) -> Result<ModelState<T>> {
    stats.validate()?;
    Ok(ModelState { config: config.clone(), stats, params: ModelParams::init(config)? })
}

/// Network outputs in the element type, normalized target units.
#[derive(Debug, Clone, PartialEq)]
pub struct RawOutput<T> {
    pub drag: T,
    /// `N_s x 1`.
    pub pressure: Matrix<T>,
    /// `N_v x 3`.
    pub velocity: Matrix<T>,
}

impl<T: Real> RawOutput<T> {
    pub fn to_prediction(&self) -> Prediction {
        Prediction {
            drag: self.drag.f64(),
            pressure: self.pressure.as_slice().iter().map(|v| v.f64()).collect(),
            velocity: (0..self.velocity.rows())
                .map(|r| {
                    let row = self.velocity.row(r);
                    [row[0].f64(), row[1].f64(), row[2].f64()]
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub drag: f64,
    pub pressure: Vec<f64>,
    pub velocity: Vec<Vec3>,
}

impl Prediction {
    /// Maps standardized outputs back to physical target units.
    pub fn denormalize(&self, stats: &NormalizationStats) -> Prediction {
        let v = &stats.velocity;
        Prediction {
            drag: stats.drag.inverse(self.drag),
            pressure: self.pressure.iter().map(|&p| stats.pressure.inverse(p)).collect(),
            velocity: self
                .velocity
                .iter()
                .map(|u| [v[0].inverse(u[0]), v[1].inverse(u[1]), v[2].inverse(u[2])])
                .collect(),
        }
    }
}

pub struct ForwardCache<T> {
    input: Matrix<T>,
    layers: Vec<LayerCache<T>>,
    n_surface: usize,
    pooled: MlpCache<T>,
    pressure: MlpCache<T>,
    velocity: MlpCache<T>,
}

impl<T: Real> ForwardCache<T> {
    pub fn layer_caches(&self) -> &[LayerCache<T>] {
        &self.layers
    }
}

/// Per-point embedding input, surface rows first, then volume rows.
pub fn input_features<T: Real>(config: &ModelConfig, surface: &PointCloud, volume: &PointCloud) -> Result<Matrix<T>> {
    for (name, cloud) in [("surface", surface), ("volume", volume)] {
        if cloud.feature_width() != config.feature_width {
            return Err(Error::Shape(format!(
                "{name} cloud has {} feature channels, model expects {}",
                cloud.feature_width(),
                config.feature_width
            )));
        }
    }
    if surface.is_empty() {
        return Err(Error::Shape("surface cloud is empty".into()));
    }
    let with_normals = config.geometry_width == 6;
    if with_normals && surface.normals().is_none() {
        return Err(Error::Shape("model expects surface normals but the cloud has none".into()));
    }
    let width = config.input_width();
    let n = surface.len() + volume.len();
    let mut m = Matrix::zeros(n, width);
    let mut fill = |row: usize, cloud: &PointCloud, i: usize| {
        let r = m.row_mut(row);
        let p = cloud.positions()[i];
        for k in 0..3 {
            r[k] = T::of(p[k]);
        }
        let mut off = 3;
        if with_normals {
            if let Some(ns) = cloud.normals() {
                for k in 0..3 {
                    r[3 + k] = T::of(ns[i][k]);
                }
            }
            off = 6;
        }
        for (k, &u) in cloud.feature_row(i).iter().enumerate() {
            r[off + k] = T::of(u);
        }
        r[width - 1] = T::of(cloud.role().flag());
    };
    for i in 0..surface.len() {
        fill(i, surface, i);
    }
    for i in 0..volume.len() {
        fill(surface.len() + i, volume, i);
    }
    Ok(m)
}

impl<T: Real> ModelState<T> {
    /// Single pass producing drag, pressure and velocity. Inputs must already
    /// be normalized with `self.stats`; outputs are in normalized units.
    pub fn forward(&self, surface: &PointCloud, volume: &PointCloud) -> Result<Prediction> {
        Ok(self.forward_cached(surface, volume)?.0.to_prediction())
    }

    /// Prediction in physical units from raw (unnormalized) clouds.
    pub fn predict(&self, surface: &PointCloud, volume: &PointCloud) -> Result<Prediction> {
        let s = normalize_cloud(surface, &self.stats);
        let v = normalize_cloud(volume, &self.stats);
        Ok(self.forward(&s, &v)?.denormalize(&self.stats))
    }

    pub fn forward_raw(&self, surface: &PointCloud, volume: &PointCloud) -> Result<RawOutput<T>> {
        Ok(self.forward_cached(surface, volume)?.0)
    }

    pub fn forward_cached(&self, surface: &PointCloud, volume: &PointCloud) -> Result<(RawOutput<T>, ForwardCache<T>)> {
        let input = input_features::<T>(&self.config, surface, volume)?;
        self.forward_features(input, surface.len())
    }

    pub fn forward_features(&self, input: Matrix<T>, n_surface: usize) -> Result<(RawOutput<T>, ForwardCache<T>)> {
        if input.cols() != self.config.input_width() {
            return Err(Error::Shape(format!(
                "input has {} columns, model expects {}",
                input.cols(),
                self.config.input_width()
            )));
        }
        let p = &self.params;
        let mut x = p.embedding.forward(&input);
        let mut layers = Vec::with_capacity(p.layers.len());
        for layer in &p.layers {
            let (next, cache) = layer.forward_cached(&x);
            layers.push(cache);
            x = next;
        }
        let n_volume = x.rows() - n_surface;
        let surf = x.row_block(0, n_surface);
        let vol = x.row_block(n_surface, n_volume);
        let pooled = Matrix::from_vec(1, x.cols(), col_means(&surf));
        let (drag, pooled_cache) = p.drag_head.forward_cached(&pooled);
        let (pressure, pressure_cache) = p.pressure_head.forward_cached(&surf);
        let (velocity, velocity_cache) = p.velocity_head.forward_cached(&vol);
        let out = RawOutput { drag: drag.get(0, 0), pressure, velocity };
        let cache = ForwardCache {
            input,
            layers,
            n_surface,
            pooled: pooled_cache,
            pressure: pressure_cache,
            velocity: velocity_cache,
        };
        Ok((out, cache))
    }

    /// Gradient of a loss w.r.t. every parameter given its gradient w.r.t.
    /// the three outputs.
    pub fn backward(&self, cache: &ForwardCache<T>, dout: &RawOutput<T>) -> ModelParams<T> {
        let p = &self.params;
        let mut grad = p.zeroed();
        let c = self.config.channels;
        let n = cache.input.rows();
        let ns = cache.n_surface;

        let dpooled = p.drag_head.backward(&cache.pooled, &Matrix::filled(1, 1, dout.drag), &mut grad.drag_head);
        let dsurf = p.pressure_head.backward(&cache.pressure, &dout.pressure, &mut grad.pressure_head);
        let dvol = p.velocity_head.backward(&cache.velocity, &dout.velocity, &mut grad.velocity_head);

        let mut dx = Matrix::zeros(n, c);
        let inv_ns = T::one() / T::of(ns as f64);
        for r in 0..ns {
            let row = dx.row_mut(r);
            for ((o, &a), &b) in row.iter_mut().zip(dsurf.row(r)).zip(dpooled.row(0)) {
                *o = a + b * inv_ns;
            }
        }
        for r in 0..(n - ns) {
            dx.row_mut(ns + r).copy_from_slice(dvol.row(r));
        }
        for (i, layer) in p.layers.iter().enumerate().rev() {
            dx = layer.backward(&cache.layers[i], &dx, &mut grad.layers[i]);
        }
        p.embedding.backward(&cache.input, &dx, &mut grad.embedding);
        grad
    }

    pub fn cast<U: Real>(&self) -> ModelState<U> {
        let mut out = ModelState::<U> {
            config: self.config.clone(),
            stats: self.stats.clone(),
            params: ModelParams::init(&self.config).expect("config already validated"),
        };
        let mut src = Vec::new();
        self.params.visit("", &mut |_, m| src.push(m.cast::<U>()));
        let mut it = src.into_iter();
        out.params.visit_mut("", &mut |_, m| *m = it.next().expect("same layout"));
        out
    }
}
