//! Composite loss, Adam, the per-sample training loop and the
//! finite-difference gradient harness.
//!
//! Losses are always evaluated in `f64` from the network outputs, whatever
//! the parameter precision, and their gradients are cast back.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum, Matrix};
use crate::model::{init_model, ModelConfig, ModelParams, ModelState, RawOutput};
use crate::nn::ParamSet;
use crate::pointcloud::{compute_stats, format_decimal, normalize, PointCloud, Role, SampleRecord, Vec3};
use crate::real::{Precision, Real};
use crate::rng::SplitMix64;

const DEGENERATE_NORM: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub velocity: f64,
    pub pressure: f64,
    pub drag: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { velocity: 1.0, pressure: 1.0, drag: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.velocity, self.pressure, self.drag];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("loss weights", "weights must be finite and non-negative"));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid("loss weights", "at least one weight must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub precision: Precision,
    /// Write `epoch_NNNN.ckpt` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            loss_weights: LossWeights::default(),
            precision: Precision::F32,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("train config", "learning_rate must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid("train config", format!("{name} must be in [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("train config", "epsilon must be positive"));
        }
        self.loss_weights.validate()
    }
}

/// `‖y − ŷ‖₂ / ‖y‖₂` over all entries.
pub fn relative_l2(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    Ok(relative_l2_grad(y, y_hat)?.0)
}

/// Relative L2 error and its gradient with respect to `y_hat`.
fn relative_l2_grad(y: &[f64], y_hat: &[f64]) -> Result<(f64, Vec<f64>)> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape(format!("relative_l2: {} targets vs {} predictions", y.len(), y_hat.len())));
    }
    let ny = pairwise_sum(&y.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt();
    if ny.is_nan() || ny < DEGENERATE_NORM {
        return Err(Error::DegenerateTarget { norm: ny });
    }
    let e: Vec<f64> = y_hat.iter().zip(y).map(|(p, t)| p - t).collect();
    let ne = pairwise_sum(&e.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt();
    let grad = if ne == 0.0 { vec![0.0; e.len()] } else { e.iter().map(|v| v / (ne * ny)).collect() };
    Ok((ne / ny, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub velocity: f64,
    pub pressure: f64,
    pub drag: f64,
}

impl LossBreakdown {
    fn add(&mut self, o: &LossBreakdown) {
        self.total += o.total;
        self.velocity += o.velocity;
        self.pressure += o.pressure;
        self.drag += o.drag;
    }

    fn scaled(&self, s: f64) -> LossBreakdown {
        LossBreakdown {
            total: self.total * s,
            velocity: self.velocity * s,
            pressure: self.pressure * s,
            drag: self.drag * s,
        }
    }
}

/// Gradient of the composite loss with respect to each output.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrad {
    pub drag: f64,
    pub pressure: Vec<f64>,
    pub velocity: Vec<Vec3>,
}

impl OutputGrad {
    pub fn to_raw<T: Real>(&self) -> RawOutput<T> {
        RawOutput {
            drag: T::of(self.drag),
            pressure: Matrix::from_vec(self.pressure.len(), 1, self.pressure.iter().map(|&v| T::of(v)).collect()),
            velocity: Matrix::from_vec(
                self.velocity.len(),
                3,
                self.velocity.iter().flatten().map(|&v| T::of(v)).collect(),
            ),
        }
    }
}

/// Composite loss against (normalized) targets. An empty volume cloud
/// contributes nothing to the velocity term.
pub fn total_loss(
    drag: f64,
    pressure: &[f64],
    velocity: &[Vec3],
    truth: &SampleRecord,
    weights: &LossWeights,
) -> Result<(LossBreakdown, OutputGrad)> {
    let (lp, gp) = relative_l2_grad(&truth.pressure, pressure)?;
    let (lv, gv) = if truth.velocity.is_empty() && velocity.is_empty() {
        (0.0, Vec::new())
    } else {
        let y: Vec<f64> = truth.velocity.iter().flatten().copied().collect();
        let p: Vec<f64> = velocity.iter().flatten().copied().collect();
        relative_l2_grad(&y, &p)?
    };
    let dc = drag - truth.drag;
    let ld = dc * dc;
    let parts = LossBreakdown {
        total: weights.velocity * lv + weights.pressure * lp + weights.drag * ld,
        velocity: lv,
        pressure: lp,
        drag: ld,
    };
    let grad = OutputGrad {
        drag: 2.0 * weights.drag * dc,
        pressure: gp.iter().map(|g| weights.pressure * g).collect(),
        velocity: gv
            .chunks(3)
            .map(|c| [weights.velocity * c[0], weights.velocity * c[1], weights.velocity * c[2]])
            .collect(),
    };
    Ok((parts, grad))
}

fn raw_loss<T: Real>(out: &RawOutput<T>, truth: &SampleRecord, w: &LossWeights) -> Result<(LossBreakdown, OutputGrad)> {
    let p = out.to_prediction();
    total_loss(p.drag, &p.pressure, &p.velocity, truth, w)
}

/// Loss and parameter gradient for one normalized sample.
pub fn loss_and_grad<T: Real>(
    model: &ModelState<T>,
    sample: &SampleRecord,
    weights: &LossWeights,
) -> Result<(LossBreakdown, ModelParams<T>)> {
    let (out, cache) = model.forward_cached(&sample.surface, &sample.volume)?;
    let (loss, g) = raw_loss(&out, sample, weights)?;
    Ok((loss, model.backward(&cache, &g.to_raw())))
}

/// Mean loss over normalized samples.
pub fn dataset_loss<T: Real>(
    model: &ModelState<T>,
    samples: &[SampleRecord],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    if samples.is_empty() {
        return Err(Error::Empty("dataset_loss needs at least one sample"));
    }
    let mut acc = LossBreakdown::default();
    for s in samples {
        let out = model.forward_raw(&s.surface, &s.volume)?;
        acc.add(&raw_loss(&out, s, weights)?.0);
    }
    Ok(acc.scaled(1.0 / samples.len() as f64))
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        AdamState { m: params.zeroed(), v: params.zeroed(), t: 0 }
    }
}

/// One bias-corrected Adam update. Parameters are untouched if any gradient
/// entry is non-finite.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut bad = None;
    grads.visit("", &mut |name, g| {
        if bad.is_none() && !g.all_finite() {
            bad = Some(name);
        }
    });
    if let Some(tensor) = bad {
        return Err(Error::NonFiniteGradient { tensor });
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let mut gs = Vec::new();
    grads.visit("", &mut |_, g| gs.push(g));
    let ps = params.tensors_mut();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    let (tb1, tb2) = (T::of(b1), T::of(b2));
    let (ob1, ob2) = (T::of(1.0 - b1), T::of(1.0 - b2));
    let (lr, eps) = (T::of(cfg.learning_rate), T::of(cfg.epsilon));
    let (ic1, ic2) = (T::of(1.0 / c1), T::of(1.0 / c2));
    for (((p, m), v), g) in ps.into_iter().zip(ms).zip(vs).zip(gs) {
        let p = p.as_mut_slice();
        let m = m.as_mut_slice();
        let v = v.as_mut_slice();
        for i in 0..p.len() {
            let gi = g.as_slice()[i];
            m[i] = tb1 * m[i] + ob1 * gi;
            v[i] = tb2 * v[i] + ob2 * gi * gi;
            let mh = m[i] * ic1;
            let vh = v[i] * ic2;
            p[i] = p[i] - lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossBreakdown,
}

pub const LOSS_CSV_HEADER: &str = "epoch,step,loss_total,loss_v,loss_p,loss_cd";

pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let l = &r.loss;
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch,
            r.step,
            format_decimal(l.total),
            format_decimal(l.velocity),
            format_decimal(l.pressure),
            format_decimal(l.drag)
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: ModelState<T>,
    pub best: ModelState<T>,
    pub best_epoch: usize,
    /// Epoch 0 evaluates the initial model; later epochs are means of the
    /// per-step losses seen during that epoch.
    pub train_log: Vec<LossRow>,
    /// Empty unless validation samples were given.
    pub val_log: Vec<LossRow>,
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const TRAIN_LOSS_CSV: &str = "loss.csv";
pub const VAL_LOSS_CSV: &str = "val_loss.csv";

/// Trains on `train` (raw, unnormalized samples). Normalization statistics
/// come from the training set only. When `out_dir` is given, loss logs and
/// the final and best checkpoints are written there.
pub fn train<T: Real>(
    train: &[SampleRecord],
    val: &[SampleRecord],
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&LossRow, Option<&LossRow>),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training needs at least one sample"));
    }
    let stats = compute_stats(train)?;
    let train: Vec<SampleRecord> = train.iter().map(|r| normalize(r, &stats)).collect::<Result<_>>()?;
    let val: Vec<SampleRecord> = val.iter().map(|r| normalize(r, &stats)).collect::<Result<_>>()?;
    let mut model = init_model::<T>(model_config, stats)?;
    let w = cfg.loss_weights;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let eval = |m: &ModelState<T>, set: &[SampleRecord], epoch: usize| -> Result<LossBreakdown> {
        let l = dataset_loss(m, set, &w)?;
        if !l.total.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, sample: "<evaluation>".into() });
        }
        Ok(l)
    };

    let mut train_log = vec![LossRow { epoch: 0, step: 0, loss: eval(&model, &train, 0)? }];
    let mut val_log = Vec::new();
    if !val.is_empty() {
        val_log.push(LossRow { epoch: 0, step: 0, loss: eval(&model, &val, 0)? });
    }
    on_epoch(&train_log[0], val_log.first());
    let score = |t: &[LossRow], v: &[LossRow]| v.last().or(t.last()).map_or(f64::INFINITY, |r| r.loss.total);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_score = score(&train_log, &val_log);

    let mut adam = AdamState::new(&model.params);
    let mut step = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        SplitMix64::derive(cfg.seed, epoch as u64).shuffle(&mut order);
        let mut acc = LossBreakdown::default();
        for &i in &order {
            let sample = &train[i];
            let (loss, grads) = loss_and_grad(&model, sample, &w)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, sample: sample.id.clone() });
            }
            adam_step(&mut model.params, &grads, &mut adam, cfg)?;
            acc.add(&loss);
            step += 1;
        }
        train_log.push(LossRow { epoch, step, loss: acc.scaled(1.0 / train.len() as f64) });
        if !val.is_empty() {
            val_log.push(LossRow { epoch, step, loss: eval(&model, &val, epoch)? });
        }
        on_epoch(train_log.last().expect("non-empty"), val_log.last());
        let s = score(&train_log, &val_log);
        if s < best_score {
            best_score = s;
            best = model.clone();
            best_epoch = epoch;
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                save_checkpoint(&model, &dir.join(format!("epoch_{epoch:04}.ckpt")))?;
            }
        }
    }

    if let Some(dir) = out_dir {
        let write = |name: &str, text: String| -> Result<PathBuf> {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            Ok(p)
        };
        write(TRAIN_LOSS_CSV, loss_csv(&train_log))?;
        if !val_log.is_empty() {
            write(VAL_LOSS_CSV, loss_csv(&val_log))?;
        }
        save_checkpoint(&model, &dir.join(FINAL_CHECKPOINT))?;
        save_checkpoint(&best, &dir.join(BEST_CHECKPOINT))?;
    }
    Ok(TrainOutcome { model, best, best_epoch, train_log, val_log })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub model: ModelConfig,
    pub tolerance: f64,
    pub step: f64,
    pub n_surface: usize,
    pub n_volume: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            model: ModelConfig::tiny(),
            tolerance: 1e-5,
            step: 1e-5,
            n_surface: 3,
            n_volume: 2,
            seed: 0,
            loss_weights: LossWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Random sample with unit normals and random targets, sized for
/// gradient checks.
pub fn random_sample(n_surface: usize, n_volume: usize, feature_width: usize, seed: u64) -> Result<SampleRecord> {
    let mut rng = SplitMix64::new(seed);
    let point = |rng: &mut SplitMix64| [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
    let sp: Vec<Vec3> = (0..n_surface).map(|_| point(&mut rng)).collect();
    let normals = sp
        .iter()
        .map(|p| {
            let l = crate::pointcloud::norm(p).max(1e-9);
            [p[0] / l, p[1] / l, p[2] / l]
        })
        .collect();
    let vp: Vec<Vec3> = (0..n_volume).map(|_| point(&mut rng)).collect();
    let feats = |n: usize, rng: &mut SplitMix64| (0..n * feature_width).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let sf = feats(n_surface, &mut rng);
    let vf = feats(n_volume, &mut rng);
    let surface = PointCloud::new(sp, Some(normals), sf, feature_width, Role::Surface)?;
    let volume = PointCloud::new(vp, None, vf, feature_width, Role::Volume)?;
    let pressure = (0..n_surface).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let velocity = (0..n_volume).map(|_| point(&mut rng)).collect();
    let drag = rng.uniform(-1.0, 1.0);
    SampleRecord::new("gradcheck", surface, volume, pressure, velocity, drag)
}

pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    grad_check_with_hook(cfg, |_| {})
}

/// As [`grad_check`], with `hook` applied to the analytic gradient before
/// comparison.
pub fn grad_check_with_hook(
    cfg: &GradCheckConfig,
    hook: impl FnOnce(&mut ModelParams<f64>),
) -> Result<GradCheckReport> {
    let mut model = init_model::<f64>(&cfg.model, crate::pointcloud::NormalizationStats::identity())?;
    let sample = random_sample(cfg.n_surface, cfg.n_volume, cfg.model.feature_width, cfg.seed ^ 0x9e37_79b9)?;
    let w = cfg.loss_weights;
    let (_, mut analytic) = loss_and_grad(&model, &sample, &w)?;
    hook(&mut analytic);

    let mut shapes = Vec::new();
    model.params.visit("", &mut |name, m| shapes.push((name, m.len())));
    let h = cfg.step;
    let mut tensors = Vec::new();
    let mut max_rel: f64 = 0.0;
    for (ti, (name, len)) in shapes.into_iter().enumerate() {
        let mut numeric = Vec::with_capacity(len);
        for i in 0..len {
            let orig = tensor_mut(&mut model.params, ti).as_slice()[i];
            let at = |v: f64, model: &mut ModelState<f64>| -> Result<f64> {
                tensor_mut(&mut model.params, ti).as_mut_slice()[i] = v;
                let out = model.forward_raw(&sample.surface, &sample.volume)?;
                Ok(raw_loss(&out, &sample, &w)?.0.total)
            };
            let up = at(orig + h, &mut model)?;
            let down = at(orig - h, &mut model)?;
            tensor_mut(&mut model.params, ti).as_mut_slice()[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        let a = tensor_mut(&mut analytic, ti).as_slice().to_vec();
        let diff = a.iter().zip(&numeric).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel = if diff == 0.0 { 0.0 } else { diff / na.max(nn).max(1e-12) };
        max_rel = max_rel.max(rel);
        tensors.push(TensorCheck { name, len, rel_error: rel });
    }
    Ok(GradCheckReport { tensors, max_rel_error: max_rel, tolerance: cfg.tolerance, passed: max_rel < cfg.tolerance })
}

fn tensor_mut<T: Real>(p: &mut ModelParams<T>, index: usize) -> &mut Matrix<T> {
    p.tensors_mut().into_iter().nth(index).expect("tensor index in range")
}
