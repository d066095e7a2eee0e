//! Flat run configuration shared by every subcommand.
//!
//! Precedence, lowest to highest: built-in defaults, the `--config` JSON
//! file, command-line flags. Unknown keys in the file are rejected.

use serde::{Deserialize, Serialize};

use pasurf_core::datagen::DatasetSpec;
use pasurf_core::metrics::VelocityMode;
use pasurf_core::model::ModelConfig;
use pasurf_core::sampling::{SamplingConfig, SamplingMethod};
use pasurf_core::training::{GradCheckConfig, LossWeights, TrainConfig};
use pasurf_core::Precision;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 6 layers, 256 channels, 64 slices, 8 heads.
    Full,
    /// 2 layers, 64 channels, 16 slices, 4 heads.
    #[default]
    Desk,
    /// 1 layer, 4 channels, 2 slices, 1 head.
    Tiny,
}

impl Profile {
    pub fn model(self) -> ModelConfig {
        match self {
            Profile::Full => ModelConfig::default(),
            Profile::Desk => ModelConfig::desk(),
            Profile::Tiny => ModelConfig::tiny(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed for generation, sampling, initialization and epoch order.
    pub seed: u64,
    pub precision: Precision,

    pub n_samples: usize,
    pub n_surface: usize,
    pub n_volume: usize,
    pub axis_a: [f64; 2],
    pub axis_b: [f64; 2],
    pub axis_c: [f64; 2],
    pub r_min: f64,
    pub r_max: f64,

    pub sampling_method: SamplingMethod,
    /// Surface points kept by `sample`, and by `train`/`evaluate` when
    /// non-zero (0 keeps every point).
    pub sampling_points: usize,
    pub knn_k: usize,
    pub curvature_fraction: f64,
    pub grid_cells: usize,

    pub profile: Profile,
    pub layers: Option<usize>,
    pub channels: Option<usize>,
    pub slices: Option<usize>,
    pub heads: Option<usize>,
    pub ffn_width: Option<usize>,
    pub head_width: Option<usize>,
    pub geometry_width: Option<usize>,

    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub loss_weight_v: f64,
    pub loss_weight_p: f64,
    pub loss_weight_cd: f64,
    pub checkpoint_every: usize,

    pub velocity_mode: VelocityMode,

    pub grad_tolerance: f64,
    pub grad_step: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = DatasetSpec::default();
        let samp = SamplingConfig::default();
        let train = TrainConfig::default();
        let grad = GradCheckConfig::default();
        RunConfig {
            seed: 0,
            precision: Precision::F32,
            n_samples: data.n_samples,
            n_surface: data.n_surface,
            n_volume: data.n_volume,
            axis_a: data.axis_ranges[0],
            axis_b: data.axis_ranges[1],
            axis_c: data.axis_ranges[2],
            r_min: data.r_min,
            r_max: data.r_max,
            sampling_method: samp.method,
            sampling_points: 0,
            knn_k: samp.knn_k,
            curvature_fraction: samp.curvature_fraction,
            grid_cells: samp.grid_cells,
            profile: Profile::default(),
            layers: None,
            channels: None,
            slices: None,
            heads: None,
            ffn_width: None,
            head_width: None,
            geometry_width: None,
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            beta1: train.beta1,
            beta2: train.beta2,
            epsilon: train.epsilon,
            loss_weight_v: train.loss_weights.velocity,
            loss_weight_p: train.loss_weights.pressure,
            loss_weight_cd: train.loss_weights.drag,
            checkpoint_every: train.checkpoint_every,
            velocity_mode: VelocityMode::default(),
            grad_tolerance: grad.tolerance,
            grad_step: grad.step,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config file: {e}")))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            n_samples: self.n_samples,
            axis_ranges: [self.axis_a, self.axis_b, self.axis_c],
            n_surface: self.n_surface,
            n_volume: self.n_volume,
            r_min: self.r_min,
            r_max: self.r_max,
            seed: self.seed,
        }
    }

    pub fn sampling_config(&self, n_points: usize, seed: u64) -> SamplingConfig {
        SamplingConfig {
            method: self.sampling_method,
            n_points,
            seed,
            knn_k: self.knn_k,
            curvature_fraction: self.curvature_fraction,
            grid_cells: self.grid_cells,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = self.profile.model();
        let set = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut m.layers, self.layers);
        if let Some(c) = self.channels {
            // Widths that default to multiples of C follow an overridden C.
            m.ffn_width = 2 * c;
            m.head_width = c;
            m.channels = c;
        }
        set(&mut m.slices, self.slices);
        set(&mut m.heads, self.heads);
        set(&mut m.ffn_width, self.ffn_width);
        set(&mut m.head_width, self.head_width);
        set(&mut m.geometry_width, self.geometry_width);
        m.seed = self.seed;
        m
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { velocity: self.loss_weight_v, pressure: self.loss_weight_p, drag: self.loss_weight_cd }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            seed: self.seed,
            loss_weights: self.loss_weights(),
            precision: self.precision,
            checkpoint_every: self.checkpoint_every,
        }
    }

    pub fn grad_check_config(&self) -> GradCheckConfig {
        let model = if self.profile == Profile::Tiny || self.layers.is_some() || self.channels.is_some() {
            self.model_config()
        } else {
            ModelConfig { seed: self.seed, ..ModelConfig::tiny() }
        };
        GradCheckConfig {
            model,
            tolerance: self.grad_tolerance,
            step: self.grad_step,
            seed: self.seed,
            loss_weights: self.loss_weights(),
            ..GradCheckConfig::default()
        }
    }

    /// Checks every embedded module config.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: pasurf_core::Error| CliError::Config(e.to_string());
        self.dataset_spec().validate().map_err(cfg)?;
        self.sampling_config(self.sampling_points.max(1), self.seed).validate().map_err(cfg)?;
        self.model_config().validate().map_err(cfg)?;
        self.train_config().validate().map_err(cfg)?;
        if !(self.grad_step > 0.0 && self.grad_step.is_finite()) {
            return Err(CliError::Config("grad_step must be positive".into()));
        }
        if self.grad_tolerance.is_nan() || self.grad_tolerance <= 0.0 {
            return Err(CliError::Config("grad_tolerance must be positive".into()));
        }
        Ok(())
    }
}
