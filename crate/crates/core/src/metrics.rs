//! Regression metrics for drag, surface pressure and volume velocity.
//!
//! Field metrics pool every point of every sample; drag metrics are taken
//! over the per-sample scalars.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;
use crate::model::{ModelState, Prediction};
use crate::pointcloud::SampleRecord;
use crate::real::Real;

fn check(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape(format!("{} targets vs {} predictions", y.len(), y_hat.len())));
    }
    if y.is_empty() {
        return Err(Error::Empty("metrics need at least one value"));
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    Ok(mean(&y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).collect::<Vec<_>>()))
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    Ok(mean(&y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>()))
}

pub fn max_ae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Coefficient of determination. Needs at least two targets with non-zero
/// variance.
pub fn r2(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    if y.len() < 2 {
        return Err(Error::invalid("r2", "needs at least two samples"));
    }
    let m = mean(y);
    let ss_tot = pairwise_sum(&y.iter().map(|a| (a - m) * (a - m)).collect::<Vec<_>>());
    if ss_tot == 0.0 {
        return Err(Error::invalid("r2", "targets have zero variance"));
    }
    let ss_res = pairwise_sum(&y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).collect::<Vec<_>>());
    Ok(1.0 - ss_res / ss_tot)
}

/// `(100·‖y−ŷ‖₂/‖y‖₂, 100·‖y−ŷ‖₁/‖y‖₁)`.
pub fn rel_errors(y: &[f64], y_hat: &[f64]) -> Result<(f64, f64)> {
    check(y, y_hat)?;
    let l2 = |v: &mut dyn Iterator<Item = f64>| pairwise_sum(&v.map(|x| x * x).collect::<Vec<_>>()).sqrt();
    let l1 = |v: &mut dyn Iterator<Item = f64>| pairwise_sum(&v.map(f64::abs).collect::<Vec<_>>());
    let e = || y.iter().zip(y_hat).map(|(a, b)| a - b);
    let (n2, n1) = (l2(&mut y.iter().copied()), l1(&mut y.iter().copied()));
    if n2 == 0.0 || n1 == 0.0 {
        return Err(Error::invalid("relative error", "target has zero norm"));
    }
    Ok((100.0 * l2(&mut e()) / n2, 100.0 * l1(&mut e()) / n1))
}

/// How the velocity `U` row treats the vector field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocityMode {
    /// All `3N` components as one vector.
    #[default]
    Flattened,
    /// Per-point speed `|v|`.
    Magnitude,
}

impl FromStr for VelocityMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flattened" => Ok(VelocityMode::Flattened),
            "magnitude" => Ok(VelocityMode::Magnitude),
            other => Err(Error::invalid("velocity mode", format!("{other:?} is not flattened|magnitude"))),
        }
    }
}

/// One table row. Entries that are undefined for the data (R² with fewer
/// than two samples, relative errors of a zero target) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub n: usize,
    pub mse: f64,
    pub mae: f64,
    pub max_ae: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
    pub rel_l2_percent: Option<f64>,
    pub rel_l1_percent: Option<f64>,
}

impl MetricRow {
    pub fn compute(y: &[f64], y_hat: &[f64], with_r2: bool) -> Result<MetricRow> {
        let rel = rel_errors(y, y_hat).ok();
        Ok(MetricRow {
            n: y.len(),
            mse: mse(y, y_hat)?,
            mae: mae(y, y_hat)?,
            max_ae: max_ae(y, y_hat)?,
            r2: if with_r2 { r2(y, y_hat).ok() } else { None },
            rel_l2_percent: rel.map(|r| r.0),
            rel_l1_percent: rel.map(|r| r.1),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityReport {
    pub ux: MetricRow,
    pub uy: MetricRow,
    pub uz: MetricRow,
    pub u: MetricRow,
    pub mode: VelocityMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_samples: usize,
    pub drag: MetricRow,
    pub pressure: MetricRow,
    /// Absent when no sample has volume points.
    pub velocity: Option<VelocityReport>,
}

/// Metrics of physical-unit predictions against raw samples.
pub fn report_from_predictions(
    truth: &[SampleRecord],
    preds: &[Prediction],
    mode: VelocityMode,
) -> Result<MetricReport> {
    if truth.is_empty() {
        return Err(Error::Empty("evaluation split is empty"));
    }
    if truth.len() != preds.len() {
        return Err(Error::Shape(format!("{} samples vs {} predictions", truth.len(), preds.len())));
    }
    let drag_y: Vec<f64> = truth.iter().map(|s| s.drag).collect();
    let drag_p: Vec<f64> = preds.iter().map(|p| p.drag).collect();
    let mut py = Vec::new();
    let mut pp = Vec::new();
    let mut vy = Vec::new();
    let mut vp = Vec::new();
    for (s, p) in truth.iter().zip(preds) {
        if s.pressure.len() != p.pressure.len() || s.velocity.len() != p.velocity.len() {
            return Err(Error::Shape(format!("prediction for {} has the wrong point count", s.id)));
        }
        py.extend_from_slice(&s.pressure);
        pp.extend_from_slice(&p.pressure);
        vy.extend_from_slice(&s.velocity);
        vp.extend_from_slice(&p.velocity);
    }
    let velocity = if vy.is_empty() {
        None
    } else {
        let comp = |k: usize, v: &[[f64; 3]]| v.iter().map(|u| u[k]).collect::<Vec<_>>();
        let row = |k| MetricRow::compute(&comp(k, &vy), &comp(k, &vp), false);
        let u = match mode {
            VelocityMode::Flattened => {
                let flat = |v: &[[f64; 3]]| v.iter().flatten().copied().collect::<Vec<_>>();
                MetricRow::compute(&flat(&vy), &flat(&vp), false)?
            }
            VelocityMode::Magnitude => {
                let speed = |v: &[[f64; 3]]| {
                    v.iter().map(|u| (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()).collect::<Vec<_>>()
                };
                MetricRow::compute(&speed(&vy), &speed(&vp), false)?
            }
        };
        Some(VelocityReport { ux: row(0)?, uy: row(1)?, uz: row(2)?, u, mode })
    };
    Ok(MetricReport {
        n_samples: truth.len(),
        drag: MetricRow::compute(&drag_y, &drag_p, true)?,
        pressure: MetricRow::compute(&py, &pp, false)?,
        velocity,
    })
}

/// Runs the model on raw samples and scores the denormalized predictions.
pub fn evaluate<T: Real>(model: &ModelState<T>, samples: &[SampleRecord], mode: VelocityMode) -> Result<MetricReport> {
    let preds = samples.iter().map(|s| model.predict(&s.surface, &s.volume)).collect::<Result<Vec<_>>>()?;
    report_from_predictions(samples, &preds, mode)
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Aligned table. MSE is shown in units of 10⁻² and MAE in units of 10⁻¹.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(&str, &MetricRow)> = vec![("Cd", &self.drag), ("p", &self.pressure)];
        if let Some(v) = &self.velocity {
            rows.extend([("Ux", &v.ux), ("Uy", &v.uy), ("Uz", &v.uz), ("U", &v.u)]);
        }
        let opt = |v: Option<f64>, prec: usize| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.prec$}"));
        let mut out = String::new();
        writeln!(
            out,
            "{:<6} {:>12} {:>12} {:>12} {:>10} {:>12} {:>12}",
            "task", "MSE(e-2)", "MAE(e-1)", "MaxAE", "R2", "RelL2(%)", "RelL1(%)"
        )
        .unwrap();
        for (name, r) in rows {
            writeln!(
                out,
                "{:<6} {:>12.4} {:>12.4} {:>12.4} {:>10} {:>12} {:>12}",
                name,
                r.mse / 1e-2,
                r.mae / 1e-1,
                r.max_ae,
                opt(r.r2, 4),
                opt(r.rel_l2_percent, 2),
                opt(r.rel_l1_percent, 2)
            )
            .unwrap();
        }
        out
    }
}
