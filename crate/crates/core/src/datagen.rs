//! Synthetic ellipsoid benchmark with closed-form targets.
//!
//! Pressure is the potential-flow sphere value plus a shape-dependent
//! curvature term. Velocity is the potential flow past the equivalent sphere
//! of radius `(abc)^(1/3)`. Drag is a fixed function of the semi-axes.
//! Physical fidelity is not the point; every target is exactly computable.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::pointcloud::{
    save_manifest, save_sample, Manifest, ManifestEntry, PointCloud, Role, SampleRecord, Split, Vec3, FORMAT_VERSION,
};
use crate::rng::SplitMix64;

pub const GENERATOR_VERSION: u32 = 1;
const FREESTREAM: f64 = 1.0;
const STAGNATION_SPREAD: f64 = 2.25;
const CURVATURE_GAIN: f64 = 0.2;
const FRONTAL_GAIN: f64 = 0.3;
const SLENDERNESS_GAIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    /// Semi-axes `a >= b >= c > 0`.
    pub axes: [f64; 3],
    pub n_surface: usize,
    pub n_volume: usize,
    /// Volume shell radii as multiples of the equivalent radius.
    pub r_min: f64,
    pub r_max: f64,
    pub seed: u64,
}

impl ShapeSpec {
    pub fn validate(&self) -> Result<()> {
        let [a, b, c] = self.axes;
        if !(a.is_finite() && a >= b && b >= c && c > 0.0) {
            return Err(Error::invalid("shape", "semi-axes must satisfy a >= b >= c > 0"));
        }
        if !(self.r_min > 1.0 && self.r_max > self.r_min && self.r_max.is_finite()) {
            return Err(Error::invalid("shape", "shell radii must satisfy 1 < r_min < r_max"));
        }
        if self.n_surface == 0 || self.n_volume == 0 {
            return Err(Error::invalid("shape", "point counts must be at least 1"));
        }
        Ok(())
    }

    pub fn equivalent_radius(&self) -> f64 {
        let [a, b, c] = self.axes;
        (a * b * c).cbrt()
    }
}

/// Unit directions spread evenly over the sphere.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Outward unit normal of the ellipsoid at a surface point.
pub fn ellipsoid_normal(axes: [f64; 3], p: &Vec3) -> Vec3 {
    let g = [p[0] / (axes[0] * axes[0]), p[1] / (axes[1] * axes[1]), p[2] / (axes[2] * axes[2])];
    let l = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
    [g[0] / l, g[1] / l, g[2] / l]
}

/// Mean curvature of the ellipsoid at a surface point (positive, `1/R` on a
/// sphere).
pub fn ellipsoid_mean_curvature(axes: [f64; 3], p: &Vec3) -> f64 {
    let [a, b, c] = axes;
    let (a2, b2, c2) = (a * a, b * b, c * c);
    let r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
    let q = p[0] * p[0] / (a2 * a2) + p[1] * p[1] / (b2 * b2) + p[2] * p[2] / (c2 * c2);
    (r2 - a2 - b2 - c2).abs() / (2.0 * a2 * b2 * c2 * q.powf(1.5))
}

/// Pressure coefficient from the normal's x component and the standardized
/// curvature.
pub fn pressure_coefficient(normal_x: f64, curvature_z: f64) -> f64 {
    let sin2 = 1.0 - normal_x * normal_x;
    1.0 - STAGNATION_SPREAD * sin2 + CURVATURE_GAIN * curvature_z
}

/// Potential flow past a sphere of radius `radius` centered at the origin,
/// freestream `+x`.
pub fn sphere_velocity(radius: f64, p: &Vec3) -> Vec3 {
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    let e_r = [p[0] / r, p[1] / r, p[2] / r];
    let cos = e_r[0];
    let sin = (1.0 - cos * cos).max(0.0).sqrt();
    let k = (radius / r).powi(3);
    let v_r = FREESTREAM * cos * (1.0 - k);
    let v_t = -FREESTREAM * sin * (1.0 + 0.5 * k);
    // e_theta points toward increasing polar angle from +x.
    let e_t = if sin > 1e-12 { [(cos * e_r[0] - 1.0) / sin, cos * e_r[1] / sin, cos * e_r[2] / sin] } else { [0.0; 3] };
    [0, 1, 2].map(|i| v_r * e_r[i] + v_t * e_t[i])
}

pub fn drag_coefficient(axes: [f64; 3]) -> f64 {
    let [a, b, c] = axes;
    let r = (a * b * c).cbrt();
    FRONTAL_GAIN * (b * c) / (r * r) + SLENDERNESS_GAIN * (a / c - 1.0)
}

pub fn generate_sample(id: &str, spec: &ShapeSpec) -> Result<SampleRecord> {
    spec.validate()?;
    let axes = spec.axes;
    let surface: Vec<Vec3> = fibonacci_sphere(spec.n_surface)
        .into_iter()
        .map(|d| [axes[0] * d[0], axes[1] * d[1], axes[2] * d[2]])
        .collect();
    let normals: Vec<Vec3> = surface.iter().map(|p| ellipsoid_normal(axes, p)).collect();
    let curv: Vec<f64> = surface.iter().map(|p| ellipsoid_mean_curvature(axes, p)).collect();
    let n = curv.len() as f64;
    let mean = curv.iter().sum::<f64>() / n;
    let std = (curv.iter().map(|k| (k - mean) * (k - mean)).sum::<f64>() / n).sqrt();
    let z: Vec<f64> =
        if std > 1e-9 * mean.abs() { curv.iter().map(|k| (k - mean) / std).collect() } else { vec![0.0; curv.len()] };
    let z_mean = z.iter().sum::<f64>() / n;
    let pressure = normals.iter().zip(&z).map(|(nrm, zi)| pressure_coefficient(nrm[0], zi - z_mean)).collect();

    let radius = spec.equivalent_radius();
    let mut rng = SplitMix64::new(spec.seed);
    let (lo, hi) = (spec.r_min.powi(3), spec.r_max.powi(3));
    let volume: Vec<Vec3> = (0..spec.n_volume)
        .map(|_| {
            let r = radius * (lo + rng.next_f64() * (hi - lo)).cbrt();
            let cz = rng.uniform(-1.0, 1.0);
            let phi = rng.uniform(0.0, 2.0 * PI);
            let s = (1.0 - cz * cz).max(0.0).sqrt();
            [r * s * phi.cos(), r * s * phi.sin(), r * cz]
        })
        .collect();
    let velocity = volume.iter().map(|p| sphere_velocity(radius, p)).collect();

    SampleRecord::new(
        id,
        PointCloud::new(surface, Some(normals), vec![], 0, Role::Surface)?,
        PointCloud::from_positions(volume, Role::Volume)?,
        pressure,
        velocity,
        drag_coefficient(axes),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub n_samples: usize,
    /// `[lo, hi]` ranges for the three drawn semi-axes, which are then
    /// sorted descending.
    pub axis_ranges: [[f64; 2]; 3],
    pub n_surface: usize,
    pub n_volume: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_samples: 32,
            axis_ranges: [[1.0, 2.0], [0.6, 1.0], [0.4, 0.8]],
            n_surface: 512,
            n_volume: 256,
            r_min: 1.5,
            r_max: 4.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("dataset spec", "n_samples must be at least 1"));
        }
        for [lo, hi] in self.axis_ranges {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::invalid("dataset spec", "axis ranges must satisfy 0 < lo <= hi"));
            }
        }
        self.shape([1.0, 1.0, 1.0], 0).validate()
    }

    fn shape(&self, axes: [f64; 3], seed: u64) -> ShapeSpec {
        ShapeSpec {
            axes,
            n_surface: self.n_surface,
            n_volume: self.n_volume,
            r_min: self.r_min,
            r_max: self.r_max,
            seed,
        }
    }

    /// Shape of sample `index`, drawn from its own derived stream.
    pub fn shape_for(&self, index: usize) -> ShapeSpec {
        let mut rng = SplitMix64::derive(self.seed, index as u64);
        let mut axes = self.axis_ranges.map(|[lo, hi]| rng.uniform(lo, hi));
        axes.sort_by(|x, y| y.total_cmp(x));
        self.shape(axes, rng.next_u64())
    }
}

pub fn sample_id(index: usize) -> String {
    format!("sample_{index:04}")
}

/// Samples only, without touching the filesystem.
pub fn generate_samples(spec: &DatasetSpec) -> Result<Vec<SampleRecord>> {
    spec.validate()?;
    (0..spec.n_samples).map(|i| generate_sample(&sample_id(i), &spec.shape_for(i))).collect()
}

pub fn generator_provenance() -> serde_json::Value {
    json!({
        "version": GENERATOR_VERSION,
        "freestream": FREESTREAM,
        "stagnation_spread": STAGNATION_SPREAD,
        "curvature_gain": CURVATURE_GAIN,
        "frontal_gain": FRONTAL_GAIN,
        "slenderness_gain": SLENDERNESS_GAIN,
    })
}

/// Writes every sample under `out` plus `manifest.json`, with the id-hash
/// train/val split recorded explicitly.
pub fn generate_dataset(spec: &DatasetSpec, out: &Path) -> Result<Manifest> {
    let samples = generate_samples(spec)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut manifest = Manifest {
        samples: Vec::with_capacity(samples.len()),
        format_version: FORMAT_VERSION,
        splits: Default::default(),
        generator_version: Some(generator_provenance()),
    };
    for s in &samples {
        save_sample(s, &out.join(&s.id))?;
        manifest.samples.push(ManifestEntry::Path(s.id.clone()));
        manifest.splits.insert(s.id.clone(), Split::by_id(&s.id));
    }
    save_manifest(&manifest, out)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::load_dataset;

    fn sphere(n_surface: usize) -> ShapeSpec {
        ShapeSpec { axes: [1.0; 3], n_surface, n_volume: 8, r_min: 1.5, r_max: 3.0, seed: 1 }
    }

    /// Gradient form of the same potential, written independently.
    fn oracle_velocity(radius: f64, p: &Vec3) -> Vec3 {
        let r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
        let r3 = r2 * r2.sqrt();
        let r5 = r3 * r2;
        let k = radius.powi(3);
        let mut v = [-1.5 * k * p[0] * p[0] / r5, -1.5 * k * p[0] * p[1] / r5, -1.5 * k * p[0] * p[2] / r5];
        v[0] += 1.0 + 0.5 * k / r3;
        v
    }

    #[test]
    fn sphere_pressure_values() {
        assert_eq!(pressure_coefficient(1.0, 0.0), 1.0);
        assert_eq!(pressure_coefficient(0.0, 0.0), -1.25);
        let s = generate_sample("s", &sphere(200)).unwrap();
        // Every sphere point has the same curvature, so the perturbation vanishes.
        for (p, n) in s.pressure.iter().zip(s.surface.normals().unwrap()) {
            assert!((p - pressure_coefficient(n[0], 0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_velocity_limits_and_drag() {
        assert!(sphere_velocity(1.0, &[1.0, 0.0, 0.0]).iter().all(|v| v.abs() < 1e-15));
        let far = sphere_velocity(1.0, &[1e6, 3.0, -2.0]);
        assert!((far[0] - 1.0).abs() < 1e-12 && far[1].abs() < 1e-12 && far[2].abs() < 1e-12);
        assert!((drag_coefficient([1.0; 3]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn spherical_and_gradient_forms_agree() {
        let mut rng = SplitMix64::new(4);
        for _ in 0..200 {
            let p = [rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)];
            let a = sphere_velocity(0.8, &p);
            let b = oracle_velocity(0.8, &p);
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12, "{p:?}");
            }
        }
    }

    #[test]
    fn mean_curvature_matches_implicit_surface_formula() {
        // H = div(grad F / |grad F|) / 2 for F = x²/a² + y²/b² + z²/c², by
        // central differences of the unit normal field.
        let axes = [2.0, 1.3, 0.7];
        let field = |p: &Vec3| ellipsoid_normal(axes, p);
        let h = 1e-5;
        for d in fibonacci_sphere(40) {
            let p = [axes[0] * d[0], axes[1] * d[1], axes[2] * d[2]];
            let mut div = 0.0;
            for k in 0..3 {
                let mut up = p;
                let mut dn = p;
                up[k] += h;
                dn[k] -= h;
                div += (field(&up)[k] - field(&dn)[k]) / (2.0 * h);
            }
            let got = ellipsoid_mean_curvature(axes, &p);
            assert!((got - 0.5 * div).abs() < 1e-6 * got.max(1.0), "{got} vs {}", 0.5 * div);
        }
    }

    #[test]
    fn surface_on_ellipsoid_and_normals_outward() {
        let spec = ShapeSpec { axes: [1.9, 0.9, 0.5], n_surface: 300, n_volume: 50, r_min: 1.5, r_max: 3.0, seed: 2 };
        let s = generate_sample("e", &spec).unwrap();
        for (p, n) in s.surface.positions().iter().zip(s.surface.normals().unwrap()) {
            let f = (p[0] / 1.9).powi(2) + (p[1] / 0.9).powi(2) + (p[2] / 0.5).powi(2);
            assert!((f - 1.0).abs() < 1e-12);
            assert!(n[0] * p[0] + n[1] * p[1] + n[2] * p[2] > 0.0);
        }
        let r = spec.equivalent_radius();
        for p in s.volume.positions() {
            let d = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() / r;
            assert!((1.5 - 1e-12..=3.0 + 1e-12).contains(&d));
        }
        let z_bound = s.pressure.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(z_bound.is_finite());
    }

    #[test]
    fn drag_monotonicity_in_slenderness() {
        // With b, c fixed the frontal term falls like a^(-2/3) while the
        // slenderness term rises linearly; dCd/da > 0 exactly when
        // a > (4 c (bc)^(1/3))^(3/5).
        for (b, c) in [(0.6f64, 0.5f64), (0.3, 0.2), (1.0, 0.8)] {
            let turn = (4.0 * c * (b * c).cbrt()).powf(0.6);
            let grid = |lo: f64, hi: f64| (0..=20).map(move |i| lo + (hi - lo) * i as f64 / 20.0);
            let cd = |a: f64| drag_coefficient([a, b, c]);
            let above: Vec<f64> = grid(turn.max(b) * 1.001, turn.max(b) * 3.0).map(cd).collect();
            assert!(above.windows(2).all(|w| w[1] > w[0]), "b={b} c={c}");
            if turn > b * 1.01 {
                let below: Vec<f64> = grid(b, turn * 0.999).map(cd).collect();
                assert!(below.windows(2).all(|w| w[1] < w[0]), "b={b} c={c}");
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = sphere(10);
        s.axes = [1.0, 2.0, 0.5];
        assert!(s.validate().is_err());
        let mut s = sphere(10);
        s.r_min = 1.0;
        assert!(s.validate().is_err());
        let mut s = sphere(10);
        s.n_volume = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn dataset_is_reproducible_and_loadable() {
        let spec = DatasetSpec { n_samples: 5, n_surface: 40, n_volume: 20, seed: 3, ..DatasetSpec::default() };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = generate_dataset(&spec, a.path()).unwrap();
        generate_dataset(&spec, b.path()).unwrap();
        assert_eq!(m.samples.len(), 5);
        for entry in fs::read_dir(a.path()).unwrap() {
            let entry = entry.unwrap();
            let rel = entry.file_name();
            if entry.path().is_dir() {
                for f in fs::read_dir(entry.path()).unwrap() {
                    let f = f.unwrap();
                    let other = b.path().join(&rel).join(f.file_name());
                    assert_eq!(fs::read(f.path()).unwrap(), fs::read(other).unwrap());
                }
            } else {
                assert_eq!(fs::read(entry.path()).unwrap(), fs::read(b.path().join(&rel)).unwrap());
            }
        }
        let ds = load_dataset(a.path()).unwrap();
        let direct = generate_samples(&spec).unwrap();
        for ((loaded, split), orig) in ds.samples.iter().zip(&direct) {
            assert_eq!(loaded, orig);
            assert_eq!(*split, Split::by_id(&orig.id));
            let [x, y, z] = spec.shape_for(0).axes;
            assert!(x >= y && y >= z);
        }
    }
}
