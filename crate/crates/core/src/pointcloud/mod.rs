//! Geometric data types: point clouds, labeled samples, and the
//! normalization statistics stored alongside a trained model.

mod io;

pub use io::{
    format_decimal, load_clouds, load_dataset, load_manifest, load_sample, parse_cloud, parse_drag, parse_pressure,
    parse_velocity, save_fields, save_manifest, save_sample, write_cloud, Dataset, Manifest, ManifestEntry, Split,
    DRAG_FILE, FORMAT_VERSION, MANIFEST_FILE, PRESSURE_FILE, SURFACE_FILE, VELOCITY_FILE, VOLUME_FILE,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Surface,
    Volume,
}

impl Role {
    /// Value of the role channel fed to the embedding.
    pub fn flag(self) -> f64 {
        match self {
            Role::Surface => 1.0,
            Role::Volume => 0.0,
        }
    }
}

/// Points with optional unit normals and `feature_width` observed channels
/// per point. Every point of a cloud carries the cloud's [`Role`].
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
    features: Vec<f64>,
    feature_width: usize,
    role: Role,
}

const NORMAL_TOL: f64 = 1e-6;

impl PointCloud {
    /// `features` is row-major `N x feature_width`.
    ///
    /// Surface clouds need at least one point; volume clouds may be empty.
    /// Volume clouds never carry normals.
    pub fn new(
        positions: Vec<Vec3>,
        normals: Option<Vec<Vec3>>,
        features: Vec<f64>,
        feature_width: usize,
        role: Role,
    ) -> Result<Self> {
        let n = positions.len();
        if n == 0 && role == Role::Surface {
            return Err(Error::invalid("point cloud", "surface cloud has no points"));
        }
        if let Some((i, _)) = positions.iter().enumerate().find(|(_, p)| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite { what: format!("position {i}") });
        }
        if let Some(ns) = &normals {
            if role == Role::Volume {
                return Err(Error::invalid("point cloud", "volume points cannot carry normals"));
            }
            if ns.len() != n {
                return Err(Error::invalid("point cloud", format!("{} normals for {n} points", ns.len())));
            }
            for (i, nv) in ns.iter().enumerate() {
                let len = norm(nv);
                if !len.is_finite() || (len - 1.0).abs() > NORMAL_TOL {
                    return Err(Error::invalid("point cloud", format!("normal {i} has length {len}")));
                }
            }
        }
        if features.len() != n * feature_width {
            return Err(Error::invalid(
                "point cloud",
                format!("feature buffer has {} values, expected {n} x {feature_width}", features.len()),
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "point features".into() });
        }
        Ok(PointCloud { positions, normals, features, feature_width, role })
    }

    /// Geometry-only cloud.
    pub fn from_positions(positions: Vec<Vec3>, role: Role) -> Result<Self> {
        PointCloud::new(positions, None, Vec::new(), 0, role)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_width..(i + 1) * self.feature_width]
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Sub-cloud of the given points, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let positions = indices.iter().map(|&i| self.positions[i]).collect();
        let normals = self.normals.as_ref().map(|ns| indices.iter().map(|&i| ns[i]).collect());
        let mut features = Vec::with_capacity(indices.len() * self.feature_width);
        for &i in indices {
            features.extend_from_slice(self.feature_row(i));
        }
        PointCloud { positions, normals, features, feature_width: self.feature_width, role: self.role }
    }

    fn map_positions(&self, f: impl Fn(&Vec3) -> Vec3) -> PointCloud {
        PointCloud { positions: self.positions.iter().map(f).collect(), ..self.clone() }
    }
}

pub(crate) fn norm(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// One training instance: surface and volume clouds plus ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub surface: PointCloud,
    pub volume: PointCloud,
    /// Surface pressure coefficient, one per surface point.
    pub pressure: Vec<f64>,
    /// Velocity, one 3-vector per volume point.
    pub velocity: Vec<Vec3>,
    pub drag: f64,
}

impl SampleRecord {
    pub fn new(
        id: impl Into<String>,
        surface: PointCloud,
        volume: PointCloud,
        pressure: Vec<f64>,
        velocity: Vec<Vec3>,
        drag: f64,
    ) -> Result<Self> {
        let rec = SampleRecord { id: id.into(), surface, volume, pressure, velocity, drag };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.surface.role() != Role::Surface {
            return Err(Error::invalid("sample", "surface cloud must have surface role"));
        }
        if self.volume.role() != Role::Volume {
            return Err(Error::invalid("sample", "volume cloud must have volume role"));
        }
        if self.surface.feature_width() != self.volume.feature_width() {
            return Err(Error::invalid("sample", "surface and volume feature widths differ"));
        }
        if self.pressure.len() != self.surface.len() {
            return Err(Error::CountMismatch {
                file: "pressure".into(),
                expected: self.surface.len(),
                found: self.pressure.len(),
            });
        }
        if self.velocity.len() != self.volume.len() {
            return Err(Error::CountMismatch {
                file: "velocity".into(),
                expected: self.volume.len(),
                found: self.velocity.len(),
            });
        }
        if !self.drag.is_finite() {
            return Err(Error::NonFinite { what: "drag".into() });
        }
        if self.pressure.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "pressure".into() });
        }
        if self.velocity.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "velocity".into() });
        }
        Ok(())
    }

    /// Keeps only the given surface points (and their pressures).
    pub fn select_surface(&self, indices: &[usize]) -> SampleRecord {
        SampleRecord {
            id: self.id.clone(),
            surface: self.surface.select(indices),
            volume: self.volume.clone(),
            pressure: indices.iter().map(|&i| self.pressure[i]).collect(),
            velocity: self.velocity.clone(),
            drag: self.drag,
        }
    }
}

/// Mean and (population) standard deviation of one target channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    pub const IDENTITY: ChannelStats = ChannelStats { mean: 0.0, std: 1.0 };

    #[inline]
    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    #[inline]
    pub fn inverse(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }

    fn from_values(values: impl Iterator<Item = f64> + Clone) -> ChannelStats {
        let n = values.clone().count();
        if n == 0 {
            return ChannelStats::IDENTITY;
        }
        let mean = values.clone().sum::<f64>() / n as f64;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        ChannelStats { mean, std: var.sqrt().max(STD_FLOOR) }
    }
}

/// Lower bound applied to every target standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub position_center: Vec3,
    pub position_scale: f64,
    pub pressure: ChannelStats,
    pub velocity: [ChannelStats; 3],
    pub drag: ChannelStats,
}

impl NormalizationStats {
    pub fn identity() -> Self {
        NormalizationStats {
            position_center: [0.0; 3],
            position_scale: 1.0,
            pressure: ChannelStats::IDENTITY,
            velocity: [ChannelStats::IDENTITY; 3],
            drag: ChannelStats::IDENTITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.position_center.iter().all(|v| v.is_finite())
            && self.position_scale.is_finite()
            && self.channels().iter().all(|c| c.mean.is_finite() && c.std.is_finite());
        if !finite {
            return Err(Error::NonFinite { what: "normalization stats".into() });
        }
        if self.position_scale <= 0.0 {
            return Err(Error::invalid("normalization stats", "position scale must be positive"));
        }
        if self.channels().iter().any(|c| c.std <= 0.0) {
            return Err(Error::invalid("normalization stats", "target std must be positive"));
        }
        Ok(())
    }

    fn channels(&self) -> [ChannelStats; 5] {
        [self.pressure, self.velocity[0], self.velocity[1], self.velocity[2], self.drag]
    }

    pub fn normalize_position(&self, p: &Vec3) -> Vec3 {
        let c = &self.position_center;
        let s = self.position_scale;
        [(p[0] - c[0]) / s, (p[1] - c[1]) / s, (p[2] - c[2]) / s]
    }

    pub fn denormalize_position(&self, p: &Vec3) -> Vec3 {
        let c = &self.position_center;
        let s = self.position_scale;
        [p[0] * s + c[0], p[1] * s + c[1], p[2] * s + c[2]]
    }
}

/// Positions of one cloud mapped into the normalized frame.
pub fn normalize_cloud(cloud: &PointCloud, stats: &NormalizationStats) -> PointCloud {
    cloud.map_positions(|p| stats.normalize_position(p))
}

/// Positions to `(p - center) / scale`, targets standardized per channel.
/// Normals are direction-only and unaffected by isotropic scaling.
pub fn normalize(record: &SampleRecord, stats: &NormalizationStats) -> Result<SampleRecord> {
    stats.validate()?;
    let v = &stats.velocity;
    Ok(SampleRecord {
        id: record.id.clone(),
        surface: record.surface.map_positions(|p| stats.normalize_position(p)),
        volume: record.volume.map_positions(|p| stats.normalize_position(p)),
        pressure: record.pressure.iter().map(|&p| stats.pressure.forward(p)).collect(),
        velocity: record
            .velocity
            .iter()
            .map(|u| [v[0].forward(u[0]), v[1].forward(u[1]), v[2].forward(u[2])])
            .collect(),
        drag: stats.drag.forward(record.drag),
    })
}

/// Inverse of [`normalize`].
pub fn denormalize(record: &SampleRecord, stats: &NormalizationStats) -> Result<SampleRecord> {
    stats.validate()?;
    let v = &stats.velocity;
    Ok(SampleRecord {
        id: record.id.clone(),
        surface: record.surface.map_positions(|p| stats.denormalize_position(p)),
        volume: record.volume.map_positions(|p| stats.denormalize_position(p)),
        pressure: record.pressure.iter().map(|&p| stats.pressure.inverse(p)).collect(),
        velocity: record
            .velocity
            .iter()
            .map(|u| [v[0].inverse(u[0]), v[1].inverse(u[1]), v[2].inverse(u[2])])
            .collect(),
        drag: stats.drag.inverse(record.drag),
    })
}

/// Dataset-wide statistics: centroid and max radius over every surface and
/// volume point, population mean/std per target channel.
pub fn compute_stats(records: &[SampleRecord]) -> Result<NormalizationStats> {
    if records.is_empty() {
        return Err(Error::Empty("cannot compute statistics of an empty record list"));
    }
    let all_points = || records.iter().flat_map(|r| r.surface.positions().iter().chain(r.volume.positions()));
    let count = all_points().count() as f64;
    let mut center = [0.0; 3];
    for p in all_points() {
        for k in 0..3 {
            center[k] += p[k];
        }
    }
    for c in &mut center {
        *c /= count;
    }
    let radius =
        all_points().map(|p| norm(&[p[0] - center[0], p[1] - center[1], p[2] - center[2]])).fold(0.0, f64::max);
    // A single repeated point carries no scale information.
    let position_scale = if radius > 0.0 { radius } else { 1.0 };

    let pressure = ChannelStats::from_values(records.iter().flat_map(|r| r.pressure.iter().copied()));
    let velocity = [0, 1, 2]
        .map(|k| ChannelStats::from_values(records.iter().flat_map(move |r| r.velocity.iter().map(move |v| v[k]))));
    let drag = ChannelStats::from_values(records.iter().map(|r| r.drag));
    Ok(NormalizationStats { position_center: center, position_scale, pressure, velocity, drag })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: &str, drag: f64) -> SampleRecord {
        let surface = PointCloud::new(
            vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]],
            Some(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]]),
            vec![],
            0,
            Role::Surface,
        )
        .unwrap();
        let volume = PointCloud::from_positions(vec![[0.0, 0.0, 2.0], [0.0, 0.0, -2.0]], Role::Volume).unwrap();
        SampleRecord::new(id, surface, volume, vec![1.0, 0.5, -0.2, 0.1], vec![[1.0, 0.0, 0.0], [0.9, 0.1, 0.0]], drag)
            .unwrap()
    }

    #[test]
    fn rejects_bad_normals_and_empty_surface() {
        assert!(PointCloud::from_positions(vec![], Role::Surface).is_err());
        assert!(PointCloud::from_positions(vec![], Role::Volume).is_ok());
        let bad = PointCloud::new(vec![[0.0; 3]], Some(vec![[1.0, 1.0, 0.0]]), vec![], 0, Role::Surface);
        assert!(bad.is_err());
        let nan = PointCloud::from_positions(vec![[f64::NAN, 0.0, 0.0]], Role::Surface);
        assert!(matches!(nan, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn record_count_mismatch() {
        let r = record("a", 0.3);
        let bad = SampleRecord::new("b", r.surface.clone(), r.volume.clone(), vec![0.0; 3], r.velocity.clone(), 0.3);
        assert!(matches!(bad, Err(Error::CountMismatch { .. })));
    }

    #[test]
    fn identity_stats_leave_record_unchanged() {
        let r = record("a", 0.3);
        assert_eq!(normalize(&r, &NormalizationStats::identity()).unwrap(), r);
    }

    #[test]
    fn centroid_and_radius_give_unit_ball() {
        let r = record("a", 0.3);
        let stats = compute_stats(std::slice::from_ref(&r)).unwrap();
        let n = normalize(&r, &stats).unwrap();
        for p in n.surface.positions().iter().chain(n.volume.positions()) {
            assert!(norm(p) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn constant_drag_hits_std_floor() {
        let stats = compute_stats(&[record("a", 0.3), record("b", 0.3)]).unwrap();
        assert!((stats.drag.mean - 0.3).abs() < 1e-15);
        assert_eq!(stats.drag.std, STD_FLOOR);
    }

    #[test]
    fn two_drags_population_std() {
        let stats = compute_stats(&[record("a", 0.2), record("b", 0.4)]).unwrap();
        assert!((stats.drag.mean - 0.3).abs() < 1e-15);
        assert!((stats.drag.std - 0.1).abs() < 1e-15);
    }

    #[test]
    fn empty_record_list_is_an_error() {
        assert!(compute_stats(&[]).is_err());
    }

    fn arb_record() -> impl Strategy<Value = SampleRecord> {
        (1usize..6, 0usize..4, -5.0f64..5.0).prop_flat_map(|(ns, nv, drag)| {
            (
                prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), ns),
                prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), nv),
                prop::collection::vec(-3.0f64..3.0, ns),
                prop::collection::vec(prop::array::uniform3(-3.0f64..3.0), nv),
                Just(drag),
            )
                .prop_map(|(sp, vp, p, v, d)| {
                    SampleRecord::new(
                        "r",
                        PointCloud::from_positions(sp, Role::Surface).unwrap(),
                        PointCloud::from_positions(vp, Role::Volume).unwrap(),
                        p,
                        v,
                        d,
                    )
                    .unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn normalize_round_trip(recs in prop::collection::vec(arb_record(), 1..4)) {
            let stats = compute_stats(&recs).unwrap();
            for r in &recs {
                let back = denormalize(&normalize(r, &stats).unwrap(), &stats).unwrap();
                let pairs = r.surface.positions().iter().chain(r.volume.positions())
                    .zip(back.surface.positions().iter().chain(back.volume.positions()));
                for (a, b) in pairs {
                    for k in 0..3 {
                        prop_assert!((a[k] - b[k]).abs() <= 1e-12 * a[k].abs().max(1.0));
                    }
                }
                for (a, b) in r.pressure.iter().zip(&back.pressure) {
                    prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
                }
                for (a, b) in r.velocity.iter().flatten().zip(back.velocity.iter().flatten()) {
                    prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
                }
                prop_assert!((r.drag - back.drag).abs() <= 1e-12 * r.drag.abs().max(1.0));
            }
        }

        #[test]
        fn stats_permutation_invariant(recs in prop::collection::vec(arb_record(), 1..5), seed in any::<u64>()) {
            let a = compute_stats(&recs).unwrap();
            let mut shuffled = recs.clone();
            crate::rng::SplitMix64::new(seed).shuffle(&mut shuffled);
            let b = compute_stats(&shuffled).unwrap();
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(1.0);
            for k in 0..3 {
                prop_assert!(close(a.position_center[k], b.position_center[k]));
                prop_assert!(close(a.velocity[k].mean, b.velocity[k].mean));
                prop_assert!(close(a.velocity[k].std, b.velocity[k].std));
            }
            prop_assert!(close(a.position_scale, b.position_scale));
            prop_assert!(close(a.pressure.mean, b.pressure.mean));
            prop_assert!(close(a.pressure.std, b.pressure.std));
            prop_assert!(close(a.drag.mean, b.drag.mean));
            prop_assert!(close(a.drag.std, b.drag.std));
        }
    }
}
