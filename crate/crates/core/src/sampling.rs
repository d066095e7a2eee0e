//! Point-cloud downsampling: uniform random, top-curvature, and the
//! adaptive two-stage sampler.
//!
//! The adaptive sampler spends `ceil(rho * n)` of its budget on the
//! highest-curvature points and distributes the rest over a uniform voxel
//! grid with weights `ceil(sqrt(occupancy))`, so dense regions are
//! represented sub-linearly.
//!
//! Every sampler returns `min(n, N)` distinct indices in ascending order.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{PointCloud, Vec3};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMethod {
    Random,
    Curvature,
    Adaptive,
}

impl std::str::FromStr for SamplingMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "random" => Ok(SamplingMethod::Random),
            "curvature" => Ok(SamplingMethod::Curvature),
            "adaptive" => Ok(SamplingMethod::Adaptive),
            other => Err(format!("unknown sampling method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub method: SamplingMethod,
    pub n_points: usize,
    pub seed: u64,
    pub knn_k: usize,
    /// Fraction of the budget reserved for top-curvature points.
    pub curvature_fraction: f64,
    /// Voxel cells per axis.
    pub grid_cells: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            method: SamplingMethod::Adaptive,
            n_points: 1024,
            seed: 0,
            knn_k: 16,
            curvature_fraction: 0.5,
            grid_cells: 16,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 {
            return Err(Error::invalid("sampling config", "n_points must be at least 1"));
        }
        if !(self.curvature_fraction > 0.0 && self.curvature_fraction < 1.0) {
            return Err(Error::invalid("sampling config", "curvature_fraction must lie strictly inside (0, 1)"));
        }
        if self.knn_k < 3 {
            return Err(Error::invalid("sampling config", "knn_k must be at least 3"));
        }
        if self.grid_cells == 0 {
            return Err(Error::invalid("sampling config", "grid_cells must be positive"));
        }
        Ok(())
    }
}

/// Per-point surface variation `lambda_min / (lambda_1 + lambda_2 + lambda_3)`
/// of the local covariance, in `[0, 1/3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureEstimate(pub Vec<f64>);

impl CurvatureEstimate {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Indices of the `k` nearest other points of `i`, nearest first, ties by
/// index.
fn knn(positions: &[Vec3], i: usize, k: usize, scratch: &mut Vec<(f64, usize)>) {
    let p = positions[i];
    scratch.clear();
    scratch.extend(positions.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, q)| {
        let d = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2], j)
    }));
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1));
    if k < scratch.len() {
        scratch.select_nth_unstable_by(k - 1, cmp);
        scratch.truncate(k);
    }
    scratch.sort_unstable_by(cmp);
}

/// Eigenvalues of a symmetric 3x3 matrix by cyclic Jacobi rotations,
/// sorted descending.
pub fn symmetric_eigenvalues3(m: [[f64; 3]; 3]) -> [f64; 3] {
    let mut a = m;
    for _ in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
        if off <= 1e-36 * diag || off == 0.0 {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // A <- J^T A J with J the (p, q) Givens rotation.
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
        }
    }
    let mut ev = [a[0][0], a[1][1], a[2][2]];
    ev.sort_by(|x, y| y.partial_cmp(x).unwrap_or(Ordering::Equal));
    ev
}

/// Surface-variation score of one neighborhood (the point plus its
/// neighbors).
fn surface_variation(points: impl Iterator<Item = Vec3> + Clone) -> f64 {
    let n = points.clone().count() as f64;
    let mut mean = [0.0; 3];
    for p in points.clone() {
        for k in 0..3 {
            mean[k] += p[k];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = [[0.0; 3]; 3];
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] += d[r] * d[c];
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    let ev = symmetric_eigenvalues3(cov);
    let ev = ev.map(|v| v.max(0.0));
    let sum = ev[0] + ev[1] + ev[2];
    if sum < 1e-18 {
        0.0
    } else {
        (ev[2] / sum).clamp(0.0, 1.0 / 3.0)
    }
}

/// Brute-force k-NN surface variation for every point.
pub fn estimate_curvature(cloud: &PointCloud, k: usize) -> Result<CurvatureEstimate> {
    let positions = cloud.positions();
    if k == 0 || positions.len() < k + 1 {
        return Err(Error::invalid(
            "curvature estimate",
            format!("need at least k + 1 = {} points, cloud has {}", k + 1, positions.len()),
        ));
    }
    let mut scratch = Vec::with_capacity(positions.len());
    let kappa = (0..positions.len())
        .map(|i| {
            knn(positions, i, k, &mut scratch);
            surface_variation(std::iter::once(positions[i]).chain(scratch.iter().map(|&(_, j)| positions[j])))
        })
        .collect();
    Ok(CurvatureEstimate(kappa))
}

/// Indices of the points ranked by descending score, ties by ascending
/// index.
fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    order
}

pub fn sample_random(cloud: &PointCloud, n: usize, seed: u64) -> Vec<usize> {
    let total = cloud.len();
    let mut idx: Vec<usize> = (0..total).collect();
    if n >= total {
        return idx;
    }
    SplitMix64::new(seed).partial_shuffle(&mut idx, n);
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

pub fn sample_curvature(cloud: &PointCloud, n: usize, k: usize) -> Result<Vec<usize>> {
    if n >= cloud.len() {
        return Ok((0..cloud.len()).collect());
    }
    let kappa = estimate_curvature(cloud, k)?;
    let mut idx = rank_descending(kappa.values());
    idx.truncate(n);
    idx.sort_unstable();
    Ok(idx)
}

/// Lexicographic `(ix, iy, iz)` cell id of each point in a `g^3` grid over
/// the cloud's bounding box.
fn voxel_ids(positions: &[Vec3], g: usize) -> Vec<usize> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in positions {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    positions
        .iter()
        .map(|p| {
            let mut id = 0usize;
            for k in 0..3 {
                let extent = hi[k] - lo[k];
                let cell =
                    if extent > 0.0 { (((p[k] - lo[k]) / extent * g as f64).floor() as usize).min(g - 1) } else { 0 };
                id = id * g + cell;
            }
            id
        })
        .collect()
}

/// Splits `budget` over bins proportionally to `weights` with
/// largest-remainder rounding (ties by bin order) without exceeding any
/// bin's `capacity`; capped bins release their excess to the rest.
/// Requires `budget <= sum(capacity)`.
pub fn allocate_budget(budget: usize, weights: &[f64], capacity: &[usize]) -> Vec<usize> {
    assert_eq!(weights.len(), capacity.len());
    let mut alloc = vec![0usize; weights.len()];
    let mut open: Vec<usize> = (0..weights.len()).filter(|&b| capacity[b] > 0).collect();
    let mut remaining = budget;
    while remaining > 0 && !open.is_empty() {
        let wsum: f64 = open.iter().map(|&b| weights[b]).sum();
        let quotas: Vec<f64> = open.iter().map(|&b| remaining as f64 * weights[b] / wsum).collect();
        let mut share: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let given: usize = share.iter().sum();
        let mut order: Vec<usize> = (0..open.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.partial_cmp(&fa).unwrap_or(Ordering::Equal).then(a.cmp(&b))
        });
        for &o in order.iter().take(remaining.saturating_sub(given)) {
            share[o] += 1;
        }
        let mut next_open = Vec::with_capacity(open.len());
        let mut spent = 0;
        for (slot, &b) in open.iter().enumerate() {
            let room = capacity[b] - alloc[b];
            let take = share[slot].min(room);
            alloc[b] += take;
            spent += take;
            if alloc[b] < capacity[b] {
                next_open.push(b);
            }
        }
        remaining -= spent;
        if spent == 0 {
            break;
        }
        open = next_open;
    }
    alloc
}

pub fn sample_adaptive(cloud: &PointCloud, config: &SamplingConfig) -> Result<Vec<usize>> {
    config.validate()?;
    let total = cloud.len();
    let n = config.n_points;
    if n >= total {
        return Ok((0..total).collect());
    }
    let kappa = estimate_curvature(cloud, config.knn_k)?;
    let ranked = rank_descending(kappa.values());
    let n_curv = ((config.curvature_fraction * n as f64).ceil() as usize).min(n);

    let mut taken = vec![false; total];
    let mut selected: Vec<usize> = ranked[..n_curv].to_vec();
    for &i in &selected {
        taken[i] = true;
    }

    let g = config.grid_cells;
    let ids = voxel_ids(cloud.positions(), g);
    let mut cells: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in (0..total).filter(|&i| !taken[i]) {
        cells.entry(ids[i]).or_default().push(i);
    }
    let members: Vec<Vec<usize>> = cells.into_values().collect();
    let weights: Vec<f64> = members.iter().map(|m| (m.len() as f64).sqrt().ceil()).collect();
    let capacity: Vec<usize> = members.iter().map(Vec::len).collect();
    let alloc = allocate_budget(n - n_curv, &weights, &capacity);

    let mut rng = SplitMix64::new(config.seed);
    for (mut m, want) in members.into_iter().zip(alloc) {
        rng.partial_shuffle(&mut m, want);
        for &i in &m[..want] {
            if !taken[i] {
                taken[i] = true;
                selected.push(i);
            }
        }
    }
    if selected.len() < n {
        for &i in &ranked {
            if selected.len() == n {
                break;
            }
            if !taken[i] {
                taken[i] = true;
                selected.push(i);
            }
        }
    }
    selected.sort_unstable();
    Ok(selected)
}

/// Dispatches on `config.method`.
pub fn sample(cloud: &PointCloud, config: &SamplingConfig) -> Result<Vec<usize>> {
    config.validate()?;
    match config.method {
        SamplingMethod::Random => Ok(sample_random(cloud, config.n_points, config.seed)),
        SamplingMethod::Curvature => sample_curvature(cloud, config.n_points, config.knn_k),
        SamplingMethod::Adaptive => sample_adaptive(cloud, config),
    }
}

/// Index file: header `n`, then one index per line.
pub fn write_index_file(indices: &[usize]) -> String {
    let mut out = format!("{}\n", indices.len());
    for i in indices {
        out.push_str(&i.to_string());
        out.push('\n');
    }
    out
}

/// Parses an index file, checking the count and strict ascending order.
pub fn parse_index_file(text: &str) -> Result<Vec<usize>> {
    let file = "index file";
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let (hl, header) =
        lines.next().ok_or_else(|| Error::Parse { file: file.into(), line: 1, msg: "missing header".into() })?;
    let n: usize = header.parse().map_err(|_| Error::Parse {
        file: file.into(),
        line: hl,
        msg: format!("bad count `{header}`"),
    })?;
    let mut out = Vec::new();
    for (ln, l) in lines {
        let v: usize =
            l.parse().map_err(|_| Error::Parse { file: file.into(), line: ln, msg: format!("bad index `{l}`") })?;
        if out.last().is_some_and(|&prev| prev >= v) {
            return Err(Error::Parse { file: file.into(), line: ln, msg: "indices must be strictly ascending".into() });
        }
        out.push(v);
    }
    if out.len() != n {
        return Err(Error::CountMismatch { file: file.into(), expected: n, found: out.len() });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::Role;
    use proptest::prelude::*;

    fn cloud(points: Vec<Vec3>) -> PointCloud {
        PointCloud::from_positions(points, Role::Surface).unwrap()
    }

    fn grid_plane(n: usize, spacing: f64) -> Vec<Vec3> {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push([i as f64 * spacing, j as f64 * spacing, 0.0]);
            }
        }
        pts
    }

    fn fib_sphere(n: usize) -> Vec<Vec3> {
        let ga = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let phi = i as f64 * ga;
                [r * phi.cos(), y, r * phi.sin()]
            })
            .collect()
    }

    /// Independent oracle: sort all neighbors by distance, full 3x3 covariance,
    /// eigenvalues from the characteristic cubic.
    fn oracle_kappa(points: &[Vec3], k: usize) -> Vec<f64> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut d: Vec<(f64, usize)> = points
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(j, q)| (((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)), j))
                    .collect();
                d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut nb = vec![*p];
                nb.extend(d[..k].iter().map(|&(_, j)| points[j]));
                let m = nb.len() as f64;
                let mean: Vec<f64> = (0..3).map(|c| nb.iter().map(|q| q[c]).sum::<f64>() / m).collect();
                let cov = |a: usize, b: usize| nb.iter().map(|q| (q[a] - mean[a]) * (q[b] - mean[b])).sum::<f64>() / m;
                let (a, b, c, d_, e, f) = (cov(0, 0), cov(1, 1), cov(2, 2), cov(0, 1), cov(0, 2), cov(1, 2));
                // Trigonometric solution of the symmetric 3x3 eigenproblem.
                let p1 = d_ * d_ + e * e + f * f;
                let q = (a + b + c) / 3.0;
                let p2 = (a - q).powi(2) + (b - q).powi(2) + (c - q).powi(2) + 2.0 * p1;
                let pp = (p2 / 6.0).sqrt();
                if pp < 1e-300 {
                    return 0.0;
                }
                let bm =
                    [[(a - q) / pp, d_ / pp, e / pp], [d_ / pp, (b - q) / pp, f / pp], [e / pp, f / pp, (c - q) / pp]];
                let det = bm[0][0] * (bm[1][1] * bm[2][2] - bm[1][2] * bm[2][1])
                    - bm[0][1] * (bm[1][0] * bm[2][2] - bm[1][2] * bm[2][0])
                    + bm[0][2] * (bm[1][0] * bm[2][1] - bm[1][1] * bm[2][0]);
                let r = (det / 2.0).clamp(-1.0, 1.0);
                let phi = r.acos() / 3.0;
                let l1 = q + 2.0 * pp * phi.cos();
                let l3 = q + 2.0 * pp * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
                let sum = 3.0 * q;
                if sum < 1e-18 {
                    0.0
                } else {
                    let _ = l1;
                    l3.max(0.0) / sum
                }
            })
            .collect()
    }

    #[test]
    fn jacobi_eigenvalues() {
        let ev = symmetric_eigenvalues3([[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]]);
        assert!((ev[0] - 5.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14 && (ev[2] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn coplanar_points_have_zero_curvature() {
        let k = estimate_curvature(&cloud(grid_plane(8, 0.5)), 8).unwrap();
        assert!(k.values().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn identical_points_have_zero_curvature() {
        let k = estimate_curvature(&cloud(vec![[1.0, 2.0, 3.0]; 20]), 5).unwrap();
        assert!(k.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sphere_curvature_positive_and_matches_oracle() {
        let pts = fib_sphere(400);
        let k = estimate_curvature(&cloud(pts.clone()), 16).unwrap();
        let oracle = oracle_kappa(&pts, 16);
        for (a, b) in k.values().iter().zip(&oracle) {
            assert!(*a > 0.0 && *a <= 1.0 / 3.0);
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn too_few_points() {
        assert!(estimate_curvature(&cloud(vec![[0.0; 3]; 4]), 4).is_err());
    }

    #[test]
    fn random_sampling_rules() {
        let c = cloud(vec![[0.0; 3]; 5]);
        assert_eq!(sample_random(&c, 10, 1), vec![0, 1, 2, 3, 4]);
        let big = cloud((0..1000).map(|i| [i as f64, 0.0, 0.0]).collect());
        let a = sample_random(&big, 100, 1);
        assert_eq!(a, sample_random(&big, 100, 1));
        let b = sample_random(&big, 100, 2);
        assert!(a.iter().zip(&b).any(|(x, y)| x != y));
    }

    fn plane_with_spike() -> (Vec<Vec3>, Vec3) {
        let mut rng = SplitMix64::new(11);
        let mut pts: Vec<Vec3> = grid_plane(12, 1.0)
            .into_iter()
            .map(|p| [p[0] + rng.uniform(-0.2, 0.2), p[1] + rng.uniform(-0.2, 0.2), 0.0])
            .collect();
        let apex = [5.5, 5.5, 0.0];
        for s in 0..10 {
            let a = s as f64 * 2.4;
            pts.push([apex[0] + 0.3 * a.cos(), apex[1] + 0.3 * a.sin(), 0.3 + 0.25 * s as f64]);
        }
        (pts, apex)
    }

    #[test]
    fn curvature_sampling_picks_oracle_top_points_near_spike() {
        let (pts, apex) = plane_with_spike();
        let got = sample_curvature(&cloud(pts.clone()), 10, 8).unwrap();
        let oracle = oracle_kappa(&pts, 8);
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.sort_by(|&a, &b| oracle[b].partial_cmp(&oracle[a]).unwrap().then(a.cmp(&b)));
        assert!(oracle[order[9]] - oracle[order[10]] > 1e-9, "fixture must not tie at the cut");
        let mut want = order[..10].to_vec();
        want.sort_unstable();
        assert_eq!(got, want);
        for &i in &got {
            let d = ((pts[i][0] - apex[0]).powi(2) + (pts[i][1] - apex[1]).powi(2)).sqrt();
            assert!(d < 3.0, "point {i} at {:?} is not near the spike", pts[i]);
        }
    }

    #[test]
    fn equal_curvature_tie_rule() {
        let pts = grid_plane(6, 1.0);
        assert_eq!(sample_curvature(&cloud(pts), 7, 4).unwrap(), (0..7).collect::<Vec<_>>());
        let c = cloud(vec![[0.0; 3]; 3]);
        assert_eq!(sample_curvature(&c, 5, 16).unwrap(), vec![0, 1, 2]);
    }

    fn plane_with_ridge() -> Vec<Vec3> {
        let mut pts = grid_plane(30, 0.1);
        for i in 0..30 {
            for (dy, z) in [(-0.05, 0.1), (0.0, 0.2), (0.05, 0.1)] {
                pts.push([i as f64 * 0.1, 1.45 + dy, z]);
            }
        }
        pts
    }

    #[test]
    fn adaptive_retains_top_curvature_on_ridge() {
        let pts = plane_with_ridge();
        let cfg = SamplingConfig { n_points: 100, knn_k: 8, seed: 4, ..Default::default() };
        let got = sample_adaptive(&cloud(pts.clone()), &cfg).unwrap();
        assert_eq!(got.len(), 100);
        let oracle = oracle_kappa(&pts, 8);
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.sort_by(|&a, &b| oracle[b].partial_cmp(&oracle[a]).unwrap().then(a.cmp(&b)));
        let top: std::collections::HashSet<usize> = order[..50].iter().copied().collect();
        assert!(got.iter().filter(|i| top.contains(i)).count() >= 50);
    }

    #[test]
    fn adaptive_sqrt_allocation_is_sublinear() {
        // 900 points in one corner cube, 100 in the opposite one.
        let mut pts = Vec::new();
        for i in 0..900 {
            pts.push([(i % 10) as f64 * 0.01, ((i / 10) % 10) as f64 * 0.01, (i / 100) as f64 * 0.01]);
        }
        for i in 0..100 {
            pts.push([10.0 + (i % 10) as f64 * 0.01, 10.0 + (i / 10) as f64 * 0.01, 10.0]);
        }
        let cfg = SamplingConfig {
            n_points: 60,
            curvature_fraction: 0.01,
            grid_cells: 2,
            knn_k: 8,
            seed: 9,
            ..Default::default()
        };
        let got = sample_adaptive(&cloud(pts), &cfg).unwrap();
        let dense = got.iter().filter(|&&i| i < 900).count();
        let sparse = got.len() - dense;
        assert_eq!(got.len(), 60);
        assert!(sparse > 0 && dense < 9 * sparse, "dense {dense} sparse {sparse}");
        // sqrt weights: ceil(sqrt(~899)) = 30 vs 10
        assert!(dense >= 2 * sparse);
    }

    #[test]
    fn allocation_respects_capacity() {
        let a = allocate_budget(20, &[1.0, 10.0], &[1, 100]);
        assert_eq!(a, vec![1, 19]);
        let a = allocate_budget(7, &[1.0, 1.0, 1.0], &[5, 5, 5]);
        assert_eq!(a, vec![3, 2, 2]);
    }

    #[test]
    fn index_file_round_trip_and_errors() {
        let idx = vec![0, 3, 9];
        assert_eq!(parse_index_file(&write_index_file(&idx)).unwrap(), idx);
        assert!(parse_index_file("2\n3\n1\n").is_err());
        assert!(parse_index_file("3\n1\n2\n").is_err());
        assert!(parse_index_file("").is_err());
    }

    fn rotate(p: &Vec3, ax: f64, ay: f64, az: f64) -> Vec3 {
        let (sx, cx) = ax.sin_cos();
        let (sy, cy) = ay.sin_cos();
        let (sz, cz) = az.sin_cos();
        let p1 = [p[0], cx * p[1] - sx * p[2], sx * p[1] + cx * p[2]];
        let p2 = [cy * p1[0] + sy * p1[2], p1[1], -sy * p1[0] + cy * p1[2]];
        [cz * p2[0] - sz * p2[1], sz * p2[0] + cz * p2[1], p2[2]]
    }

    fn arb_points() -> impl Strategy<Value = Vec<Vec3>> {
        prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 20..80)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn samplers_return_sorted_distinct_in_range(pts in arb_points(), n in 1usize..100, seed in any::<u64>(), method in 0u8..3) {
            let c = cloud(pts.clone());
            let m = [SamplingMethod::Random, SamplingMethod::Curvature, SamplingMethod::Adaptive][method as usize];
            let cfg = SamplingConfig { method: m, n_points: n, seed, knn_k: 8, ..Default::default() };
            let idx = sample(&c, &cfg).unwrap();
            prop_assert_eq!(idx.len(), n.min(pts.len()));
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(idx.iter().all(|&i| i < pts.len()));
            prop_assert_eq!(&idx, &sample(&c, &cfg).unwrap());
        }

        #[test]
        fn adaptive_contains_top_kappa(pts in arb_points(), n in 2usize..60, rho in 0.05f64..0.95, seed in any::<u64>()) {
            let c = cloud(pts);
            let cfg = SamplingConfig { n_points: n, seed, knn_k: 6, curvature_fraction: rho, grid_cells: 4, ..Default::default() };
            let got = sample_adaptive(&c, &cfg).unwrap();
            if n < c.len() {
                let kappa = estimate_curvature(&c, 6).unwrap();
                let ranked = rank_descending(kappa.values());
                let need = (rho * n as f64).ceil() as usize;
                for i in &ranked[..need] {
                    prop_assert!(got.binary_search(i).is_ok());
                }
            }
        }

        #[test]
        fn curvature_is_rotation_invariant(pts in arb_points(), ax in 0.0f64..6.3, ay in 0.0f64..6.3, az in 0.0f64..6.3) {
            let base = estimate_curvature(&cloud(pts.clone()), 8).unwrap();
            let rotated: Vec<Vec3> = pts.iter().map(|p| rotate(p, ax, ay, az)).collect();
            let rot = estimate_curvature(&cloud(rotated), 8).unwrap();
            for (a, b) in base.values().iter().zip(rot.values()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn full_budget_is_identity(pts in arb_points(), seed in any::<u64>()) {
            let c = cloud(pts.clone());
            let all: Vec<usize> = (0..pts.len()).collect();
            prop_assert_eq!(sample_random(&c, pts.len(), seed), all.clone());
            prop_assert_eq!(sample_curvature(&c, pts.len(), 8).unwrap(), all);
        }
    }
}
