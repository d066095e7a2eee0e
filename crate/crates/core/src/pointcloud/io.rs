//! On-disk sample layout.
//!
//! One sample is one directory holding `surface.txt`, `volume.txt`,
//! `pressure.txt`, `velocity.txt` and `cd.txt`. Cloud files start with a
//! header `N C_u has_normals` followed by `N` rows of
//! `x y z [nx ny nz] [u_1 .. u_C_u]`. Every decimal is written with 17
//! significant digits, `.` radix and LF line endings, which makes the
//! write/read cycle bit-exact for `f64`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PointCloud, Role, SampleRecord, Vec3};
use crate::error::{Error, Result};
use crate::rng::fnv1a64;

pub const FORMAT_VERSION: u32 = 1;

pub const SURFACE_FILE: &str = "surface.txt";
pub const VOLUME_FILE: &str = "volume.txt";
pub const PRESSURE_FILE: &str = "pressure.txt";
pub const VELOCITY_FILE: &str = "velocity.txt";
pub const DRAG_FILE: &str = "cd.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

/// 17 significant digits in scientific notation.
pub fn format_decimal(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        out.push_str(&format_decimal(v));
    }
    out.push('\n');
}

pub fn write_cloud(cloud: &PointCloud) -> String {
    let has_normals = cloud.normals().is_some();
    let mut out = format!("{} {} {}\n", cloud.len(), cloud.feature_width(), u8::from(has_normals));
    for i in 0..cloud.len() {
        let mut row: Vec<f64> = cloud.positions()[i].to_vec();
        if let Some(ns) = cloud.normals() {
            row.extend_from_slice(&ns[i]);
        }
        row.extend_from_slice(cloud.feature_row(i));
        push_row(&mut out, row);
    }
    out
}

/// Non-blank lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty())
}

fn parse_number(tok: &str, file: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        file: file.to_string(),
        line,
        msg: format!("`{tok}` is not a decimal number"),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFinite { what: format!("{file}:{line}") });
    }
    Ok(v)
}

fn parse_row(text: &str, file: &str, line: usize, width: usize) -> Result<Vec<f64>> {
    let row = text.split_ascii_whitespace().map(|t| parse_number(t, file, line)).collect::<Result<Vec<_>>>()?;
    if row.len() != width {
        return Err(Error::Parse {
            file: file.to_string(),
            line,
            msg: format!("expected {width} columns, found {}", row.len()),
        });
    }
    Ok(row)
}

fn parse_count(tok: &str, file: &str, line: usize) -> Result<usize> {
    tok.parse().map_err(|_| Error::Parse {
        file: file.to_string(),
        line,
        msg: format!("`{tok}` is not a non-negative integer"),
    })
}

/// Parses a cloud file body. `file` names the source in error messages.
pub fn parse_cloud(text: &str, file: &str, role: Role) -> Result<PointCloud> {
    let mut lines = content_lines(text);
    let (hline, header) =
        lines.next().ok_or_else(|| Error::Parse { file: file.to_string(), line: 1, msg: "missing header".into() })?;
    let toks: Vec<&str> = header.split_ascii_whitespace().collect();
    if toks.len() != 3 {
        return Err(Error::Parse {
            file: file.to_string(),
            line: hline,
            msg: "header must be `N C_u has_normals`".into(),
        });
    }
    let n = parse_count(toks[0], file, hline)?;
    let width = parse_count(toks[1], file, hline)?;
    let has_normals = match toks[2] {
        "0" => false,
        "1" => true,
        other => {
            return Err(Error::Parse {
                file: file.to_string(),
                line: hline,
                msg: format!("has_normals must be 0 or 1, found `{other}`"),
            })
        }
    };
    if has_normals && role == Role::Volume {
        return Err(Error::Parse {
            file: file.to_string(),
            line: hline,
            msg: "volume points never carry normals".into(),
        });
    }
    let cols = 3 + if has_normals { 3 } else { 0 } + width;
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut features = Vec::new();
    let mut found = 0usize;
    for (ln, l) in lines {
        found += 1;
        if found > n {
            continue;
        }
        let row = parse_row(l, file, ln, cols)?;
        positions.push([row[0], row[1], row[2]]);
        let mut off = 3;
        if has_normals {
            normals.push([row[3], row[4], row[5]]);
            off = 6;
        }
        features.extend_from_slice(&row[off..]);
    }
    if found != n {
        return Err(Error::CountMismatch { file: file.to_string(), expected: n, found });
    }
    PointCloud::new(positions, has_normals.then_some(normals), features, width, role)
}

pub fn parse_pressure(text: &str, file: &str) -> Result<Vec<f64>> {
    content_lines(text).map(|(ln, l)| parse_row(l, file, ln, 1).map(|r| r[0])).collect()
}

pub fn parse_velocity(text: &str, file: &str) -> Result<Vec<Vec3>> {
    content_lines(text).map(|(ln, l)| parse_row(l, file, ln, 3).map(|r| [r[0], r[1], r[2]])).collect()
}

pub fn parse_drag(text: &str, file: &str) -> Result<f64> {
    let mut lines = content_lines(text);
    let (ln, l) = lines.next().ok_or_else(|| Error::Parse {
        file: file.to_string(),
        line: 1,
        msg: "missing drag value".into(),
    })?;
    let v = parse_row(l, file, ln, 1)?[0];
    if let Some((extra, _)) = lines.next() {
        return Err(Error::Parse { file: file.to_string(), line: extra, msg: "unexpected trailing content".into() });
    }
    Ok(v)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn display_name(dir: &Path, file: &str) -> String {
    dir.join(file).display().to_string()
}

/// Surface and volume clouds of a sample directory, without targets.
pub fn load_clouds(dir: &Path) -> Result<(PointCloud, PointCloud)> {
    let surface = parse_cloud(&read(&dir.join(SURFACE_FILE))?, &display_name(dir, SURFACE_FILE), Role::Surface)?;
    let volume = parse_cloud(&read(&dir.join(VOLUME_FILE))?, &display_name(dir, VOLUME_FILE), Role::Volume)?;
    Ok((surface, volume))
}

/// Reads a sample directory; the record id is the directory name.
pub fn load_sample(dir: &Path) -> Result<SampleRecord> {
    let id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string());
    let (surface, volume) = load_clouds(dir)?;
    let pressure = parse_pressure(&read(&dir.join(PRESSURE_FILE))?, &display_name(dir, PRESSURE_FILE))?;
    let velocity = parse_velocity(&read(&dir.join(VELOCITY_FILE))?, &display_name(dir, VELOCITY_FILE))?;
    let drag = parse_drag(&read(&dir.join(DRAG_FILE))?, &display_name(dir, DRAG_FILE))?;
    if pressure.len() != surface.len() {
        return Err(Error::CountMismatch {
            file: display_name(dir, PRESSURE_FILE),
            expected: surface.len(),
            found: pressure.len(),
        });
    }
    if velocity.len() != volume.len() {
        return Err(Error::CountMismatch {
            file: display_name(dir, VELOCITY_FILE),
            expected: volume.len(),
            found: velocity.len(),
        });
    }
    SampleRecord::new(id, surface, volume, pressure, velocity, drag)
}

/// Writes `record` into `dir` (created if missing).
pub fn save_sample(record: &SampleRecord, dir: &Path) -> Result<()> {
    record.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(SURFACE_FILE), &write_cloud(&record.surface))?;
    write(&dir.join(VOLUME_FILE), &write_cloud(&record.volume))?;
    save_fields(&record.pressure, &record.velocity, record.drag, dir)
}

/// Writes `pressure.txt`, `velocity.txt` and `cd.txt` into `dir`.
pub fn save_fields(pressure: &[f64], velocity: &[Vec3], drag: f64, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut p = String::new();
    for &v in pressure {
        push_row(&mut p, [v]);
    }
    write(&dir.join(PRESSURE_FILE), &p)?;
    let mut v = String::new();
    for u in velocity {
        push_row(&mut v, *u);
    }
    write(&dir.join(VELOCITY_FILE), &v)?;
    let mut d = String::new();
    push_row(&mut d, [drag]);
    write(&dir.join(DRAG_FILE), &d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    /// Reproducible 80/20 assignment from the sample id.
    pub fn by_id(id: &str) -> Split {
        if fnv1a64(id.as_bytes()).is_multiple_of(5) {
            Split::Val
        } else {
            Split::Train
        }
    }
}

/// Manifest sample entry: a bare relative directory, or an object carrying
/// an explicit split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifestEntry {
    Path(String),
    Tagged { path: String, split: Split },
}

impl ManifestEntry {
    pub fn path(&self) -> &str {
        match self {
            ManifestEntry::Path(p) | ManifestEntry::Tagged { path: p, .. } => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub samples: Vec<ManifestEntry>,
    pub format_version: u32,
    /// Split per sample directory; takes effect for bare entries.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub splits: BTreeMap<String, Split>,
    /// Generator provenance for synthetic datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_version: Option<serde_json::Value>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Manifest> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| Error::Parse {
            file: MANIFEST_FILE.into(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "manifest format_version {} is not supported (expected {FORMAT_VERSION})",
                m.format_version
            )));
        }
        for e in &m.samples {
            let p = Path::new(e.path());
            if e.path().is_empty()
                || p.is_absolute()
                || p.components().any(|c| matches!(c, std::path::Component::ParentDir))
            {
                return Err(Error::invalid(
                    "manifest",
                    format!("sample path `{}` must be relative and inside the dataset", e.path()),
                ));
            }
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Entry split, falling back to the id-hash rule.
    pub fn split_of(&self, entry: &ManifestEntry) -> Split {
        match entry {
            ManifestEntry::Tagged { split, .. } => *split,
            ManifestEntry::Path(p) => self.splits.get(p).copied().unwrap_or_else(|| {
                let id = Path::new(p).file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                Split::by_id(&id)
            }),
        }
    }
}

pub fn load_manifest(root: &Path) -> Result<Manifest> {
    Manifest::parse(&read(&root.join(MANIFEST_FILE))?)
}

pub fn save_manifest(manifest: &Manifest, root: &Path) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let path = root.join(MANIFEST_FILE);
    write(&path, &manifest.to_json())?;
    Ok(path)
}

/// All samples of a dataset root, with their split assignment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<(SampleRecord, Split)>,
}

impl Dataset {
    pub fn split(&self, which: Split) -> Vec<SampleRecord> {
        self.samples.iter().filter(|(_, s)| *s == which).map(|(r, _)| r.clone()).collect()
    }

    pub fn all(&self) -> Vec<SampleRecord> {
        self.samples.iter().map(|(r, _)| r.clone()).collect()
    }
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest = load_manifest(root)?;
    let samples = manifest
        .samples
        .iter()
        .map(|e| Ok((load_sample(&root.join(e.path()))?, manifest.split_of(e))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { manifest, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(ns: usize, nv: usize, cu: usize) -> SampleRecord {
        let positions: Vec<Vec3> = (0..ns).map(|i| [i as f64 * 0.1, 0.5 - i as f64, 1.0 / 3.0]).collect();
        let normals: Vec<Vec3> = (0..ns)
            .map(|i| {
                let a = i as f64 * 0.7;
                [a.cos(), a.sin(), 0.0]
            })
            .collect();
        let surface = PointCloud::new(
            positions,
            Some(normals),
            (0..ns * cu).map(|k| (k as f64).sqrt()).collect(),
            cu,
            Role::Surface,
        )
        .unwrap();
        let volume = PointCloud::new(
            (0..nv).map(|i| [2.0 + i as f64, -1e-300, 7e10]).collect(),
            None,
            (0..nv * cu).map(|k| -(k as f64) / 7.0).collect(),
            cu,
            Role::Volume,
        )
        .unwrap();
        SampleRecord::new(
            "s0",
            surface,
            volume,
            (0..ns).map(|i| (i as f64).sin()).collect(),
            (0..nv).map(|i| [1.0, f64::EPSILON * i as f64, -0.1]).collect(),
            0.3,
        )
        .unwrap()
    }

    #[test]
    fn loads_hand_written_sample() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("s0");
        fs::create_dir_all(&d).unwrap();
        fs::write(d.join("surface.txt"), "4 0 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n").unwrap();
        fs::write(d.join("volume.txt"), "2 0 0\n2 0 0\n0 2 0\n").unwrap();
        fs::write(d.join("pressure.txt"), "1\n0.5\n-0.5\n0\n").unwrap();
        fs::write(d.join("velocity.txt"), "1 0 0\n0 1 0\n").unwrap();
        fs::write(d.join("cd.txt"), "0.3000000000\n").unwrap();
        let r = load_sample(&d).unwrap();
        assert_eq!(r.surface.len(), 4);
        assert_eq!(r.volume.len(), 2);
        assert_eq!(r.drag, 0.3);
        assert_eq!(r.id, "s0");

        fs::write(d.join("pressure.txt"), "1\n0.5\n-0.5\n").unwrap();
        assert!(matches!(load_sample(&d), Err(Error::CountMismatch { expected: 4, found: 3, .. })));
    }

    #[test]
    fn round_trip_and_byte_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample(5, 3, 2);
        let a = dir.path().join("s0");
        save_sample(&r, &a).unwrap();
        let back = load_sample(&a).unwrap();
        assert_eq!(back, r);
        let b = dir.path().join("copy").join("s0");
        save_sample(&r, &b).unwrap();
        for f in [SURFACE_FILE, VOLUME_FILE, PRESSURE_FILE, VELOCITY_FILE, DRAG_FILE] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn zero_feature_width_omits_columns() {
        let r = sample(2, 1, 0);
        let text = write_cloud(&r.surface);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("2 0 1"));
        assert_eq!(lines.next().unwrap().split(' ').count(), 6);
        assert_eq!(write_cloud(&r.volume).lines().nth(1).unwrap().split(' ').count(), 3);
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse_cloud("2 0 0\n0 0 0\n0 zero 0\n", "surface.txt", Role::Surface).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        let err = parse_cloud("1 0 0\n0 0\n", "surface.txt", Role::Surface).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn header_body_count_mismatch() {
        let err = parse_cloud("3 0 0\n0 0 0\n1 1 1\n", "surface.txt", Role::Surface).unwrap_err();
        assert!(matches!(err, Error::CountMismatch { expected: 3, found: 2, .. }));
        let err = parse_cloud("1 0 0\n0 0 0\n1 1 1\n", "surface.txt", Role::Surface).unwrap_err();
        assert!(matches!(err, Error::CountMismatch { expected: 1, found: 2, .. }));
    }

    #[test]
    fn non_finite_values_rejected() {
        assert!(matches!(parse_pressure("1\nNaN\n", "p"), Err(Error::NonFinite { .. })));
        assert!(matches!(parse_drag("inf\n", "cd"), Err(Error::NonFinite { .. })));
        assert!(parse_drag("0.3\n0.4\n", "cd").is_err());
    }

    #[test]
    fn volume_with_normals_rejected() {
        assert!(parse_cloud("1 0 1\n0 0 0 1 0 0\n", "volume.txt", Role::Volume).is_err());
    }

    #[test]
    fn manifest_forms() {
        let m = Manifest::parse(r#"{"samples": ["a", {"path": "b", "split": "val"}], "format_version": 1}"#).unwrap();
        assert_eq!(m.samples[0].path(), "a");
        assert_eq!(m.split_of(&m.samples[1]), Split::Val);
        assert!(Manifest::parse(r#"{"samples": [], "format_version": 2}"#).is_err());
        assert!(Manifest::parse(r#"{"samples": ["../x"], "format_version": 1}"#).is_err());
        assert!(Manifest::parse(r#"{"samples": [], "format_version": 1, "extra": 0}"#).is_err());
        let back = Manifest::parse(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn decimal_format_has_17_significant_digits() {
        assert_eq!(format_decimal(0.3), "2.9999999999999999e-1");
        assert_eq!(format_decimal(1.0), "1.0000000000000000e0");
        for v in [0.1, 1.0 / 3.0, 6.02214076e23, -4.9e-324, f64::MAX] {
            assert_eq!(format_decimal(v).parse::<f64>().unwrap(), v);
        }
    }
}
