//! Point-cloud and trajectory file handling.
//!
//! Two cloud formats are supported, chosen by file extension:
//!
//! - `.csv`: one `x,y,z,intensity` line per point. Blank lines and lines
//!   starting with `#` are ignored. Human-diffable, used for fixtures.
//! - `.bin`: a little-endian `u64` point count followed by that many records
//!   of four little-endian `f32` values (`x, y, z, intensity`). Compact form
//!   for bulk data.
//!
//! A dataset manifest is a text file tying clouds to ground-truth poses:
//!
//! ```text
//! # optional comments
//! sensor: panoramic            <- optional, or "fov-limited"; default panoramic
//! scans/000.bin r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2 timestamp
//! ```
//!
//! Each entry line holds a cloud path (no whitespace), the 3x4 `[R|t]` pose
//! in row-major order, and a timestamp in seconds. Relative paths resolve
//! against the manifest's directory. Rotations are validated on load and
//! corrupt ones rejected rather than repaired; referenced files must exist.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{PoseSE3, Se3Error, ROTATION_TOL_EXTERNAL};

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: record {record}: {msg}")]
    Parse { path: PathBuf, record: usize, msg: String },
    #[error("{path}: cloud has no points")]
    Empty { path: PathBuf },
    #[error("{path}: unsupported extension (expected .csv or .bin)")]
    UnknownFormat { path: PathBuf },
    #[error("{path}: line {line}: {msg}")]
    Manifest { path: PathBuf, line: usize, msg: String },
    #[error("{path}: line {line}: invalid rotation: {source}")]
    ManifestPose {
        path: PathBuf,
        line: usize,
        #[source]
        source: Se3Error,
    },
    #[error("{manifest}: line {line}: referenced cloud {cloud} does not exist")]
    MissingCloud { manifest: PathBuf, line: usize, cloud: PathBuf },
}

/// One LiDAR return: position in meters plus a non-negative intensity.
///
/// Stored as `f32`, matching the on-disk precision, so that save/load round
/// trips are bit-exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Self { x, y, z, intensity }
    }

    /// Checks the field invariants: finite coordinates, finite non-negative
    /// intensity. Returns a description of the first violation.
    fn check(&self) -> Result<(), String> {
        if !(self.x.is_finite() && self.y.is_finite() && self.z.is_finite()) {
            return Err(format!("non-finite coordinate ({}, {}, {})", self.x, self.y, self.z));
        }
        if !self.intensity.is_finite() || self.intensity < 0.0 {
            return Err(format!("invalid intensity {}", self.intensity));
        }
        Ok(())
    }

    pub fn xyz(&self) -> Vector3<f64> {
        Vector3::new(self.x as f64, self.y as f64, self.z as f64)
    }
}

/// A point cloud in the sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    /// Acquisition time in seconds.
    pub timestamp: f64,
    /// Free-form label, typically the source file stem.
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, timestamp: f64, frame_id: impl Into<String>) -> Self {
        Self { points, timestamp, frame_id: frame_id.into() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mean position, in double precision.
    pub fn centroid(&self) -> Vector3<f64> {
        let mut sum = Vector3::zeros();
        for p in &self.points {
            sum += p.xyz();
        }
        sum / self.points.len().max(1) as f64
    }
}

/// Sensor coverage recorded in a manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensorKind {
    Panoramic,
    FovLimited,
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SensorKind::Panoramic => write!(f, "panoramic"),
            SensorKind::FovLimited => write!(f, "fov-limited"),
        }
    }
}

impl FromStr for SensorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "panoramic" => Ok(SensorKind::Panoramic),
            "fov-limited" => Ok(SensorKind::FovLimited),
            other => Err(format!("unknown sensor kind {other:?}")),
        }
    }
}

/// One manifest row: a cloud file with its ground-truth pose and timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Path exactly as written in the manifest (possibly relative).
    pub cloud_path: PathBuf,
    pub pose: PoseSE3,
    pub timestamp: f64,
}

/// An ordered dataset: cloud files, ground-truth trajectory, sensor kind.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Directory relative cloud paths resolve against.
    pub dir: PathBuf,
    pub sensor: SensorKind,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(dir: impl Into<PathBuf>, sensor: SensorKind, entries: Vec<ManifestEntry>) -> Self {
        Self { dir: dir.into(), sensor, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Absolute (or caller-relative) path of entry `i`'s cloud file.
    pub fn cloud_path(&self, i: usize) -> PathBuf {
        let p = &self.entries[i].cloud_path;
        if p.is_absolute() {
            p.clone()
        } else {
            self.dir.join(p)
        }
    }

    /// Loads entry `i`'s cloud and stamps it with the manifest timestamp.
    pub fn load_entry_cloud(&self, i: usize) -> Result<PointCloud, CloudError> {
        let mut cloud = load_cloud(&self.cloud_path(i))?;
        cloud.timestamp = self.entries[i].timestamp;
        Ok(cloud)
    }
}

/// Reads a cloud in either supported format, picked by extension.
pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud, CloudError> {
    let path = path.as_ref();
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let points = match ext {
        "csv" => load_cloud_csv(path)?,
        "bin" => load_cloud_bin(path)?,
        _ => return Err(CloudError::UnknownFormat { path: path.to_path_buf() }),
    };
    if points.is_empty() {
        return Err(CloudError::Empty { path: path.to_path_buf() });
    }
    let frame_id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud").to_string();
    Ok(PointCloud::new(points, 0.0, frame_id))
}

/// Writes a cloud in the format selected by the path's extension.
pub fn save_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<(), CloudError> {
    let path = path.as_ref();
    let io_err = |source| CloudError::Io { path: path.to_path_buf(), source };
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "csv" => {
            let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
            for p in &cloud.points {
                writeln!(w, "{},{},{},{}", p.x, p.y, p.z, p.intensity).map_err(io_err)?;
            }
            w.flush().map_err(io_err)
        }
        "bin" => {
            let mut buf = Vec::with_capacity(8 + cloud.points.len() * 16);
            buf.extend_from_slice(&(cloud.points.len() as u64).to_le_bytes());
            for p in &cloud.points {
                buf.extend_from_slice(&p.x.to_le_bytes());
                buf.extend_from_slice(&p.y.to_le_bytes());
                buf.extend_from_slice(&p.z.to_le_bytes());
                buf.extend_from_slice(&p.intensity.to_le_bytes());
            }
            fs::write(path, buf).map_err(io_err)
        }
        _ => Err(CloudError::UnknownFormat { path: path.to_path_buf() }),
    }
}

fn load_cloud_csv(path: &Path) -> Result<Vec<Point>, CloudError> {
    let text = fs::read_to_string(path)
        .map_err(|source| CloudError::Io { path: path.to_path_buf(), source })?;
    let parse_err = |record: usize, msg: String| CloudError::Parse {
        path: path.to_path_buf(),
        record,
        msg,
    };
    let mut points = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let record = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(parse_err(record, format!("expected 4 fields, got {}", fields.len())));
        }
        let mut vals = [0.0f32; 4];
        for (slot, field) in vals.iter_mut().zip(&fields) {
            *slot = field
                .parse::<f32>()
                .map_err(|e| parse_err(record, format!("bad number {field:?}: {e}")))?;
        }
        let p = Point::new(vals[0], vals[1], vals[2], vals[3]);
        p.check().map_err(|msg| parse_err(record, msg))?;
        points.push(p);
    }
    Ok(points)
}

fn load_cloud_bin(path: &Path) -> Result<Vec<Point>, CloudError> {
    let bytes =
        fs::read(path).map_err(|source| CloudError::Io { path: path.to_path_buf(), source })?;
    let parse_err = |record: usize, msg: String| CloudError::Parse {
        path: path.to_path_buf(),
        record,
        msg,
    };
    if bytes.len() < 8 {
        return Err(parse_err(0, "file shorter than the 8-byte count prefix".into()));
    }
    let count = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let expected = 8 + count * 16;
    if bytes.len() != expected {
        return Err(parse_err(
            0,
            format!("count {} implies {} bytes, file has {}", count, expected, bytes.len()),
        ));
    }
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let base = 8 + i * 16;
        let f = |off: usize| f32::from_le_bytes(bytes[base + off..base + off + 4].try_into().unwrap());
        let p = Point::new(f(0), f(4), f(8), f(12));
        p.check().map_err(|msg| parse_err(i + 1, msg))?;
        points.push(p);
    }
    Ok(points)
}

/// Reads a manifest, validating poses, timestamp order, and that every
/// referenced cloud file exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, CloudError> {
    let (manifest, missing) = load_manifest_lenient(path)?;
    match missing.into_iter().next() {
        None => Ok(manifest),
        Some((_, e)) => Err(e),
    }
}

/// Reads a manifest like [`load_manifest`], except that entries whose cloud
/// file is missing are kept and reported as `(entry index, error)` instead
/// of failing the whole load. Callers that process entries one by one can
/// then confine the fault to the affected entries.
pub fn load_manifest_lenient(
    path: impl AsRef<Path>,
) -> Result<(DatasetManifest, Vec<(usize, CloudError)>), CloudError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| CloudError::Io { path: path.to_path_buf(), source })?;
    let line_err = |line: usize, msg: String| CloudError::Manifest {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut sensor = SensorKind::Panoramic;
    let mut sensor_seen = false;
    let mut entries = Vec::new();
    let mut missing = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let line_no = idx + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("sensor:") {
            if sensor_seen {
                return Err(line_err(line_no, "duplicate sensor line".into()));
            }
            if !entries.is_empty() {
                return Err(line_err(line_no, "sensor line must precede entries".into()));
            }
            sensor = rest.trim().parse().map_err(|e| line_err(line_no, e))?;
            sensor_seen = true;
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 14 {
            return Err(line_err(
                line_no,
                format!("expected path + 12 pose numbers + timestamp, got {} tokens", tokens.len()),
            ));
        }
        let mut nums = [0.0f64; 13];
        for (slot, tok) in nums.iter_mut().zip(&tokens[1..]) {
            *slot = tok
                .parse::<f64>()
                .map_err(|e| line_err(line_no, format!("bad number {tok:?}: {e}")))?;
        }
        let rotation = Matrix3::new(
            nums[0], nums[1], nums[2], nums[4], nums[5], nums[6], nums[8], nums[9], nums[10],
        );
        let translation = Vector3::new(nums[3], nums[7], nums[11]);
        let pose = PoseSE3::with_tolerance(rotation, translation, ROTATION_TOL_EXTERNAL).map_err(
            |source| CloudError::ManifestPose { path: path.to_path_buf(), line: line_no, source },
        )?;
        let timestamp = nums[12];
        if !timestamp.is_finite() {
            return Err(line_err(line_no, format!("non-finite timestamp {timestamp}")));
        }
        if let Some(prev) = entries.last().map(|e: &ManifestEntry| e.timestamp) {
            if timestamp < prev {
                return Err(line_err(
                    line_no,
                    format!("timestamps must be non-decreasing ({timestamp} after {prev})"),
                ));
            }
        }
        let cloud_path = PathBuf::from(tokens[0]);
        let resolved = if cloud_path.is_absolute() { cloud_path.clone() } else { dir.join(&cloud_path) };
        if !resolved.is_file() {
            missing.push((
                entries.len(),
                CloudError::MissingCloud {
                    manifest: path.to_path_buf(),
                    line: line_no,
                    cloud: resolved,
                },
            ));
        }
        entries.push(ManifestEntry { cloud_path, pose, timestamp });
    }
    Ok((DatasetManifest { dir, sensor, entries }, missing))
}

/// Writes a manifest. Cloud paths are emitted exactly as stored in the
/// entries; the caller is responsible for making them resolvable from the
/// manifest's directory.
pub fn save_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<(), CloudError> {
    let path = path.as_ref();
    let io_err = |source| CloudError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    writeln!(w, "sensor: {}", manifest.sensor).map_err(io_err)?;
    for e in &manifest.entries {
        let r = e.pose.rotation();
        let t = e.pose.translation();
        writeln!(
            w,
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            e.cloud_path.display(),
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
            e.timestamp,
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
