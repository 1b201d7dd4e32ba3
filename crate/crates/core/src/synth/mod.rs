//! Synthetic worlds and simulated LiDAR scans with exact ground truth.
//!
//! Scenes are built from analytic primitives (axis-aligned boxes, vertical
//! cylinders, a ground plane) so every ray intersection has a closed form.
//! Scans are rendered in the sensor frame, panoramic or restricted to a
//! horizontal field-of-view wedge, with optional Gaussian range noise.
//! Intensity is primitive reflectivity scaled by `1 / (1 + range / 50 m)`
//! and clamped to `[0, 1]`.
//!
//! The module also bundles a benchmark generator that renders a database
//! pass over a pose grid plus a query pass with bounded offsets, writing
//! both as manifests the rest of the pipeline consumes.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{
    save_cloud, save_manifest, CloudError, DatasetManifest, ManifestEntry, Point, PointCloud,
    SensorKind,
};
use crate::se3::PoseSE3;

/// Range falloff scale of the intensity model, meters.
const INTENSITY_FALLOFF_M: f64 = 50.0;

/// Free-space radius kept around every scene waypoint, meters.
pub const WAYPOINT_CLEARANCE_M: f64 = 2.0;

/// Placement attempts per primitive before a crowded scene is rejected.
const PLACEMENT_RETRIES: usize = 200;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    BadSpec(String),
    #[error("scene has no primitives")]
    EmptyScene,
    #[error("primitive {index} extends outside the world extent {extent}")]
    OutOfExtent { index: usize, extent: f64 },
    #[error("pose ({x}, {y}) lies outside the world extent {extent}")]
    PoseOutOfExtent { x: f64, y: f64, extent: f64 },
    #[error("no ray returned a hit")]
    EmptyScan,
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An analytic landmark. Reflectivity sits in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Axis-aligned box given by opposite corners.
    Box { min: Vector3<f64>, max: Vector3<f64>, reflectivity: f64 },
    /// Vertical open cylinder (no end caps).
    Cylinder { center_x: f64, center_y: f64, radius: f64, z_min: f64, z_max: f64, reflectivity: f64 },
    /// Horizontal plane clipped to the world extent.
    Ground { z: f64, reflectivity: f64 },
}

impl Primitive {
    fn within(&self, extent: f64) -> bool {
        match self {
            Primitive::Box { min, max, .. } => {
                min.x.abs() <= extent
                    && min.y.abs() <= extent
                    && max.x.abs() <= extent
                    && max.y.abs() <= extent
                    && min.x < max.x
                    && min.y < max.y
                    && min.z < max.z
            }
            Primitive::Cylinder { center_x, center_y, radius, z_min, z_max, .. } => {
                center_x.abs() + radius <= extent
                    && center_y.abs() + radius <= extent
                    && *radius > 0.0
                    && z_min < z_max
            }
            Primitive::Ground { z, .. } => z.is_finite(),
        }
    }

    pub fn reflectivity(&self) -> f64 {
        match self {
            Primitive::Box { reflectivity, .. }
            | Primitive::Cylinder { reflectivity, .. }
            | Primitive::Ground { reflectivity, .. } => *reflectivity,
        }
    }
}

/// Scene generation parameters. Concrete primitives are drawn
/// deterministically from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    /// World half-width in meters; content occupies `[-extent, extent]²`.
    pub extent: f64,
    pub boxes: usize,
    pub cylinders: usize,
    pub ground: bool,
    /// Sensor positions that must stay in free space. No box or cylinder
    /// footprint is placed within [`WAYPOINT_CLEARANCE_M`] of any waypoint,
    /// so a scan taken there never starts inside geometry.
    pub waypoints: Vec<[f64; 3]>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self { seed: 0, extent: 100.0, boxes: 120, cylinders: 60, ground: true, waypoints: Vec::new() }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !self.extent.is_finite() || self.extent <= 0.0 {
            return Err(SynthError::BadSpec(format!("extent must be positive, got {}", self.extent)));
        }
        if self.boxes == 0 && self.cylinders == 0 && !self.ground {
            return Err(SynthError::EmptyScene);
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            if !w.iter().all(|v| v.is_finite()) {
                return Err(SynthError::BadSpec(format!("waypoint {i} has non-finite coordinates")));
            }
        }
        Ok(())
    }
}

/// A realized world: immutable primitive list plus its extent.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    pub extent: f64,
}

impl Scene {
    /// Builds a scene from explicit primitives, checking containment.
    pub fn from_primitives(primitives: Vec<Primitive>, extent: f64) -> Result<Self, SynthError> {
        if !extent.is_finite() || extent <= 0.0 {
            return Err(SynthError::BadSpec(format!("extent must be positive, got {extent}")));
        }
        if primitives.is_empty() {
            return Err(SynthError::EmptyScene);
        }
        for (index, p) in primitives.iter().enumerate() {
            if !p.within(extent) {
                return Err(SynthError::OutOfExtent { index, extent });
            }
        }
        Ok(Self { primitives, extent })
    }

    /// Nearest positive ray parameter and the reflectivity hit, if any.
    fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        let mut consider = |t: f64, reflectivity: f64| {
            if t > 1e-9 && best.map_or(true, |(bt, _)| t < bt) {
                best = Some((t, reflectivity));
            }
        };
        for p in &self.primitives {
            match p {
                Primitive::Box { min, max, reflectivity } => {
                    // Slab test; works from inside the box too, where the
                    // near parameter is negative and the exit face is hit.
                    let mut t_near = f64::NEG_INFINITY;
                    let mut t_far = f64::INFINITY;
                    let mut ok = true;
                    for axis in 0..3 {
                        if dir[axis].abs() < 1e-15 {
                            if origin[axis] < min[axis] || origin[axis] > max[axis] {
                                ok = false;
                                break;
                            }
                            continue;
                        }
                        let a = (min[axis] - origin[axis]) / dir[axis];
                        let b = (max[axis] - origin[axis]) / dir[axis];
                        t_near = t_near.max(a.min(b));
                        t_far = t_far.min(a.max(b));
                    }
                    if ok && t_near <= t_far {
                        let t = if t_near > 1e-9 { t_near } else { t_far };
                        consider(t, *reflectivity);
                    }
                }
                Primitive::Cylinder { center_x, center_y, radius, z_min, z_max, reflectivity } => {
                    let ox = origin.x - center_x;
                    let oy = origin.y - center_y;
                    let a = dir.x * dir.x + dir.y * dir.y;
                    if a < 1e-15 {
                        continue;
                    }
                    let b = 2.0 * (ox * dir.x + oy * dir.y);
                    let c = ox * ox + oy * oy - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc < 0.0 {
                        continue;
                    }
                    let sq = disc.sqrt();
                    for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                        let z = origin.z + t * dir.z;
                        if z >= *z_min && z <= *z_max {
                            consider(t, *reflectivity);
                        }
                    }
                }
                Primitive::Ground { z, reflectivity } => {
                    if dir.z.abs() < 1e-15 {
                        continue;
                    }
                    let t = (z - origin.z) / dir.z;
                    let x = origin.x + t * dir.x;
                    let y = origin.y + t * dir.y;
                    if x.abs() <= self.extent && y.abs() <= self.extent {
                        consider(t, *reflectivity);
                    }
                }
            }
        }
        best
    }

    /// Distance from a world point to the nearest primitive surface.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        for prim in &self.primitives {
            let d = match prim {
                Primitive::Box { min, max, .. } => {
                    let dx = (min.x - p.x).max(0.0).max(p.x - max.x);
                    let dy = (min.y - p.y).max(0.0).max(p.y - max.y);
                    let dz = (min.z - p.z).max(0.0).max(p.z - max.z);
                    let outside = (dx * dx + dy * dy + dz * dz).sqrt();
                    if outside > 0.0 {
                        outside
                    } else {
                        // Inside: distance to the closest face.
                        let ix = (p.x - min.x).min(max.x - p.x);
                        let iy = (p.y - min.y).min(max.y - p.y);
                        let iz = (p.z - min.z).min(max.z - p.z);
                        ix.min(iy).min(iz)
                    }
                }
                Primitive::Cylinder { center_x, center_y, radius, z_min, z_max, .. } => {
                    let radial =
                        (((p.x - center_x).powi(2) + (p.y - center_y).powi(2)).sqrt() - radius)
                            .abs();
                    if p.z >= *z_min && p.z <= *z_max {
                        radial
                    } else {
                        let dz = (z_min - p.z).max(p.z - z_max);
                        (radial * radial + dz * dz).sqrt()
                    }
                }
                Primitive::Ground { z, .. } => (p.z - z).abs(),
            };
            best = best.min(d);
        }
        best
    }
}

/// Draws a deterministic scene from the spec.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut primitives = Vec::with_capacity(spec.boxes + spec.cylinders + 1);
    if spec.ground {
        primitives.push(Primitive::Ground { z: 0.0, reflectivity: 0.2 });
    }
    let place = |rng: &mut ChaCha8Rng, margin: f64| -> (f64, f64) {
        let lim = (spec.extent - margin).max(0.0);
        (rng.random_range(-lim..=lim), rng.random_range(-lim..=lim))
    };
    // Keeps every waypoint at least WAYPOINT_CLEARANCE_M away from the
    // xy footprint rectangle; cylinders pass their radius as padding.
    let clear = |min_x: f64, min_y: f64, max_x: f64, max_y: f64, pad: f64| -> bool {
        spec.waypoints.iter().all(|w| {
            let dx = (min_x - w[0]).max(0.0).max(w[0] - max_x);
            let dy = (min_y - w[1]).max(0.0).max(w[1] - max_y);
            (dx * dx + dy * dy).sqrt() >= pad + WAYPOINT_CLEARANCE_M
        })
    };
    for index in 0..spec.boxes {
        let hx: f64 = rng.random_range(0.4..2.5);
        let hy: f64 = rng.random_range(0.4..2.5);
        let height: f64 = rng.random_range(1.0..7.0);
        let reflectivity = rng.random_range(0.05..1.0);
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            let (cx, cy) = place(&mut rng, hx.max(hy));
            if clear(cx - hx, cy - hy, cx + hx, cy + hy, 0.0) {
                primitives.push(Primitive::Box {
                    min: Vector3::new(cx - hx, cy - hy, 0.0),
                    max: Vector3::new(cx + hx, cy + hy, height),
                    reflectivity,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SynthError::BadSpec(format!(
                "no room for box {index} outside the waypoint clearances"
            )));
        }
    }
    for index in 0..spec.cylinders {
        let radius: f64 = rng.random_range(0.2..1.5);
        let height: f64 = rng.random_range(2.0..8.0);
        let reflectivity = rng.random_range(0.05..1.0);
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            let (cx, cy) = place(&mut rng, radius);
            if clear(cx, cy, cx, cy, radius) {
                primitives.push(Primitive::Cylinder {
                    center_x: cx,
                    center_y: cy,
                    radius,
                    z_min: 0.0,
                    z_max: height,
                    reflectivity,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SynthError::BadSpec(format!(
                "no room for cylinder {index} outside the waypoint clearances"
            )));
        }
    }
    Scene::from_primitives(primitives, spec.extent)
}

/// Sensor model for one rendered scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSpec {
    pub sensor: SensorKind,
    /// Horizontal field of view in degrees, used by the fov-limited mode.
    pub fov_degrees: f64,
    pub range_min: f64,
    pub range_max: f64,
    pub azimuth_step_deg: f64,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub elevation_step_deg: f64,
    /// Gaussian range noise standard deviation in meters.
    pub noise_sigma: f64,
    /// Seed for the noise stream.
    pub seed: u64,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            sensor: SensorKind::Panoramic,
            fov_degrees: 70.0,
            range_min: 0.5,
            range_max: 25.0,
            azimuth_step_deg: 1.0,
            elevation_min_deg: -15.0,
            elevation_max_deg: 5.0,
            elevation_step_deg: 1.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl ScanSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.fov_degrees > 0.0 && self.fov_degrees <= 360.0) {
            return Err(SynthError::BadSpec(format!(
                "fov must lie in (0, 360], got {}",
                self.fov_degrees
            )));
        }
        if self.azimuth_step_deg <= 0.0 || self.elevation_step_deg <= 0.0 {
            return Err(SynthError::BadSpec("angular steps must be positive".into()));
        }
        if !(self.range_min >= 0.0 && self.range_max > self.range_min) {
            return Err(SynthError::BadSpec(format!(
                "need 0 <= range_min < range_max, got {} and {}",
                self.range_min, self.range_max
            )));
        }
        if self.elevation_max_deg < self.elevation_min_deg {
            return Err(SynthError::BadSpec("elevation band is empty".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(SynthError::BadSpec(format!("noise sigma {} is negative", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Ray-casts one scan from the given sensor pose. Points come back in the
/// sensor frame; `pose` is only used to place rays in the world.
pub fn render_scan(
    scene: &Scene,
    pose: &PoseSE3,
    spec: &ScanSpec,
) -> Result<PointCloud, SynthError> {
    spec.validate()?;
    let t = pose.translation();
    if t.x.abs() > scene.extent || t.y.abs() > scene.extent {
        return Err(SynthError::PoseOutOfExtent { x: t.x, y: t.y, extent: scene.extent });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let half_fov = spec.fov_degrees / 2.0;
    let n_az = (360.0 / spec.azimuth_step_deg).round() as usize;
    let n_el =
        ((spec.elevation_max_deg - spec.elevation_min_deg) / spec.elevation_step_deg).round()
            as usize
            + 1;
    let mut points = Vec::new();
    for e in 0..n_el {
        let elevation = (spec.elevation_min_deg + e as f64 * spec.elevation_step_deg).to_radians();
        let (sin_e, cos_e) = elevation.sin_cos();
        for a in 0..n_az {
            let az_deg = a as f64 * spec.azimuth_step_deg;
            if spec.sensor == SensorKind::FovLimited {
                // Wedge centered on the sensor's +x heading.
                let wrapped = if az_deg > 180.0 { az_deg - 360.0 } else { az_deg };
                if wrapped.abs() > half_fov {
                    continue;
                }
            }
            let azimuth = az_deg.to_radians();
            let (sin_a, cos_a) = azimuth.sin_cos();
            let dir_sensor = Vector3::new(cos_e * cos_a, cos_e * sin_a, sin_e);
            let dir_world = pose.rotation() * dir_sensor;
            let Some((range, reflectivity)) = scene.cast(&t, &dir_world) else { continue };
            if range < spec.range_min || range > spec.range_max {
                continue;
            }
            let noisy = if spec.noise_sigma > 0.0 {
                let n: f64 = StandardNormal.sample(&mut rng);
                range + spec.noise_sigma * n
            } else {
                range
            };
            let p = dir_sensor * noisy;
            let intensity =
                (reflectivity / (1.0 + range / INTENSITY_FALLOFF_M)).clamp(0.0, 1.0);
            points.push(Point::new(p.x as f32, p.y as f32, p.z as f32, intensity as f32));
        }
    }
    if points.is_empty() {
        return Err(SynthError::EmptyScan);
    }
    Ok(PointCloud::new(points, 0.0, "synth"))
}

/// Benchmark layout: a grid of database poses plus one offset query per
/// database pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub scene: SceneSpec,
    /// Database scan count, laid out row-major on a square grid.
    pub database_count: usize,
    /// Grid spacing in meters.
    pub spacing: f64,
    /// Maximum horizontal query offset from its anchor pose, meters.
    pub query_offset: f64,
    /// Maximum absolute query yaw in degrees.
    pub query_yaw_deg: f64,
    /// Sensor height above ground.
    pub sensor_height: f64,
    /// Sensor model for query scans; database scans are always panoramic.
    pub query_sensor: SensorKind,
    pub scan: ScanSpec,
    /// Seed for query pose sampling.
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            database_count: 36,
            spacing: 40.0,
            query_offset: 5.0,
            query_yaw_deg: 180.0,
            sensor_height: 1.5,
            query_sensor: SensorKind::Panoramic,
            scan: ScanSpec::default(),
            seed: 7,
        }
    }
}

/// File layout produced by [`generate_benchmark`].
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPaths {
    pub database_manifest: PathBuf,
    pub query_manifest: PathBuf,
}

fn yaw_pose(x: f64, y: f64, z: f64, yaw: f64) -> PoseSE3 {
    let (s, c) = yaw.sin_cos();
    let rotation = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
    PoseSE3::new(rotation, Vector3::new(x, y, z)).expect("yaw rotation is orthonormal")
}

/// Ground-truth sensor poses of the benchmark, database pass first.
pub fn benchmark_poses(spec: &BenchmarkSpec) -> (Vec<PoseSE3>, Vec<PoseSE3>) {
    let n = spec.database_count;
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let x0 = -((cols - 1) as f64) * spec.spacing / 2.0;
    let y0 = -((rows - 1) as f64) * spec.spacing / 2.0;
    let database: Vec<PoseSE3> = (0..n)
        .map(|i| {
            let x = x0 + (i % cols) as f64 * spec.spacing;
            let y = y0 + (i / cols) as f64 * spec.spacing;
            yaw_pose(x, y, spec.sensor_height, 0.0)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let queries: Vec<PoseSE3> = database
        .iter()
        .map(|anchor| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let radius = spec.query_offset * rng.random_range(0.0..1.0f64).sqrt();
            let yaw = rng.random_range(-1.0..1.0f64) * spec.query_yaw_deg.to_radians();
            let t = anchor.translation();
            yaw_pose(t.x + radius * angle.cos(), t.y + radius * angle.sin(), t.z, yaw)
        })
        .collect();
    (database, queries)
}

/// Renders the full benchmark under `dir`: clouds in `db/` and `queries/`,
/// manifests `database.manifest` and `queries.manifest`, ground-truth poses
/// inside the manifests.
pub fn generate_benchmark(
    spec: &BenchmarkSpec,
    dir: impl AsRef<Path>,
) -> Result<BenchmarkPaths, SynthError> {
    if spec.database_count == 0 {
        return Err(SynthError::BadSpec("database_count must be at least 1".into()));
    }
    if spec.spacing <= 0.0 || spec.query_offset < 0.0 {
        return Err(SynthError::BadSpec("spacing must be positive and offset non-negative".into()));
    }
    let (database, queries) = benchmark_poses(spec);
    // The grid plus sensor range must fit in the world.
    let reach = database
        .iter()
        .chain(&queries)
        .map(|p| p.translation().x.abs().max(p.translation().y.abs()))
        .fold(0.0, f64::max)
        + spec.scan.range_max;
    let mut scene_spec = spec.scene.clone();
    if scene_spec.extent < reach {
        // Growing the world without growing the primitive counts would
        // dilute the authored structure density, so scale counts by the
        // area ratio to keep scans equally feature-rich.
        let ratio = (reach / scene_spec.extent).powi(2);
        scene_spec.boxes = ((scene_spec.boxes as f64) * ratio).round() as usize;
        scene_spec.cylinders = ((scene_spec.cylinders as f64) * ratio).round() as usize;
        scene_spec.extent = reach;
    }
    // Every sensor pose becomes a waypoint so no scan starts inside a wall.
    scene_spec.waypoints.extend(database.iter().chain(&queries).map(|p| {
        let t = p.translation();
        [t.x, t.y, t.z]
    }));
    let scene = generate_scene(&scene_spec)?;

    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("db"))?;
    std::fs::create_dir_all(dir.join("queries"))?;

    let render_pass = |poses: &[PoseSE3],
                       sub: &str,
                       sensor: SensorKind,
                       seed_base: u64|
     -> Result<Vec<ManifestEntry>, SynthError> {
        let mut entries = Vec::with_capacity(poses.len());
        for (i, pose) in poses.iter().enumerate() {
            let scan_spec = ScanSpec {
                sensor,
                seed: seed_base.wrapping_add(i as u64),
                ..spec.scan.clone()
            };
            let cloud = render_scan(&scene, pose, &scan_spec)?;
            let rel = PathBuf::from(format!("{sub}/{i:04}.bin"));
            save_cloud(dir.join(&rel), &cloud)?;
            entries.push(ManifestEntry { cloud_path: rel, pose: *pose, timestamp: i as f64 });
        }
        Ok(entries)
    };

    let db_entries = render_pass(&database, "db", SensorKind::Panoramic, 0x6462)?;
    let query_entries = render_pass(&queries, "queries", spec.query_sensor, 0x7179)?;

    let database_manifest = dir.join("database.manifest");
    save_manifest(
        &database_manifest,
        &DatasetManifest::new(dir, SensorKind::Panoramic, db_entries),
    )?;
    let query_manifest = dir.join("queries.manifest");
    save_manifest(&query_manifest, &DatasetManifest::new(dir, spec.query_sensor, query_entries))?;
    Ok(BenchmarkPaths { database_manifest, query_manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covis;

    #[test]
    fn scene_generation_is_deterministic() {
        let spec = SceneSpec { seed: 42, ..SceneSpec::default() };
        let a = generate_scene(&spec).unwrap();
        let b = generate_scene(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&SceneSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn scene_spec_guards() {
        assert!(matches!(
            generate_scene(&SceneSpec { extent: 0.0, ..SceneSpec::default() }),
            Err(SynthError::BadSpec(_))
        ));
        assert!(matches!(
            generate_scene(&SceneSpec {
                boxes: 0,
                cylinders: 0,
                ground: false,
                ..SceneSpec::default()
            }),
            Err(SynthError::EmptyScene)
        ));
        assert!(matches!(
            Scene::from_primitives(vec![], 10.0),
            Err(SynthError::EmptyScene)
        ));
    }

    #[test]
    fn generated_primitives_respect_the_extent() {
        let spec = SceneSpec { seed: 7, boxes: 60, cylinders: 40, ..SceneSpec::default() };
        let scene = generate_scene(&spec).unwrap();
        assert_eq!(scene.primitives.len(), 101);
        for p in &scene.primitives {
            assert!(p.within(spec.extent));
            assert!((0.0..=1.0).contains(&p.reflectivity()));
        }
    }

    #[test]
    fn waypoints_keep_their_clearance_free() {
        let waypoints = vec![[5.0, -3.0, 1.5], [-10.0, 12.0, 1.5], [0.0, 0.0, 1.5]];
        let spec = SceneSpec {
            seed: 11,
            extent: 30.0,
            boxes: 80,
            cylinders: 40,
            ground: true,
            waypoints: waypoints.clone(),
        };
        let scene = generate_scene(&spec).unwrap();
        assert_eq!(scene.primitives.len(), 121);
        for w in &waypoints {
            for p in &scene.primitives {
                let d = match p {
                    Primitive::Box { min, max, .. } => {
                        let dx = (min.x - w[0]).max(0.0).max(w[0] - max.x);
                        let dy = (min.y - w[1]).max(0.0).max(w[1] - max.y);
                        (dx * dx + dy * dy).sqrt()
                    }
                    Primitive::Cylinder { center_x, center_y, radius, .. } => {
                        ((w[0] - center_x).powi(2) + (w[1] - center_y).powi(2)).sqrt() - radius
                    }
                    Primitive::Ground { .. } => continue,
                };
                assert!(d >= WAYPOINT_CLEARANCE_M, "primitive {d} m from a waypoint");
            }
            // A narrow scan from the waypoint must see something.
            let spec = ScanSpec {
                sensor: SensorKind::FovLimited,
                fov_degrees: 70.0,
                ..ScanSpec::default()
            };
            let pose = yaw_pose(w[0], w[1], w[2], 1.0);
            assert!(!render_scan(&scene, &pose, &spec).unwrap().points.is_empty());
        }
    }

    #[test]
    fn crowded_waypoint_scene_is_rejected() {
        // The clearance disc nearly fills the world, so boxes cannot land.
        let spec = SceneSpec {
            seed: 0,
            extent: 2.5,
            boxes: 10,
            cylinders: 0,
            ground: true,
            waypoints: vec![[0.0, 0.0, 1.5]],
        };
        assert!(matches!(generate_scene(&spec), Err(SynthError::BadSpec(_))));
    }

    #[test]
    fn out_of_extent_primitive_is_rejected() {
        let p = Primitive::Box {
            min: Vector3::new(8.0, 0.0, 0.0),
            max: Vector3::new(12.0, 1.0, 1.0),
            reflectivity: 0.5,
        };
        assert!(matches!(
            Scene::from_primitives(vec![p], 10.0),
            Err(SynthError::OutOfExtent { index: 0, .. })
        ));
    }

    /// Hollow box around the origin; every ray from inside must hit it.
    fn closed_box(half: f64, reflectivity: f64) -> Scene {
        let p = Primitive::Box {
            min: Vector3::new(-half, -half, -half),
            max: Vector3::new(half, half, half),
            reflectivity,
        };
        Scene::from_primitives(vec![p], half * 2.0).unwrap()
    }

    #[test]
    fn box_interior_scan_matches_the_analytic_exit_distance() {
        let half = 6.0;
        let reflectivity = 0.8;
        let scene = closed_box(half, reflectivity);
        let spec = ScanSpec { range_min: 0.0, range_max: 100.0, ..ScanSpec::default() };
        let cloud = render_scan(&scene, &PoseSE3::identity(), &spec).unwrap();
        // All rays hit: full panoramic grid.
        assert_eq!(cloud.points.len(), 360 * 21);
        for p in &cloud.points {
            let v = p.xyz();
            let range = v.norm();
            let d = v / range;
            // Independent slab oracle for a cube centered at the origin.
            let mut exit = f64::INFINITY;
            for axis in 0..3 {
                if d[axis].abs() > 1e-15 {
                    exit = exit.min(half / d[axis].abs());
                }
            }
            assert!((range - exit).abs() < 1e-5, "range {range} vs oracle {exit}");
            let expected_i = reflectivity / (1.0 + exit / 50.0);
            assert!((p.intensity as f64 - expected_i).abs() < 1e-5);
        }
    }

    #[test]
    fn opposite_fov_wedges_are_nearly_disjoint() {
        // Asymmetric scene: content on all sides so both wedges see points.
        // The sensor position is a waypoint so it stays in free space.
        let scene = generate_scene(&SceneSpec {
            seed: 3,
            extent: 30.0,
            boxes: 40,
            cylinders: 20,
            ground: true,
            waypoints: vec![[2.0, 1.0, 1.5]],
        })
        .unwrap();
        let spec = ScanSpec {
            sensor: SensorKind::FovLimited,
            fov_degrees: 70.0,
            ..ScanSpec::default()
        };
        let pose_a = yaw_pose(2.0, 1.0, 1.5, 0.0);
        let pose_b = yaw_pose(2.0, 1.0, 1.5, std::f64::consts::PI);
        let scan_a = render_scan(&scene, &pose_a, &spec).unwrap();
        let scan_b = render_scan(&scene, &pose_b, &spec).unwrap();
        let hull_a = covis::hull(&scan_a, &pose_a).unwrap();
        let hull_b = covis::hull(&scan_b, &pose_b).unwrap();
        let iou = covis::iou(&hull_a, &hull_b);
        assert!(iou < 0.2, "wedges overlap with IoU {iou}");
    }

    #[test]
    fn yaw_rotation_permutes_the_panoramic_ray_grid() {
        let scene = closed_box(6.0, 0.5);
        let spec = ScanSpec { range_min: 0.0, range_max: 100.0, ..ScanSpec::default() };
        let shift_deg: f64 = 30.0;
        let pose_a = PoseSE3::identity();
        let pose_b = yaw_pose(0.0, 0.0, 0.0, shift_deg.to_radians());
        let scan_a = render_scan(&scene, &pose_a, &spec).unwrap();
        let scan_b = render_scan(&scene, &pose_b, &spec).unwrap();
        assert_eq!(scan_a.points.len(), scan_b.points.len());
        let n_az = 360;
        let shift = (shift_deg / spec.azimuth_step_deg) as usize;
        for (k, pb) in scan_b.points.iter().enumerate() {
            let ring = k / n_az;
            let a = k % n_az;
            // Sensor azimuth a of the rotated scan looks along world
            // azimuth a + shift.
            let pa = &scan_a.points[ring * n_az + (a + shift) % n_az];
            let wa = pose_a.transform_point(&pa.xyz());
            let wb = pose_b.transform_point(&pb.xyz());
            assert!((wa - wb).norm() < 1e-6, "mismatch at ring {ring} az {a}");
            assert!((pa.intensity - pb.intensity).abs() < 1e-7);
        }
    }

    #[test]
    fn noisy_points_stay_on_scene_surfaces() {
        let sigma = 0.01;
        let scene = generate_scene(&SceneSpec { seed: 11, extent: 40.0, ..SceneSpec::default() })
            .unwrap();
        let spec = ScanSpec { noise_sigma: sigma, seed: 5, ..ScanSpec::default() };
        for (k, pose) in [
            yaw_pose(0.0, 0.0, 1.5, 0.0),
            yaw_pose(3.0, -2.0, 1.5, 1.0),
            yaw_pose(-8.0, 6.0, 1.5, -2.2),
        ]
        .iter()
        .enumerate()
        {
            let scan =
                render_scan(&scene, pose, &ScanSpec { seed: 5 + k as u64, ..spec.clone() })
                    .unwrap();
            let total = scan.points.len();
            let on_surface = scan
                .points
                .iter()
                .filter(|p| {
                    scene.surface_distance(&pose.transform_point(&p.xyz())) <= 3.0 * sigma
                })
                .count();
            assert!(
                on_surface as f64 >= 0.99 * total as f64,
                "only {on_surface} of {total} points within 3 sigma of a surface"
            );
        }
    }

    #[test]
    fn rendering_is_deterministic_including_noise() {
        let scene = generate_scene(&SceneSpec { seed: 2, extent: 40.0, ..SceneSpec::default() })
            .unwrap();
        let spec = ScanSpec { noise_sigma: 0.05, seed: 9, ..ScanSpec::default() };
        let pose = yaw_pose(1.0, 2.0, 1.5, 0.3);
        let a = render_scan(&scene, &pose, &spec).unwrap();
        let b = render_scan(&scene, &pose, &spec).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn empty_scan_and_out_of_extent_errors() {
        let p = Primitive::Box {
            min: Vector3::new(20.0, 20.0, 0.0),
            max: Vector3::new(22.0, 22.0, 2.0),
            reflectivity: 0.5,
        };
        let scene = Scene::from_primitives(vec![p], 30.0).unwrap();
        // Sensor far from the only primitive, short range: nothing returns.
        let spec = ScanSpec { range_max: 5.0, ..ScanSpec::default() };
        assert!(matches!(
            render_scan(&scene, &yaw_pose(-20.0, -20.0, 1.5, 0.0), &spec),
            Err(SynthError::EmptyScan)
        ));
        assert!(matches!(
            render_scan(&scene, &yaw_pose(100.0, 0.0, 1.5, 0.0), &spec),
            Err(SynthError::PoseOutOfExtent { .. })
        ));
    }

    #[test]
    fn scan_spec_validation() {
        let bad = ScanSpec { fov_degrees: 0.0, ..ScanSpec::default() };
        assert!(bad.validate().is_err());
        let bad = ScanSpec { azimuth_step_deg: -1.0, ..ScanSpec::default() };
        assert!(bad.validate().is_err());
        let bad = ScanSpec { range_min: 5.0, range_max: 2.0, ..ScanSpec::default() };
        assert!(bad.validate().is_err());
        let bad = ScanSpec { noise_sigma: -0.1, ..ScanSpec::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn benchmark_layout_and_determinism() {
        let spec = BenchmarkSpec {
            database_count: 9,
            spacing: 30.0,
            scene: SceneSpec { extent: 60.0, boxes: 90, cylinders: 45, ..SceneSpec::default() },
            ..BenchmarkSpec::default()
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let paths = generate_benchmark(&spec, dir_a.path()).unwrap();
        generate_benchmark(&spec, dir_b.path()).unwrap();

        let db = crate::cloud::load_manifest(&paths.database_manifest).unwrap();
        let queries = crate::cloud::load_manifest(&paths.query_manifest).unwrap();
        assert_eq!(db.len(), 9);
        assert_eq!(queries.len(), 9);
        assert_eq!(db.sensor, SensorKind::Panoramic);

        // Anchors on a 3x3 grid, queries within the offset budget.
        for (d, q) in db.entries.iter().zip(&queries.entries) {
            let delta = d.pose.translation() - q.pose.translation();
            assert!(delta.norm() <= spec.query_offset + 1e-9);
            let t = d.pose.translation();
            assert_eq!((t.x / 30.0).round() * 30.0, t.x);
            assert_eq!((t.y / 30.0).round() * 30.0, t.y);
        }

        // Same spec renders byte-identical clouds.
        for rel in ["db/0000.bin", "queries/0004.bin", "database.manifest"] {
            let a = std::fs::read(dir_a.path().join(rel)).unwrap();
            let b = std::fs::read(dir_b.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs between runs");
        }

        // Every cloud is loadable and within range of its sensor.
        for i in 0..db.len() {
            let cloud = db.load_entry_cloud(i).unwrap();
            assert!(!cloud.points.is_empty());
            for p in cloud.points.iter().take(50) {
                assert!(p.xyz().norm() <= spec.scan.range_max + 1.0);
            }
        }
    }
}
