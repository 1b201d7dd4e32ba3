//! Bird's-eye-view encoding of point clouds.
//!
//! A cloud is rasterized onto a sensor-centered grid of `W x H` cells of
//! `r` meters each. Cell `(u, v)` collects the points with
//! `floor(px/r) + W/2 = u` and `floor(py/r) + H/2 = v`; points falling
//! outside the grid are cropped (their count is kept as a diagnostic). Two
//! images are produced:
//!
//! - spatial: per-cell point count, min-max normalized over occupied cells;
//! - intensity: per-cell maximum intensity, shifted and scaled by the
//!   intensity range of the in-grid points so values land in [0, 1].
//!
//! When normalization is degenerate (a single distinct count, or a single
//! distinct intensity), occupied cells take the value 1.0 so occupancy
//! remains visible. Alongside the images, a bucket map remembers which point
//! indices landed in each cell; that map is what later turns pixel matches
//! back into 3D point correspondences.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::PointCloud;

#[derive(Debug, Error)]
pub enum BevError {
    #[error("invalid grid config: {0}")]
    InvalidConfig(String),
    #[error("cannot encode an empty cloud")]
    EmptyCloud,
    #[error("all {0} points fall outside the grid")]
    EmptyProjection(usize),
    #[error("pixel ({u}, {v}) has no points to lift")]
    MissingBucket { u: u32, v: u32 },
    #[error("image export failed: {0}")]
    Export(#[from] std::io::Error),
}

/// Grid geometry for BEV encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BevConfig {
    /// Cell edge length in meters.
    pub resolution: f64,
    /// Image width in pixels (x axis).
    pub width: u32,
    /// Image height in pixels (y axis).
    pub height: u32,
    /// Patch edge length in pixels used by feature backends; width and
    /// height must be divisible by it.
    pub patch: u32,
}

impl Default for BevConfig {
    fn default() -> Self {
        Self { resolution: 0.4, width: 200, height: 200, patch: 8 }
    }
}

impl BevConfig {
    pub fn validate(&self) -> Result<(), BevError> {
        if !(self.resolution > 0.0) || !self.resolution.is_finite() {
            return Err(BevError::InvalidConfig(format!(
                "resolution must be positive, got {}",
                self.resolution
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(BevError::InvalidConfig("width and height must be positive".into()));
        }
        if self.patch == 0 || self.width % self.patch != 0 || self.height % self.patch != 0 {
            return Err(BevError::InvalidConfig(format!(
                "width {} and height {} must be divisible by patch {}",
                self.width, self.height, self.patch
            )));
        }
        Ok(())
    }

    /// Number of feature patches along x.
    pub fn patches_x(&self) -> u32 {
        self.width / self.patch
    }

    /// Number of feature patches along y.
    pub fn patches_y(&self) -> u32 {
        self.height / self.patch
    }
}

/// A single-channel image with values in [0, 1], stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BevImage {
    pub width: u32,
    pub height: u32,
    data: Vec<f32>,
}

impl BevImage {
    pub(crate) fn zeros(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0.0; width as usize * height as usize] }
    }

    pub fn get(&self, u: u32, v: u32) -> f32 {
        self.data[v as usize * self.width as usize + u as usize]
    }

    fn set(&mut self, u: u32, v: u32, value: f32) {
        self.data[v as usize * self.width as usize + u as usize] = value;
    }

    pub fn pixels(&self) -> &[f32] {
        &self.data
    }
}

/// Which of the two BEV channels an operation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Spatial,
    Intensity,
}

impl Channel {
    pub const ALL: [Channel; 2] = [Channel::Spatial, Channel::Intensity];
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Channel::Spatial => write!(f, "spatial"),
            Channel::Intensity => write!(f, "intensity"),
        }
    }
}

/// The spatial/intensity image pair plus the pixel-to-points bucket map.
#[derive(Debug, Clone)]
pub struct BevPair {
    pub spatial: BevImage,
    pub intensity: BevImage,
    /// Point indices per occupied pixel, keyed `(u, v)`, each list in
    /// ascending index order.
    pub buckets: BTreeMap<(u32, u32), Vec<u32>>,
    pub config: BevConfig,
    /// Points discarded because they fell outside the grid.
    pub cropped: usize,
}

impl BevPair {
    pub fn image(&self, channel: Channel) -> &BevImage {
        match channel {
            Channel::Spatial => &self.spatial,
            Channel::Intensity => &self.intensity,
        }
    }

    pub fn is_occupied(&self, u: u32, v: u32) -> bool {
        self.buckets.contains_key(&(u, v))
    }
}

/// Rasterizes a cloud into its BEV image pair.
pub fn encode(cloud: &PointCloud, config: &BevConfig) -> Result<BevPair, BevError> {
    config.validate()?;
    if cloud.is_empty() {
        return Err(BevError::EmptyCloud);
    }
    let w = config.width as i64;
    let h = config.height as i64;
    let half_w = w / 2;
    let half_h = h / 2;
    let mut buckets: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
    let mut cropped = 0usize;
    for (idx, p) in cloud.points.iter().enumerate() {
        let u = (p.x as f64 / config.resolution).floor() as i64 + half_w;
        let v = (p.y as f64 / config.resolution).floor() as i64 + half_h;
        if u < 0 || u >= w || v < 0 || v >= h {
            cropped += 1;
            continue;
        }
        buckets.entry((u as u32, v as u32)).or_default().push(idx as u32);
    }
    if buckets.is_empty() {
        return Err(BevError::EmptyProjection(cropped));
    }

    let mut spatial = BevImage::zeros(config.width, config.height);
    let mut intensity = BevImage::zeros(config.width, config.height);

    let mut min_count = usize::MAX;
    let mut max_count = 0usize;
    for ids in buckets.values() {
        min_count = min_count.min(ids.len());
        max_count = max_count.max(ids.len());
    }
    let mut min_i = f64::INFINITY;
    let mut max_i = f64::NEG_INFINITY;
    for ids in buckets.values() {
        for &i in ids {
            let val = cloud.points[i as usize].intensity as f64;
            min_i = min_i.min(val);
            max_i = max_i.max(val);
        }
    }

    for (&(u, v), ids) in &buckets {
        let s = if max_count > min_count {
            (ids.len() - min_count) as f64 / (max_count - min_count) as f64
        } else {
            1.0
        };
        let cell_max = ids
            .iter()
            .map(|&i| cloud.points[i as usize].intensity as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        let t = if max_i > min_i { (cell_max - min_i) / (max_i - min_i) } else { 1.0 };
        spatial.set(u, v, s as f32);
        intensity.set(u, v, t as f32);
    }

    Ok(BevPair { spatial, intensity, buckets, config: *config, cropped })
}

/// Maps matched pixels back to representative 3D points of the source cloud:
/// the flattest point of the cell (smallest |z|) for the spatial channel, the
/// brightest for the intensity channel. Ties keep the earliest point.
pub fn lift_keypoints(
    bev: &BevPair,
    cloud: &PointCloud,
    pixels: &[(u32, u32)],
    channel: Channel,
) -> Result<Vec<Vector3<f64>>, BevError> {
    let mut out = Vec::with_capacity(pixels.len());
    for &(u, v) in pixels {
        let ids = bev.buckets.get(&(u, v)).ok_or(BevError::MissingBucket { u, v })?;
        let chosen = match channel {
            Channel::Spatial => ids
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let za = cloud.points[a as usize].z.abs();
                    let zb = cloud.points[b as usize].z.abs();
                    za.partial_cmp(&zb).unwrap().then(a.cmp(&b))
                })
                .expect("buckets are never empty"),
            Channel::Intensity => ids
                .iter()
                .copied()
                .max_by(|&a, &b| {
                    let ia = cloud.points[a as usize].intensity;
                    let ib = cloud.points[b as usize].intensity;
                    ia.partial_cmp(&ib).unwrap().then(b.cmp(&a))
                })
                .expect("buckets are never empty"),
        };
        out.push(cloud.points[chosen as usize].xyz());
    }
    Ok(out)
}

/// Writes an image as 8-bit binary PGM (values scaled by 255 and rounded to
/// nearest).
pub fn write_pgm(image: &BevImage, path: impl AsRef<Path>) -> Result<(), BevError> {
    let mut out = Vec::with_capacity(32 + image.pixels().len());
    write!(out, "P5\n{} {}\n255\n", image.width, image.height)?;
    for &v in image.pixels() {
        out.push((v as f64 * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    std::fs::write(path, out)?;
    Ok(())
}
