//! Feature extraction contract and pure loss evaluators.
//!
//! A feature backend turns a BEV image pair into a global descriptor (one
//! unit-norm vector describing the whole frame, used for retrieval) and a
//! local feature map (one unit-norm token per image patch and channel, used
//! for correspondence matching). Backends are pluggable: the deterministic
//! handcrafted one in [`reference`] ships with the crate, and embeddings
//! computed elsewhere can be imported via [`embedding`].
//!
//! The loss evaluators ([`loss`]) score descriptor/feature sets the way a
//! trainer would, so an external training pipeline can be cross-checked
//! against this crate without sharing any code with it.

pub mod embedding;
pub mod loss;
pub mod reference;

use nalgebra::DVector;
use thiserror::Error;

use crate::bev::{BevPair, Channel};

pub use embedding::{export_embeddings, import_embeddings, EmbeddingSet};
pub use loss::{combined_loss, info_nce_loss, lazy_triplet_loss, LossConfig};
pub use reference::ReferenceBackend;

/// Descriptor length produced by the reference backend.
pub const DESCRIPTOR_DIM: usize = 384;

/// Unit-norm slack accepted on validated vectors.
pub const NORM_TOL: f64 = 1e-6;

/// Looser slack accepted on imported vectors before renormalization.
pub const IMPORT_NORM_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("vector for {what} is not unit norm: |v| = {norm}")]
    NotNormalized { what: String, norm: f64 },
    #[error("vector for {0} is zero or non-finite and cannot be normalized")]
    BadVector(String),
    #[error("pixel ({u}, {v}) outside image {width}x{height}")]
    OutOfBounds { u: f64, v: f64, width: u32, height: u32 },
    #[error("no imported embedding entry for {0:?}")]
    MissingEmbedding(String),
    #[error("need at least one negative descriptor")]
    NoNegatives,
    #[error("correspondence index {index} out of range for {len} candidates")]
    BadCorrespondence { index: usize, len: usize },
    #[error("loss config invalid: {0}")]
    BadLossConfig(String),
    #[error("{path}: {msg}")]
    Format { path: std::path::PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A whole-frame descriptor with unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptor {
    values: DVector<f64>,
}

impl GlobalDescriptor {
    /// Wraps an already normalized vector, validating the unit-norm
    /// invariant.
    pub fn from_values(values: DVector<f64>, what: &str) -> Result<Self, FeatureError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::BadVector(what.to_string()));
        }
        let norm = values.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(FeatureError::NotNormalized { what: what.to_string(), norm });
        }
        Ok(Self { values })
    }

    /// Normalizes an arbitrary non-zero vector into a descriptor.
    pub fn from_unnormalized(values: DVector<f64>, what: &str) -> Result<Self, FeatureError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::BadVector(what.to_string()));
        }
        let norm = values.norm();
        if norm < 1e-12 {
            return Err(FeatureError::BadVector(what.to_string()));
        }
        Ok(Self { values: values / norm })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    /// Euclidean distance to another descriptor.
    pub fn distance(&self, other: &Self) -> f64 {
        (&self.values - &other.values).norm()
    }
}

/// Per-patch feature tokens for both BEV channels, stored as `f32` to keep
/// large databases in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFeatureMap {
    /// Patch rows (image height / patch).
    pub rows: u32,
    /// Patch columns (image width / patch).
    pub cols: u32,
    /// Token length.
    pub dim: usize,
    /// Patch edge length in pixels.
    pub patch: u32,
    spatial: Vec<f32>,
    intensity: Vec<f32>,
}

impl LocalFeatureMap {
    /// Builds a map from per-channel token buffers laid out row-major, patch
    /// by patch.
    pub fn new(
        rows: u32,
        cols: u32,
        dim: usize,
        patch: u32,
        spatial: Vec<f32>,
        intensity: Vec<f32>,
    ) -> Result<Self, FeatureError> {
        let expect = rows as usize * cols as usize * dim;
        if spatial.len() != expect || intensity.len() != expect {
            return Err(FeatureError::GridMismatch(format!(
                "{rows}x{cols} patches of dim {dim} need {expect} values, got {} and {}",
                spatial.len(),
                intensity.len()
            )));
        }
        Ok(Self { rows, cols, dim, patch, spatial, intensity })
    }

    pub fn token(&self, channel: Channel, row: u32, col: u32) -> &[f32] {
        let base = (row as usize * self.cols as usize + col as usize) * self.dim;
        match channel {
            Channel::Spatial => &self.spatial[base..base + self.dim],
            Channel::Intensity => &self.intensity[base..base + self.dim],
        }
    }

    pub(crate) fn raw(&self, channel: Channel) -> &[f32] {
        match channel {
            Channel::Spatial => &self.spatial,
            Channel::Intensity => &self.intensity,
        }
    }

    /// Image width in pixels this map was computed from.
    pub fn width(&self) -> u32 {
        self.cols * self.patch
    }

    /// Image height in pixels this map was computed from.
    pub fn height(&self) -> u32 {
        self.rows * self.patch
    }
}

/// A feature extractor: BEV pair in, descriptor plus token map out.
///
/// Implementations must be deterministic and stateless; extraction over many
/// frames runs concurrently.
pub trait FeatureBackend: Sync {
    fn name(&self) -> &str;
    fn extract(&self, bev: &BevPair) -> Result<(GlobalDescriptor, LocalFeatureMap), FeatureError>;
}

/// Runs a backend on one BEV pair.
pub fn extract(
    bev: &BevPair,
    backend: &dyn FeatureBackend,
) -> Result<(GlobalDescriptor, LocalFeatureMap), FeatureError> {
    backend.extract(bev)
}

/// Samples a feature vector at a real-valued pixel by bilinear interpolation
/// over the four surrounding patch centers (edge-clamped), then normalizes.
pub fn interpolate(
    map: &LocalFeatureMap,
    channel: Channel,
    pixel: (f64, f64),
) -> Result<DVector<f64>, FeatureError> {
    let (u, v) = pixel;
    let (w, h) = (map.width(), map.height());
    if !u.is_finite() || !v.is_finite() || u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
        return Err(FeatureError::OutOfBounds { u, v, width: w, height: h });
    }
    let c = map.patch as f64;
    let center = (c - 1.0) / 2.0;
    // Continuous patch coordinate: 0 exactly at the first patch center.
    let pu = ((u - center) / c).clamp(0.0, (map.cols - 1) as f64);
    let pv = ((v - center) / c).clamp(0.0, (map.rows - 1) as f64);
    let j0 = pu.floor() as u32;
    let i0 = pv.floor() as u32;
    let j1 = (j0 + 1).min(map.cols - 1);
    let i1 = (i0 + 1).min(map.rows - 1);
    let fu = pu - j0 as f64;
    let fv = pv - i0 as f64;
    let mut acc: DVector<f64> = DVector::zeros(map.dim);
    for (i, wi) in [(i0, 1.0 - fv), (i1, fv)] {
        for (j, wj) in [(j0, 1.0 - fu), (j1, fu)] {
            let weight = wi * wj;
            if weight == 0.0 {
                continue;
            }
            for (slot, &t) in acc.iter_mut().zip(map.token(channel, i, j)) {
                *slot += weight * t as f64;
            }
        }
    }
    let norm = acc.norm();
    if norm < 1e-12 {
        return Err(FeatureError::BadVector(format!("interpolated pixel ({u}, {v})")));
    }
    Ok(acc / norm)
}

/// Picks one uniformly random occupied pixel from every patch that has any,
/// in row-major patch order. Seeded so training pair construction is
/// reproducible.
pub fn sample_patch_pixels(bev: &BevPair, seed: u64) -> Vec<(u32, u32)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let c = bev.config.patch;
    let mut by_patch: std::collections::BTreeMap<(u32, u32), Vec<(u32, u32)>> =
        std::collections::BTreeMap::new();
    for &(u, v) in bev.buckets.keys() {
        by_patch.entry((v / c, u / c)).or_default().push((u, v));
    }
    by_patch
        .into_values()
        .map(|pixels| pixels[rng.random_range(0..pixels.len())])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bev::{encode, BevConfig};
    use crate::cloud::{Point, PointCloud};

    fn constant_map(rows: u32, cols: u32, dim: usize, patch: u32) -> LocalFeatureMap {
        let norm = (dim as f32).sqrt();
        let token: Vec<f32> = (0..dim).map(|_| 1.0 / norm).collect();
        let buf: Vec<f32> =
            token.iter().cycle().take(rows as usize * cols as usize * dim).copied().collect();
        LocalFeatureMap::new(rows, cols, dim, patch, buf.clone(), buf).unwrap()
    }

    #[test]
    fn descriptor_validation() {
        let unit = DVector::from_element(4, 0.5);
        assert!(GlobalDescriptor::from_values(unit.clone(), "x").is_ok());
        assert!(GlobalDescriptor::from_values(unit.clone() * 1.2, "x").is_err());
        let fixed = GlobalDescriptor::from_unnormalized(unit * 3.0, "x").unwrap();
        assert!((fixed.values().norm() - 1.0).abs() < 1e-12);
        assert!(GlobalDescriptor::from_unnormalized(DVector::zeros(4), "x").is_err());
        let mut nan = DVector::from_element(4, 0.5);
        nan[0] = f64::NAN;
        assert!(GlobalDescriptor::from_values(nan, "x").is_err());
    }

    #[test]
    fn map_shape_is_checked() {
        assert!(LocalFeatureMap::new(2, 2, 3, 8, vec![0.0; 12], vec![0.0; 12]).is_ok());
        assert!(LocalFeatureMap::new(2, 2, 3, 8, vec![0.0; 11], vec![0.0; 12]).is_err());
    }

    fn two_token_map() -> LocalFeatureMap {
        // 1x2 patch grid, dim 2, patch 4: tokens e0 and e1.
        LocalFeatureMap::new(1, 2, 2, 4, vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0, 1.0])
            .unwrap()
    }

    #[test]
    fn interpolation_identity_at_patch_center() {
        let map = two_token_map();
        // Patch 0's center sits at pixel u = 1.5 (patch 4: (4-1)/2).
        let got = interpolate(&map, Channel::Spatial, (1.5, 1.5)).unwrap();
        assert!((got - DVector::from_column_slice(&[1.0, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn interpolation_midway_is_normalized_mean() {
        let map = two_token_map();
        // Midway between centers u=1.5 and u=5.5.
        let got = interpolate(&map, Channel::Spatial, (3.5, 0.0)).unwrap();
        let expect = DVector::from_column_slice(&[1.0, 1.0]) / 2.0f64.sqrt();
        assert!((got - expect).norm() < 1e-12);
    }

    #[test]
    fn interpolation_constant_field_everywhere() {
        let map = constant_map(3, 3, 5, 8);
        let expect = DVector::from_element(5, 1.0 / 5.0f64.sqrt());
        for (u, v) in [(0.0, 0.0), (11.9, 3.2), (23.99, 23.99), (12.0, 0.5)] {
            let got = interpolate(&map, Channel::Intensity, (u, v)).unwrap();
            assert!((&got - &expect).norm() < 1e-6, "at ({u}, {v})");
        }
    }

    #[test]
    fn interpolation_rejects_out_of_bounds() {
        let map = constant_map(2, 2, 3, 8);
        for (u, v) in [(-0.1, 0.0), (0.0, -5.0), (16.0, 0.0), (0.0, 16.0), (f64::NAN, 0.0)] {
            assert!(matches!(
                interpolate(&map, Channel::Spatial, (u, v)),
                Err(FeatureError::OutOfBounds { .. })
            ));
        }
    }

    #[test]
    fn patch_sampling_is_seeded_and_occupied() {
        let points: Vec<Point> = (0..400)
            .map(|i| Point::new((i % 20) as f32 - 10.0, (i / 20) as f32 - 10.0, 0.0, 1.0))
            .collect();
        let cloud = PointCloud::new(points, 0.0, "grid");
        let cfg = BevConfig { resolution: 1.0, width: 32, height: 32, patch: 8 };
        let bev = encode(&cloud, &cfg).unwrap();
        let a = sample_patch_pixels(&bev, 7);
        let b = sample_patch_pixels(&bev, 7);
        let c = sample_patch_pixels(&bev, 8);
        assert_eq!(a, b);
        assert!(!a.is_empty());
        assert!(a.iter().all(|&(u, v)| bev.is_occupied(u, v)));
        // One pixel per occupied patch.
        let patches: std::collections::BTreeSet<(u32, u32)> =
            a.iter().map(|&(u, v)| (v / 8, u / 8)).collect();
        assert_eq!(patches.len(), a.len());
        // A different seed eventually picks at least one different pixel.
        assert_ne!(a, c);
    }
}
