//! Pairwise 6-DoF registration: local-feature matching across BEV pixels,
//! keypoint lifting back to 3D, and a graduated non-convexity truncated
//! least squares (GNC-TLS) solver that tolerates heavy outlier rates.
//!
//! The estimated pose maps query-frame coordinates into the database frame:
//! `db_point ≈ pose * query_point`.

use std::collections::BTreeSet;

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bev::{self, BevError, BevPair, Channel};
use crate::cloud::PointCloud;
use crate::features::{self, FeatureError, LocalFeatureMap};
use crate::se3::{so3_log, PoseSE3};

/// Translation error below this many meters counts as a localization
/// success (together with the rotation bound).
pub const SUCCESS_MAX_TRANSLATION_M: f64 = 2.0;
/// Rotation error below this many degrees counts as a localization success.
pub const SUCCESS_MAX_ROTATION_DEG: f64 = 5.0;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("inputs do not share grid geometry: {0}")]
    MismatchedInputs(String),
    #[error("only {found} usable correspondences over {pixels} distinct query pixels, need 3")]
    InsufficientMatches { found: usize, pixels: usize },
    #[error("bad weight vector: {0}")]
    BadWeights(String),
    #[error("correspondence {0} has non-finite coordinates")]
    NonFinite(usize),
    #[error("point configuration is degenerate (collinear or coincident)")]
    Degenerate,
    #[error("weights collapsed, no consensus set found")]
    NoConsensus,
    #[error(transparent)]
    Bev(#[from] BevError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// One matched pair of lifted 3D keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub query: Vector3<f64>,
    pub database: Vector3<f64>,
    /// BEV channel the match came from; channels are never cross-matched.
    pub channel: Channel,
    /// L2 distance between the matched pixel features.
    pub feature_distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Matching stage controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    /// Cap on occupied query pixels considered per channel; when exceeded,
    /// pixels are subsampled with an even stride over scan order.
    pub max_keypoints: usize,
    /// Drop a match when best/second-best feature distance exceeds this
    /// ratio. `None` disables the test.
    pub ratio_cap: Option<f64>,
    /// Keep only mutual nearest neighbors.
    pub mutual: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { max_keypoints: 512, ratio_cap: Some(0.95), mutual: true }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        if self.max_keypoints == 0 {
            return Err(RegistrationError::BadConfig("max_keypoints must be at least 1".into()));
        }
        if let Some(r) = self.ratio_cap {
            if !r.is_finite() || r <= 0.0 || r > 1.0 {
                return Err(RegistrationError::BadConfig(format!(
                    "ratio_cap must lie in (0, 1], got {r}"
                )));
            }
        }
        Ok(())
    }
}

/// GNC-TLS schedule controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GncConfig {
    /// Inlier radius in meters: residuals beyond it are truncated.
    pub truncation: f64,
    /// Multiplier applied to the surrogate parameter each outer iteration.
    pub growth: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the largest per-pair weight change.
    pub tolerance: f64,
}

impl Default for GncConfig {
    fn default() -> Self {
        Self { truncation: 0.5, growth: 1.4, max_iterations: 100, tolerance: 1e-6 }
    }
}

impl GncConfig {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        if !self.truncation.is_finite() || self.truncation <= 0.0 {
            return Err(RegistrationError::BadConfig(format!(
                "truncation must be positive, got {}",
                self.truncation
            )));
        }
        if !self.growth.is_finite() || self.growth <= 1.0 {
            return Err(RegistrationError::BadConfig(format!(
                "growth must exceed 1, got {}",
                self.growth
            )));
        }
        if self.max_iterations == 0 {
            return Err(RegistrationError::BadConfig("max_iterations must be at least 1".into()));
        }
        if !self.tolerance.is_finite() || self.tolerance <= 0.0 {
            return Err(RegistrationError::BadConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Robust registration output.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Maps query-frame points into the database frame.
    pub pose: PoseSE3,
    /// Final per-pair weights in `[0, 1]`, aligned with the input pairs.
    pub weights: Vec<f64>,
    /// Outer iterations executed.
    pub iterations: usize,
    pub converged: bool,
    /// Pairs whose final weight exceeds 0.5.
    pub inliers: usize,
}

/// Everything needed to register one frame.
#[derive(Debug, Clone, Copy)]
pub struct FramePack<'a> {
    pub cloud: &'a PointCloud,
    pub bev: &'a BevPair,
    pub features: &'a LocalFeatureMap,
}

impl<'a> FramePack<'a> {
    pub fn new(
        cloud: &'a PointCloud,
        bev: &'a BevPair,
        features: &'a LocalFeatureMap,
    ) -> Result<Self, RegistrationError> {
        if features.width() != bev.config.width
            || features.height() != bev.config.height
            || features.patch != bev.config.patch
        {
            return Err(RegistrationError::MismatchedInputs(format!(
                "feature map covers {}x{} (patch {}), BEV is {}x{} (patch {})",
                features.width(),
                features.height(),
                features.patch,
                bev.config.width,
                bev.config.height,
                bev.config.patch
            )));
        }
        Ok(Self { cloud, bev, features })
    }
}

/// Localization output with matcher diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub registration: RegistrationResult,
    pub spatial_matches: usize,
    pub intensity_matches: usize,
}

/// Keeps the `k` highest-valued pixels of the channel image. Value ranking
/// concentrates the keypoint budget on structure-bearing cells (dense point
/// columns, bright reflectors) rather than flat ground, and because ranking
/// survives the per-cloud value normalization, both frames of a pair keep
/// roughly the same physical cells. Ties break toward scan order.
fn cap_pixels(
    pixels: Vec<(u32, u32)>,
    image: &bev::BevImage,
    k: usize,
) -> Vec<(u32, u32)> {
    if pixels.len() <= k {
        return pixels;
    }
    let mut ranked: Vec<(usize, (u32, u32))> = pixels.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| {
        let va = image.get(a.1 .0, a.1 .1);
        let vb = image.get(b.1 .0, b.1 .1);
        vb.partial_cmp(&va).unwrap().then(a.0.cmp(&b.0))
    });
    ranked.truncate(k);
    ranked.sort_by_key(|&(order, _)| order);
    ranked.into_iter().map(|(_, p)| p).collect()
}

/// Interpolated pixel features for an occupied-pixel list, capped to the `k`
/// highest-valued pixels when `cap` is set. Pixels whose feature cannot be
/// formed are dropped.
fn pixel_features(
    pack: &FramePack,
    channel: Channel,
    cap: Option<usize>,
) -> (Vec<(u32, u32)>, Vec<DVector<f64>>) {
    let occupied: Vec<(u32, u32)> = pack.bev.buckets.keys().copied().collect();
    let capped = match cap {
        Some(k) => cap_pixels(occupied, pack.bev.image(channel), k),
        None => occupied,
    };
    let mut pixels = Vec::with_capacity(capped.len());
    let mut feats = Vec::with_capacity(capped.len());
    for (u, v) in capped {
        if let Ok(f) = features::interpolate(pack.features, channel, (u as f64, v as f64)) {
            pixels.push((u, v));
            feats.push(f);
        }
    }
    (pixels, feats)
}

/// Index of the nearest vector in `set`. Ties break toward the lower index.
fn nearest_index(q: &DVector<f64>, set: &[DVector<f64>]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (j, s) in set.iter().enumerate() {
        let d = q.metric_distance(s);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Nearest vector in `set` plus the best distance among candidates more than
/// `exclusion` pixels (Chebyshev) from the winner. Interpolated features vary
/// smoothly at patch scale, so the winner's immediate neighbors are near
/// duplicates; a distinctiveness ratio is only meaningful against candidates
/// outside that smoothing radius.
fn nearest_with_runner_up(
    q: &DVector<f64>,
    set: &[DVector<f64>],
    pixels: &[(u32, u32)],
    exclusion: u32,
) -> (usize, f64, Option<f64>) {
    let mut dists = Vec::with_capacity(set.len());
    let mut best = (0usize, f64::INFINITY);
    for (j, s) in set.iter().enumerate() {
        let d = q.metric_distance(s);
        dists.push(d);
        if d < best.1 {
            best = (j, d);
        }
    }
    let (bu, bv) = pixels[best.0];
    let mut runner = f64::INFINITY;
    for (j, &d) in dists.iter().enumerate() {
        let (u, v) = pixels[j];
        if u.abs_diff(bu).max(v.abs_diff(bv)) <= exclusion {
            continue;
        }
        if d < runner {
            runner = d;
        }
    }
    (best.0, best.1, if runner.is_finite() { Some(runner) } else { None })
}

/// Matches occupied query pixels against database pixels per channel, lifts
/// the survivors to 3D. At least three distinct query pixels must survive
/// across both channels: that is the minimum support for a unique rigid
/// solve, and both channels can share pixel locations.
pub fn match_features(
    query: &FramePack,
    database: &FramePack,
    cfg: &MatchConfig,
) -> Result<CorrespondenceSet, RegistrationError> {
    cfg.validate()?;
    if query.bev.config != database.bev.config {
        return Err(RegistrationError::MismatchedInputs(
            "query and database BEV configs differ".into(),
        ));
    }
    let mut pairs = Vec::new();
    let mut support: BTreeSet<(u32, u32)> = BTreeSet::new();
    // Neighboring interpolated features decorrelate over about one patch.
    let exclusion = query.bev.config.patch;
    for channel in Channel::ALL {
        let (q_pixels, q_feats) = pixel_features(query, channel, Some(cfg.max_keypoints));
        // The database side stays uncapped so every query keypoint can reach
        // its true counterpart cell, not just a thinned sample.
        let (db_pixels, db_feats) = pixel_features(database, channel, None);
        if q_feats.is_empty() || db_feats.is_empty() {
            continue;
        }
        let mut matched: Vec<(usize, usize, f64)> = Vec::new();
        for (i, qf) in q_feats.iter().enumerate() {
            let (j, d, runner_up) =
                nearest_with_runner_up(qf, &db_feats, &db_pixels, exclusion);
            if d > 0.0 {
                if let (Some(cap), Some(ru)) = (cfg.ratio_cap, runner_up) {
                    if d / ru > cap {
                        continue;
                    }
                }
            }
            if cfg.mutual {
                let (back, _) = nearest_index(&db_feats[j], &q_feats);
                if back != i {
                    continue;
                }
            }
            matched.push((i, j, d));
        }
        let q_lift: Vec<(u32, u32)> = matched.iter().map(|&(i, _, _)| q_pixels[i]).collect();
        let db_lift: Vec<(u32, u32)> = matched.iter().map(|&(_, j, _)| db_pixels[j]).collect();
        let q_points = bev::lift_keypoints(query.bev, query.cloud, &q_lift, channel)?;
        let db_points = bev::lift_keypoints(database.bev, database.cloud, &db_lift, channel)?;
        for (k, &(i, _, d)) in matched.iter().enumerate() {
            support.insert(q_pixels[i]);
            pairs.push(Correspondence {
                query: q_points[k],
                database: db_points[k],
                channel,
                feature_distance: d,
            });
        }
    }
    if support.len() < 3 || pairs.len() < 3 {
        return Err(RegistrationError::InsufficientMatches {
            found: pairs.len(),
            pixels: support.len(),
        });
    }
    Ok(CorrespondenceSet { pairs })
}

fn check_pairs(set: &CorrespondenceSet) -> Result<(), RegistrationError> {
    if set.len() < 3 {
        return Err(RegistrationError::InsufficientMatches { found: set.len(), pixels: set.len() });
    }
    for (i, p) in set.pairs.iter().enumerate() {
        if !(p.query.iter().all(|v| v.is_finite()) && p.database.iter().all(|v| v.is_finite())) {
            return Err(RegistrationError::NonFinite(i));
        }
    }
    Ok(())
}

/// Globally minimizes `Σ w_i ‖T q_i − p_i‖²` over rigid `T` with weighted
/// centroid subtraction and an SVD of the weighted cross-covariance,
/// reflection-corrected so the rotation is proper.
pub fn solve_weighted(
    set: &CorrespondenceSet,
    weights: &[f64],
) -> Result<PoseSE3, RegistrationError> {
    check_pairs(set)?;
    if weights.len() != set.len() {
        return Err(RegistrationError::BadWeights(format!(
            "{} weights for {} pairs",
            weights.len(),
            set.len()
        )));
    }
    let mut total = 0.0;
    for &w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(RegistrationError::BadWeights(format!("weight {w} out of range")));
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(RegistrationError::BadWeights("total weight is zero".into()));
    }

    let mut cq = Vector3::zeros();
    let mut cp = Vector3::zeros();
    for (pair, &w) in set.pairs.iter().zip(weights) {
        cq += w * pair.query;
        cp += w * pair.database;
    }
    cq /= total;
    cp /= total;

    let mut h = Matrix3::zeros();
    for (pair, &w) in set.pairs.iter().zip(weights) {
        h += w * (pair.query - cq) * (pair.database - cp).transpose();
    }

    let svd = h.svd(true, true);
    let u = svd.u.expect("3x3 SVD always yields U");
    let mut v = svd.v_t.expect("3x3 SVD always yields V^T").transpose();
    let mut s: Vec<(usize, f64)> =
        svd.singular_values.iter().copied().enumerate().collect();
    s.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    if s[1].1 <= s[0].1 * 1e-9 {
        return Err(RegistrationError::Degenerate);
    }
    if (v * u.transpose()).determinant() < 0.0 {
        let k = s[2].0;
        for r in 0..3 {
            v[(r, k)] = -v[(r, k)];
        }
    }
    let rotation = v * u.transpose();
    let translation = cp - rotation * cq;
    Ok(PoseSE3::new(rotation, translation).expect("SVD rotation is orthonormal"))
}

fn squared_residuals(set: &CorrespondenceSet, pose: &PoseSE3) -> Vec<f64> {
    set.pairs
        .iter()
        .map(|p| (pose.transform_point(&p.query) - p.database).norm_squared())
        .collect()
}

/// Surrogate objective value: truncated-loss relaxation at parameter `mu`.
fn surrogate_cost(r2: &[f64], w: &[f64], mu: f64, xi2: f64) -> f64 {
    r2.iter()
        .zip(w)
        .map(|(&r2, &w)| w * r2 + mu * (1.0 - w) / (mu + w) * xi2)
        .sum()
}

/// Closed-form minimizer of the surrogate in the weights at fixed residuals.
fn update_weights(r2: &[f64], mu: f64, xi2: f64, out: &mut [f64]) {
    let th1 = (mu + 1.0) / mu * xi2;
    let th2 = mu / (mu + 1.0) * xi2;
    for (w, &r2) in out.iter_mut().zip(r2) {
        *w = if r2 <= th2 {
            1.0
        } else if r2 >= th1 {
            0.0
        } else {
            ((xi2 * mu * (mu + 1.0) / r2).sqrt() - mu).clamp(0.0, 1.0)
        };
    }
}

/// Alternates the weighted rigid solve with the closed-form weight update
/// while the surrogate parameter grows toward the truncated loss. Terminates
/// when weights stop changing or the iteration budget runs out.
pub fn gnc_register(
    set: &CorrespondenceSet,
    cfg: &GncConfig,
) -> Result<RegistrationResult, RegistrationError> {
    cfg.validate()?;
    check_pairs(set)?;
    let n = set.len();
    let xi2 = cfg.truncation * cfg.truncation;

    let mut weights = vec![1.0; n];
    let mut pose = solve_weighted(set, &weights)?;
    let mut r2 = squared_residuals(set, &pose);
    let r2_max = r2.iter().cloned().fold(0.0, f64::max);
    if 2.0 * r2_max <= xi2 {
        // Every residual is already well inside the inlier radius.
        return Ok(RegistrationResult { pose, weights, iterations: 0, converged: true, inliers: n });
    }

    let mut mu = xi2 / (2.0 * r2_max - xi2);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=cfg.max_iterations {
        iterations = it;
        let prev = weights.clone();
        let before = surrogate_cost(&r2, &prev, mu, xi2);
        update_weights(&r2, mu, xi2, &mut weights);
        let after_w = surrogate_cost(&r2, &weights, mu, xi2);
        assert!(
            after_w <= before + 1e-9 * (1.0 + before.abs()),
            "weight update increased the surrogate"
        );
        if weights.iter().filter(|&&w| w > 0.0).count() < 3 {
            // Too little support left for a rigid solve.
            return Err(RegistrationError::NoConsensus);
        }
        pose = solve_weighted(set, &weights)?;
        r2 = squared_residuals(set, &pose);
        let after_pose = surrogate_cost(&r2, &weights, mu, xi2);
        assert!(
            after_pose <= after_w + 1e-9 * (1.0 + after_w.abs()),
            "pose update increased the surrogate"
        );
        let delta = weights
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if delta < cfg.tolerance {
            converged = true;
            break;
        }
        mu *= cfg.growth;
    }

    let inliers = weights.iter().filter(|&&w| w > 0.5).count();
    if inliers == 0 {
        return Err(RegistrationError::NoConsensus);
    }
    Ok(RegistrationResult { pose, weights, iterations, converged, inliers })
}

/// Full pairwise pipeline: match, lift, robust solve.
pub fn localize(
    query: &FramePack,
    database: &FramePack,
    match_cfg: &MatchConfig,
    gnc_cfg: &GncConfig,
) -> Result<Localization, RegistrationError> {
    let set = match_features(query, database, match_cfg)?;
    let spatial_matches = set.pairs.iter().filter(|p| p.channel == Channel::Spatial).count();
    let intensity_matches = set.len() - spatial_matches;
    let registration = gnc_register(&set, gnc_cfg)?;
    Ok(Localization { registration, spatial_matches, intensity_matches })
}

/// Pose error metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseMetrics {
    /// Euclidean translation error in meters.
    pub translation_error: f64,
    /// Geodesic rotation error in degrees.
    pub rotation_error_deg: f64,
    /// True when both errors are under the success thresholds.
    pub success: bool,
}

pub fn pose_metrics(estimate: &PoseSE3, truth: &PoseSE3) -> PoseMetrics {
    let translation_error = (estimate.translation() - truth.translation()).norm();
    let rel = estimate.rotation().transpose() * truth.rotation();
    let rotation_error_deg = so3_log(&rel).norm().to_degrees();
    PoseMetrics {
        translation_error,
        rotation_error_deg,
        success: translation_error < SUCCESS_MAX_TRANSLATION_M
            && rotation_error_deg < SUCCESS_MAX_ROTATION_DEG,
    }
}

/// Renders a result as a plain text record:
///
/// ```text
/// pose r00 r01 r02 t0
/// pose r10 r11 r12 t1
/// pose r20 r21 r22 t2
/// inliers N
/// iterations K
/// converged true|false
/// ```
pub fn result_record(result: &RegistrationResult) -> String {
    let r = result.pose.rotation();
    let t = result.pose.translation();
    let mut out = String::new();
    for row in 0..3 {
        out.push_str(&format!(
            "pose {} {} {} {}\n",
            r[(row, 0)],
            r[(row, 1)],
            r[(row, 2)],
            t[row]
        ));
    }
    out.push_str(&format!("inliers {}\n", result.inliers));
    out.push_str(&format!("iterations {}\n", result.iterations));
    out.push_str(&format!("converged {}\n", result.converged));
    out
}
