//! Deterministic handcrafted feature backend.
//!
//! This backend exists to exercise every downstream contract (retrieval,
//! matching, registration) without any learned weights. Per patch it
//! computes, for each BEV channel, an 8-bin value histogram (empty-pixel
//! fraction plus 7 soft-assigned value bins) and the mean, max, and variance
//! of occupied pixel values. Local tokens project those statistics together
//! with an orientation-free summary of the 8 surrounding patches (ring mean
//! and ring dispersion) through a fixed seeded random matrix, so a patch is
//! described by its own content plus a rotation-tolerant sketch of its
//! neighborhood.
//!
//! The global descriptor pools patch statistics into annular radius bands
//! around the sensor. Rotating the scene permutes patches within a band but
//! leaves the band's weighted moments unchanged, and a few meters of sensor
//! offset only slides weight smoothly between adjacent bands (assignment is
//! triangular over the two nearest bands, and bands are wide relative to
//! plausible revisit offsets). Patches are weighted by the sum of squared
//! spatial values: tall structure stacks many range rings into a cell and
//! pushes its count toward the cloud maximum, while flat ground stays near
//! zero, so the pooled moments describe the structures that make a place
//! recognizable instead of the ground that every place shares. Band moments
//! are projected per band, concatenated, and normalized into the 384-vector.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bev::{BevPair, Channel};

use super::{FeatureBackend, FeatureError, GlobalDescriptor, LocalFeatureMap, DESCRIPTOR_DIM};

/// Statistics per channel: 8 histogram bins + mean + max + variance.
const CHANNEL_FEATURE_DIM: usize = 11;
/// Concatenated two-channel patch feature length.
const PATCH_FEATURE_DIM: usize = 2 * CHANNEL_FEATURE_DIM;
/// Local token input: own stats for the token's channel, mean and
/// dispersion of that channel over the 8 surrounding patches and again over
/// the 16 patches two steps out, and the own stats of the other channel.
/// The second ring separates layouts that agree locally, such as a wall
/// with open space behind it versus a wall with a parallel wall behind it.
const TOKEN_INPUT_DIM: usize = 6 * CHANNEL_FEATURE_DIM;
/// Number of annular radius bands in the global pooling. Bands are kept
/// wide so that revisiting a place a few meters off moves content by well
/// under one band.
const BAND_COUNT: usize = 4;
/// Band input: mass-normalized two-channel stats plus the band's share of
/// the total occupied mass.
const BAND_INPUT_DIM: usize = PATCH_FEATURE_DIM + 1;
/// Output length per band; bands concatenate to the descriptor length.
const BAND_DIM: usize = DESCRIPTOR_DIM / BAND_COUNT;

/// Seed for all fixed projections. Changing it changes every descriptor, so
/// it is part of the on-disk compatibility story of anything that caches
/// embeddings.
const PROJECTION_SEED: u64 = 0x4c_47_4c_31;

pub struct ReferenceBackend {
    token_proj: [DMatrix<f64>; 2],
    band_proj: Vec<DMatrix<f64>>,
    zero_descriptor: DVector<f64>,
}

impl Default for ReferenceBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl ReferenceBackend {
    pub fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
        let mut gauss = |rows: usize, cols: usize| {
            DMatrix::from_fn(rows, cols, |_, _| {
                let x: f64 = StandardNormal.sample(&mut rng);
                x
            })
        };
        let token_s = gauss(DESCRIPTOR_DIM, TOKEN_INPUT_DIM);
        let token_i = gauss(DESCRIPTOR_DIM, TOKEN_INPUT_DIM);
        let band_proj: Vec<DMatrix<f64>> =
            (0..BAND_COUNT).map(|_| gauss(BAND_DIM, BAND_INPUT_DIM)).collect();
        let raw: DVector<f64> = DVector::from_fn(DESCRIPTOR_DIM, |_, _| {
            let x: f64 = StandardNormal.sample(&mut rng);
            x
        });
        let zero_descriptor = &raw / raw.norm();
        Self { token_proj: [token_s, token_i], band_proj, zero_descriptor }
    }
}

/// Per-channel statistics of one patch.
#[derive(Clone, Copy)]
struct ChannelStats {
    feature: [f64; CHANNEL_FEATURE_DIM],
    occupied: usize,
    /// Sum of squared pixel values, the pooling weight of the patch.
    energy: f64,
}

/// Scale factor that maps a channel's 95th percentile occupied value to
/// 1.0. The images arrive normalized by their per-cloud maximum, which is a
/// single cell and jumps between two scans of the same place when occlusion
/// hides it; dividing by a high quantile instead keeps the value scale of a
/// revisited place stable. Values above the quantile clamp into the top
/// histogram bin.
fn calibration(bev: &BevPair, channel: Channel) -> f64 {
    let image = bev.image(channel);
    let mut vals: Vec<f32> = Vec::new();
    for v in 0..bev.config.height {
        for u in 0..bev.config.width {
            if bev.is_occupied(u, v) {
                vals.push(image.get(u, v));
            }
        }
    }
    if vals.is_empty() {
        return 1.0;
    }
    vals.sort_by(f32::total_cmp);
    let q = vals[(vals.len() - 1) * 95 / 100] as f64;
    if q > 0.0 {
        1.0 / q
    } else {
        1.0
    }
}

fn channel_stats(bev: &BevPair, channel: Channel, pi: u32, pj: u32, scale: f64) -> ChannelStats {
    let c = bev.config.patch;
    let image = bev.image(channel);
    let mut feature = [0.0; CHANNEL_FEATURE_DIM];
    let mut occupied = 0usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut max = 0.0f64;
    let mut energy = 0.0;
    for dv in 0..c {
        for du in 0..c {
            let u = pj * c + du;
            let v = pi * c + dv;
            if bev.is_occupied(u, v) {
                occupied += 1;
                let val = (image.get(u, v) as f64 * scale).min(1.0);
                // Soft assignment into the 7 value bins: weight splits
                // linearly between the two nearest bin centers, so a value
                // drifting across a bin edge (per-cloud normalization moves
                // them between scans) changes the histogram smoothly.
                let pos = (val * 7.0 - 0.5).clamp(0.0, 6.0);
                let lo = pos.floor().min(5.0) as usize;
                let frac = (pos - lo as f64).min(1.0);
                feature[1 + lo] += 1.0 - frac;
                feature[2 + lo] += frac;
                sum += val;
                sum_sq += val * val;
                energy += val * val;
                max = max.max(val);
            } else {
                feature[0] += 1.0;
            }
        }
    }
    let total = (c * c) as f64;
    for f in feature.iter_mut().take(8) {
        *f /= total;
    }
    if occupied > 0 {
        let mean = sum / occupied as f64;
        feature[8] = mean;
        feature[9] = max;
        feature[10] = (sum_sq / occupied as f64 - mean * mean).max(0.0);
    }
    ChannelStats { feature, occupied, energy }
}

fn normalize_to_f32(v: DVector<f64>, out: &mut Vec<f32>) {
    let norm = v.norm();
    // A histogram always has mass (bin 0 counts empty pixels), so the
    // projection of a token input is never the zero vector in practice;
    // guard anyway to keep the invariant unconditional.
    if norm < 1e-12 {
        let fill = 1.0 / (v.len() as f64).sqrt();
        out.extend(std::iter::repeat(fill as f32).take(v.len()));
    } else {
        out.extend(v.iter().map(|x| (*x / norm) as f32));
    }
}

/// Summary of the patches at Chebyshev distance `ring` from (pi, pj): the
/// element-wise mean of their stats and the mean absolute deviation from
/// that mean. Both are unchanged under any permutation of the members,
/// which is what a yaw rotation of the scene does to them (approximately).
fn ring_stats(
    grid: &[ChannelStats],
    rows: u32,
    cols: u32,
    pi: u32,
    pj: u32,
    ring: i64,
) -> ([f64; CHANNEL_FEATURE_DIM], [f64; CHANNEL_FEATURE_DIM]) {
    let mut mean = [0.0; CHANNEL_FEATURE_DIM];
    let mut members: Vec<&[f64; CHANNEL_FEATURE_DIM]> = Vec::with_capacity(8 * ring as usize);
    for di in -ring..=ring {
        for dj in -ring..=ring {
            if di.abs().max(dj.abs()) != ring {
                continue;
            }
            let ni = pi as i64 + di;
            let nj = pj as i64 + dj;
            // Off-grid neighbors count as fully empty patches.
            let stats = if ni < 0 || nj < 0 || ni >= rows as i64 || nj >= cols as i64 {
                &EMPTY_PATCH
            } else {
                &grid[(ni as u32 * cols + nj as u32) as usize].feature
            };
            members.push(stats);
        }
    }
    for m in &members {
        for (slot, v) in mean.iter_mut().zip(m.iter()) {
            *slot += v;
        }
    }
    for slot in mean.iter_mut() {
        *slot /= members.len() as f64;
    }
    let mut dev = [0.0; CHANNEL_FEATURE_DIM];
    for m in &members {
        for ((slot, v), mu) in dev.iter_mut().zip(m.iter()).zip(mean.iter()) {
            *slot += (v - mu).abs();
        }
    }
    for slot in dev.iter_mut() {
        *slot /= members.len() as f64;
    }
    (mean, dev)
}

/// Stats of a patch with no occupied pixels: all empty, no value mass.
const EMPTY_PATCH: [f64; CHANNEL_FEATURE_DIM] = {
    let mut f = [0.0; CHANNEL_FEATURE_DIM];
    f[0] = 1.0;
    f
};

impl FeatureBackend for ReferenceBackend {
    fn name(&self) -> &str {
        "reference-v2"
    }

    fn extract(&self, bev: &BevPair) -> Result<(GlobalDescriptor, LocalFeatureMap), FeatureError> {
        bev.config.validate().map_err(|e| FeatureError::GridMismatch(e.to_string()))?;
        let rows = bev.config.patches_y();
        let cols = bev.config.patches_x();
        let count = rows as usize * cols as usize;

        // Pass 1: calibrated per-patch stats for both channels.
        let scale = [calibration(bev, Channel::Spatial), calibration(bev, Channel::Intensity)];
        let mut stats: [Vec<ChannelStats>; 2] = [
            Vec::with_capacity(count),
            Vec::with_capacity(count),
        ];
        for pi in 0..rows {
            for pj in 0..cols {
                stats[0].push(channel_stats(bev, Channel::Spatial, pi, pj, scale[0]));
                stats[1].push(channel_stats(bev, Channel::Intensity, pi, pj, scale[1]));
            }
        }

        // Pass 2: local tokens (own stats + ring context + other channel),
        // and soft radial band accumulation for the global descriptor.
        let mut spatial = Vec::with_capacity(count * DESCRIPTOR_DIM);
        let mut intensity = Vec::with_capacity(count * DESCRIPTOR_DIM);
        let mut band_acc = vec![[0.0f64; PATCH_FEATURE_DIM]; BAND_COUNT];
        let mut band_mass = [0.0f64; BAND_COUNT];

        let half_x = cols as f64 / 2.0;
        let half_y = rows as f64 / 2.0;
        // Bands span the inscribed disk; the sparse grid corners fold into
        // the outermost band instead of diluting bands of their own.
        let band_reach = half_x.min(half_y);

        for pi in 0..rows {
            for pj in 0..cols {
                let idx = (pi * cols + pj) as usize;
                let own = [&stats[0][idx], &stats[1][idx]];
                for (ch, out) in [&mut spatial, &mut intensity].into_iter().enumerate() {
                    let (r1_mean, r1_dev) = ring_stats(&stats[ch], rows, cols, pi, pj, 1);
                    let (r2_mean, r2_dev) = ring_stats(&stats[ch], rows, cols, pi, pj, 2);
                    let mut input = [0.0f64; TOKEN_INPUT_DIM];
                    let d = CHANNEL_FEATURE_DIM;
                    input[..d].copy_from_slice(&own[ch].feature);
                    input[d..2 * d].copy_from_slice(&r1_mean);
                    input[2 * d..3 * d].copy_from_slice(&r1_dev);
                    input[3 * d..4 * d].copy_from_slice(&r2_mean);
                    input[4 * d..5 * d].copy_from_slice(&r2_dev);
                    input[5 * d..].copy_from_slice(&own[1 - ch].feature);
                    let projected = &self.token_proj[ch] * DVector::from_column_slice(&input);
                    normalize_to_f32(projected, out);
                }

                let mass = own[0].energy;
                if mass <= 0.0 {
                    continue;
                }
                let dx = pj as f64 + 0.5 - half_x;
                let dy = pi as f64 + 0.5 - half_y;
                let radius = (dx * dx + dy * dy).sqrt();
                // Triangular split between the two nearest band centers.
                let pos = (radius / band_reach * BAND_COUNT as f64 - 0.5)
                    .clamp(0.0, (BAND_COUNT - 1) as f64);
                let lo = (pos.floor() as usize).min(BAND_COUNT - 2);
                let frac = (pos - lo as f64).min(1.0);
                for (slot, w) in [(lo, 1.0 - frac), (lo + 1, frac)] {
                    if w == 0.0 {
                        continue;
                    }
                    band_mass[slot] += w * mass;
                    let acc = &mut band_acc[slot];
                    for (k, v) in own[0].feature.iter().enumerate() {
                        acc[k] += w * mass * v;
                    }
                    for (k, v) in own[1].feature.iter().enumerate() {
                        acc[k + CHANNEL_FEATURE_DIM] += w * mass * v;
                    }
                }
            }
        }

        let total_mass: f64 = band_mass.iter().sum();
        let mut global = DVector::zeros(DESCRIPTOR_DIM);
        for b in 0..BAND_COUNT {
            if band_mass[b] <= 0.0 {
                continue;
            }
            let mut input = [0.0f64; BAND_INPUT_DIM];
            for (k, v) in band_acc[b].iter().enumerate() {
                input[k] = v / band_mass[b];
            }
            input[PATCH_FEATURE_DIM] = band_mass[b] / total_mass;
            let projected = &self.band_proj[b] * DVector::from_column_slice(&input);
            global.rows_mut(b * BAND_DIM, BAND_DIM).copy_from(&projected);
        }
        let descriptor = if total_mass <= 0.0 || global.norm() < 1e-12 {
            GlobalDescriptor::from_values(self.zero_descriptor.clone(), "zero-input descriptor")?
        } else {
            GlobalDescriptor::from_unnormalized(global, "reference descriptor")?
        };
        let map = LocalFeatureMap::new(
            rows,
            cols,
            DESCRIPTOR_DIM,
            bev.config.patch,
            spatial,
            intensity,
        )?;
        Ok((descriptor, map))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bev::{encode, BevConfig, BevImage};
    use crate::cloud::{Point, PointCloud};
    use std::collections::BTreeMap;

    fn backend() -> ReferenceBackend {
        ReferenceBackend::new()
    }

    fn grid_cloud() -> PointCloud {
        let mut points = Vec::new();
        for i in 0..30 {
            for j in 0..30 {
                let x = i as f32 - 15.0;
                let y = j as f32 - 15.0;
                points.push(Point::new(x, y, (i % 5) as f32 * 0.2, ((i + j) % 10) as f32));
                if (i + 2 * j) % 3 == 0 {
                    points.push(Point::new(x + 0.1, y + 0.1, 0.0, (j % 7) as f32));
                }
            }
        }
        PointCloud::new(points, 0.0, "grid")
    }

    fn cfg() -> BevConfig {
        BevConfig { resolution: 1.0, width: 40, height: 40, patch: 8 }
    }

    #[test]
    fn all_zero_pair_yields_the_fixed_descriptor() {
        let empty = BevPair {
            spatial: BevImage::zeros(16, 16),
            intensity: BevImage::zeros(16, 16),
            buckets: BTreeMap::new(),
            config: BevConfig { resolution: 0.5, width: 16, height: 16, patch: 8 },
            cropped: 0,
        };
        let b = backend();
        let (d1, _) = b.extract(&empty).unwrap();
        let (d2, _) = b.extract(&empty).unwrap();
        assert_eq!(d1.values(), d2.values());
        assert_eq!(d1.values(), &b.zero_descriptor);
    }

    #[test]
    fn extraction_is_bit_deterministic() {
        let bev = encode(&grid_cloud(), &cfg()).unwrap();
        let b = backend();
        let (d1, m1) = b.extract(&bev).unwrap();
        let (d2, m2) = b.extract(&bev).unwrap();
        assert_eq!(d1.values(), d2.values());
        assert_eq!(m1, m2);
        // And with a freshly constructed backend (same fixed seed).
        let (d3, m3) = backend().extract(&bev).unwrap();
        assert_eq!(d1.values(), d3.values());
        assert_eq!(m1, m3);
    }

    #[test]
    fn outputs_satisfy_norm_and_shape_invariants() {
        let bev = encode(&grid_cloud(), &cfg()).unwrap();
        let (d, m) = backend().extract(&bev).unwrap();
        assert_eq!(d.dim(), DESCRIPTOR_DIM);
        assert!((d.values().norm() - 1.0).abs() < 1e-9);
        assert_eq!(m.rows, 5);
        assert_eq!(m.cols, 5);
        for ch in Channel::ALL {
            for i in 0..m.rows {
                for j in 0..m.cols {
                    let t = m.token(ch, i, j);
                    let norm: f64 = t.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
                    assert!((norm - 1.0).abs() < 1e-6, "{ch} ({i}, {j}): {norm}");
                }
            }
        }
    }

    #[test]
    fn single_pixel_difference_changes_the_descriptor() {
        // Both clouds put one point per cell (degenerate spatial image) and
        // share the intensity range, so the second differs from the first in
        // exactly one pixel of each image.
        let mut points = vec![
            Point::new(0.5, 0.5, 0.0, 0.0),
            Point::new(1.5, 0.5, 0.0, 10.0),
            Point::new(2.5, 0.5, 0.0, 5.0),
        ];
        let cfg = BevConfig { resolution: 1.0, width: 16, height: 16, patch: 8 };
        let a = encode(&PointCloud::new(points.clone(), 0.0, "a"), &cfg).unwrap();
        points.push(Point::new(3.5, 0.5, 0.0, 5.0));
        let b = encode(&PointCloud::new(points, 0.0, "b"), &cfg).unwrap();
        let diff: usize = a
            .spatial
            .pixels()
            .iter()
            .zip(b.spatial.pixels())
            .filter(|(x, y)| x != y)
            .count();
        assert_eq!(diff, 1);
        let backend = backend();
        let (da, _) = backend.extract(&a).unwrap();
        let (db, _) = backend.extract(&b).unwrap();
        assert_ne!(da.values(), db.values());
    }

    #[test]
    fn empty_patches_share_a_token_distinct_from_occupied_ones() {
        let cloud = PointCloud::new(
            vec![Point::new(0.5, 0.5, 0.0, 1.0), Point::new(1.5, 1.5, 0.0, 3.0)],
            0.0,
            "sparse",
        );
        let cfg = BevConfig { resolution: 1.0, width: 32, height: 32, patch: 8 };
        let bev = encode(&cloud, &cfg).unwrap();
        let (_, m) = backend().extract(&bev).unwrap();
        // Patch (2, 2) holds the points. Patches (0, 0) and (0, 3) are both
        // empty, have all-empty first rings, and each sees the occupied
        // patch exactly once in its second ring; ring summaries ignore
        // member order, so their tokens agree and differ from the occupied
        // patch's token.
        let empty_a = m.token(Channel::Spatial, 0, 0).to_vec();
        let empty_b = m.token(Channel::Spatial, 0, 3).to_vec();
        let occupied = m.token(Channel::Spatial, 2, 2).to_vec();
        assert_eq!(empty_a, empty_b);
        assert_ne!(empty_a, occupied);
    }

    #[test]
    fn ring_context_distinguishes_equal_patches_with_different_neighbors() {
        // Two identical single-cell patches, one neighboring a dense block,
        // one isolated. Without ring context their tokens would agree.
        // Grid is 32 pixels wide at 1 m, so world x and y span [-16, 16)
        // and patch (a, b) covers world [8 b - 16, 8 b - 8) x [8 a - 16, 8 a - 8).
        let mut points = vec![
            Point::new(-13.5, -13.5, 0.0, 5.0),
            Point::new(13.5, 13.5, 0.0, 5.0),
        ];
        for i in 0..8 {
            for j in 0..8 {
                points.push(Point::new(
                    -7.5 + i as f32,
                    -7.5 + j as f32,
                    0.0,
                    (i + j) as f32,
                ));
            }
        }
        let cfg = BevConfig { resolution: 1.0, width: 32, height: 32, patch: 8 };
        let bev = encode(&PointCloud::new(points, 0.0, "ctx"), &cfg).unwrap();
        assert_eq!(bev.cropped, 0);
        let (_, m) = backend().extract(&bev).unwrap();
        // The block fills patch (1, 1), adjacent to the point in patch
        // (0, 0); the point in patch (3, 3) has an empty ring.
        let near_block = m.token(Channel::Spatial, 0, 0).to_vec();
        let isolated = m.token(Channel::Spatial, 3, 3).to_vec();
        assert_ne!(near_block, isolated);
    }
}
