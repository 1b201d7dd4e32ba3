//! Pure loss evaluators for descriptor and local-feature training.
//!
//! Nothing here trains anything; these functions exist so an external
//! trainer's loss implementation can be validated against an independent
//! one, and so retrieval experiments can report the same quantities.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{FeatureError, GlobalDescriptor, IMPORT_NORM_TOL};

/// Weights and margins for the combined training loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Margin between positive and negative descriptor distances.
    pub margin: f64,
    /// Weight of the four local-feature terms against the retrieval term.
    pub alpha: f64,
    /// How many negatives a trainer should mine per query; informational
    /// for batch construction, not used by the evaluators.
    pub negatives_per_query: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { margin: 0.3, alpha: 0.125, negatives_per_query: 10 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if !(self.margin > 0.0) || !self.margin.is_finite() {
            return Err(FeatureError::BadLossConfig(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(FeatureError::BadLossConfig(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Hardest-negative triplet loss over global descriptors:
/// the largest hinge `max(margin + d(q, pos) - d(q, neg), 0)` over the
/// negative set.
pub fn lazy_triplet_loss(
    query: &GlobalDescriptor,
    positive: &GlobalDescriptor,
    negatives: &[GlobalDescriptor],
    cfg: &LossConfig,
) -> Result<f64, FeatureError> {
    cfg.validate()?;
    if negatives.is_empty() {
        return Err(FeatureError::NoNegatives);
    }
    let pos = query.distance(positive);
    let mut worst = 0.0f64;
    for neg in negatives {
        let hinge = (cfg.margin + pos - query.distance(neg)).max(0.0);
        worst = worst.max(hinge);
    }
    Ok(worst)
}

fn check_unit(v: &DVector<f64>, what: &str) -> Result<(), FeatureError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(FeatureError::BadVector(what.to_string()));
    }
    let norm = v.norm();
    if (norm - 1.0).abs() > IMPORT_NORM_TOL {
        return Err(FeatureError::NotNormalized { what: what.to_string(), norm });
    }
    Ok(())
}

/// Contrastive loss over local features in the overlap region.
///
/// For each feature `feats_a[i]` with designated positive
/// `feats_b_all[pos_index[i]]`, scores
/// `-log(exp(f . f+) / sum_k exp(f . f_k))` over all candidates and averages
/// over `i`. All vectors must be unit-normalized so dot products are cosine
/// similarities.
pub fn info_nce_loss(
    feats_a: &[DVector<f64>],
    pos_index: &[usize],
    feats_b_all: &[DVector<f64>],
) -> Result<f64, FeatureError> {
    if feats_a.len() != pos_index.len() {
        return Err(FeatureError::BadCorrespondence {
            index: pos_index.len(),
            len: feats_a.len(),
        });
    }
    if feats_a.is_empty() {
        return Ok(0.0);
    }
    for (i, f) in feats_a.iter().enumerate() {
        check_unit(f, &format!("feats_a[{i}]"))?;
    }
    for (k, f) in feats_b_all.iter().enumerate() {
        check_unit(f, &format!("feats_b_all[{k}]"))?;
    }
    let mut total = 0.0;
    for (i, f) in feats_a.iter().enumerate() {
        let pos = pos_index[i];
        if pos >= feats_b_all.len() {
            return Err(FeatureError::BadCorrespondence { index: pos, len: feats_b_all.len() });
        }
        let sims: Vec<f64> = feats_b_all.iter().map(|g| f.dot(g)).collect();
        // log-sum-exp with max subtraction for numerical stability.
        let m = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + sims.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
        total += lse - sims[pos];
    }
    Ok(total / feats_a.len() as f64)
}

/// Total training loss: retrieval term plus `alpha` times the sum of the
/// four local terms (query->db and db->query, for each BEV channel).
pub fn combined_loss(lpr_loss: f64, local_losses: [f64; 4], cfg: &LossConfig) -> f64 {
    lpr_loss + cfg.alpha * local_losses.iter().sum::<f64>()
}
