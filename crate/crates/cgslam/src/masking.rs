//! Learnable per-Gaussian masks: straight-through binarization, masked
//! attributes, the sparsity loss, sliding-window selection, pruning, and
//! window mask resets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::DepthImage;
use crate::math::{sigmoid, sigmoid_deriv};
use crate::scene::{keyframe_overlap, CameraIntrinsics, GaussianMap, KeyframeDatabase, PoseSE3};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MaskConfig {
    /// Binarization threshold ε on sigmoid(m).
    pub epsilon: f64,
    /// Weight of the mask sparsity loss in the mapping objective.
    pub lambda_mask: f64,
    /// Sliding window size n (current frame plus n−1 keyframes).
    pub window_size: usize,
    /// Every k-th frame becomes a keyframe.
    pub keyframe_interval: u64,
    /// Value mask_raw is (re)set to; sigmoid(1.0) ≈ 0.73 keeps new Gaussians
    /// visible with gradient headroom both ways.
    pub mask_init: f64,
    /// Reset surviving masks on prune; disabling lets masks accumulate
    /// across windows (not recommended, see reset_window_masks).
    pub reset_survivor_masks: bool,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            epsilon: 0.01,
            lambda_mask: 5e-4,
            window_size: 5,
            keyframe_interval: 5,
            mask_init: 1.0,
            reset_survivor_masks: true,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidConfig("mask epsilon must be in (0,1)".into()));
        }
        if self.window_size < 2 {
            return Err(Error::InvalidConfig("window_size must be >= 2".into()));
        }
        if self.keyframe_interval < 1 {
            return Err(Error::InvalidConfig("keyframe_interval must be >= 1".into()));
        }
        if self.lambda_mask < 0.0 {
            return Err(Error::InvalidConfig("lambda_mask must be >= 0".into()));
        }
        Ok(())
    }
}

/// Binary mask value for a raw logit; forward half of the straight-through
/// estimator.
pub fn binarize_value(mask_raw: f64, epsilon: f64) -> f64 {
    if sigmoid(mask_raw) > epsilon {
        1.0
    } else {
        0.0
    }
}

/// Straight-through binarization: forward M ∈ {0,1}, reported derivative is
/// that of sigmoid(m) regardless of which side of the threshold m lies on.
pub fn binarize_mask(m: f64, epsilon: f64) -> (f64, f64) {
    (binarize_value(m, epsilon), sigmoid_deriv(m))
}

/// Activated scale and opacity, each multiplied by the binary mask.
pub fn masked_attributes(
    prim: &crate::scene::GaussianPrimitive,
    epsilon: f64,
) -> (nalgebra::Vector3<f64>, f64) {
    let m = binarize_value(prim.mask_raw, epsilon);
    (prim.scale() * m, prim.opacity() * m)
}

/// Mean of sigmoid(m) over the active (frustum-culled) subset.
pub fn mask_loss(map: &GaussianMap, active_indices: &[usize]) -> Result<f64> {
    if active_indices.is_empty() {
        return Err(Error::UndefinedLoss("no active primitives".into()));
    }
    let sum: f64 = active_indices
        .iter()
        .map(|&i| sigmoid(map.primitives[i].mask_raw))
        .sum();
    Ok(sum / active_indices.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlidingWindow {
    pub current_frame_id: u64,
    /// Keyframe ids, most relevant first, at most n−1 of them.
    pub member_keyframe_ids: Vec<u64>,
}

/// Rank keyframes by overlap with the current frame and keep the top n−1.
/// Equal overlaps favor the larger (more recent) frame id. The current frame
/// itself is excluded from the ranked candidates.
pub fn select_sliding_window(
    db: &KeyframeDatabase,
    current_frame_id: u64,
    current_depth: &DepthImage,
    current_pose: &PoseSE3,
    intrinsics: &CameraIntrinsics,
    config: &MaskConfig,
) -> Result<SlidingWindow> {
    let mut ranked: Vec<(f64, u64)> = Vec::new();
    for kf in &db.keyframes {
        if kf.frame_id == current_frame_id {
            continue;
        }
        let overlap = keyframe_overlap(kf, current_depth, current_pose, intrinsics)?;
        ranked.push((overlap, kf.frame_id));
    }
    ranked.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| b.1.cmp(&a.1))
    });
    ranked.truncate(config.window_size.saturating_sub(1));
    Ok(SlidingWindow {
        current_frame_id,
        member_keyframe_ids: ranked.into_iter().map(|(_, id)| id).collect(),
    })
}

/// Remove every primitive with sigmoid(mask_raw) ≤ ε. Survivors keep their
/// relative order; when `reset_survivors` is set their mask_raw is restored
/// to `mask_init`. Returns the removal count and the surviving indices (into
/// the pre-prune map), which callers use to compact optimizer state.
pub fn prune(
    map: &mut GaussianMap,
    epsilon: f64,
    mask_init: f64,
    reset_survivors: bool,
) -> (usize, Vec<usize>) {
    let survivors: Vec<usize> = (0..map.len())
        .filter(|&i| sigmoid(map.primitives[i].mask_raw) > epsilon)
        .collect();
    let removed = map.len() - survivors.len();
    map.retain_indices(&survivors);
    if reset_survivors {
        for p in &mut map.primitives {
            p.mask_raw = mask_init;
        }
    }
    (removed, survivors)
}

/// Restore mask_raw to `mask_init` for the indexed primitives when the
/// sliding window advances, bounding accumulated mask gradients to one
/// window's lifetime.
pub fn reset_window_masks(map: &mut GaussianMap, indices: &[usize], mask_init: f64) {
    for &i in indices {
        map.primitives[i].mask_raw = mask_init;
    }
}
