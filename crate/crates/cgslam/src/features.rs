//! Corner detection, patch descriptors, and descriptor matching feeding the
//! reprojection term. Segment-test corners with normalized 11×11 patches and
//! mutual-best matching keep the whole path dependency-free and deterministic.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::image::{ColorImage, DepthImage, ScalarImage};
use crate::scene::{CameraIntrinsics, Keyframe, PoseSE3};

/// Half-width of the descriptor patch (11×11), also the detection border.
pub const PATCH_RADIUS: usize = 5;
const DESCRIPTOR_LEN: usize = (2 * PATCH_RADIUS + 1) * (2 * PATCH_RADIUS + 1);

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
const RING: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];
/// Minimum contiguous arc length for the segment test.
const ARC_MIN: usize = 9;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Intensity contrast for the segment test, on [0,1] grayscale.
    pub threshold: f64,
    /// Keep at most this many corners per image, strongest first.
    pub max_features: usize,
    /// Lowe ratio on descriptor distances; larger admits more matches.
    pub ratio: f64,
    /// Minimum normalized cross-correlation for an accepted match.
    pub min_ncc: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            threshold: 0.06,
            max_features: 400,
            ratio: 0.8,
            min_ncc: 0.6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureObservation {
    /// Continuous pixel coordinate (detection center at x+0.5, y+0.5).
    pub pixel: Vector2<f64>,
    /// Zero-mean, unit-norm patch; NCC between features is a dot product.
    pub descriptor: Vec<f32>,
    /// Observed depth in meters, 0 when invalid.
    pub depth: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureMatch {
    /// Matched point in world coordinates (source pose at match time).
    pub point3d: Vector3<f64>,
    /// Same point in the source camera frame; lets bundle adjustment
    /// recompute `point3d` as the source pose moves.
    pub source_cam: Vector3<f64>,
    pub target_pixel: Vector2<f64>,
    pub source_frame: u64,
    pub target_frame: u64,
}

/// Segment-test corner score: positive iff ≥ 9 contiguous ring pixels are all
/// brighter (or all darker) than the center by more than `t`.
fn corner_score(gray: &ScalarImage, x: usize, y: usize, t: f64) -> Option<f64> {
    let c = gray.data[gray.idx(x as u32, y as u32)];
    let mut ring = [0.0f64; 16];
    for (k, (dx, dy)) in RING.iter().enumerate() {
        let xx = (x as i32 + dx) as u32;
        let yy = (y as i32 + dy) as u32;
        ring[k] = gray.data[gray.idx(xx, yy)];
    }
    let run_score = |pred: &dyn Fn(f64) -> bool, margin: &dyn Fn(f64) -> f64| -> Option<f64> {
        if (0..16).all(|k| pred(ring[k])) {
            return Some((0..16).map(|k| margin(ring[k])).sum());
        }
        let mut best: Option<f64> = None;
        let mut run = 0usize;
        let mut sum = 0.0;
        for k in 0..32 {
            let v = ring[k % 16];
            if pred(v) {
                run += 1;
                sum += margin(v);
                if run >= ARC_MIN {
                    best = Some(best.map_or(sum, |b: f64| b.max(sum)));
                }
            } else {
                run = 0;
                sum = 0.0;
            }
        }
        best
    };
    let bright = run_score(&|v| v > c + t, &|v| v - c - t);
    let dark = run_score(&|v| v < c - t, &|v| c - t - v);
    match (bright, dark) {
        (Some(b), Some(d)) => Some(b.max(d)),
        (Some(b), None) => Some(b),
        (None, Some(d)) => Some(d),
        (None, None) => None,
    }
}

fn extract_descriptor(gray: &ScalarImage, x: usize, y: usize) -> Vec<f32> {
    let mut patch = Vec::with_capacity(DESCRIPTOR_LEN);
    for dy in -(PATCH_RADIUS as i32)..=(PATCH_RADIUS as i32) {
        for dx in -(PATCH_RADIUS as i32)..=(PATCH_RADIUS as i32) {
            let xx = (x as i32 + dx) as u32;
            let yy = (y as i32 + dy) as u32;
            patch.push(gray.data[gray.idx(xx, yy)]);
        }
    }
    let mean = patch.iter().sum::<f64>() / patch.len() as f64;
    for v in &mut patch {
        *v -= mean;
    }
    let norm = patch.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for v in &mut patch {
            *v /= norm;
        }
    }
    patch.into_iter().map(|v| v as f32).collect()
}

/// Detect corners and build descriptors; depth is sampled at the detection
/// pixel (0 when the depth map has no reading there).
pub fn detect_features(
    color: &ColorImage,
    depth: &DepthImage,
    config: &FeatureConfig,
) -> Vec<FeatureObservation> {
    let gray = color.to_gray();
    let (w, h) = (gray.width as usize, gray.height as usize);
    if w <= 2 * PATCH_RADIUS || h <= 2 * PATCH_RADIUS {
        return Vec::new();
    }
    let mut scores = vec![f64::NEG_INFINITY; w * h];
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for y in PATCH_RADIUS..h - PATCH_RADIUS {
        for x in PATCH_RADIUS..w - PATCH_RADIUS {
            if let Some(s) = corner_score(&gray, x, y, config.threshold) {
                scores[y * w + x] = s;
                candidates.push((x, y));
            }
        }
    }
    // 3×3 non-max suppression; score ties break toward the earlier pixel in
    // scan order so detection is order-independent of candidate storage.
    let mut kept: Vec<(usize, usize, f64)> = Vec::new();
    'cand: for &(x, y) in &candidates {
        let s = scores[y * w + x];
        for dy in -1i32..=1 {
            for dx in -1i32..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let nx = (x as i32 + dx) as usize;
                let ny = (y as i32 + dy) as usize;
                let ns = scores[ny * w + nx];
                if ns > s || (ns == s && ny * w + nx < y * w + x) {
                    continue 'cand;
                }
            }
        }
        kept.push((x, y, s));
    }
    kept.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap()
            .then_with(|| (a.1 * w + a.0).cmp(&(b.1 * w + b.0)))
    });
    kept.truncate(config.max_features);

    kept.into_iter()
        .map(|(x, y, _)| FeatureObservation {
            pixel: Vector2::new(x as f64 + 0.5, y as f64 + 0.5),
            descriptor: extract_descriptor(&gray, x, y),
            depth: depth.data[depth.idx(x as u32, y as u32)],
        })
        .collect()
}

fn ncc(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64) * (*y as f64)).sum()
}

/// Mutual-best descriptor matching with a Lowe ratio test. Returns
/// (source_index, target_index) pairs in source order.
pub fn match_descriptors(
    source: &[FeatureObservation],
    target: &[FeatureObservation],
    config: &FeatureConfig,
) -> Vec<(usize, usize)> {
    if source.is_empty() || target.is_empty() {
        return Vec::new();
    }
    // Distance between unit-norm descriptors: ‖a−b‖ = sqrt(2 − 2·ncc).
    let dist = |a: &[f32], b: &[f32]| (2.0 - 2.0 * ncc(a, b)).max(0.0).sqrt();

    let best_two = |from: &FeatureObservation, pool: &[FeatureObservation]| {
        let mut best = (usize::MAX, f64::INFINITY);
        let mut second = f64::INFINITY;
        for (j, t) in pool.iter().enumerate() {
            let d = dist(&from.descriptor, &t.descriptor);
            if d < best.1 {
                second = best.1;
                best = (j, d);
            } else if d < second {
                second = d;
            }
        }
        (best.0, best.1, second)
    };

    let mut target_best: Vec<usize> = Vec::with_capacity(target.len());
    for t in target {
        target_best.push(best_two(t, source).0);
    }

    let mut out = Vec::new();
    for (i, s) in source.iter().enumerate() {
        let (j, d1, d2) = best_two(s, target);
        if j == usize::MAX || target_best[j] != i {
            continue;
        }
        if d2.is_finite() && d1 >= config.ratio * d2 {
            continue;
        }
        let corr = ncc(&s.descriptor, &target[j].descriptor);
        if corr < config.min_ncc {
            continue;
        }
        out.push((i, j));
    }
    out
}

/// Detect corners in both frames, match them, and lift every surviving
/// source feature with valid depth to a world-space point via the source
/// pose. The target frame needs no pose; only its pixels enter the match.
pub fn detect_and_match(
    source: &Keyframe,
    target_color: &ColorImage,
    target_depth: &DepthImage,
    target_frame_id: u64,
    intrinsics: &CameraIntrinsics,
    config: &FeatureConfig,
) -> Vec<FeatureMatch> {
    let source_feats: Vec<FeatureObservation> = if source.features.is_empty() {
        detect_features(&source.color_image, &source.depth_image, config)
    } else {
        source.features.clone()
    };
    let target_feats = detect_features(target_color, target_depth, config);
    lift_matches(
        &source_feats,
        &target_feats,
        &source.pose,
        source.frame_id,
        target_frame_id,
        intrinsics,
        config,
    )
}

/// Matching plus the depth-based lift, on precomputed observations.
pub fn lift_matches(
    source_feats: &[FeatureObservation],
    target_feats: &[FeatureObservation],
    source_pose: &PoseSE3,
    source_frame_id: u64,
    target_frame_id: u64,
    intrinsics: &CameraIntrinsics,
    config: &FeatureConfig,
) -> Vec<FeatureMatch> {
    let source_from_world = *source_pose;
    let world_from_source = source_from_world.inverse();
    match_descriptors(source_feats, target_feats, config)
        .into_iter()
        .filter_map(|(i, j)| {
            let s = &source_feats[i];
            if s.depth <= 0.0 {
                return None;
            }
            let p_cam = intrinsics.backproject_uv(s.pixel.x, s.pixel.y, s.depth);
            Some(FeatureMatch {
                point3d: world_from_source.transform(&p_cam),
                source_cam: p_cam,
                target_pixel: target_feats[j].pixel,
                source_frame: source_frame_id,
                target_frame: target_frame_id,
            })
        })
        .collect()
}
