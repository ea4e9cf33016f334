//! Scene state: Gaussian primitives, camera model, poses, keyframes.

use nalgebra::{Matrix3, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatch, FeatureObservation};
use crate::image::{ColorImage, DepthImage};
use crate::math::{self, sigmoid};

/// Pinhole camera. `near`/`far` bound the usable depth range in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near: 0.01,
            far: 100.0,
        }
    }

    /// Perspective projection of a camera-space point (z > 0) to pixel coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Camera-space point for pixel (x, y) sampled at its center, at the given depth.
    pub fn backproject(&self, x: u32, y: u32, depth: f64) -> Vector3<f64> {
        self.backproject_uv(x as f64 + 0.5, y as f64 + 0.5, depth)
    }

    /// Camera-space point for a continuous pixel coordinate at the given depth.
    pub fn backproject_uv(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        )
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }
}

/// Rigid world-to-camera transform: `x_cam = R x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        PoseSE3::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        PoseSE3 {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        PoseSE3 {
            rotation,
            translation,
        }
    }

    pub fn transform(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_world + self.translation
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rot_inv = self.rotation.inverse();
        PoseSE3 {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// Left-multiplicative retraction: `exp(δ) ∘ self` with tangent
    /// δ = (ω, v); rotation part is an axis-angle perturbation of the
    /// camera frame, translation part is additive after rotation.
    pub fn retract(&self, omega: &Vector3<f64>, v: &Vector3<f64>) -> PoseSE3 {
        let dr = UnitQuaternion::from_scaled_axis(*omega);
        PoseSE3 {
            rotation: dr * self.rotation,
            translation: dr * self.translation + v,
        }
    }

    /// Tangent δ with `other = exp(δ) ∘ self`; inverse of `retract`.
    pub fn tangent_to(&self, other: &PoseSE3) -> (Vector3<f64>, Vector3<f64>) {
        let dr = other.rotation * self.rotation.inverse();
        let omega = dr.scaled_axis();
        let v = other.translation - dr * self.translation;
        (omega, v)
    }

    pub fn tangent_norm_to(&self, other: &PoseSE3) -> f64 {
        let (omega, v) = self.tangent_to(other);
        (omega.norm_squared() + v.norm_squared()).sqrt()
    }

    /// Serialize as [tx, ty, tz, qx, qy, qz, qw].
    pub fn to_seven(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        [
            self.translation.x,
            self.translation.y,
            self.translation.z,
            q.i,
            q.j,
            q.k,
            q.w,
        ]
    }

    pub fn from_seven(v: &[f64; 7]) -> PoseSE3 {
        let q = nalgebra::Quaternion::new(v[6], v[3], v[4], v[5]);
        PoseSE3 {
            rotation: UnitQuaternion::from_quaternion(q),
            translation: Vector3::new(v[0], v[1], v[2]),
        }
    }
}

/// One anisotropic Gaussian. Raw values are unconstrained; activations map
/// them into the valid domain (exp for scale, sigmoid for opacity, normalize
/// for rotation) so gradient steps cannot leave it.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub position: Vector3<f64>,
    /// Quaternion as (w, x, y, z), normalized on use.
    pub rotation_raw: Vector4<f64>,
    /// Log of the per-axis standard deviations.
    pub scale_raw: Vector3<f64>,
    /// Opacity through sigmoid.
    pub opacity_raw: f64,
    /// RGB, clamped to [0,1] on read.
    pub color: Vector3<f64>,
    /// Learnable mask logit; sigmoid + threshold gives the binary mask.
    pub mask_raw: f64,
}

impl GaussianPrimitive {
    pub fn rotation_unit(&self) -> Vector4<f64> {
        let n = self.rotation_raw.norm();
        if n < 1e-12 {
            Vector4::new(1.0, 0.0, 0.0, 0.0)
        } else {
            self.rotation_raw / n
        }
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.scale_raw.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_raw)
    }

    pub fn color_clamped(&self) -> Vector3<f64> {
        self.color.map(|c| c.clamp(0.0, 1.0))
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.rotation_raw.iter().all(|v| v.is_finite())
            && self.scale_raw.iter().all(|v| v.is_finite())
            && self.opacity_raw.is_finite()
            && self.color.iter().all(|v| v.is_finite())
            && self.mask_raw.is_finite()
    }
}

/// Full world covariance Σ = R S Sᵀ Rᵀ from a unit quaternion and positive
/// per-axis scales.
pub fn covariance_from_rs(rotation: &Vector4<f64>, scale: &Vector3<f64>) -> Result<Matrix3<f64>> {
    if !rotation.iter().all(|v| v.is_finite()) || !scale.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter(
            "non-finite rotation or scale".into(),
        ));
    }
    let r = math::quat_to_matrix(rotation);
    let d = Matrix3::from_diagonal(&scale.map(|s| s * s));
    Ok(r * d * r.transpose())
}

/// Ellipsoid volume (4/3)π·a·b·c of the activated scales.
pub fn ellipsoid_volume(scale: &Vector3<f64>) -> Result<f64> {
    if scale.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidParameter(
            "ellipsoid_volume requires positive scales".into(),
        ));
    }
    Ok(4.0 / 3.0 * std::f64::consts::PI * scale.x * scale.y * scale.z)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianMap {
    pub primitives: Vec<GaussianPrimitive>,
}

impl GaussianMap {
    pub fn new() -> Self {
        GaussianMap {
            primitives: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Keep only the primitives at `indices` (must be sorted ascending);
    /// preserves relative order.
    pub fn retain_indices(&mut self, indices: &[usize]) {
        let mut keep = vec![false; self.primitives.len()];
        for &i in indices {
            keep[i] = true;
        }
        let mut it = keep.iter();
        self.primitives.retain(|_| *it.next().unwrap());
    }
}

/// Indices of primitives whose center lies in [near, far] depth and projects
/// inside the image rectangle grown by 3σ_max pixels, where σ_max is the
/// largest projected standard deviation of that primitive.
pub fn frustum_cull(
    map: &GaussianMap,
    pose: &PoseSE3,
    intrinsics: &CameraIntrinsics,
) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, prim) in map.primitives.iter().enumerate() {
        let p_cam = pose.transform(&prim.position);
        if p_cam.z < intrinsics.near || p_cam.z > intrinsics.far {
            continue;
        }
        let (u, v) = intrinsics.project(&p_cam);
        let sigma_max = match crate::render::projected_sigma_max(prim, pose, intrinsics) {
            Some(s) => s,
            None => continue,
        };
        let margin = 3.0 * sigma_max;
        if u >= -margin
            && u <= intrinsics.width as f64 + margin
            && v >= -margin
            && v <= intrinsics.height as f64 + margin
        {
            out.push(i);
        }
    }
    out
}

/// One RGB-D observation; poses live elsewhere (estimated by tracking or
/// provided as ground truth by the dataset).
#[derive(Debug, Clone)]
pub struct CameraFrame {
    pub frame_id: u64,
    pub color_image: ColorImage,
    pub depth_image: DepthImage,
}

#[derive(Debug, Clone)]
pub struct Keyframe {
    pub frame_id: u64,
    pub pose: PoseSE3,
    pub color_image: ColorImage,
    pub depth_image: DepthImage,
    pub features: Vec<FeatureObservation>,
}

impl Keyframe {
    pub fn from_frame(frame: &CameraFrame, pose: PoseSE3, features: Vec<FeatureObservation>) -> Self {
        Keyframe {
            frame_id: frame.frame_id,
            pose,
            color_image: frame.color_image.clone(),
            depth_image: frame.depth_image.clone(),
            features,
        }
    }
}

/// Fraction of the current frame's valid-depth pixels that back-project into
/// the candidate keyframe's viewing frustum.
pub fn keyframe_overlap(
    candidate: &Keyframe,
    current_depth: &DepthImage,
    current_pose: &PoseSE3,
    intrinsics: &CameraIntrinsics,
) -> Result<f64> {
    let current_to_world = current_pose.inverse();
    let mut valid = 0usize;
    let mut inside = 0usize;
    for y in 0..current_depth.height {
        for x in 0..current_depth.width {
            let d = *current_depth.get(x, y);
            if d <= 0.0 {
                continue;
            }
            valid += 1;
            let p_world = current_to_world.transform(&intrinsics.backproject(x, y, d));
            let p_cand = candidate.pose.transform(&p_world);
            if p_cand.z < intrinsics.near || p_cand.z > intrinsics.far {
                continue;
            }
            let (u, v) = intrinsics.project(&p_cand);
            if intrinsics.contains(u, v) {
                inside += 1;
            }
        }
    }
    if valid == 0 {
        return Err(Error::UndefinedOverlap);
    }
    Ok(inside as f64 / valid as f64)
}

#[derive(Debug, Clone, Default)]
pub struct KeyframeDatabase {
    pub keyframes: Vec<Keyframe>,
    pub keyframe_interval: u64,
    /// Feature matches between each keyframe and its predecessor, used by
    /// global bundle adjustment. `matches_to_prev[0]` is empty.
    pub matches_to_prev: Vec<Vec<FeatureMatch>>,
}

impl KeyframeDatabase {
    pub fn new(keyframe_interval: u64) -> Self {
        KeyframeDatabase {
            keyframes: Vec::new(),
            keyframe_interval,
            matches_to_prev: Vec::new(),
        }
    }

    pub fn insert(&mut self, kf: Keyframe, matches: Vec<FeatureMatch>) {
        if let Some(last) = self.keyframes.last() {
            assert!(kf.frame_id > last.frame_id, "keyframe ids must increase");
        }
        self.keyframes.push(kf);
        self.matches_to_prev.push(matches);
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }
}
