//! Frame-to-map camera tracking: silhouette-gated photometric and depth
//! losses, feature reprojection, constant-velocity pose initialization, and
//! a first-order optimizer on the 6-DoF pose tangent.

use nalgebra::{Matrix2x3, Matrix2x6, Matrix6, Vector2, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::math::skew;
use crate::render::{render_backward, ImageGradients};
use crate::render::{render, MaskMode, RenderOutput};
use crate::features::FeatureMatch;
use crate::scene::{CameraFrame, CameraIntrinsics, GaussianMap, PoseSE3};

/// Weights of the tracking/BA objective. The silhouette threshold selects
/// pixels the map already explains well enough to constrain the pose.
#[derive(Debug, Clone)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Used by bundle adjustment and mapping only; tracking ignores it.
    pub lambda_ssim: f64,
    pub silhouette_threshold: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 1e-3,
            lambda_ssim: 0.2,
            silhouette_threshold: 0.99,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda_ssim < 0.0 {
            return Err(Error::InvalidConfig("loss weights must be >= 0".into()));
        }
        if !(self.silhouette_threshold > 0.0 && self.silhouette_threshold < 1.0) {
            return Err(Error::InvalidConfig(
                "silhouette_threshold must lie in (0,1)".into(),
            ));
        }
        Ok(())
    }
}

/// Pose history and per-frame iteration budgets.
#[derive(Debug, Clone)]
pub struct TrackerState {
    pub previous_pose: Option<PoseSE3>,
    pub previous_previous_pose: Option<PoseSE3>,
    pub tracking_iterations: usize,
    pub mapping_iterations: usize,
}

impl Default for TrackerState {
    fn default() -> Self {
        TrackerState {
            previous_pose: None,
            previous_previous_pose: None,
            tracking_iterations: 60,
            mapping_iterations: 90,
        }
    }
}

impl TrackerState {
    /// Shift the history after a frame is tracked.
    pub fn advance(&mut self, pose: PoseSE3) {
        self.previous_previous_pose = self.previous_pose.take();
        self.previous_pose = Some(pose);
    }
}

fn check_frame_dims(render: &RenderOutput, frame: &CameraFrame) -> Result<()> {
    let (rw, rh) = (render.color.width, render.color.height);
    let (fw, fh) = (frame.color_image.width, frame.color_image.height);
    if rw != fw || rh != fh || frame.depth_image.width != fw || frame.depth_image.height != fh {
        return Err(Error::DimensionMismatch {
            a_w: rw,
            a_h: rh,
            b_w: fw,
            b_h: fh,
        });
    }
    Ok(())
}

/// Mean squared color error over the rendered pixel set and mean squared
/// depth error over its valid-depth subset (observed depth > 0). The depth
/// term is zero when no rendered pixel has a valid observation.
pub fn color_depth_losses(render: &RenderOutput, frame: &CameraFrame) -> Result<(f64, f64)> {
    check_frame_dims(render, frame)?;
    let pixels = &render.cache.pixels;
    if pixels.is_empty() {
        return Err(Error::UndefinedLoss("no rendered pixels".into()));
    }
    let mut color_sq = 0.0;
    let mut depth_sq = 0.0;
    let mut depth_count = 0usize;
    for &p in pixels {
        let p = p as usize;
        let dc = render.color.data[p] - frame.color_image.data[p];
        color_sq += dc.norm_squared();
        let od = frame.depth_image.data[p];
        if od > 0.0 {
            let dd = render.depth.data[p] - od;
            depth_sq += dd * dd;
            depth_count += 1;
        }
    }
    let l_c = color_sq / (3.0 * pixels.len() as f64);
    let l_d = if depth_count > 0 {
        depth_sq / depth_count as f64
    } else {
        0.0
    };
    Ok((l_c, l_d))
}

struct GatedSums {
    color_sq: f64,
    depth_sq: f64,
    gated: usize,
    depth_count: usize,
}

fn gated_sums(render: &RenderOutput, frame: &CameraFrame, threshold: f64) -> GatedSums {
    let mut s = GatedSums {
        color_sq: 0.0,
        depth_sq: 0.0,
        gated: 0,
        depth_count: 0,
    };
    for &p in &render.cache.pixels {
        let p = p as usize;
        if render.silhouette.data[p] <= threshold {
            continue;
        }
        s.gated += 1;
        let dc = render.color.data[p] - frame.color_image.data[p];
        s.color_sq += dc.norm_squared();
        let od = frame.depth_image.data[p];
        if od > 0.0 {
            let dd = render.depth.data[p] - od;
            s.depth_sq += dd * dd;
            s.depth_count += 1;
        }
    }
    s
}

/// Sum of Euclidean pixel residuals between observed target pixels and the
/// projections of the matched world points under `target_pose`. Matches at
/// or behind the near plane are skipped; the count of skips is returned.
pub fn reprojection_loss(
    matches: &[FeatureMatch],
    target_pose: &PoseSE3,
    intrinsics: &CameraIntrinsics,
) -> (f64, usize) {
    let mut total = 0.0;
    let mut skipped = 0usize;
    for m in matches {
        let p_cam = target_pose.transform(&m.point3d);
        if p_cam.z <= intrinsics.near {
            skipped += 1;
            continue;
        }
        let (u, v) = intrinsics.project(&p_cam);
        total += (m.target_pixel - Vector2::new(u, v)).norm();
    }
    (total, skipped)
}

/// Jacobian of the pinhole projection with respect to the camera-space
/// point. Callers must ensure z > 0.
pub(crate) fn projection_jacobian(
    p_cam: &Vector3<f64>,
    intrinsics: &CameraIntrinsics,
) -> Matrix2x3<f64> {
    let z = p_cam.z;
    Matrix2x3::new(
        intrinsics.fx / z,
        0.0,
        -intrinsics.fx * p_cam.x / (z * z),
        0.0,
        intrinsics.fy / z,
        -intrinsics.fy * p_cam.y / (z * z),
    )
}

/// Reprojection loss together with its gradient on the target pose tangent.
/// Residuals below 1e-12 px sit at the norm's kink and contribute no
/// gradient.
pub fn reprojection_pose_gradient(
    matches: &[FeatureMatch],
    target_pose: &PoseSE3,
    intrinsics: &CameraIntrinsics,
) -> (f64, usize, Vector6<f64>) {
    let mut total = 0.0;
    let mut skipped = 0usize;
    let mut g_omega = Vector3::zeros();
    let mut g_v = Vector3::zeros();
    for m in matches {
        let p_cam = target_pose.transform(&m.point3d);
        if p_cam.z <= intrinsics.near {
            skipped += 1;
            continue;
        }
        let (u, v) = intrinsics.project(&p_cam);
        let r = m.target_pixel - Vector2::new(u, v);
        let n = r.norm();
        total += n;
        if n < 1e-12 {
            continue;
        }
        let proj_jac = projection_jacobian(&p_cam, intrinsics);
        // d‖r‖/dp_cam with r = obs − Π(p_cam)
        let g_p = proj_jac.transpose() * (-r / n);
        g_v += g_p;
        g_omega += p_cam.cross(&g_p);
    }
    let mut g = Vector6::zeros();
    g.fixed_rows_mut::<3>(0).copy_from(&g_omega);
    g.fixed_rows_mut::<3>(3).copy_from(&g_v);
    (total, skipped, g)
}

/// Tracking objective: color and depth errors averaged over pixels whose
/// silhouette exceeds the threshold, plus the weighted reprojection term.
pub fn tracking_loss(
    render: &RenderOutput,
    frame: &CameraFrame,
    matches: &[FeatureMatch],
    pose: &PoseSE3,
    weights: &LossWeights,
    intrinsics: &CameraIntrinsics,
) -> Result<f64> {
    check_frame_dims(render, frame)?;
    let s = gated_sums(render, frame, weights.silhouette_threshold);
    if s.gated == 0 {
        return Err(Error::InsufficientVisibility);
    }
    let l_c = s.color_sq / (3.0 * s.gated as f64);
    let l_d = if s.depth_count > 0 {
        s.depth_sq / s.depth_count as f64
    } else {
        0.0
    };
    let (l_re, _skipped) = reprojection_loss(matches, pose, intrinsics);
    Ok(l_c + weights.lambda1 * l_d + weights.lambda2 * l_re)
}

/// Tracking loss and its gradient on the pose tangent, with the map frozen.
/// The silhouette gate is treated as a constant pixel selection; gradients
/// flow through the rendered color and depth of gated pixels and through the
/// reprojection term.
pub fn tracking_loss_grad(
    map: &GaussianMap,
    frame: &CameraFrame,
    matches: &[FeatureMatch],
    pose: &PoseSE3,
    weights: &LossWeights,
    intrinsics: &CameraIntrinsics,
    mask_mode: MaskMode,
) -> Result<(f64, Vector6<f64>)> {
    let out = render(map, pose, intrinsics, mask_mode);
    check_frame_dims(&out, frame)?;
    let s = gated_sums(&out, frame, weights.silhouette_threshold);
    if s.gated == 0 {
        return Err(Error::InsufficientVisibility);
    }
    let mut upstream = ImageGradients::zeros(out.color.width, out.color.height);
    let color_scale = 2.0 / (3.0 * s.gated as f64);
    let depth_scale = if s.depth_count > 0 {
        weights.lambda1 * 2.0 / s.depth_count as f64
    } else {
        0.0
    };
    for &p in &out.cache.pixels {
        let p = p as usize;
        if out.silhouette.data[p] <= weights.silhouette_threshold {
            continue;
        }
        upstream.d_color.data[p] = (out.color.data[p] - frame.color_image.data[p]) * color_scale;
        let od = frame.depth_image.data[p];
        if od > 0.0 {
            upstream.d_depth.data[p] = (out.depth.data[p] - od) * depth_scale;
        }
    }
    let grads = render_backward(&out, &upstream, map, pose, intrinsics)?;
    let (l_re, _skipped, g_re) = reprojection_pose_gradient(matches, pose, intrinsics);

    let l_c = s.color_sq / (3.0 * s.gated as f64);
    let l_d = if s.depth_count > 0 {
        s.depth_sq / s.depth_count as f64
    } else {
        0.0
    };
    let loss = l_c + weights.lambda1 * l_d + weights.lambda2 * l_re;
    let grad = grads.d_pose + g_re * weights.lambda2;
    Ok((loss, grad))
}

/// Pose guess for the next frame. With two poses of history, the previous
/// relative motion is replayed once: T_init = T_{t-1} (T_{t-2}^-1 T_{t-1}).
pub fn constant_velocity_init(state: &TrackerState) -> PoseSE3 {
    match (&state.previous_pose, &state.previous_previous_pose) {
        (None, _) => PoseSE3::identity(),
        (Some(prev), None) => prev.clone(),
        (Some(prev), Some(prev2)) => prev.compose(&prev2.inverse().compose(prev)),
    }
}

/// Result of optimizing one frame's pose.
#[derive(Debug, Clone)]
pub struct TrackResult {
    pub pose: PoseSE3,
    pub loss: f64,
    /// Accepted gradient steps (line-search rejections not counted).
    pub accepted_steps: usize,
}

const MAX_HALVINGS: usize = 8;
/// Tangent norm of the very first plain-gradient trial step.
const INITIAL_STEP_NORM: f64 = 0.01;
/// Hard cap on a plain-gradient step's tangent norm.
const MAX_STEP_NORM: f64 = 0.1;
const STEP_GROWTH: f64 = 1.3;
const GRAD_TOL: f64 = 1e-10;
/// Matches needed before the reprojection curvature can condition all six
/// tangent directions.
const MIN_PRECONDITION_MATCHES: usize = 6;
/// Relative diagonal damping of the curvature matrix.
const CURVATURE_DAMPING: f64 = 1e-3;
/// Cap on a preconditioned step's tangent norm.
const MAX_PRECONDITIONED_STEP: f64 = 0.25;

/// Gradient preconditioned by the damped Gauss-Newton curvature of the
/// reprojection term, H = lambda2 * sum w J^T J with the reweighting
/// w = 1/max(‖r‖, 1e-6) that expresses the Euclidean residual norm. H is
/// symmetric positive definite, so -H^-1 g remains a descent direction of
/// the full loss while undoing the strong yaw and lateral-translation
/// coupling that stalls raw gradient steps. None when too few matches are
/// in front of the camera or the solve fails.
fn match_preconditioned_direction(
    matches: &[FeatureMatch],
    pose: &PoseSE3,
    intrinsics: &CameraIntrinsics,
    weights: &LossWeights,
    grad: &Vector6<f64>,
) -> Option<Vector6<f64>> {
    if weights.lambda2 <= 0.0 {
        return None;
    }
    let mut curvature = Matrix6::<f64>::zeros();
    let mut used = 0usize;
    for m in matches {
        let p_cam = pose.transform(&m.point3d);
        if p_cam.z <= intrinsics.near {
            continue;
        }
        let (u, v) = intrinsics.project(&p_cam);
        let r = m.target_pixel - Vector2::new(u, v);
        let w = 1.0 / r.norm().max(1e-6);
        let proj_jac = projection_jacobian(&p_cam, intrinsics);
        let mut tangent_jac = Matrix2x6::<f64>::zeros();
        tangent_jac
            .fixed_view_mut::<2, 3>(0, 0)
            .copy_from(&(proj_jac * (-skew(&p_cam))));
        tangent_jac.fixed_view_mut::<2, 3>(0, 3).copy_from(&proj_jac);
        curvature += tangent_jac.transpose() * tangent_jac * w;
        used += 1;
    }
    if used < MIN_PRECONDITION_MATCHES {
        return None;
    }
    curvature *= weights.lambda2;
    let damping = 1e-9 + CURVATURE_DAMPING * curvature.trace() / 6.0;
    let damped = curvature + Matrix6::identity() * damping;
    let mut dir = -damped.cholesky()?.solve(grad);
    let norm = dir.norm();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    if norm > MAX_PRECONDITIONED_STEP {
        dir *= MAX_PRECONDITIONED_STEP / norm;
    }
    Some(dir)
}

/// Descent on the pose tangent with step-halving line search. While enough
/// feature matches are in view each iteration first tries the
/// match-preconditioned gradient at unit scale, falling back to a plain
/// gradient step with an adaptive norm. The loss over accepted iterates is
/// nonincreasing; an iteration whose every trial is rejected ends the
/// optimization at the current pose.
pub fn track_frame(
    map: &GaussianMap,
    frame: &CameraFrame,
    state: &TrackerState,
    weights: &LossWeights,
    intrinsics: &CameraIntrinsics,
    mask_mode: MaskMode,
    matches: &[FeatureMatch],
) -> Result<TrackResult> {
    if map.primitives.is_empty() {
        return Err(Error::InvalidParameter(
            "tracking requires a nonempty map".into(),
        ));
    }
    let init = constant_velocity_init(state);
    let (mut loss, mut grad) =
        tracking_loss_grad(map, frame, matches, &init, weights, intrinsics, mask_mode)?;
    if !loss.is_finite() {
        return Err(Error::TrackingFailure {
            init_pose: Box::new(init),
        });
    }
    let mut pose = init.clone();
    let mut step_norm = INITIAL_STEP_NORM;
    let mut accepted_steps = 0usize;

    for _ in 0..state.tracking_iterations {
        let gnorm = grad.norm();
        if gnorm < GRAD_TOL {
            break;
        }
        // Trial directions in order of preference. The adaptive step norm
        // only tracks plain-gradient scales.
        let mut attempts: Vec<(Vector6<f64>, f64, bool)> = Vec::with_capacity(2);
        if let Some(dir) =
            match_preconditioned_direction(matches, &pose, intrinsics, weights, &grad)
        {
            attempts.push((dir, 1.0, false));
        }
        attempts.push((grad * (-1.0 / gnorm), step_norm.min(MAX_STEP_NORM), true));

        let mut accepted = false;
        'attempts: for (dir, initial_scale, adaptive) in attempts {
            let mut scale = initial_scale;
            for _ in 0..=MAX_HALVINGS {
                let step = dir * scale;
                let candidate = pose.retract(
                    &Vector3::new(step[0], step[1], step[2]),
                    &Vector3::new(step[3], step[4], step[5]),
                );
                match tracking_loss_grad(
                    map, frame, matches, &candidate, weights, intrinsics, mask_mode,
                ) {
                    Ok((cl, cg)) if cl.is_finite() && cl <= loss => {
                        pose = candidate;
                        loss = cl;
                        grad = cg;
                        if adaptive {
                            step_norm = (scale * STEP_GROWTH).min(MAX_STEP_NORM);
                        }
                        accepted = true;
                        break 'attempts;
                    }
                    Ok((cl, _)) if !cl.is_finite() => {
                        return Err(Error::TrackingFailure {
                            init_pose: Box::new(init),
                        });
                    }
                    // A candidate that raises the loss or loses all gated
                    // pixels is a rejected trial, not a failure.
                    Ok(_) | Err(Error::InsufficientVisibility) => scale *= 0.5,
                    Err(e) => return Err(e),
                }
            }
        }
        if !accepted {
            break;
        }
        accepted_steps += 1;
    }
    Ok(TrackResult {
        pose,
        loss,
        accepted_steps,
    })
}
