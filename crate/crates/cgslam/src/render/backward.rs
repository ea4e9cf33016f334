//! Analytic reverse pass of the splatting renderer.
//!
//! Per pixel, the cached contribution list replays Eqs of the forward
//! compositing in reverse to get dL/df_i; those flow into each splat's 2D
//! mean, 2D covariance, depth, color, and effective opacity, and from there
//! through the projection (including the Jacobian's dependence on the camera
//! point and the pose rotation's appearance inside the EWA transform) into
//! every raw primitive attribute and the 6-DoF pose tangent.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix4, Vector2, Vector3, Vector4, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{ColorImage, ScalarImage};
use crate::masking;
use crate::math::{quat_to_matrix, quat_to_matrix_jacobian, sigmoid, sigmoid_deriv};
use crate::scene::{CameraIntrinsics, GaussianMap, PoseSE3};

use super::{MaskMode, RenderOutput};

/// Loss gradients with respect to the rendered images. Pixels outside the
/// rendered set are ignored.
#[derive(Debug, Clone)]
pub struct ImageGradients {
    pub d_color: ColorImage,
    pub d_depth: ScalarImage,
    pub d_silhouette: ScalarImage,
}

impl ImageGradients {
    pub fn zeros(width: u32, height: u32) -> Self {
        ImageGradients {
            d_color: ColorImage::black(width, height),
            d_depth: ScalarImage::zeros(width, height),
            d_silhouette: ScalarImage::zeros(width, height),
        }
    }
}

/// Gradients for every primitive attribute plus the pose tangent
/// (ω then v, matching `PoseSE3::retract`).
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub d_position: Vec<Vector3<f64>>,
    pub d_rotation_raw: Vec<Vector4<f64>>,
    pub d_scale_raw: Vec<Vector3<f64>>,
    pub d_opacity_raw: Vec<f64>,
    pub d_color: Vec<Vector3<f64>>,
    pub d_mask_raw: Vec<f64>,
    pub d_pose: Vector6<f64>,
}

impl GradientSet {
    pub fn zeros(n: usize) -> Self {
        GradientSet {
            d_position: vec![Vector3::zeros(); n],
            d_rotation_raw: vec![Vector4::zeros(); n],
            d_scale_raw: vec![Vector3::zeros(); n],
            d_opacity_raw: vec![0.0; n],
            d_color: vec![Vector3::zeros(); n],
            d_mask_raw: vec![0.0; n],
            d_pose: Vector6::zeros(),
        }
    }

    pub fn len(&self) -> usize {
        self.d_position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_position.is_empty()
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        assert_eq!(self.len(), other.len());
        for i in 0..self.len() {
            self.d_position[i] += other.d_position[i];
            self.d_rotation_raw[i] += other.d_rotation_raw[i];
            self.d_scale_raw[i] += other.d_scale_raw[i];
            self.d_opacity_raw[i] += other.d_opacity_raw[i];
            self.d_color[i] += other.d_color[i];
            self.d_mask_raw[i] += other.d_mask_raw[i];
        }
        self.d_pose += other.d_pose;
    }

    pub fn scale(&mut self, factor: f64) {
        for i in 0..self.len() {
            self.d_position[i] *= factor;
            self.d_rotation_raw[i] *= factor;
            self.d_scale_raw[i] *= factor;
            self.d_opacity_raw[i] *= factor;
            self.d_color[i] *= factor;
            self.d_mask_raw[i] *= factor;
        }
        self.d_pose *= factor;
    }
}

/// Per-splat upstream accumulators in projected space.
#[derive(Clone)]
struct SplatAccum {
    oeff: f64,
    mean: Vector2<f64>,
    cov: Matrix2<f64>,
    depth: f64,
    color: Vector3<f64>,
}

impl SplatAccum {
    fn zero() -> Self {
        SplatAccum {
            oeff: 0.0,
            mean: Vector2::zeros(),
            cov: Matrix2::zeros(),
            depth: 0.0,
            color: Vector3::zeros(),
        }
    }

    fn add(&mut self, o: &SplatAccum) {
        self.oeff += o.oeff;
        self.mean += o.mean;
        self.cov += o.cov;
        self.depth += o.depth;
        self.color += o.color;
    }

    fn is_zero(&self) -> bool {
        self.oeff == 0.0
            && self.mean == Vector2::zeros()
            && self.cov == Matrix2::zeros()
            && self.depth == 0.0
            && self.color == Vector3::zeros()
    }
}

const PIXELS_PER_CHUNK: usize = 512;

pub fn render_backward(
    output: &RenderOutput,
    upstream: &ImageGradients,
    map: &GaussianMap,
    pose: &PoseSE3,
    intrinsics: &CameraIntrinsics,
) -> Result<GradientSet> {
    let cache = &output.cache;
    if cache.map_len != map.len() || cache.pose != *pose || cache.intrinsics != *intrinsics {
        return Err(Error::InconsistentCache);
    }
    if !upstream.d_color.same_dims(&output.color) {
        return Err(Error::InconsistentCache);
    }
    let n_splats = cache.splats.len();
    let width = intrinsics.width;

    // Phase 1: per-pixel reverse compositing, reduced over fixed-size chunks
    // in chunk order so the result does not depend on thread scheduling.
    let chunk_accums: Vec<Vec<SplatAccum>> = (0..cache.pixels.len())
        .collect::<Vec<_>>()
        .par_chunks(PIXELS_PER_CHUNK)
        .map(|chunk| {
            let mut acc = vec![SplatAccum::zero(); n_splats];
            for &pos in chunk {
                let p = cache.pixels[pos] as usize;
                let gc = upstream.d_color.data[p];
                let gd = upstream.d_depth.data[p];
                let gs = upstream.d_silhouette.data[p];
                if gc == Vector3::zeros() && gd == 0.0 && gs == 0.0 {
                    continue;
                }
                let span = &cache.contribs
                    [cache.offsets[pos] as usize..cache.offsets[pos + 1] as usize];
                if span.is_empty() {
                    continue;
                }
                let px = (cache.pixels[pos] % width) as f64 + 0.5;
                let py = (cache.pixels[pos] / width) as f64 + 0.5;

                // dL/dw_i with w_i = f_i·T_i, then dL/df_i via suffix sums.
                let mut suffix = 0.0; // Σ_{j>i} G_j f_j T_j
                for c in span.iter().rev() {
                    let s = &cache.splats[c.slot as usize];
                    let g_i = gc.dot(&s.color) + gd * s.depth + gs;
                    let one_minus_f = 1.0 - c.f;
                    let df = if one_minus_f.abs() < 1e-12 {
                        // Later splats received zero transmittance; suffix is 0.
                        g_i * c.t_before
                    } else {
                        g_i * c.t_before - suffix / one_minus_f
                    };
                    suffix += g_i * c.f * c.t_before;

                    let w = c.f * c.t_before;
                    let a = &mut acc[c.slot as usize];
                    a.color += gc * w;
                    a.depth += gd * w;

                    // f = o_eff · exp(−½ dᵀ A d)
                    let d = Vector2::new(px - s.mean2d.x, py - s.mean2d.y);
                    let ad = s.inv_cov * d;
                    a.oeff += df * c.f / s.opacity;
                    a.mean += ad * (df * c.f);
                    a.cov += (ad * ad.transpose()) * (0.5 * df * c.f);
                }
            }
            acc
        })
        .collect();

    let mut accums = vec![SplatAccum::zero(); n_splats];
    for chunk in &chunk_accums {
        for (a, c) in accums.iter_mut().zip(chunk) {
            a.add(c);
        }
    }

    // Phase 2: chain per-splat accumulators to primitive attributes and pose.
    let mut grads = GradientSet::zeros(map.len());
    let w_mat: Matrix3<f64> = *pose.rotation.to_rotation_matrix().matrix();
    for (slot, acc) in accums.iter().enumerate() {
        if acc.is_zero() {
            continue;
        }
        let splat = &cache.splats[slot];
        let i = splat.source_index;
        let prim = &map.primitives[i];

        let p_cam = pose.transform(&prim.position);
        let z = p_cam.z;
        let j = super::perspective_jacobian(intrinsics, &p_cam);

        let q_unit = prim.rotation_unit();
        let r3 = quat_to_matrix(&q_unit);
        let s_act = prim.scale();
        let m_bin = match cache.mask_mode {
            MaskMode::Off => 1.0,
            MaskMode::Binary { epsilon } => masking::binarize_value(prim.mask_raw, epsilon),
        };
        let s_eff = s_act * m_bin;
        let d_diag = Matrix3::from_diagonal(&s_eff.map(|s| s * s));
        let sigma3 = r3 * d_diag * r3.transpose();
        let v_cam = w_mat * sigma3 * w_mat.transpose(); // camera-frame 3D covariance
        let m2 = j * w_mat;

        // Color (clamp treated as pass-through; the optimizer projects colors
        // back into [0,1] after each step).
        grads.d_color[i] += acc.color;

        // Opacity and the straight-through mask path.
        let o_act = sigmoid(prim.opacity_raw);
        grads.d_opacity_raw[i] += acc.oeff * m_bin * sigmoid_deriv(prim.opacity_raw);

        // Covariance chain: G3 = M2ᵀ Gcov M2.
        let g3 = m2.transpose() * acc.cov * m2;
        let rtgr = r3.transpose() * g3 * r3;
        let mut g_shat = Vector3::zeros();
        for k in 0..3 {
            g_shat[k] = 2.0 * s_eff[k] * rtgr[(k, k)];
        }
        for k in 0..3 {
            grads.d_scale_raw[i][k] += g_shat[k] * m_bin * s_act[k];
        }
        if matches!(cache.mask_mode, MaskMode::Binary { .. }) {
            let d_mask_cont = acc.oeff * o_act + g_shat.dot(&s_act);
            grads.d_mask_raw[i] += d_mask_cont * sigmoid_deriv(prim.mask_raw);
        }

        // Rotation chain: Σ3 = R D Rᵀ, dL/dR = 2 G3 R D, then through the
        // quaternion matrix map and the normalization of rotation_raw.
        let g_r = 2.0 * g3 * r3 * d_diag;
        let jac_q = quat_to_matrix_jacobian(&q_unit);
        let mut g_q_unit = Vector4::zeros();
        for c in 0..4 {
            g_q_unit[c] = g_r.component_mul(&jac_q[c]).sum();
        }
        let raw_norm = prim.rotation_raw.norm().max(1e-12);
        let norm_jac = (Matrix4::identity() - q_unit * q_unit.transpose()) / raw_norm;
        grads.d_rotation_raw[i] += norm_jac * g_q_unit;

        // Camera-point chain: mean2d, depth, and J's dependence on p_cam.
        let mut g_xc = j.transpose() * acc.mean;
        g_xc.z += acc.depth;
        let b = v_cam * j.transpose(); // 3x2
        let z2 = z * z;
        let z3 = z2 * z;
        let dj: [Matrix2x3<f64>; 3] = [
            Matrix2x3::new(0.0, 0.0, -intrinsics.fx / z2, 0.0, 0.0, 0.0),
            Matrix2x3::new(0.0, 0.0, 0.0, 0.0, 0.0, -intrinsics.fy / z2),
            Matrix2x3::new(
                -intrinsics.fx / z2,
                0.0,
                2.0 * intrinsics.fx * p_cam.x / z3,
                0.0,
                -intrinsics.fy / z2,
                2.0 * intrinsics.fy * p_cam.y / z3,
            ),
        ];
        for k in 0..3 {
            let djb: Matrix2<f64> = dj[k] * b;
            g_xc[k] += 2.0 * acc.cov.component_mul(&djb).sum();
        }

        grads.d_position[i] += w_mat.transpose() * g_xc;

        // Pose tangent: translation sees g_xc directly; rotation sees both the
        // camera-point path and W's appearance inside the EWA transform.
        let g_t = g_xc;
        let mut g_w = p_cam.cross(&g_xc);
        let k3 = j.transpose() * acc.cov * j;
        let bvk = v_cam * k3;
        g_w += 2.0
            * Vector3::new(
                bvk[(1, 2)] - bvk[(2, 1)],
                bvk[(2, 0)] - bvk[(0, 2)],
                bvk[(0, 1)] - bvk[(1, 0)],
            );
        grads.d_pose[0] += g_w.x;
        grads.d_pose[1] += g_w.y;
        grads.d_pose[2] += g_w.z;
        grads.d_pose[3] += g_t.x;
        grads.d_pose[4] += g_t.y;
        grads.d_pose[5] += g_t.z;
    }

    Ok(grads)
}
