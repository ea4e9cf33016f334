//! Forward splatting: project 3D Gaussians to 2D splats and alpha-composite
//! color, depth, and silhouette images front to back.

mod backward;

pub use backward::{render_backward, GradientSet, ImageGradients};

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{ColorImage, ScalarImage};
use crate::masking;
use crate::math::sym2_max_eigenvalue;
use crate::scene::{
    covariance_from_rs, frustum_cull, CameraIntrinsics, GaussianMap, GaussianPrimitive, PoseSE3,
};

/// Added to the projected 2D covariance before inversion so splats keep a
/// minimal footprint of roughly one pixel.
pub const COV2D_REG: f64 = 0.3;
/// Contributions below this opacity are dropped.
pub const F_MIN: f64 = 1.0 / 255.0;
/// Compositing stops once remaining transmittance falls below this.
pub const TRANSMITTANCE_STOP: f64 = 1e-4;
/// Splats contribute inside their 3σ ellipse only.
const CHI2_CUTOFF: f64 = 9.0;
/// Pixels per parallel work unit; fixed so reductions are order-stable.
const ROWS_PER_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskMode {
    Off,
    /// Multiply opacity and scale by the mask binarized at `epsilon` before
    /// projection.
    Binary { epsilon: f64 },
}

#[derive(Debug, Clone)]
pub struct Splat2D {
    pub source_index: usize,
    pub mean2d: Vector2<f64>,
    /// Projected covariance (Σ′ upper-left 2×2), before regularization.
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d + COV2D_REG·I`.
    pub inv_cov: Matrix2<f64>,
    pub depth: f64,
    pub color: Vector3<f64>,
    /// Effective opacity (mask already applied under `MaskMode::Binary`).
    pub opacity: f64,
}

/// One composited sample: which splat (slot into the sorted splat list), its
/// f value, and the transmittance before it was blended.
#[derive(Debug, Clone, Copy)]
pub struct Contribution {
    pub slot: u32,
    pub f: f64,
    pub t_before: f64,
}

/// Everything needed to replay compositing in reverse. `pose`, `map_len`, and
/// `intrinsics` fingerprint the inputs so a stale cache is rejected.
#[derive(Debug, Clone)]
pub struct CompositingCache {
    pub mask_mode: MaskMode,
    pub map_len: usize,
    pub pose: PoseSE3,
    pub intrinsics: CameraIntrinsics,
    pub splats: Vec<Splat2D>,
    /// Linear pixel indices actually rendered, in render order.
    pub pixels: Vec<u32>,
    /// CSR offsets into `contribs`, one span per entry of `pixels`.
    pub offsets: Vec<u32>,
    pub contribs: Vec<Contribution>,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: ColorImage,
    pub depth: ScalarImage,
    pub silhouette: ScalarImage,
    pub cache: CompositingCache,
}

/// Largest projected standard deviation in pixels (regularized footprint),
/// or None when the center does not project (z ≤ 0).
pub fn projected_sigma_max(
    prim: &GaussianPrimitive,
    pose: &PoseSE3,
    intrinsics: &CameraIntrinsics,
) -> Option<f64> {
    let p_cam = pose.transform(&prim.position);
    if p_cam.z <= 0.0 {
        return None;
    }
    let cov = project_cov2d(prim, &prim.scale(), pose, intrinsics, &p_cam);
    Some(sym2_max_eigenvalue(&(cov + Matrix2::identity() * COV2D_REG)).sqrt())
}

fn perspective_jacobian(intr: &CameraIntrinsics, p_cam: &Vector3<f64>) -> Matrix2x3<f64> {
    let z = p_cam.z;
    Matrix2x3::new(
        intr.fx / z,
        0.0,
        -intr.fx * p_cam.x / (z * z),
        0.0,
        intr.fy / z,
        -intr.fy * p_cam.y / (z * z),
    )
}

fn project_cov2d(
    prim: &GaussianPrimitive,
    scale: &Vector3<f64>,
    pose: &PoseSE3,
    intr: &CameraIntrinsics,
    p_cam: &Vector3<f64>,
) -> Matrix2<f64> {
    let j = perspective_jacobian(intr, p_cam);
    let w: Matrix3<f64> = *pose.rotation.to_rotation_matrix().matrix();
    let sigma = covariance_from_rs(&prim.rotation_unit(), scale).expect("finite attributes");
    let m = j * w;
    m * sigma * m.transpose()
}

fn invert_reg(cov: &Matrix2<f64>) -> Matrix2<f64> {
    let r = cov + Matrix2::identity() * COV2D_REG;
    let det = r[(0, 0)] * r[(1, 1)] - r[(0, 1)] * r[(1, 0)];
    Matrix2::new(r[(1, 1)], -r[(0, 1)], -r[(1, 0)], r[(0, 0)]) / det
}

fn splat_internal(
    prim: &GaussianPrimitive,
    source_index: usize,
    scale: Vector3<f64>,
    opacity: f64,
    pose: &PoseSE3,
    intr: &CameraIntrinsics,
) -> Option<Splat2D> {
    let p_cam = pose.transform(&prim.position);
    if p_cam.z <= intr.near {
        return None;
    }
    let (u, v) = intr.project(&p_cam);
    let cov2d = project_cov2d(prim, &scale, pose, intr, &p_cam);
    Some(Splat2D {
        source_index,
        mean2d: Vector2::new(u, v),
        inv_cov: invert_reg(&cov2d),
        cov2d,
        depth: p_cam.z,
        color: prim.color_clamped(),
        opacity,
    })
}

/// Project a single Gaussian with its unmasked activated attributes.
pub fn project_gaussian(
    prim: &GaussianPrimitive,
    pose: &PoseSE3,
    intrinsics: &CameraIntrinsics,
) -> Result<Splat2D> {
    if !prim.is_finite() {
        return Err(Error::InvalidParameter("non-finite primitive".into()));
    }
    let z = pose.transform(&prim.position).z;
    splat_internal(prim, 0, prim.scale(), prim.opacity(), pose, intrinsics)
        .ok_or(Error::ProjectionDomain { z })
}

/// Pixel-center bounding box of the splat's footprint, clipped to the image.
fn splat_bbox(splat: &Splat2D, width: u32, height: u32) -> Option<(u32, u32, u32, u32)> {
    let reg = splat.cov2d + Matrix2::identity() * COV2D_REG;
    let half_x = 3.0 * reg[(0, 0)].max(0.0).sqrt();
    let half_y = 3.0 * reg[(1, 1)].max(0.0).sqrt();
    let x0 = (splat.mean2d.x - half_x - 0.5).ceil().max(0.0);
    let x1 = (splat.mean2d.x + half_x - 0.5).floor().min(width as f64 - 1.0);
    let y0 = (splat.mean2d.y - half_y - 0.5).ceil().max(0.0);
    let y1 = (splat.mean2d.y + half_y - 0.5).floor().min(height as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    Some((x0 as u32, x1 as u32, y0 as u32, y1 as u32))
}

/// Build the depth-sorted splat list for the visible (and unmasked) subset.
fn build_splats(
    map: &GaussianMap,
    pose: &PoseSE3,
    intr: &CameraIntrinsics,
    mask_mode: MaskMode,
) -> Vec<Splat2D> {
    let culled = frustum_cull(map, pose, intr);
    let mut splats: Vec<Splat2D> = Vec::with_capacity(culled.len());
    for i in culled {
        let prim = &map.primitives[i];
        let (scale, opacity) = match mask_mode {
            MaskMode::Off => (prim.scale(), prim.opacity()),
            MaskMode::Binary { epsilon } => {
                let m = masking::binarize_value(prim.mask_raw, epsilon);
                if m == 0.0 {
                    continue;
                }
                (prim.scale() * m, prim.opacity() * m)
            }
        };
        if opacity < F_MIN {
            continue;
        }
        if let Some(s) = splat_internal(prim, i, scale, opacity, pose, intr) {
            splats.push(s);
        }
    }
    // Strict front-to-back order; index ties keep insertion order so renders
    // are reproducible for identical inputs.
    splats.sort_by(|a, b| {
        a.depth
            .partial_cmp(&b.depth)
            .unwrap()
            .then(a.source_index.cmp(&b.source_index))
    });
    splats
}

struct PixelResult {
    color: Vector3<f64>,
    depth: f64,
    silhouette: f64,
    contribs: Vec<Contribution>,
}

fn composite_pixel(px: f64, py: f64, candidates: &[u32], splats: &[Splat2D]) -> PixelResult {
    let mut out = PixelResult {
        color: Vector3::zeros(),
        depth: 0.0,
        silhouette: 0.0,
        contribs: Vec::new(),
    };
    let mut t = 1.0_f64;
    for &slot in candidates {
        let s = &splats[slot as usize];
        let d = Vector2::new(px - s.mean2d.x, py - s.mean2d.y);
        let q = d.dot(&(s.inv_cov * d));
        if q > CHI2_CUTOFF {
            continue;
        }
        let f = s.opacity * (-0.5 * q).exp();
        if f < F_MIN {
            continue;
        }
        let w = f * t;
        out.color += s.color * w;
        out.depth += s.depth * w;
        out.silhouette += w;
        out.contribs.push(Contribution {
            slot,
            f,
            t_before: t,
        });
        t *= 1.0 - f;
        if t < TRANSMITTANCE_STOP {
            break;
        }
    }
    out
}

/// Per-pixel candidate slots in front-to-back order, CSR over `pixels`.
fn candidate_lists(
    splats: &[Splat2D],
    pixels: &[u32],
    width: u32,
    height: u32,
) -> (Vec<u32>, Vec<u32>) {
    // pixel linear index -> position in `pixels`, or u32::MAX
    let mut pixel_pos = vec![u32::MAX; (width * height) as usize];
    for (pos, &p) in pixels.iter().enumerate() {
        pixel_pos[p as usize] = pos as u32;
    }
    let mut counts = vec![0u32; pixels.len()];
    for s in splats {
        if let Some((x0, x1, y0, y1)) = splat_bbox(s, width, height) {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let pos = pixel_pos[(y * width + x) as usize];
                    if pos != u32::MAX {
                        counts[pos as usize] += 1;
                    }
                }
            }
        }
    }
    let mut offsets = vec![0u32; pixels.len() + 1];
    for i in 0..pixels.len() {
        offsets[i + 1] = offsets[i] + counts[i];
    }
    let mut lists = vec![0u32; offsets[pixels.len()] as usize];
    let mut cursor = offsets.clone();
    for (slot, s) in splats.iter().enumerate() {
        if let Some((x0, x1, y0, y1)) = splat_bbox(s, width, height) {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let pos = pixel_pos[(y * width + x) as usize];
                    if pos != u32::MAX {
                        let c = &mut cursor[pos as usize];
                        lists[*c as usize] = slot as u32;
                        *c += 1;
                    }
                }
            }
        }
    }
    (offsets, lists)
}

/// Render only the listed pixels (unique indices, any order); other pixels
/// stay black and outside `cache.pixels`.
pub fn render_pixel_set(
    map: &GaussianMap,
    pose: &PoseSE3,
    intrinsics: &CameraIntrinsics,
    mask_mode: MaskMode,
    pixels: Vec<u32>,
) -> RenderOutput {
    let (w, h) = (intrinsics.width, intrinsics.height);
    let splats = build_splats(map, pose, intrinsics, mask_mode);
    let (cand_offsets, cand_lists) = candidate_lists(&splats, &pixels, w, h);

    let chunk = ROWS_PER_CHUNK * w as usize;
    let results: Vec<Vec<PixelResult>> = pixels
        .par_chunks(chunk.max(1))
        .enumerate()
        .map(|(ci, chunk_pixels)| {
            let base = ci * chunk.max(1);
            chunk_pixels
                .iter()
                .enumerate()
                .map(|(k, &p)| {
                    let pos = base + k;
                    let px = (p % w) as f64 + 0.5;
                    let py = (p / w) as f64 + 0.5;
                    let span =
                        &cand_lists[cand_offsets[pos] as usize..cand_offsets[pos + 1] as usize];
                    composite_pixel(px, py, span, &splats)
                })
                .collect()
        })
        .collect();

    let mut color = ColorImage::black(w, h);
    let mut depth = ScalarImage::zeros(w, h);
    let mut silhouette = ScalarImage::zeros(w, h);
    let mut offsets = Vec::with_capacity(pixels.len() + 1);
    offsets.push(0u32);
    let mut contribs = Vec::new();
    for (pos, r) in results.into_iter().flatten().enumerate() {
        let p = pixels[pos] as usize;
        color.data[p] = r.color;
        depth.data[p] = r.depth;
        silhouette.data[p] = r.silhouette;
        contribs.extend_from_slice(&r.contribs);
        offsets.push(contribs.len() as u32);
    }

    RenderOutput {
        color,
        depth,
        silhouette,
        cache: CompositingCache {
            mask_mode,
            map_len: map.len(),
            pose: *pose,
            intrinsics: *intrinsics,
            splats,
            pixels,
            offsets,
            contribs,
        },
    }
}

/// Render the full frame.
pub fn render(
    map: &GaussianMap,
    pose: &PoseSE3,
    intrinsics: &CameraIntrinsics,
    mask_mode: MaskMode,
) -> RenderOutput {
    let n = (intrinsics.width * intrinsics.height) as u32;
    render_pixel_set(map, pose, intrinsics, mask_mode, (0..n).collect())
}

/// Render only the listed pixels (linear indices, deduplicated by the caller).
/// Unlisted pixels stay at background values in the output images.
pub fn render_pixels(
    map: &GaussianMap,
    pose: &PoseSE3,
    intrinsics: &CameraIntrinsics,
    mask_mode: MaskMode,
    pixels: &[u32],
) -> RenderOutput {
    render_pixel_set(map, pose, intrinsics, mask_mode, pixels.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector4;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn intr64() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 32.0, 32.0, 64, 64)
    }

    fn prim_at(pos: Vector3<f64>, sigma: f64, opacity_raw: f64, color: Vector3<f64>) -> GaussianPrimitive {
        GaussianPrimitive {
            position: pos,
            rotation_raw: Vector4::new(1.0, 0.0, 0.0, 0.0),
            scale_raw: Vector3::from_element(sigma.ln()),
            opacity_raw,
            color,
            mask_raw: 1.0,
        }
    }

    #[test]
    fn project_on_axis_center() {
        let intr = intr64();
        let p = prim_at(Vector3::new(0.0, 0.0, 5.0), 0.05, 0.0, Vector3::zeros());
        let s = project_gaussian(&p, &PoseSE3::identity(), &intr).unwrap();
        assert_relative_eq!(s.mean2d.x, 32.0, epsilon = 1e-12);
        assert_relative_eq!(s.mean2d.y, 32.0, epsilon = 1e-12);
        assert_relative_eq!(s.depth, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn project_isotropic_matches_numerical_jacobian() {
        // σ = 0.1 m at z = 10 m with fx = fy = 100 projects to ~1 px std.
        // Oracle: numerical Jacobian of the projection, applied to Σ.
        let intr = CameraIntrinsics::new(100.0, 100.0, 32.0, 32.0, 64, 64);
        let pose = PoseSE3::identity();
        let p = prim_at(Vector3::new(0.0, 0.0, 10.0), 0.1, 0.0, Vector3::zeros());
        let s = project_gaussian(&p, &pose, &intr).unwrap();

        let h = 1e-6;
        let center = Vector3::new(0.0, 0.0, 10.0);
        let mut jac = Matrix2x3::zeros();
        for k in 0..3 {
            let mut cp = center;
            let mut cm = center;
            cp[k] += h;
            cm[k] -= h;
            let (up, vp) = intr.project(&cp);
            let (um, vm) = intr.project(&cm);
            jac[(0, k)] = (up - um) / (2.0 * h);
            jac[(1, k)] = (vp - vm) / (2.0 * h);
        }
        let sigma = Matrix3::identity() * 0.01;
        let oracle = jac * sigma * jac.transpose();
        assert_relative_eq!(s.cov2d, oracle, epsilon = 1e-3);
        assert_relative_eq!(s.cov2d[(0, 0)], 1.0, epsilon = 1e-3);
        assert_relative_eq!(s.cov2d[(1, 1)], 1.0, epsilon = 1e-3);
    }

    #[test]
    fn project_cov_quarters_when_depth_doubles() {
        let intr = intr64();
        let pose = PoseSE3::identity();
        let near = prim_at(Vector3::new(0.0, 0.0, 5.0), 0.1, 0.0, Vector3::zeros());
        let far = prim_at(Vector3::new(0.0, 0.0, 10.0), 0.1, 0.0, Vector3::zeros());
        let sn = project_gaussian(&near, &pose, &intr).unwrap();
        let sf = project_gaussian(&far, &pose, &intr).unwrap();
        assert_relative_eq!(sn.cov2d[(0, 0)], 4.0 * sf.cov2d[(0, 0)], epsilon = 1e-9);
        assert_relative_eq!(sn.cov2d[(1, 1)], 4.0 * sf.cov2d[(1, 1)], epsilon = 1e-9);
    }

    #[test]
    fn project_behind_near_plane_errors() {
        let intr = intr64();
        let p = prim_at(Vector3::new(0.0, 0.0, -1.0), 0.1, 0.0, Vector3::zeros());
        assert!(matches!(
            project_gaussian(&p, &PoseSE3::identity(), &intr),
            Err(Error::ProjectionDomain { .. })
        ));
    }

    #[test]
    fn render_empty_map_is_background() {
        let intr = intr64();
        let out = render(&GaussianMap::new(), &PoseSE3::identity(), &intr, MaskMode::Off);
        assert!(out.silhouette.data.iter().all(|&s| s == 0.0));
        assert!(out.depth.data.iter().all(|&d| d == 0.0));
        assert!(out.color.data.iter().all(|c| c.norm() == 0.0));
    }

    /// Gaussian placed so its projection lands exactly on the center of
    /// pixel (32, 32), i.e. continuous coordinates (32.5, 32.5).
    fn centered_prim(z: f64, sigma: f64, opacity_raw: f64, color: Vector3<f64>) -> GaussianPrimitive {
        let intr = intr64();
        let x = (32.5 - intr.cx) / intr.fx * z;
        let y = (32.5 - intr.cy) / intr.fy * z;
        prim_at(Vector3::new(x, y, z), sigma, opacity_raw, color)
    }

    #[test]
    fn render_single_opaque_gaussian_at_center_pixel() {
        let intr = intr64();
        let mut map = GaussianMap::new();
        // opacity_raw = 40 saturates the sigmoid to exactly 1.0 in f64.
        map.primitives
            .push(centered_prim(2.0, 0.05, 40.0, Vector3::new(0.2, 0.4, 0.8)));
        let out = render(&map, &PoseSE3::identity(), &intr, MaskMode::Off);
        let px = out.color.get(32, 32);
        assert_relative_eq!(*px, Vector3::new(0.2, 0.4, 0.8), epsilon = 1e-12);
        assert_relative_eq!(*out.silhouette.get(32, 32), 1.0, epsilon = 1e-12);
        assert_relative_eq!(*out.depth.get(32, 32), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn render_two_gaussian_compositing_closed_form() {
        let intr = intr64();
        let mut map = GaussianMap::new();
        // Back first in the vector: order must not matter (depth sort).
        map.primitives
            .push(centered_prim(2.0, 0.05, 40.0, Vector3::new(0.0, 1.0, 0.0)));
        let mut front = centered_prim(1.0, 0.05, 0.0, Vector3::new(1.0, 0.0, 0.0));
        front.opacity_raw = crate::math::logit(0.5);
        map.primitives.push(front);
        let out = render(&map, &PoseSE3::identity(), &intr, MaskMode::Off);
        assert_relative_eq!(
            *out.color.get(32, 32),
            Vector3::new(0.5, 0.5, 0.0),
            epsilon = 1e-9
        );
        assert_relative_eq!(*out.depth.get(32, 32), 1.5, epsilon = 1e-9);
        assert_relative_eq!(*out.silhouette.get(32, 32), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn silhouette_bounded_and_consistent_with_cache() {
        let mut rng = StdRng::seed_from_u64(3);
        let intr = CameraIntrinsics::new(60.0, 60.0, 16.0, 16.0, 32, 32);
        for _ in 0..20 {
            let mut map = GaussianMap::new();
            for _ in 0..30 {
                map.primitives.push(prim_at(
                    Vector3::new(
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(0.5..4.0),
                    ),
                    rng.gen_range(0.005..0.2),
                    rng.gen_range(-3.0..5.0),
                    Vector3::new(rng.gen(), rng.gen(), rng.gen()),
                ));
            }
            let out = render(&map, &PoseSE3::identity(), &intr, MaskMode::Off);
            for &s in &out.silhouette.data {
                assert!((0.0..=1.0 + 1e-12).contains(&s), "silhouette {s} out of range");
            }
            // Replaying the cache must reproduce the silhouette exactly.
            for (pos, &p) in out.cache.pixels.iter().enumerate() {
                let span = &out.cache.contribs
                    [out.cache.offsets[pos] as usize..out.cache.offsets[pos + 1] as usize];
                let sil: f64 = span.iter().map(|c| c.f * c.t_before).sum();
                assert_eq!(sil, out.silhouette.data[p as usize]);
                if out.silhouette.data[p as usize] == 0.0 {
                    assert_eq!(out.depth.data[p as usize], 0.0);
                }
            }
        }
    }

    #[test]
    fn transparent_primitive_changes_nothing() {
        let intr = intr64();
        let mut map = GaussianMap::new();
        map.primitives
            .push(centered_prim(2.0, 0.08, 1.0, Vector3::new(0.9, 0.1, 0.3)));
        let base = render(&map, &PoseSE3::identity(), &intr, MaskMode::Off);
        // sigmoid(-30) ≈ 9e-14 < 1/255, so the cutoff removes it entirely.
        map.primitives
            .push(centered_prim(1.0, 0.08, -30.0, Vector3::new(1.0, 1.0, 1.0)));
        let with = render(&map, &PoseSE3::identity(), &intr, MaskMode::Off);
        assert_eq!(base.color.data, with.color.data);
        assert_eq!(base.depth.data, with.depth.data);
        assert_eq!(base.silhouette.data, with.silhouette.data);
    }

    #[test]
    fn equal_depth_identical_attribute_permutation_invariant() {
        let intr = intr64();
        let a = centered_prim(2.0, 0.06, 1.0, Vector3::new(0.3, 0.6, 0.9));
        let mut map1 = GaussianMap::new();
        map1.primitives.push(a.clone());
        map1.primitives.push(a.clone());
        let mut map2 = GaussianMap::new();
        map2.primitives.push(a.clone());
        map2.primitives.push(a);
        map2.primitives.swap(0, 1);
        let o1 = render(&map1, &PoseSE3::identity(), &intr, MaskMode::Off);
        let o2 = render(&map2, &PoseSE3::identity(), &intr, MaskMode::Off);
        assert_eq!(o1.color.data, o2.color.data);
    }

    #[test]
    fn masked_all_ones_matches_mask_off_bitwise() {
        let mut rng = StdRng::seed_from_u64(5);
        let intr = CameraIntrinsics::new(60.0, 60.0, 16.0, 16.0, 32, 32);
        let mut map = GaussianMap::new();
        for _ in 0..25 {
            map.primitives.push(prim_at(
                Vector3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(0.5..4.0),
                ),
                rng.gen_range(0.01..0.15),
                rng.gen_range(-2.0..4.0),
                Vector3::new(rng.gen(), rng.gen(), rng.gen()),
            ));
            // mask_raw = 1.0 => sigmoid ≈ 0.73 > ε, mask = 1
        }
        let off = render(&map, &PoseSE3::identity(), &intr, MaskMode::Off);
        let on = render(
            &map,
            &PoseSE3::identity(),
            &intr,
            MaskMode::Binary { epsilon: 0.01 },
        );
        assert_eq!(off.color.data, on.color.data);
        assert_eq!(off.depth.data, on.depth.data);
        assert_eq!(off.silhouette.data, on.silhouette.data);
    }

    #[test]
    fn render_pixel_subset_matches_full_frame() {
        let intr = intr64();
        let mut map = GaussianMap::new();
        map.primitives
            .push(centered_prim(2.0, 0.1, 1.5, Vector3::new(0.9, 0.2, 0.4)));
        map.primitives
            .push(centered_prim(3.0, 0.2, 0.5, Vector3::new(0.1, 0.8, 0.5)));
        let full = render(&map, &PoseSE3::identity(), &intr, MaskMode::Off);
        let pixels: Vec<u32> = vec![0, 100, 32 * 64 + 32, 40 * 64 + 20, 4095];
        let sub = render_pixels(&map, &PoseSE3::identity(), &intr, MaskMode::Off, &pixels);
        for &p in &pixels {
            assert_eq!(sub.color.data[p as usize], full.color.data[p as usize]);
            assert_eq!(sub.depth.data[p as usize], full.depth.data[p as usize]);
            assert_eq!(
                sub.silhouette.data[p as usize],
                full.silhouette.data[p as usize]
            );
        }
    }
}
