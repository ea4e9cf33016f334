//! Rendering and trajectory quality metrics: PSNR on color images and
//! gauge-free absolute trajectory error after closed-form rigid alignment.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::image::ColorImage;
use crate::scene::PoseSE3;

/// PSNR report ceiling in dB; reached by identical images.
pub const PSNR_CAP: f64 = 100.0;

/// Peak signal-to-noise ratio in dB over all pixels and channels, for
/// values in [0, 1]. Identical images report the cap.
pub fn metric_psnr(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch {
            a_w: a.width,
            a_h: a.height,
            b_w: b.width,
            b_h: b.height,
        });
    }
    let mut sq = 0.0;
    for (pa, pb) in a.data.iter().zip(&b.data) {
        sq += (pa - pb).norm_squared();
    }
    let mse = sq / (3.0 * a.data.len() as f64);
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Rigid alignment (rotation + translation, unit scale) of the `from`
/// translations onto the `onto` translations, minimizing the summed squared
/// residuals. Degenerate configurations still return a valid minimizer.
fn align_rigid(from: &[Vector3<f64>], onto: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = from.len() as f64;
    let mu_f: Vector3<f64> = from.iter().sum::<Vector3<f64>>() / n;
    let mu_o: Vector3<f64> = onto.iter().sum::<Vector3<f64>>() / n;
    let mut cross = Matrix3::zeros();
    for (f, o) in from.iter().zip(onto) {
        cross += (o - mu_o) * (f - mu_f).transpose();
    }
    let svd = cross.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let mut d = Matrix3::identity();
    d[(2, 2)] = (u.determinant() * v_t.determinant()).signum();
    let rotation = u * d * v_t;
    let translation = mu_o - rotation * mu_f;
    (rotation, translation)
}

/// Absolute trajectory error RMSE in centimeters: rigidly aligns the
/// estimated pose translations onto the ground-truth ones (unit scale),
/// then reports the root mean squared residual norm.
pub fn metric_ate_rmse(estimated: &[PoseSE3], ground_truth: &[PoseSE3]) -> Result<f64> {
    if estimated.len() != ground_truth.len() {
        return Err(Error::InvalidInput(format!(
            "trajectory lengths differ ({} vs {})",
            estimated.len(),
            ground_truth.len()
        )));
    }
    if estimated.len() < 2 {
        return Err(Error::InvalidInput(
            "trajectory alignment needs at least 2 poses".into(),
        ));
    }
    let est: Vec<Vector3<f64>> = estimated.iter().map(|p| p.translation).collect();
    let gt: Vec<Vector3<f64>> = ground_truth.iter().map(|p| p.translation).collect();
    let (rotation, translation) = align_rigid(&est, &gt);
    let mut sq = 0.0;
    for (e, g) in est.iter().zip(&gt) {
        sq += (rotation * e + translation - g).norm_squared();
    }
    Ok((sq / est.len() as f64).sqrt() * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn uniform_image(w: u32, h: u32, value: f64) -> ColorImage {
        let mut img = ColorImage::black(w, h);
        for p in img.data.iter_mut() {
            *p = Vector3::new(value, value, value);
        }
        img
    }

    #[test]
    fn psnr_of_identical_images_is_the_cap() {
        let img = uniform_image(8, 6, 0.37);
        assert_eq!(metric_psnr(&img, &img).unwrap(), 100.0);
    }

    #[test]
    fn psnr_of_uniform_differences_matches_arithmetic() {
        let a = uniform_image(8, 6, 0.5);
        let b = uniform_image(8, 6, 0.6);
        assert_relative_eq!(metric_psnr(&a, &b).unwrap(), 20.0, epsilon = 1e-9);
        let c = uniform_image(8, 6, 0.0);
        let d = uniform_image(8, 6, 0.5);
        assert_relative_eq!(
            metric_psnr(&c, &d).unwrap(),
            10.0 * 4.0f64.log10(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn psnr_rejects_mismatched_dimensions() {
        let a = uniform_image(8, 6, 0.5);
        let b = uniform_image(6, 8, 0.5);
        assert!(matches!(
            metric_psnr(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn random_pose(rng: &mut StdRng) -> PoseSE3 {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let rotation = UnitQuaternion::from_scaled_axis(axis);
        PoseSE3 {
            rotation,
            translation: Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ),
        }
    }

    #[test]
    fn ate_of_identical_trajectories_is_zero() {
        let mut rng = StdRng::seed_from_u64(3);
        let traj: Vec<PoseSE3> = (0..12).map(|_| random_pose(&mut rng)).collect();
        assert!(metric_ate_rmse(&traj, &traj).unwrap() < 1e-9);
    }

    #[test]
    fn ate_is_invariant_to_a_rigid_gauge_transform() {
        let mut rng = StdRng::seed_from_u64(4);
        let truth: Vec<PoseSE3> = (0..15).map(|_| random_pose(&mut rng)).collect();
        let gauge_r = UnitQuaternion::from_scaled_axis(Vector3::new(0.4, -0.9, 0.3));
        let gauge_t = Vector3::new(1.5, -2.0, 0.75);
        let moved: Vec<PoseSE3> = truth
            .iter()
            .map(|p| PoseSE3 {
                rotation: p.rotation,
                translation: gauge_r * p.translation + gauge_t,
            })
            .collect();
        assert!(metric_ate_rmse(&moved, &truth).unwrap() < 1e-9);
    }

    // Line trajectory with one pose nudged 1 cm sideways. The optimal
    // alignment is planar, so the minimum over rotations reduces to one
    // angle: with centered coordinates, cost = Sxx + Syy - 2*hypot(C, S)
    // where C and S are the planar cross-covariance sums. The production
    // path must reproduce that independent arithmetic.
    #[test]
    fn ate_matches_the_planar_closed_form_on_a_line_instance() {
        let n = 10usize;
        let offset_index = 4usize;
        let offset = 0.01;
        let mut est = Vec::new();
        let mut gt = Vec::new();
        for i in 0..n {
            let x = i as f64;
            gt.push(PoseSE3 {
                rotation: UnitQuaternion::identity(),
                translation: Vector3::new(x, 0.0, 0.0),
            });
            let y = if i == offset_index { offset } else { 0.0 };
            est.push(PoseSE3 {
                rotation: UnitQuaternion::identity(),
                translation: Vector3::new(x, y, 0.0),
            });
        }
        let mean_x = (n as f64 - 1.0) / 2.0;
        let mean_y = offset / n as f64;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        let mut c = 0.0;
        let mut s = 0.0;
        for i in 0..n {
            let xi = i as f64 - mean_x;
            let yi = if i == offset_index { offset } else { 0.0 } - mean_y;
            sxx += xi * xi + yi * yi;
            syy += xi * xi;
            c += xi * xi;
            s -= yi * xi;
        }
        let expected = ((sxx + syy - 2.0 * c.hypot(s)) / n as f64).sqrt() * 100.0;
        let got = metric_ate_rmse(&est, &gt).unwrap();
        assert_relative_eq!(got, expected, epsilon = 1e-9);
        // Sanity on the magnitude: alignment helps but cannot erase the bump.
        assert!(got > 0.25 && got < 0.3163, "got {got}");
    }

    // Local optimality certificate: no small rigid perturbation of the
    // returned alignment lowers the summed squared residuals.
    #[test]
    fn alignment_is_locally_optimal_on_random_trajectories() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..5 {
            let truth: Vec<PoseSE3> = (0..9).map(|_| random_pose(&mut rng)).collect();
            let est: Vec<PoseSE3> = truth
                .iter()
                .map(|p| PoseSE3 {
                    rotation: p.rotation,
                    translation: p.translation
                        + Vector3::new(
                            rng.gen_range(-0.05..0.05),
                            rng.gen_range(-0.05..0.05),
                            rng.gen_range(-0.05..0.05),
                        ),
                })
                .collect();
            let e: Vec<Vector3<f64>> = est.iter().map(|p| p.translation).collect();
            let g: Vec<Vector3<f64>> = truth.iter().map(|p| p.translation).collect();
            let (r0, t0) = align_rigid(&e, &g);
            let cost = |r: &Matrix3<f64>, t: &Vector3<f64>| -> f64 {
                e.iter()
                    .zip(&g)
                    .map(|(ei, gi)| (r * ei + t - gi).norm_squared())
                    .sum()
            };
            let base = cost(&r0, &t0);
            for _ in 0..60 {
                let d_axis = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ) * 1e-4;
                let d_t = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ) * 1e-4;
                let r = UnitQuaternion::from_scaled_axis(d_axis).to_rotation_matrix();
                let perturbed = cost(&(r * r0), &(t0 + d_t));
                assert!(perturbed + 1e-12 >= base);
            }
        }
    }

    #[test]
    fn ate_rejects_bad_inputs() {
        let mut rng = StdRng::seed_from_u64(5);
        let a: Vec<PoseSE3> = (0..5).map(|_| random_pose(&mut rng)).collect();
        let b: Vec<PoseSE3> = (0..4).map(|_| random_pose(&mut rng)).collect();
        assert!(matches!(
            metric_ate_rmse(&a, &b),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            metric_ate_rmse(&a[..1], &b[..1]),
            Err(Error::InvalidInput(_))
        ));
    }
}
