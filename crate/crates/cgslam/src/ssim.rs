//! SSIM over color images with an analytic gradient for the rendered side.
//! 11×11 Gaussian window (σ = 1.5), C₁ = 1e-4 and C₂ = 9e-4 on unit dynamic
//! range, averaged over channels and valid (fully interior) window positions.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::image::ColorImage;

pub const WINDOW: usize = 11;
const RADIUS: i32 = (WINDOW as i32 - 1) / 2;
const SIGMA: f64 = 1.5;
const C1: f64 = 1e-4;
const C2: f64 = 9e-4;

fn kernel() -> [f64; WINDOW * WINDOW] {
    let mut g1 = [0.0f64; WINDOW];
    for (k, g) in g1.iter_mut().enumerate() {
        let d = k as f64 - RADIUS as f64;
        *g = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = g1.iter().sum();
    for g in g1.iter_mut() {
        *g /= s;
    }
    let mut k2 = [0.0f64; WINDOW * WINDOW];
    for y in 0..WINDOW {
        for x in 0..WINDOW {
            k2[y * WINDOW + x] = g1[y] * g1[x];
        }
    }
    k2
}

struct WindowStats {
    mu_x: f64,
    mu_y: f64,
    var_x: f64,
    var_y: f64,
    cov_xy: f64,
}

fn window_stats(
    kern: &[f64],
    xs: &[f64],
    ys: &[f64],
    width: usize,
    cx: usize,
    cy: usize,
) -> WindowStats {
    let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for dy in 0..WINDOW {
        for dx in 0..WINDOW {
            let w = kern[dy * WINDOW + dx];
            let p = (cy + dy - RADIUS as usize) * width + (cx + dx - RADIUS as usize);
            let (x, y) = (xs[p], ys[p]);
            mx += w * x;
            my += w * y;
            mxx += w * x * x;
            myy += w * y * y;
            mxy += w * x * y;
        }
    }
    WindowStats {
        mu_x: mx,
        mu_y: my,
        var_x: mxx - mx * mx,
        var_y: myy - my * my,
        cov_xy: mxy - mx * my,
    }
}

fn check_dims(a: &ColorImage, b: &ColorImage) -> Result<(usize, usize)> {
    if !a.same_dims(b) {
        return Err(Error::InvalidInput(format!(
            "ssim image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let (w, h) = (a.width as usize, a.height as usize);
    if w < WINDOW || h < WINDOW {
        return Err(Error::InvalidInput(format!(
            "ssim needs at least {WINDOW}x{WINDOW} pixels, got {w}x{h}"
        )));
    }
    Ok((w, h))
}

fn channel(img: &ColorImage, c: usize) -> Vec<f64> {
    img.data.iter().map(|v| v[c]).collect()
}

/// Mean SSIM of `a` against `b`.
pub fn ssim(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    let (w, h) = check_dims(a, b)?;
    let kern = kernel();
    let r = RADIUS as usize;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let xs = channel(a, c);
        let ys = channel(b, c);
        for cy in r..h - r {
            for cx in r..w - r {
                let s = window_stats(&kern, &xs, &ys, w, cx, cy);
                let a1 = 2.0 * s.mu_x * s.mu_y + C1;
                let a2 = 2.0 * s.cov_xy + C2;
                let b1 = s.mu_x * s.mu_x + s.mu_y * s.mu_y + C1;
                let b2 = s.var_x + s.var_y + C2;
                total += (a1 * a2) / (b1 * b2);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Mean SSIM and its gradient with respect to the first image.
pub fn ssim_with_grad(a: &ColorImage, b: &ColorImage) -> Result<(f64, Vec<Vector3<f64>>)> {
    let (w, h) = check_dims(a, b)?;
    let kern = kernel();
    let r = RADIUS as usize;
    let n_windows = (w - 2 * r) * (h - 2 * r);
    let scale = 1.0 / (3.0 * n_windows as f64);
    let mut total = 0.0;
    let mut grad = vec![Vector3::zeros(); w * h];
    for c in 0..3 {
        let xs = channel(a, c);
        let ys = channel(b, c);
        for cy in r..h - r {
            for cx in r..w - r {
                let s = window_stats(&kern, &xs, &ys, w, cx, cy);
                let a1 = 2.0 * s.mu_x * s.mu_y + C1;
                let a2 = 2.0 * s.cov_xy + C2;
                let b1 = s.mu_x * s.mu_x + s.mu_y * s.mu_y + C1;
                let b2 = s.var_x + s.var_y + C2;
                let v = (a1 * a2) / (b1 * b2);
                total += v;

                // dS/dx_p = w_p·(α + β·x_p + γ·y_p) per window, with the
                // window-constant fields below.
                let alpha = 2.0 * s.mu_y * a2 / (b1 * b2) - 2.0 * s.mu_x * v / b1
                    + 2.0 * s.mu_x * v / b2
                    - 2.0 * s.mu_y * a1 / (b1 * b2);
                let beta = -2.0 * v / b2;
                let gamma = 2.0 * a1 / (b1 * b2);
                for dy in 0..WINDOW {
                    for dx in 0..WINDOW {
                        let wgt = kern[dy * WINDOW + dx];
                        let p = (cy + dy - r) * w + (cx + dx - r);
                        grad[p][c] += wgt * (alpha + beta * xs[p] + gamma * ys[p]) * scale;
                    }
                }
            }
        }
    }
    Ok((total * scale, grad))
}
