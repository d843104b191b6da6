//! Reconstruction loss: weighted L1 plus a multi-scale blur-pyramid proxy for
//! a perceptual distance, both with analytic image gradients.

use crate::error::{Error, Result};
use crate::image::Image;

pub const DEFAULT_LAMBDA_L1: f64 = 10.0;
pub const DEFAULT_LAMBDA_PERC: f64 = 15.0;
pub const PYRAMID_SIGMAS: [f64; 3] = [1.0, 2.0, 4.0];

fn kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// 1-D pass along x (`horizontal`) or y with clamp-to-edge sampling. The
/// adjoint scatters instead of gathering.
fn pass(img: &Image, k: &[f64], horizontal: bool, adjoint: bool) -> Image {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let r = (k.len() / 2) as i64;
    let mut out = Image::new(w, h, c);
    let n = if horizontal { w } else { h } as i64;
    for y in 0..h {
        for x in 0..w {
            let i = if horizontal { x } else { y } as i64;
            for (t, wk) in k.iter().enumerate() {
                let j = (i + t as i64 - r).clamp(0, n - 1) as usize;
                let (sx, sy) = if horizontal { (j, y) } else { (x, j) };
                for ch in 0..c {
                    if adjoint {
                        let v = out.get(sx, sy, ch) + wk * img.get(x, y, ch);
                        out.set(sx, sy, ch, v);
                    } else {
                        let v = out.get(x, y, ch) + wk * img.get(sx, sy, ch);
                        out.set(x, y, ch, v);
                    }
                }
            }
        }
    }
    out
}

/// Separable Gaussian blur with clamped edges.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let k = kernel(sigma);
    pass(&pass(img, &k, true, false), &k, false, false)
}

fn gaussian_blur_adjoint(img: &Image, sigma: f64) -> Image {
    let k = kernel(sigma);
    pass(&pass(img, &k, false, true), &k, true, true)
}

/// Mean over [`PYRAMID_SIGMAS`] of the mean squared difference of the blurred
/// images, with its gradient with respect to `x`.
pub fn perceptual_proxy(x: &Image, y: &Image) -> Result<(f64, Image)> {
    x.check_same_shape(y, "perceptual proxy")?;
    let diff = x.zip_map(y, |a, b| a - b)?;
    let levels = PYRAMID_SIGMAS.len() as f64;
    let n = x.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Image::new(x.width(), x.height(), x.channels());
    for sigma in PYRAMID_SIGMAS {
        // Blur is linear, so blur(x) − blur(y) = blur(x − y).
        let d = gaussian_blur(&diff, sigma);
        loss += d.data().iter().map(|v| v * v).sum::<f64>() / n / levels;
        let g = gaussian_blur_adjoint(&d, sigma);
        grad = grad.zip_map(&g, |a, b| a + 2.0 * b / n / levels)?;
    }
    Ok((loss, grad))
}

/// `λ_L1·mean|x − y| + λ_perc·proxy(x, y)` and its gradient with respect to
/// `x`. The L1 subgradient is 0 at exact ties.
pub fn recon_loss(rendered: &Image, target: &Image, lambda_l1: f64, lambda_perc: f64) -> Result<(f64, Image)> {
    rendered.check_same_shape(target, "reconstruction loss")?;
    if !(lambda_l1 >= 0.0 && lambda_perc >= 0.0) {
        return Err(Error::Param(format!("loss weights {lambda_l1}, {lambda_perc}")));
    }
    let n = rendered.len().max(1) as f64;
    let l1 = rendered.zip_map(target, |a, b| (a - b).abs())?.data().iter().sum::<f64>() / n;
    let mut grad = rendered.zip_map(target, |a, b| {
        let d = a - b;
        if d > 0.0 {
            lambda_l1 / n
        } else if d < 0.0 {
            -lambda_l1 / n
        } else {
            0.0
        }
    })?;
    let mut loss = lambda_l1 * l1;
    if lambda_perc > 0.0 {
        let (p, g) = perceptual_proxy(rendered, target)?;
        loss += lambda_perc * p;
        grad = grad.zip_map(&g, |a, b| a + lambda_perc * b)?;
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_images_have_zero_loss() {
        let x = Image::from_vec(4, 3, 3, (0..36).map(|k| k as f64 / 36.0).collect()).unwrap();
        let (l, g) = recon_loss(&x, &x, 10.0, 15.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_offset_l1() {
        let (l, _) = recon_loss(&Image::filled(5, 5, 3, 0.6), &Image::filled(5, 5, 3, 0.5), 10.0, 0.0).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blur_keeps_constants_and_mass() {
        let c = Image::filled(9, 7, 3, 0.25);
        assert!(gaussian_blur(&c, 2.0).max_abs_diff(&c) < 1e-12);
        let k = kernel(4.0);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let r = recon_loss(&Image::new(2, 2, 3), &Image::new(3, 2, 3), 1.0, 1.0);
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
