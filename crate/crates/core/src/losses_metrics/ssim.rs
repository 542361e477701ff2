//! Windowed SSIM with an 11×11 Gaussian window (σ = 1.5).
//!
//! Near the border the window is truncated to the image and renormalized, so
//! local statistics are always proper weighted means.

use crate::error::{Error, Result};
use crate::image::{check_dims, Rgb, RgbImage};

const RADIUS: usize = 5;
const SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Smallest side length accepted: the window center plus its radius.
pub const SSIM_MIN_SIZE: usize = RADIUS + 1;

fn kernel() -> [f64; 2 * RADIUS + 1] {
    std::array::from_fn(|i| {
        let d = i as f64 - RADIUS as f64;
        (-d * d / (2.0 * SIGMA * SIGMA)).exp()
    })
}

/// Zero-padded separable correlation with the 1-D kernel along both axes.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = RADIUS as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    s += kv * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    s += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Per-pixel window mass after truncation.
fn window_mass(w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let axis = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|c| {
                k.iter()
                    .enumerate()
                    .filter(|(i, _)| {
                        let p = c as isize + *i as isize - RADIUS as isize;
                        p >= 0 && (p as usize) < n
                    })
                    .map(|(_, v)| v)
                    .sum()
            })
            .collect()
    };
    let (zx, zy) = (axis(w), axis(h));
    (0..w * h).map(|p| zx[p % w] * zy[p / w]).collect()
}

fn check(pred: &RgbImage, gt: &RgbImage) -> Result<()> {
    check_dims(pred, gt, "ssim")?;
    if pred.width.min(pred.height) < SSIM_MIN_SIZE {
        return Err(Error::ImageTooSmall { width: pred.width, height: pred.height, min: SSIM_MIN_SIZE });
    }
    Ok(())
}

fn channel(img: &RgbImage, c: usize) -> Vec<f64> {
    img.data.iter().map(|p| p[c]).collect()
}

struct Stats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    xx: Vec<f64>,
    yy: Vec<f64>,
    xy: Vec<f64>,
}

fn stats(x: &[f64], y: &[f64], w: usize, h: usize, k: &[f64], z: &[f64]) -> Stats {
    let norm = |v: Vec<f64>| -> Vec<f64> { v.iter().zip(z).map(|(a, b)| a / b).collect() };
    let sq = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p * q).collect() };
    Stats {
        mu_x: norm(blur(x, w, h, k)),
        mu_y: norm(blur(y, w, h, k)),
        xx: norm(blur(&sq(x, x), w, h, k)),
        yy: norm(blur(&sq(y, y), w, h, k)),
        xy: norm(blur(&sq(x, y), w, h, k)),
    }
}

/// Mean SSIM over pixels and channels.
pub fn ssim(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    Ok(1.0 - ssim_loss(pred, gt)?)
}

/// `1 − SSIM`.
pub fn ssim_loss(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    ssim_impl(pred, gt, false).map(|(l, _)| l)
}

/// `1 − SSIM` and its gradient with respect to `pred`.
pub fn ssim_loss_grad(pred: &RgbImage, gt: &RgbImage) -> Result<(f64, Vec<Rgb>)> {
    ssim_impl(pred, gt, true)
}

fn ssim_impl(pred: &RgbImage, gt: &RgbImage, want_grad: bool) -> Result<(f64, Vec<Rgb>)> {
    check(pred, gt)?;
    let (w, h) = (pred.width, pred.height);
    let n = w * h;
    let k = kernel();
    let z = window_mass(w, h, &k);
    let scale = 1.0 / (3 * n) as f64;
    let mut total = 0.0;
    let mut grad = if want_grad { vec![[0.0; 3]; n] } else { Vec::new() };

    for c in 0..3 {
        let x = channel(pred, c);
        let y = channel(gt, c);
        let s = stats(&x, &y, w, h, &k, &z);
        let mut d_mu = vec![0.0; n];
        let mut d_xx = vec![0.0; n];
        let mut d_xy = vec![0.0; n];
        for p in 0..n {
            let (mx, my) = (s.mu_x[p], s.mu_y[p]);
            let vx = s.xx[p] - mx * mx;
            let vy = s.yy[p] - my * my;
            let cxy = s.xy[p] - mx * my;
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * cxy + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = vx + vy + SSIM_C2;
            let v = a1 * a2 / (b1 * b2);
            total += v;
            if want_grad {
                let db = b1 * b2;
                d_mu[p] = (2.0 * my * a2 - 2.0 * my * a1) / db - v * (2.0 * mx / b1 - 2.0 * mx / b2);
                d_xx[p] = -v / b2;
                d_xy[p] = 2.0 * a1 / db;
            }
        }
        if want_grad {
            let adj = |m: &[f64]| -> Vec<f64> {
                let scaled: Vec<f64> = m.iter().zip(&z).map(|(a, b)| a / b).collect();
                blur(&scaled, w, h, &k)
            };
            let (g_mu, g_xx, g_xy) = (adj(&d_mu), adj(&d_xx), adj(&d_xy));
            for q in 0..n {
                grad[q][c] = -scale * (g_mu[q] + 2.0 * x[q] * g_xx[q] + y[q] * g_xy[q]);
            }
        }
    }
    Ok((1.0 - total * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use approx::assert_relative_eq;

    /// Direct per-pixel evaluation with an explicit truncated 2-D window.
    fn brute_ssim(a: &RgbImage, b: &RgbImage) -> f64 {
        let (w, h) = (a.width as isize, a.height as isize);
        let mut total = 0.0;
        for c in 0..3 {
            for py in 0..h {
                for px in 0..w {
                    let (mut z, mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in -5..=5isize {
                        for dx in -5..=5isize {
                            let (qx, qy) = (px + dx, py + dy);
                            if qx < 0 || qy < 0 || qx >= w || qy >= h {
                                continue;
                            }
                            let wt = (-((dx * dx + dy * dy) as f64) / 4.5).exp();
                            let u = a.get(qx as usize, qy as usize)[c];
                            let v = b.get(qx as usize, qy as usize)[c];
                            z += wt;
                            mx += wt * u;
                            my += wt * v;
                            xx += wt * u * u;
                            yy += wt * v * v;
                            xy += wt * u * v;
                        }
                    }
                    let (mx, my, xx, yy, xy) = (mx / z, my / z, xx / z, yy / z, xy / z);
                    let (vx, vy, cv) = (xx - mx * mx, yy - my * my, xy - mx * my);
                    total += (2.0 * mx * my + SSIM_C1) * (2.0 * cv + SSIM_C2) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                }
            }
        }
        total / (3 * a.len()) as f64
    }

    fn pattern(w: usize, h: usize, seed: usize) -> RgbImage {
        Image::from_fn(w, h, |x, y| [0, 1, 2].map(|c| (((x * 13 + y * 7 + c * 5 + seed) * 2654435761usize) % 1000) as f64 / 1000.0))
    }

    #[test]
    fn identical_images() {
        let a = pattern(12, 9, 1);
        assert_relative_eq!(ssim_loss(&a, &a).unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn inverted_checkerboard() {
        let gt = Image::from_fn(16, 16, |x, y| [((x + y) % 2) as f64; 3]);
        let pred = gt.map(|p| p.map(|v| 1.0 - v));
        let l = ssim_loss(&pred, &gt).unwrap();
        assert_relative_eq!(l, 1.0 - brute_ssim(&pred, &gt), epsilon = 1e-9);
        assert!(l > 1.9, "{l}");
    }

    #[test]
    fn constant_images_reduce_to_means() {
        let (a, b) = (0.3, 0.7);
        let pa = Image::filled(8, 8, [a; 3]);
        let pb = Image::filled(8, 8, [b; 3]);
        let expected = (2.0 * a * b + SSIM_C1) * SSIM_C2 / ((a * a + b * b + SSIM_C1) * SSIM_C2);
        assert_relative_eq!(ssim(&pa, &pb).unwrap(), expected, epsilon = 1e-9);
    }

    #[test]
    fn matches_brute_force() {
        let (a, b) = (pattern(13, 10, 3), pattern(13, 10, 8));
        assert_relative_eq!(ssim(&a, &b).unwrap(), brute_ssim(&a, &b), epsilon = 1e-10);
    }

    #[test]
    fn too_small() {
        let a = Image::filled(5, 20, [0.0; 3]);
        assert!(matches!(ssim_loss(&a, &a), Err(Error::ImageTooSmall { .. })));
        let b = Image::filled(6, 6, [0.0; 3]);
        assert!(ssim_loss(&b, &b).is_ok());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (a, b) = (pattern(9, 8, 2), pattern(9, 8, 5));
        let (_, g) = ssim_loss_grad(&a, &b).unwrap();
        for (p, c) in [(0usize, 0usize), (10, 1), (35, 2), (71, 0), (40, 1)] {
            let h = 1e-5;
            let mut up = a.clone();
            up.data[p][c] += h;
            let mut dn = a.clone();
            dn.data[p][c] -= h;
            let num = (ssim_loss(&up, &b).unwrap() - ssim_loss(&dn, &b).unwrap()) / (2.0 * h);
            assert_relative_eq!(g[p][c], num, max_relative = 1e-4, epsilon = 1e-9);
        }
    }
}
