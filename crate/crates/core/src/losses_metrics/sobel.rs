//! Edge loss: mean squared difference of Sobel gradient magnitudes.

use crate::error::Result;
use crate::image::{check_dims, Rgb, RgbImage};

const EPS: f64 = 1e-12;
const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const KY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

fn clamp_idx(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

/// Sobel responses `(gx, gy)` of the channel-mean grayscale image with
/// replicated borders.
pub fn sobel(img: &RgbImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width, img.height);
    let gray: Vec<f64> = img.data.iter().map(|p| (p[0] + p[1] + p[2]) / 3.0).collect();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut sx, mut sy) = (0.0, 0.0);
            for j in 0..3 {
                for i in 0..3 {
                    let v = gray[clamp_idx(y as isize + j as isize - 1, h) * w + clamp_idx(x as isize + i as isize - 1, w)];
                    sx += KX[j][i] * v;
                    sy += KY[j][i] * v;
                }
            }
            gx[y * w + x] = sx;
            gy[y * w + x] = sy;
        }
    }
    (gx, gy)
}

/// Gradient magnitude per pixel (with a tiny floor so it stays differentiable).
pub fn sobel_magnitude(img: &RgbImage) -> Vec<f64> {
    let (gx, gy) = sobel(img);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b + EPS).sqrt()).collect()
}

pub fn sobel_loss(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    check_dims(pred, gt, "sobel")?;
    let (mp, mg) = (sobel_magnitude(pred), sobel_magnitude(gt));
    Ok(mp.iter().zip(&mg).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / mp.len() as f64)
}

pub fn sobel_loss_grad(pred: &RgbImage, gt: &RgbImage) -> Result<(f64, Vec<Rgb>)> {
    check_dims(pred, gt, "sobel")?;
    let (w, h) = (pred.width, pred.height);
    let n = (w * h) as f64;
    let (gx, gy) = sobel(pred);
    let mg = sobel_magnitude(gt);
    let mut loss = 0.0;
    let mut g_gray = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let m = (gx[p] * gx[p] + gy[p] * gy[p] + EPS).sqrt();
            let d = m - mg[p];
            loss += d * d;
            let g_m = 2.0 * d / n;
            let (ggx, ggy) = (g_m * gx[p] / m, g_m * gy[p] / m);
            for j in 0..3 {
                for i in 0..3 {
                    let q = clamp_idx(y as isize + j as isize - 1, h) * w + clamp_idx(x as isize + i as isize - 1, w);
                    g_gray[q] += KX[j][i] * ggx + KY[j][i] * ggy;
                }
            }
        }
    }
    Ok((loss / n, g_gray.iter().map(|g| [g / 3.0; 3]).collect()))
}
