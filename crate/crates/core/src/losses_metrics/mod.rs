//! Loss terms, regularizers and image metrics, each with its gradient.

mod knn;
mod sobel;
mod ssim;

pub use knn::{knn_regularizer, knn_regularizer_grad, KnnGraph};
pub use sobel::{sobel, sobel_loss, sobel_loss_grad, sobel_magnitude};
pub use ssim::{ssim, ssim_loss, ssim_loss_grad, SSIM_C1, SSIM_C2, SSIM_MIN_SIZE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Gaussian;
use crate::image::{check_dims, GrayImage, Image, Rgb, RgbImage};
use crate::mesh_pipeline::Texture;

pub const DICE_EPS: f64 = 1e-6;
pub const PSNR_CAP: f64 = 100.0;

/// Mean squared error over pixels and channels.
pub fn l2_loss(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    check_dims(pred, gt, "l2")?;
    let s: f64 = pred.data.iter().zip(&gt.data).map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>()).sum();
    Ok(s / (3 * pred.len()) as f64)
}

pub fn l2_loss_grad(pred: &RgbImage, gt: &RgbImage) -> Result<(f64, Vec<Rgb>)> {
    let l = l2_loss(pred, gt)?;
    let k = 2.0 / (3 * pred.len()) as f64;
    Ok((l, pred.data.iter().zip(&gt.data).map(|(a, b)| [0, 1, 2].map(|c| k * (a[c] - b[c]))).collect()))
}

/// Peak signal-to-noise ratio in dB for images in `[0, 1]`.
pub fn psnr(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    Ok(psnr_from_mse(l2_loss(pred, gt)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Mean over texels of the channel-summed squared forward differences.
pub fn tv_regularizer(tex: &Texture) -> f64 {
    tv_impl(tex, false).0
}

pub fn tv_regularizer_grad(tex: &Texture) -> (f64, Vec<Rgb>) {
    tv_impl(tex, true)
}

fn tv_impl(tex: &Texture, want_grad: bool) -> (f64, Vec<Rgb>) {
    let (w, h) = (tex.width, tex.height);
    let t = &tex.texels;
    let n = (w * h) as f64;
    let mut total = 0.0;
    let mut g = if want_grad { vec![[0.0; 3]; w * h] } else { Vec::new() };
    let mut pair = |a: usize, b: usize, g: &mut Vec<Rgb>| {
        for c in 0..3 {
            let d = t[b][c] - t[a][c];
            total += d * d;
            if want_grad {
                g[b][c] += 2.0 * d / n;
                g[a][c] -= 2.0 * d / n;
            }
        }
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                pair(i, i + 1, &mut g);
            }
            if y + 1 < h {
                pair(i, i + w, &mut g);
            }
        }
    }
    (total / n, g)
}

/// `Σ o²` over all Gaussians.
pub fn opacity_regularizer(gaussians: &[Gaussian]) -> f64 {
    gaussians.iter().map(|g| g.opacity * g.opacity).sum()
}

/// Gradient with respect to each opacity.
pub fn opacity_regularizer_grad(gaussians: &[Gaussian]) -> Vec<f64> {
    gaussians.iter().map(|g| 2.0 * g.opacity).collect()
}

/// Predicted soft silhouette: union of mesh coverage and Gaussian alpha.
pub fn predicted_silhouette(depth: &GrayImage, alpha: &GrayImage) -> Result<GrayImage> {
    check_dims(depth, alpha, "silhouette")?;
    let data = depth.data.iter().zip(&alpha.data).map(|(d, a)| if d.is_finite() { 1.0 } else { *a }).collect();
    Ok(Image { width: depth.width, height: depth.height, data })
}

/// Dice loss between the ground-truth mask and the soft union of
/// `bin(depth)` and `alpha`.
pub fn dice_loss(gt: &Image<bool>, depth: &GrayImage, alpha: &GrayImage) -> Result<f64> {
    dice_impl(gt, depth, alpha, false).map(|(l, _)| l)
}

/// Dice loss and its gradient with respect to `alpha`; depth is a hard gate.
pub fn dice_loss_grad(gt: &Image<bool>, depth: &GrayImage, alpha: &GrayImage) -> Result<(f64, Vec<f64>)> {
    dice_impl(gt, depth, alpha, true)
}

fn dice_impl(gt: &Image<bool>, depth: &GrayImage, alpha: &GrayImage, want_grad: bool) -> Result<(f64, Vec<f64>)> {
    check_dims(gt, depth, "dice")?;
    let pred = predicted_silhouette(depth, alpha)?;
    let (mut inter, mut sp, mut sg) = (0.0, 0.0, 0.0);
    for (p, &g) in pred.data.iter().zip(&gt.data) {
        let g = g as u8 as f64;
        inter += p * g;
        sp += p;
        sg += g;
    }
    let den = sp + sg + DICE_EPS;
    let num = 2.0 * inter + DICE_EPS;
    let loss = 1.0 - num / den;
    if !want_grad {
        return Ok((loss, Vec::new()));
    }
    let grad = depth
        .data
        .iter()
        .zip(&gt.data)
        .map(|(d, &g)| {
            if d.is_finite() {
                0.0
            } else {
                -(2.0 * (g as u8 as f64) * den - num) / (den * den)
            }
        })
        .collect();
    Ok((loss, grad))
}

/// The three optimization stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Gaussians and per-frame pose.
    Gaussians,
    /// Mesh texture.
    Texture,
    /// Opacity filtering of the merged model.
    Filter,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Gaussians, Stage::Texture, Stage::Filter];

    pub fn number(self) -> u8 {
        match self {
            Stage::Gaussians => 1,
            Stage::Texture => 2,
            Stage::Filter => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.number() == n)
    }
}

/// Loss weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Kept for config compatibility; must be zero.
    pub lpips: f64,
    pub ssim: f64,
    pub sobel: f64,
    pub knn: f64,
    pub tv: f64,
    pub opacity: f64,
    pub dice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lpips: 0.0, ssim: 0.1, sobel: 1.0, knn: 0.01, tv: 0.01, opacity: 0.001, dice: 0.1 }
    }
}

/// Individual loss terms of one evaluation plus their weighted total.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sobel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knn: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub opacity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dice: Option<f64>,
    pub total: f64,
}

impl LossReport {
    /// Fills in `total` for `stage`.
    pub fn finish(mut self, weights: &LossWeights, stage: Stage) -> Result<Self> {
        self.total = weighted_total(&self, weights, stage)?;
        Ok(self)
    }
}

fn term(v: Option<f64>, name: &'static str) -> Result<f64> {
    v.ok_or(Error::MissingTerm(name))
}

/// Stage-specific weighted sum of the report's terms.
pub fn weighted_total(r: &LossReport, w: &LossWeights, stage: Stage) -> Result<f64> {
    let base = term(r.l2, "l2")? + w.ssim * term(r.ssim, "ssim")?;
    let stage1 = |r: &LossReport| -> Result<f64> { Ok(base + w.sobel * term(r.sobel, "sobel")? + w.knn * term(r.knn, "knn")?) };
    match stage {
        Stage::Gaussians => stage1(r),
        Stage::Texture => Ok(base + w.tv * term(r.tv, "tv")?),
        Stage::Filter => Ok(stage1(r)? + w.opacity * term(r.opacity, "opacity")? + w.dice * term(r.dice, "dice")?),
    }
}
