//! Test-time pose refinement and evaluation reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Checkpoint;
use crate::diffopt::{adam_step, AdamState, ParamGroup, ParamKind};
use crate::error::{Error, Result};
use crate::geometry::Gaussian;
use crate::image::Rgb;
use crate::losses_metrics::{l2_loss_grad, psnr, sobel_loss_grad, ssim, ssim_loss_grad, LossWeights};
use crate::mesh_pipeline::{Pose, SkinnedMesh, Texture};
use crate::splatting::{render_backward, render_frame, render_frame_cached, Background, GradRequest, RenderMode, Scene};
use crate::synthetic_scenes::FrameRecord;

/// Optimizes only `init`'s parameters against `frame` with appearance
/// frozen: hybrid render over black, L2 + SSIM + Sobel. Returns the refined
/// pose and the loss before each step.
#[allow(clippy::too_many_arguments)]
pub fn refine_pose_test_time(
    frame: &FrameRecord,
    mesh: &SkinnedMesh,
    gaussians: &[Gaussian],
    texture: &Texture,
    init: &Pose,
    iterations: u64,
    lr: f64,
    weights: &LossWeights,
) -> Result<(Pose, Vec<f64>)> {
    let mut pose = init.clone();
    let mut group = ParamGroup::new(ParamKind::Pose, pose.to_flat(), lr)?;
    let mut state = AdamState::new(group.len());
    let mut losses = Vec::with_capacity(iterations as usize);
    for _ in 0..iterations {
        let scene = Scene { gaussians, mesh, texture, pose: &pose, camera: &frame.camera };
        let (b, cache) = render_frame_cached(&scene, RenderMode::Hybrid, Background::Color([0.0; 3]))?;
        let (l2, mut g) = l2_loss_grad(&b.image, &frame.image)?;
        let (s, gs) = ssim_loss_grad(&b.image, &frame.image)?;
        let (e, ge) = sobel_loss_grad(&b.image, &frame.image)?;
        for ((a, x), y) in g.iter_mut().zip(&gs).zip(&ge) {
            (0..3).for_each(|c| a[c] += weights.ssim * x[c] + weights.sobel * y[c]);
        }
        losses.push(l2 + weights.ssim * s + weights.sobel * e);
        let grads = render_backward(&scene, &cache, &g, None, GradRequest { pose: true, ..Default::default() })?;
        group.grads = grads.pose.map(|p| p.to_flat()).unwrap_or_else(|| vec![0.0; group.len()]);
        adam_step(&mut group, &mut state)?;
        pose.set_flat(&group.values);
    }
    Ok((pose, losses))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub gaussian_count: usize,
    /// Serialized Gaussian records.
    pub gaussian_bytes: usize,
    /// Serialized Gaussian block plus texture block.
    pub storage_bytes: usize,
    pub frames: Vec<FrameMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Metrics per frame over black, restricted to the union of ground-truth and
/// predicted silhouettes. Renders are rounded to 8 bits like the dataset.
pub fn evaluate_frames(
    mesh: &SkinnedMesh,
    gaussians: &[Gaussian],
    texture: &Texture,
    frames: &[FrameRecord],
    poses: &[Pose],
    mode: RenderMode,
) -> Result<Vec<FrameMetrics>> {
    if poses.len() != frames.len() {
        return Err(Error::DimensionMismatch(format!("{} poses for {} frames", poses.len(), frames.len())));
    }
    frames
        .par_iter()
        .zip(poses)
        .map(|(f, pose)| {
            let scene = Scene { gaussians, mesh, texture, pose, camera: &f.camera };
            let b = render_frame(&scene, mode, Background::Color([0.0; 3]))?;
            let mut pred = b.image.quantized();
            let mut gt = f.image.clone();
            for i in 0..pred.len() {
                let inside = f.mask.data[i] || b.depth.data[i].is_finite() || b.alpha.data[i] > 0.5;
                if !inside {
                    pred.data[i] = [0.0; 3] as Rgb;
                    gt.data[i] = [0.0; 3];
                }
            }
            Ok(FrameMetrics { psnr: psnr(&pred, &gt)?, ssim: ssim(&pred, &gt)? })
        })
        .collect()
}

/// Size and quality summary of a checkpoint over `frames`.
pub fn report_model(ckpt: &Checkpoint, mesh: &SkinnedMesh, frames: &[FrameRecord], poses: &[Pose], mode: RenderMode) -> Result<ModelReport> {
    let metrics = evaluate_frames(mesh, &ckpt.gaussians, &ckpt.texture, frames, poses, mode)?;
    let n = metrics.len().max(1) as f64;
    Ok(ModelReport {
        gaussian_count: ckpt.gaussians.len(),
        gaussian_bytes: ckpt.gaussian_bytes(),
        storage_bytes: ckpt.storage_bytes(),
        mean_psnr: metrics.iter().map(|m| m.psnr).sum::<f64>() / n,
        mean_ssim: metrics.iter().map(|m| m.ssim).sum::<f64>() / n,
        frames: metrics,
    })
}
