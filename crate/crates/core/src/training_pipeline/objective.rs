//! Per-stage losses over a batch of frames, with gradients for the
//! parameters each stage trains.

use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::{Gaussian, GaussianGrad};
use crate::image::{Image, Rgb, RgbImage};
use crate::losses_metrics::{
    dice_loss_grad, knn_regularizer_grad, l2_loss_grad, opacity_regularizer, opacity_regularizer_grad, sobel_loss_grad, ssim_loss_grad,
    tv_regularizer_grad, KnnGraph, LossReport, LossWeights, Stage,
};
use crate::mesh_pipeline::{Pose, SkinnedMesh, Texture};
use crate::splatting::{render_backward, render_frame_cached, Background, GradRequest, RenderMode, Scene};
use crate::util::GateHasher;
use crate::geometry::Camera;

/// One supervised view.
#[derive(Clone, Copy, Debug)]
pub struct View<'a> {
    pub image: &'a RgbImage,
    pub mask: &'a Image<bool>,
    pub camera: &'a Camera,
    pub pose: &'a Pose,
}

/// Parameters shared by every view.
#[derive(Clone, Copy, Debug)]
pub struct Appearance<'a> {
    pub mesh: &'a SkinnedMesh,
    pub gaussians: &'a [Gaussian],
    pub texture: &'a Texture,
}

/// Which terms and gradients to evaluate.
#[derive(Clone, Copy, Debug)]
pub struct Objective<'a> {
    pub stage: Stage,
    pub weights: &'a LossWeights,
    /// Background for stage 1; stages 2 and 3 render over black.
    pub background: Rgb,
    /// Neighborhoods for the smoothness term of stages 1 and 3.
    pub knn: Option<&'a KnnGraph>,
    pub grads: GradRequest,
}

impl Objective<'_> {
    pub fn mode(&self) -> RenderMode {
        match self.stage {
            Stage::Gaussians => RenderMode::GaussiansOnly,
            Stage::Texture => RenderMode::MeshOnly,
            Stage::Filter => RenderMode::Hybrid,
        }
    }
}

/// Batch loss and its gradients. Photometric terms are averaged over views;
/// regularizers enter once.
#[derive(Clone, Debug, Default)]
pub struct Evaluation {
    pub report: LossReport,
    pub gaussians: Vec<GaussianGrad>,
    pub texture: Vec<Rgb>,
    /// Flattened pose gradient per view (empty when not requested).
    pub poses: Vec<Vec<f64>>,
    /// Signature of every discrete decision made by the renderer.
    pub gate: u64,
}

struct ViewResult {
    l2: f64,
    ssim: f64,
    sobel: Option<f64>,
    dice: Option<f64>,
    grads: crate::splatting::SceneGrad,
    gate: u64,
}

fn eval_view(app: &Appearance, obj: &Objective, view: &View) -> Result<ViewResult> {
    let scene = Scene { gaussians: app.gaussians, mesh: app.mesh, texture: app.texture, pose: view.pose, camera: view.camera };
    let bg = if obj.stage == Stage::Gaussians { obj.background } else { [0.0; 3] };
    let (bundle, cache) = render_frame_cached(&scene, obj.mode(), Background::Color(bg))?;
    // Ground truth is rendered over black; swap in the stage background.
    let target = if bg == [0.0; 3] {
        view.image.clone()
    } else {
        let mut t = view.image.clone();
        for (px, &m) in t.data.iter_mut().zip(&view.mask.data) {
            if !m {
                for c in 0..3 {
                    px[c] += bg[c];
                }
            }
        }
        t
    };
    let w = obj.weights;
    let (l2, mut g) = l2_loss_grad(&bundle.image, &target)?;
    let (ssim, gs) = ssim_loss_grad(&bundle.image, &target)?;
    let add = |g: &mut Vec<Rgb>, o: &[Rgb], s: f64| g.iter_mut().zip(o).for_each(|(a, b)| (0..3).for_each(|c| a[c] += s * b[c]));
    add(&mut g, &gs, w.ssim);
    let mut sobel = None;
    if obj.stage != Stage::Texture {
        let (v, gs) = sobel_loss_grad(&bundle.image, &target)?;
        add(&mut g, &gs, w.sobel);
        sobel = Some(v);
    }
    let mut dice = None;
    let mut g_alpha = None;
    if obj.stage == Stage::Filter {
        let (v, ga) = dice_loss_grad(view.mask, &bundle.depth, &bundle.alpha)?;
        g_alpha = Some(ga.iter().map(|x| w.dice * x).collect::<Vec<_>>());
        dice = Some(v);
    }
    let grads = render_backward(&scene, &cache, &g, g_alpha.as_deref(), obj.grads)?;
    Ok(ViewResult { l2, ssim, sobel, dice, grads, gate: cache.gate_signature(app.texture) })
}

/// Evaluates the stage loss over `views`.
pub fn evaluate(app: &Appearance, obj: &Objective, views: &[View]) -> Result<Evaluation> {
    let results: Vec<ViewResult> = views.par_iter().map(|v| eval_view(app, obj, v)).collect::<Result<_>>()?;
    let n = results.len().max(1) as f64;
    let inv = 1.0 / n;
    let mean = |f: &dyn Fn(&ViewResult) -> Option<f64>| -> Option<f64> {
        let vals: Option<Vec<f64>> = results.iter().map(f).collect();
        vals.map(|v| v.iter().sum::<f64>() * inv)
    };
    let mut report = LossReport { l2: mean(&|r| Some(r.l2)), ssim: mean(&|r| Some(r.ssim)), sobel: mean(&|r| r.sobel), dice: mean(&|r| r.dice), ..Default::default() };

    let mut out = Evaluation::default();
    let mut hasher = GateHasher::default();
    if obj.grads.gaussians {
        out.gaussians = vec![GaussianGrad::default(); app.gaussians.len()];
    }
    if obj.grads.texture {
        out.texture = vec![[0.0; 3]; app.texture.texels.len()];
    }
    for r in &results {
        hasher.write(r.gate);
        for (a, b) in out.gaussians.iter_mut().zip(&r.grads.gaussians) {
            let mut b = b.clone();
            scale_grad(&mut b, inv);
            a.add(&b);
        }
        for (a, b) in out.texture.iter_mut().zip(&r.grads.texture) {
            (0..3).for_each(|c| a[c] += inv * b[c]);
        }
        if obj.grads.pose {
            let p = r.grads.pose.as_ref().map(|p| p.to_flat().iter().map(|v| v * inv).collect()).unwrap_or_default();
            out.poses.push(p);
        }
    }
    out.gate = hasher.finish();

    let w = obj.weights;
    if obj.stage != Stage::Texture {
        let value = match obj.knn {
            Some(graph) if !app.gaussians.is_empty() => {
                let (v, g) = knn_regularizer_grad(app.gaussians, graph)?;
                for (a, b) in out.gaussians.iter_mut().zip(&g) {
                    let mut b = b.clone();
                    scale_grad(&mut b, w.knn);
                    a.add(&b);
                }
                v
            }
            _ => 0.0,
        };
        report.knn = Some(value);
    }
    if obj.stage == Stage::Texture {
        let (v, g) = tv_regularizer_grad(app.texture);
        for (a, b) in out.texture.iter_mut().zip(&g) {
            (0..3).for_each(|c| a[c] += w.tv * b[c]);
        }
        report.tv = Some(v);
    }
    if obj.stage == Stage::Filter {
        report.opacity = Some(opacity_regularizer(app.gaussians));
        for (a, b) in out.gaussians.iter_mut().zip(opacity_regularizer_grad(app.gaussians)) {
            a.opacity += w.opacity * b;
        }
    }
    out.report = report.finish(w, obj.stage)?;
    Ok(out)
}

fn scale_grad(g: &mut GaussianGrad, s: f64) {
    g.offset.iter_mut().chain(g.rotation.iter_mut()).chain(g.log_scale.iter_mut()).chain(g.color.iter_mut()).for_each(|v| *v *= s);
    g.opacity *= s;
}
