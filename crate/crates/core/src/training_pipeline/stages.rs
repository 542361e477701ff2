//! The stage loops and the pipeline driver.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::objective::{evaluate, Appearance, Objective, View};
use super::{pack, pack_grad, prune, quantize_gaussians, quantize_pose, quantize_texture, rest_frames, unpack, Checkpoint, TrainingConfig, CHECKPOINT_VERSION, INIT_COLOR};
use crate::diffopt::{adam_step, AdamState, ParamGroup, ParamKind, Schedule};
use crate::error::{Error, Result};
use crate::geometry::{Gaussian, PolygonFrame};
use crate::losses_metrics::{KnnGraph, LossReport, Stage};
use crate::mesh_pipeline::{Pose, Texture};
use crate::splatting::GradRequest;
use crate::synthetic_scenes::{Dataset, FrameRecord};

/// Trainable state: Gaussians, texture and one pose per training frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub gaussians: Vec<Gaussian>,
    pub texture: Texture,
    pub poses: Vec<Pose>,
}

impl Model {
    /// Initial Gaussians, a grey texture and the dataset's training poses,
    /// rounded to checkpoint precision.
    pub fn init(data: &Dataset, cfg: &TrainingConfig) -> Result<Self> {
        let mut m = Self {
            gaussians: super::init_gaussians(&data.mesh, cfg.subdivision)?,
            texture: Texture::uniform(cfg.texture_resolution, cfg.texture_resolution, INIT_COLOR)?,
            poses: data.train.iter().map(|f| f.pose.clone()).collect(),
        };
        m.quantize();
        Ok(m)
    }

    pub fn quantize(&mut self) {
        quantize_gaussians(&mut self.gaussians);
        quantize_texture(&mut self.texture);
        self.poses.iter_mut().for_each(quantize_pose);
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Self {
        Self { gaussians: c.gaussians.clone(), texture: c.texture.clone(), poses: c.poses.clone() }
    }

    pub fn to_checkpoint(&self, stage: u32, cfg: &TrainingConfig) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            stage,
            config: cfg.to_toml(),
            gaussians: self.gaussians.clone(),
            texture: self.texture.clone(),
            poses: self.poses.clone(),
        }
    }
}

/// Progress hooks. Both default to doing nothing.
pub trait Observer {
    fn iteration(&mut self, _stage: Stage, _iteration: u64, _report: &LossReport, _model: &Model) {}
    fn stage_done(&mut self, _stage: Stage, _model: &Model) {}
}

pub struct NoopObserver;

impl Observer for NoopObserver {}

fn stage_rng(seed: u64, stage: Stage) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (stage.number() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn batch(rng: &mut ChaCha8Rng, frames: usize, size: usize) -> Vec<usize> {
    let mut b = sample(rng, frames, size.min(frames)).into_vec();
    b.sort_unstable();
    b
}

fn views<'a>(frames: &'a [FrameRecord], poses: &'a [Pose], idx: &[usize]) -> Vec<View<'a>> {
    idx.iter().map(|&i| View { image: &frames[i].image, mask: &frames[i].mask, camera: &frames[i].camera, pose: &poses[i] }).collect()
}

fn knn_graph(gaussians: &[Gaussian], frames: &[PolygonFrame], k: usize) -> Result<Option<KnnGraph>> {
    if gaussians.len() < 2 {
        return Ok(None);
    }
    KnnGraph::build(gaussians, frames, k.min(gaussians.len() - 1)).map(Some)
}

fn check_frames(frames: &[FrameRecord], model: &Model) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::InvalidScene("no training frames".into()));
    }
    if model.poses.len() != frames.len() {
        return Err(Error::DimensionMismatch(format!("{} poses for {} frames", model.poses.len(), frames.len())));
    }
    Ok(())
}

struct Groups(Vec<(ParamGroup, AdamState)>);

impl Groups {
    fn gaussian(gs: &[Gaussian], kinds: &[(ParamKind, f64)]) -> Result<Self> {
        kinds
            .iter()
            .map(|&(k, lr)| {
                let g = ParamGroup::new(k, pack(gs, k), lr)?;
                let s = AdamState::new(g.len());
                Ok((g, s))
            })
            .collect::<Result<_>>()
            .map(Groups)
    }

    fn step(&mut self, gs: &mut [Gaussian], grads: &[crate::geometry::GaussianGrad]) -> Result<()> {
        for (g, st) in &mut self.0 {
            g.grads = pack_grad(grads, g.kind);
            adam_step(g, st)?;
            unpack(gs, g.kind, &g.values);
        }
        Ok(())
    }
}

/// Stage 1: Gaussian offsets, rotations, scales and colors plus per-frame
/// poses, rendered without the mesh over a random background color.
pub fn stage1_fit(frames: &[FrameRecord], mesh: &crate::mesh_pipeline::SkinnedMesh, model: &mut Model, cfg: &TrainingConfig, obs: &mut dyn Observer) -> Result<()> {
    check_frames(frames, model)?;
    let iters = cfg.iterations_stage1;
    let weights = cfg.weights();
    let mut rng = stage_rng(cfg.seed, Stage::Gaussians);
    let mut groups = Groups::gaussian(
        &model.gaussians,
        &[(ParamKind::GaussXyz, cfg.lr_xyz_start), (ParamKind::GaussRotation, cfg.lr_rotation), (ParamKind::GaussScaling, cfg.lr_scaling), (ParamKind::GaussColor, cfg.lr_color)],
    )?;
    if iters > 0 {
        groups.0[0].0 = groups.0[0].0.clone().with_schedule(Schedule::new(cfg.lr_xyz_start, cfg.lr_xyz_end, iters)?);
    }
    let mut pose_groups: Vec<(ParamGroup, AdamState)> = model
        .poses
        .iter()
        .map(|p| {
            let g = ParamGroup::new(ParamKind::Pose, p.to_flat(), cfg.lr_pose)?;
            let s = AdamState::new(g.len());
            Ok((g, s))
        })
        .collect::<Result<_>>()?;
    let rf = rest_frames(mesh)?;
    let mut graph = None;
    for it in 0..iters {
        if it % cfg.knn_refresh == 0 {
            graph = knn_graph(&model.gaussians, &rf, cfg.knn_k)?;
        }
        let idx = batch(&mut rng, frames.len(), cfg.batch_size);
        let background = [rng.random(), rng.random(), rng.random()];
        let obj = Objective { stage: Stage::Gaussians, weights: &weights, background, knn: graph.as_ref(), grads: GradRequest { gaussians: true, texture: false, pose: true } };
        let app = Appearance { mesh, gaussians: &model.gaussians, texture: &model.texture };
        let eval = evaluate(&app, &obj, &views(frames, &model.poses, &idx))?;
        groups.step(&mut model.gaussians, &eval.gaussians)?;
        for (j, &i) in idx.iter().enumerate() {
            let (g, st) = &mut pose_groups[i];
            g.grads.copy_from_slice(&eval.poses[j]);
            adam_step(g, st)?;
            model.poses[i].set_flat(&g.values);
        }
        obs.iteration(Stage::Gaussians, it, &eval.report, model);
    }
    model.quantize();
    Ok(())
}

/// Stage 2: texels only, mesh rendered over black with the stage-1 poses.
pub fn stage2_fit_texture(frames: &[FrameRecord], mesh: &crate::mesh_pipeline::SkinnedMesh, model: &mut Model, cfg: &TrainingConfig, obs: &mut dyn Observer) -> Result<()> {
    check_frames(frames, model)?;
    let weights = cfg.weights();
    let mut rng = stage_rng(cfg.seed, Stage::Texture);
    let mut group = ParamGroup::new(ParamKind::Texture, model.texture.texels.iter().flatten().copied().collect(), cfg.lr_texture)?;
    let mut state = AdamState::new(group.len());
    for it in 0..cfg.iterations_stage2 {
        let idx = batch(&mut rng, frames.len(), cfg.batch_size);
        let obj = Objective { stage: Stage::Texture, weights: &weights, background: [0.0; 3], knn: None, grads: GradRequest { gaussians: false, texture: true, pose: false } };
        let app = Appearance { mesh, gaussians: &model.gaussians, texture: &model.texture };
        let eval = evaluate(&app, &obj, &views(frames, &model.poses, &idx))?;
        group.grads = eval.texture.iter().flatten().copied().collect();
        adam_step(&mut group, &mut state)?;
        for (t, v) in model.texture.texels.iter_mut().zip(group.values.chunks(3)) {
            t.copy_from_slice(v);
        }
        obs.iteration(Stage::Texture, it, &eval.report, model);
    }
    model.quantize();
    Ok(())
}

/// Stage 3: opacity and color under the full hybrid render with the opacity
/// and silhouette terms, then a single prune below the threshold.
pub fn stage3_filter(frames: &[FrameRecord], mesh: &crate::mesh_pipeline::SkinnedMesh, model: &mut Model, cfg: &TrainingConfig, obs: &mut dyn Observer) -> Result<()> {
    check_frames(frames, model)?;
    if frames.iter().any(|f| !f.mask.same_dims(&f.image)) {
        return Err(Error::MissingSilhouettes);
    }
    let weights = cfg.weights();
    let mut rng = stage_rng(cfg.seed, Stage::Filter);
    let mut groups = Groups::gaussian(&model.gaussians, &[(ParamKind::GaussOpacity, cfg.lr_opacity), (ParamKind::GaussColor, cfg.lr_color)])?;
    let rf = rest_frames(mesh)?;
    let mut graph = None;
    for it in 0..cfg.iterations_stage3 {
        if it % cfg.knn_refresh == 0 {
            graph = knn_graph(&model.gaussians, &rf, cfg.knn_k)?;
        }
        let idx = batch(&mut rng, frames.len(), cfg.batch_size);
        let obj = Objective { stage: Stage::Filter, weights: &weights, background: [0.0; 3], knn: graph.as_ref(), grads: GradRequest { gaussians: true, texture: false, pose: false } };
        let app = Appearance { mesh, gaussians: &model.gaussians, texture: &model.texture };
        let eval = evaluate(&app, &obj, &views(frames, &model.poses, &idx))?;
        groups.step(&mut model.gaussians, &eval.gaussians)?;
        obs.iteration(Stage::Filter, it, &eval.report, model);
    }
    model.gaussians = prune(&model.gaussians, cfg.prune_threshold);
    model.quantize();
    Ok(())
}

/// Runs the stages after `resume`'s tag (or from initialization) up to and
/// including `last`, returning the final checkpoint.
pub fn run_pipeline(data: &Dataset, cfg: &TrainingConfig, resume: Option<&Checkpoint>, last: Stage, obs: &mut dyn Observer) -> Result<Checkpoint> {
    cfg.validate()?;
    let (mut model, done) = match resume {
        Some(c) => (Model::from_checkpoint(c), c.stage),
        None => (Model::init(data, cfg)?, 0),
    };
    for stage in Stage::ALL {
        let n = stage.number() as u32;
        if n <= done || n > last.number() as u32 {
            continue;
        }
        match stage {
            Stage::Gaussians => stage1_fit(&data.train, &data.mesh, &mut model, cfg, obs)?,
            Stage::Texture => stage2_fit_texture(&data.train, &data.mesh, &mut model, cfg, obs)?,
            Stage::Filter => stage3_filter(&data.train, &data.mesh, &mut model, cfg, obs)?,
        }
        obs.stage_done(stage, &model);
    }
    Ok(model.to_checkpoint(done.max(last.number() as u32), cfg))
}
