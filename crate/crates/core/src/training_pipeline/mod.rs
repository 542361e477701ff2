//! Three-stage fitting (Gaussians, texture, filtering), initialization,
//! pruning, test-time pose refinement and model reports.

mod checkpoint;
mod config;
mod eval;
mod objective;
mod stages;

pub use checkpoint::{quantize_gaussians, quantize_pose, quantize_texture, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, GAUSSIAN_RECORD_BYTES};
pub use config::{TrainingConfig, CONFIG_SCHEMA_VERSION};
pub use eval::{evaluate_frames, refine_pose_test_time, report_model, FrameMetrics, ModelReport};
pub use objective::{evaluate, Appearance, Evaluation, Objective, View};
pub use stages::{run_pipeline, stage1_fit, stage2_fit_texture, stage3_filter, Model, NoopObserver, Observer};

use crate::diffopt::ParamKind;
use crate::error::{Error, Result};
use crate::geometry::{polygon_frame, Gaussian, GaussianGrad, PolygonFrame, QUAT_IDENTITY};
use crate::mesh_pipeline::SkinnedMesh;

/// Initial log-scale: 0.5 in-plane, 0.1 along the polygon normal.
pub const INIT_LOG_SCALE: [f64; 3] = [-std::f64::consts::LN_2, -std::f64::consts::LN_2, -std::f64::consts::LN_10];
pub const INIT_COLOR: [f64; 3] = [0.5; 3];

/// Rest-pose frame of every triangle.
pub fn rest_frames(mesh: &SkinnedMesh) -> Result<Vec<PolygonFrame>> {
    let v = mesh.rest_vertices();
    mesh.triangles.iter().map(|t| polygon_frame(&v[t[0] as usize], &v[t[1] as usize], &v[t[2] as usize])).collect()
}

/// `m` Gaussians per triangle: the center for `m = 1`; center plus the three
/// edge midpoints for `m = 4`.
pub fn init_gaussians(mesh: &SkinnedMesh, m: usize) -> Result<Vec<Gaussian>> {
    if !matches!(m, 1 | 4) {
        return Err(Error::UnsupportedSubdivision(m));
    }
    let frames = rest_frames(mesh)?;
    let verts = mesh.rest_vertices();
    let mut out = Vec::with_capacity(m * mesh.triangles.len());
    for (t, (tri, f)) in mesh.triangles.iter().zip(&frames).enumerate() {
        let mut offsets = vec![[0.0; 3]];
        if m == 4 {
            let p = tri.map(|i| verts[i as usize]);
            for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                let mid = (p[a] + p[b]) * 0.5;
                let local = f.basis.transpose() * (mid - f.translation) / f.scale;
                offsets.push([local.x, local.y, 0.0]);
            }
        }
        for offset in offsets {
            out.push(Gaussian { parent: t as u32, offset, rotation: QUAT_IDENTITY, log_scale: INIT_LOG_SCALE, color: INIT_COLOR, opacity: 1.0 });
        }
    }
    Ok(out)
}

/// Keeps Gaussians with opacity at or above `threshold`.
pub fn prune(gaussians: &[Gaussian], threshold: f64) -> Vec<Gaussian> {
    gaussians.iter().filter(|g| g.opacity >= threshold).cloned().collect()
}

/// Flattens one per-Gaussian parameter kind.
pub fn pack(gaussians: &[Gaussian], kind: ParamKind) -> Vec<f64> {
    let mut v = Vec::with_capacity(gaussians.len() * 4);
    for g in gaussians {
        match kind {
            ParamKind::GaussXyz => v.extend_from_slice(&g.offset),
            ParamKind::GaussRotation => v.extend_from_slice(&g.rotation),
            ParamKind::GaussScaling => v.extend_from_slice(&g.log_scale),
            ParamKind::GaussColor => v.extend_from_slice(&g.color),
            ParamKind::GaussOpacity => v.push(g.opacity),
            ParamKind::Texture | ParamKind::Pose => panic!("{} is not a Gaussian parameter", kind.name()),
        }
    }
    v
}

/// Inverse of [`pack`].
pub fn unpack(gaussians: &mut [Gaussian], kind: ParamKind, values: &[f64]) {
    let width = values.len() / gaussians.len().max(1);
    for (g, v) in gaussians.iter_mut().zip(values.chunks(width.max(1))) {
        match kind {
            ParamKind::GaussXyz => g.offset.copy_from_slice(v),
            ParamKind::GaussRotation => g.rotation.copy_from_slice(v),
            ParamKind::GaussScaling => g.log_scale.copy_from_slice(v),
            ParamKind::GaussColor => g.color.copy_from_slice(v),
            ParamKind::GaussOpacity => g.opacity = v[0],
            ParamKind::Texture | ParamKind::Pose => panic!("{} is not a Gaussian parameter", kind.name()),
        }
    }
}

/// Flattens the gradient of one per-Gaussian parameter kind.
pub fn pack_grad(grads: &[GaussianGrad], kind: ParamKind) -> Vec<f64> {
    let mut v = Vec::with_capacity(grads.len() * 4);
    for g in grads {
        match kind {
            ParamKind::GaussXyz => v.extend_from_slice(&g.offset),
            ParamKind::GaussRotation => v.extend_from_slice(&g.rotation),
            ParamKind::GaussScaling => v.extend_from_slice(&g.log_scale),
            ParamKind::GaussColor => v.extend_from_slice(&g.color),
            ParamKind::GaussOpacity => v.push(g.opacity),
            ParamKind::Texture | ParamKind::Pose => panic!("{} is not a Gaussian parameter", kind.name()),
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::gaussian_to_world;
    use crate::mesh_pipeline::Joint;

    fn two_triangles() -> SkinnedMesh {
        SkinnedMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.2]],
            triangles: vec![[0, 1, 2], [1, 3, 2]],
            uvs: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            weights: vec![vec![(0, 1.0)]; 4],
            joints: vec![Joint { name: "root".into(), parent: None, rest_position: [0.0; 3] }],
        }
    }

    #[test]
    fn one_per_triangle_at_center() {
        let gs = init_gaussians(&two_triangles(), 1).unwrap();
        assert_eq!(gs.len(), 2);
        assert!(gs.iter().all(|g| g.offset == [0.0; 3] && g.opacity == 1.0));
    }

    #[test]
    fn four_per_triangle_at_midpoints() {
        let mesh = two_triangles();
        let gs = init_gaussians(&mesh, 4).unwrap();
        assert_eq!(gs.len(), 8);
        assert!(gs.iter().all(|g| g.opacity == 1.0));
        let frames = rest_frames(&mesh).unwrap();
        let v = mesh.rest_vertices();
        let mid = (v[1] + v[2]) * 0.5;
        let w = gaussian_to_world(&gs[2], &frames[0]).mean;
        assert!((w - mid).norm() < 1e-12);
    }

    #[test]
    fn initial_scale_is_flat() {
        let g = &init_gaussians(&two_triangles(), 1).unwrap()[0];
        let s = g.log_scale.map(f64::exp);
        assert!((s[0] - 0.5).abs() < 1e-15 && (s[2] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn unsupported_subdivision() {
        assert!(matches!(init_gaussians(&two_triangles(), 2), Err(Error::UnsupportedSubdivision(2))));
    }

    #[test]
    fn prune_keeps_two_of_four() {
        let mut gs = init_gaussians(&two_triangles(), 4).unwrap();
        gs.truncate(4);
        for (g, o) in gs.iter_mut().zip([0.05, 0.5, 0.09, 0.95]) {
            g.opacity = o;
        }
        assert_eq!(prune(&gs, 0.1).len(), 2);
    }

    #[test]
    fn pack_round_trip() {
        let mut gs = init_gaussians(&two_triangles(), 4).unwrap();
        for kind in [ParamKind::GaussXyz, ParamKind::GaussRotation, ParamKind::GaussScaling, ParamKind::GaussColor, ParamKind::GaussOpacity] {
            let mut v = pack(&gs, kind);
            v.iter_mut().enumerate().for_each(|(i, x)| *x += i as f64);
            unpack(&mut gs, kind, &v);
            assert_eq!(pack(&gs, kind), v);
        }
    }
}
