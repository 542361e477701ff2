//! Full frame rendering: skin, attach, project, rasterize, composite; and the
//! matching reverse pass down to Gaussian, texture and pose parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tiles::{rasterize_splats, SplatRaster};
use super::{composite_final, RenderBundle, Splat};
use crate::error::{Error, Result};
use crate::geometry::{
    gaussian_to_world, gaussian_to_world_backward, polygon_frame, polygon_frame_backward, project_gaussian, project_gaussian_backward,
    world_covariance, world_covariance_backward, Camera, FrameGrad, Gaussian, GaussianGrad, PolygonFrame, Vec3, WorldGaussian,
};
use crate::image::{GrayImage, Image, Rgb, RgbImage};
use crate::mesh_pipeline::{rasterize_mesh, skin, skin_backward, MeshRaster, PoseGrad, Pose, SkinnedMesh, Texture};
use crate::util::GateHasher;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    GaussiansOnly,
    MeshOnly,
    Hybrid,
}

/// Color behind everything: a fixed color, or one uniform color drawn from
/// a seed. In mesh modes it fills pixels the mesh does not cover.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Background {
    Color(Rgb),
    Random(u64),
}

impl Background {
    pub fn color(&self) -> Rgb {
        match *self {
            Background::Color(c) => c,
            Background::Random(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                [rng.random(), rng.random(), rng.random()]
            }
        }
    }
}

/// Everything needed to render one frame.
#[derive(Clone, Copy, Debug)]
pub struct Scene<'a> {
    pub gaussians: &'a [Gaussian],
    pub mesh: &'a SkinnedMesh,
    pub texture: &'a Texture,
    pub pose: &'a Pose,
    pub camera: &'a Camera,
}

/// Intermediate state kept from the forward pass for [`render_backward`].
#[derive(Clone, Debug)]
pub struct RenderCache {
    mode: RenderMode,
    vertices: Vec<Vec3>,
    frames: Vec<Option<PolygonFrame>>,
    world: Vec<WorldGaussian>,
    /// Gaussian index of every depth-sorted splat.
    order: Vec<usize>,
    splats: Vec<Splat>,
    splat_raster: SplatRaster,
    mesh_raster: Option<MeshRaster>,
    surface: GrayImage,
    mesh_rgb: RgbImage,
}

impl RenderCache {
    /// Hash of every discrete decision taken while rendering.
    pub fn gate_signature(&self, texture: &Texture) -> u64 {
        let mut h = GateHasher::default();
        for &i in &self.order {
            h.write(i as u64);
        }
        self.splat_raster.gate_signature(&self.splats, &self.surface, &mut h);
        if let Some(m) = &self.mesh_raster {
            m.gate_signature(texture, &mut h);
        }
        h.finish()
    }

    /// Posed vertices used for this frame.
    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }
}

pub fn render_frame(scene: &Scene, mode: RenderMode, background: Background) -> Result<RenderBundle> {
    render_frame_cached(scene, mode, background).map(|(b, _)| b)
}

pub fn render_frame_cached(scene: &Scene, mode: RenderMode, background: Background) -> Result<(RenderBundle, RenderCache)> {
    let cam = scene.camera;
    let mesh = scene.mesh;
    let (w, h) = (cam.width, cam.height);
    let ntri = mesh.triangles.len();
    if let Some(g) = scene.gaussians.iter().find(|g| g.parent as usize >= ntri) {
        return Err(Error::InvalidScene(format!("parent polygon {} out of range ({ntri} triangles)", g.parent)));
    }
    let backdrop = background.color();
    let vertices = skin(mesh, scene.pose)?;

    let mesh_raster = match mode {
        RenderMode::GaussiansOnly => None,
        _ => Some(rasterize_mesh(&vertices, &mesh.triangles, &mesh.uvs, scene.texture, cam, backdrop)),
    };
    let (surface, mesh_rgb) = match &mesh_raster {
        Some(m) => (m.depth.clone(), m.rgb.clone()),
        None => (Image::filled(w, h, f64::INFINITY), Image::filled(w, h, backdrop)),
    };

    let mut frames: Vec<Option<PolygonFrame>> = vec![None; ntri];
    let mut world = Vec::new();
    let mut projected = Vec::new();
    if mode != RenderMode::MeshOnly {
        for g in scene.gaussians {
            let p = g.parent as usize;
            if frames[p].is_none() {
                let [a, b, c] = mesh.triangles[p].map(|i| vertices[i as usize]);
                frames[p] = Some(polygon_frame(&a, &b, &c)?);
            }
        }
        world.reserve(scene.gaussians.len());
        for (i, g) in scene.gaussians.iter().enumerate() {
            let wg = gaussian_to_world(g, frames[g.parent as usize].as_ref().expect("frame computed"));
            let cov = world_covariance(&wg.rotation_matrix, &wg.scale);
            if let Ok(p) = project_gaussian(&wg.mean, &cov, cam) {
                projected.push((i, Splat { center: p.center, cov: p.cov, depth: p.depth, color: g.color, opacity: g.opacity }));
            }
            world.push(wg);
        }
    }
    projected.sort_by(|a, b| a.1.depth.total_cmp(&b.1.depth));
    let (order, splats): (Vec<usize>, Vec<Splat>) = projected.into_iter().unzip();

    let splat_raster = rasterize_splats(&splats, &surface);
    let alpha = splat_raster.alpha();
    let image = composite_final(&splat_raster.premultiplied, &alpha, &mesh_rgb)?;
    let bundle = RenderBundle { gaussians: splat_raster.premultiplied.clone(), alpha, mesh: mesh_rgb.clone(), depth: surface.clone(), image };
    let cache = RenderCache { mode, vertices, frames, world, order, splats, splat_raster, mesh_raster, surface, mesh_rgb };
    Ok((bundle, cache))
}

/// Which parameter groups [`render_backward`] should differentiate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GradRequest {
    pub gaussians: bool,
    pub texture: bool,
    pub pose: bool,
}

#[derive(Clone, Debug, Default)]
pub struct SceneGrad {
    /// One entry per Gaussian (empty when not requested).
    pub gaussians: Vec<GaussianGrad>,
    /// One entry per texel (empty when not requested).
    pub texture: Vec<Rgb>,
    pub pose: Option<PoseGrad>,
}

/// Reverse pass of [`render_frame_cached`] for loss gradients on `ℐ` and
/// optionally `𝒜`. The mesh depth test is a hard gate and passes no gradient.
pub fn render_backward(
    scene: &Scene,
    cache: &RenderCache,
    g_image: &[Rgb],
    g_alpha: Option<&[f64]>,
    req: GradRequest,
) -> Result<SceneGrad> {
    let npix = cache.surface.len();
    if g_image.len() != npix || g_alpha.is_some_and(|a| a.len() != npix) {
        return Err(Error::DimensionMismatch("gradient image size".into()));
    }
    let mesh = scene.mesh;
    let cam = scene.camera;
    let trans = &cache.splat_raster.transmittance.data;
    let mut out = SceneGrad::default();
    let mut g_vertices = vec![Vec3::zeros(); cache.vertices.len()];

    if cache.mode != RenderMode::MeshOnly && (req.gaussians || req.pose) {
        let g_trans: Vec<f64> = (0..npix)
            .map(|p| {
                let m = cache.mesh_rgb.data[p];
                let g = g_image[p];
                g[0] * m[0] + g[1] * m[1] + g[2] * m[2] - g_alpha.map_or(0.0, |a| a[p])
            })
            .collect();
        let sgrads = cache.splat_raster.backward(&cache.splats, &cache.surface, g_image, &g_trans);
        let mut gauss = vec![GaussianGrad::default(); scene.gaussians.len()];
        let mut frame_grads: Vec<Option<FrameGrad>> = vec![None; mesh.triangles.len()];
        for (sg, &i) in sgrads.iter().zip(&cache.order) {
            let g = &scene.gaussians[i];
            let wg = &cache.world[i];
            let cov = world_covariance(&wg.rotation_matrix, &wg.scale);
            let (g_mean, g_cov) = project_gaussian_backward(&wg.mean, &cov, cam, sg.center, sg.cov);
            let (g_rot, g_scale) = world_covariance_backward(&wg.rotation_matrix, &wg.scale, &g_cov);
            let frame = cache.frames[g.parent as usize].as_ref().expect("frame computed");
            let (mut lg, fg) = gaussian_to_world_backward(g, frame, &g_mean, &g_rot, &g_scale);
            lg.color = sg.color;
            lg.opacity = sg.opacity;
            gauss[i] = lg;
            if req.pose {
                frame_grads[g.parent as usize].get_or_insert_with(FrameGrad::zero).add(&fg);
            }
        }
        if req.pose {
            for (t, fg) in frame_grads.iter().enumerate() {
                let Some(fg) = fg else { continue };
                let tri = mesh.triangles[t];
                let [a, b, c] = tri.map(|i| cache.vertices[i as usize]);
                let gv = polygon_frame_backward(&a, &b, &c, fg);
                for k in 0..3 {
                    g_vertices[tri[k] as usize] += gv[k];
                }
            }
        }
        if req.gaussians {
            out.gaussians = gauss;
        }
    } else if req.gaussians {
        out.gaussians = vec![GaussianGrad::default(); scene.gaussians.len()];
    }

    if let Some(mr) = &cache.mesh_raster {
        if req.texture || req.pose {
            let g_mesh: Vec<Rgb> = g_image.iter().zip(trans).map(|(g, &t)| g.map(|c| c * t)).collect();
            let mg = mr.backward(&mesh.triangles, &mesh.uvs, scene.texture, cam, &g_mesh, None, req.pose);
            if req.pose {
                for (a, b) in g_vertices.iter_mut().zip(&mg.vertices) {
                    *a += b;
                }
            }
            out.texture = mg.texels;
        }
    }
    if req.texture && out.texture.is_empty() {
        out.texture = vec![[0.0; 3]; scene.texture.texels.len()];
    }
    if req.pose {
        out.pose = Some(skin_backward(mesh, scene.pose, &g_vertices)?);
    }
    Ok(out)
}
