//! Gaussian rasterization conditioned on the mesh depth map, and the final
//! mesh/Gaussian composite.

mod render;
mod tiles;

pub use render::{render_backward, render_frame, render_frame_cached, Background, GradRequest, RenderCache, RenderMode, Scene, SceneGrad};
pub use tiles::{conic, rasterize_splats, SplatGrad, SplatRaster, TILE_SIZE};

use crate::error::{Error, Result};
use crate::image::{GrayImage, Image, Rgb, RgbImage};

/// Upper bound on a single splat's alpha.
pub const ALPHA_MAX: f64 = 0.99;
/// Compositing stops once transmittance falls below this.
pub const TRANSMITTANCE_EPS: f64 = 1e-4;
/// Squared Mahalanobis radius of the 3σ ellipse.
pub const CUTOFF_MAHALANOBIS_SQ: f64 = 9.0;

/// A projected Gaussian ready for compositing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat {
    pub center: [f64; 2],
    /// `[xx, xy, yy]`, dilation included.
    pub cov: [f64; 3],
    /// Camera depth of the Gaussian center.
    pub depth: f64,
    pub color: Rgb,
    pub opacity: f64,
}

/// Alpha of `splat` at pixel `(x, y)`: zero outside 3σ, clamped to
/// [`ALPHA_MAX`].
pub fn splat_alpha(splat: &Splat, x: f64, y: f64) -> f64 {
    tiles::eval_alpha(splat, &conic(splat.cov), x, y).map_or(0.0, |e| e.alpha)
}

/// Hides a splat wherever its center depth lies behind the surface.
pub fn depth_mask(alpha: f64, splat_depth: f64, surface_depth: f64) -> f64 {
    if splat_depth > surface_depth {
        0.0
    } else {
        alpha
    }
}

/// Splats plus the per-pixel surface depth and background.
#[derive(Clone, Debug)]
pub struct SplatFrameInput {
    splats: Vec<Splat>,
    pub depth: GrayImage,
    pub background: RgbImage,
}

impl SplatFrameInput {
    /// Sorts `splats` by depth (stable) and checks image dimensions.
    pub fn new(mut splats: Vec<Splat>, depth: GrayImage, background: RgbImage) -> Result<Self> {
        if !depth.same_dims(&background) {
            return Err(Error::DimensionMismatch(format!(
                "depth {}x{} vs background {}x{}",
                depth.width, depth.height, background.width, background.height
            )));
        }
        splats.sort_by(|a, b| a.depth.total_cmp(&b.depth));
        Ok(Self { splats, depth, background })
    }

    pub fn splats(&self) -> &[Splat] {
        &self.splats
    }
}

/// Returns `(𝒢, 𝒜)` with `𝒢` composited over the input background.
pub fn composite_gaussians(input: &SplatFrameInput) -> (RgbImage, GrayImage) {
    let r = rasterize_splats(&input.splats, &input.depth);
    let g = Image::from_fn(input.depth.width, input.depth.height, |x, y| {
        let p = r.premultiplied.get(x, y);
        let t = *r.transmittance.get(x, y);
        let b = input.background.get(x, y);
        [p[0] + b[0] * t, p[1] + b[1] * t, p[2] + b[2] * t]
    });
    (g, r.alpha())
}

/// `ℐ = 𝒢 + ℳ·(1 − 𝒜)` where `gaussians` is the Gaussian layer composited
/// over black. With `𝒜 = 0` the result is exactly `ℳ`.
pub fn composite_final(gaussians: &RgbImage, alpha: &GrayImage, mesh: &RgbImage) -> Result<RgbImage> {
    if !gaussians.same_dims(alpha) || !gaussians.same_dims(mesh) {
        return Err(Error::DimensionMismatch("composite inputs differ in size".into()));
    }
    let data = gaussians
        .data
        .iter()
        .zip(&alpha.data)
        .zip(&mesh.data)
        .map(|((g, a), m)| {
            let t = 1.0 - a;
            [g[0] + m[0] * t, g[1] + m[1] * t, g[2] + m[2] * t]
        })
        .collect();
    Ok(Image { width: gaussians.width, height: gaussians.height, data })
}

/// Every image produced while rendering one frame.
#[derive(Clone, Debug)]
pub struct RenderBundle {
    /// Gaussian layer composited over black.
    pub gaussians: RgbImage,
    pub alpha: GrayImage,
    /// Mesh render; in Gaussian-only mode this is the flat background.
    pub mesh: RgbImage,
    /// Mesh depth, `+∞` where uncovered.
    pub depth: GrayImage,
    pub image: RgbImage,
}
