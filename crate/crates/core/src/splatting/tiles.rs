//! Tiled front-to-back compositing of depth-sorted splats and its adjoint.
//!
//! Splats are binned into 16×16 tiles after a single global depth sort, so
//! every tile list inherits the global order. Forward and backward passes run
//! in parallel over tiles; backward writes into per-tile buffers that are
//! reduced in tile order, which keeps results independent of thread count.

use rayon::prelude::*;

use super::{Splat, ALPHA_MAX, CUTOFF_MAHALANOBIS_SQ, TRANSMITTANCE_EPS};
use crate::image::{GrayImage, Image, Rgb, RgbImage};
use crate::util::GateHasher;

pub const TILE_SIZE: usize = 16;

#[derive(Clone, Copy, Debug)]
pub(crate) struct AlphaEval {
    pub alpha: f64,
    pub falloff: f64,
    pub d: [f64; 2],
    pub clamped: bool,
}

/// Inverse of a symmetric 2×2 `[xx, xy, yy]`.
pub fn conic(cov: [f64; 3]) -> [f64; 3] {
    let [a, b, d] = cov;
    let det = a * d - b * b;
    [d / det, -b / det, a / det]
}

/// Alpha of a splat at pixel `(x, y)` before the depth test; `None` outside
/// the 3σ ellipse.
#[inline]
pub(crate) fn eval_alpha(s: &Splat, k: &[f64; 3], x: f64, y: f64) -> Option<AlphaEval> {
    let d = [x - s.center[0], y - s.center[1]];
    let q = k[0] * d[0] * d[0] + 2.0 * k[1] * d[0] * d[1] + k[2] * d[1] * d[1];
    if !(q <= CUTOFF_MAHALANOBIS_SQ) {
        return None;
    }
    let falloff = (-0.5 * q).exp();
    let raw = s.opacity * falloff;
    let clamped = raw > ALPHA_MAX;
    Some(AlphaEval { alpha: if clamped { ALPHA_MAX } else { raw }, falloff, d, clamped })
}

/// Outcome of testing one splat against one pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Status {
    Outside = 1,
    Masked = 2,
    Clamped = 3,
    Blended = 4,
}

/// Walks the sorted candidates of one pixel front to back, calling `visit`
/// for every splat that contributes. Returns the final transmittance.
#[inline]
fn walk(
    list: &[u32],
    splats: &[Splat],
    conics: &[[f64; 3]],
    x: usize,
    y: usize,
    surface: f64,
    mut on_status: impl FnMut(u32, Status),
    mut visit: impl FnMut(u32, &AlphaEval, f64),
) -> f64 {
    let (px, py) = (x as f64, y as f64);
    let mut t = 1.0;
    for &i in list {
        let s = &splats[i as usize];
        let Some(e) = eval_alpha(s, &conics[i as usize], px, py) else {
            on_status(i, Status::Outside);
            continue;
        };
        if s.depth > surface {
            on_status(i, Status::Masked);
            continue;
        }
        on_status(i, if e.clamped { Status::Clamped } else { Status::Blended });
        visit(i, &e, t);
        t *= 1.0 - e.alpha;
        if t < TRANSMITTANCE_EPS {
            break;
        }
    }
    t
}

/// Result of a tiled compositing pass.
#[derive(Clone, Debug)]
pub struct SplatRaster {
    /// `Σ cᵢ α′ᵢ Tᵢ`, the Gaussian layer composited over black.
    pub premultiplied: RgbImage,
    /// Final transmittance `Π (1 − α′ᵢ)`.
    pub transmittance: GrayImage,
    tiles: Vec<Vec<u32>>,
    conics: Vec<[f64; 3]>,
}

/// Per-splat gradients in screen space.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatGrad {
    pub center: [f64; 2],
    /// Gradient for `[xx, xy, yy]`, `xy` counted once.
    pub cov: [f64; 3],
    pub color: Rgb,
    pub opacity: f64,
}

fn tiles_across(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(TILE_SIZE), height.div_ceil(TILE_SIZE))
}

fn bin_splats(splats: &[Splat], width: usize, height: usize) -> Vec<Vec<u32>> {
    let (tx, ty) = tiles_across(width, height);
    let mut tiles = vec![Vec::new(); tx * ty];
    for (i, s) in splats.iter().enumerate() {
        let rx = 3.0 * s.cov[0].sqrt();
        let ry = 3.0 * s.cov[2].sqrt();
        let x0 = (s.center[0] - rx).floor().max(0.0);
        let x1 = (s.center[0] + rx).ceil().min(width as f64 - 1.0);
        let y0 = (s.center[1] - ry).floor().max(0.0);
        let y1 = (s.center[1] + ry).ceil().min(height as f64 - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            continue;
        }
        let (x0, x1, y0, y1) = (x0 as usize, x1 as usize, y0 as usize, y1 as usize);
        for tyi in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for txi in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                tiles[tyi * tx + txi].push(i as u32);
            }
        }
    }
    tiles
}

fn tile_pixels(tile: usize, width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> {
    let tx = width.div_ceil(TILE_SIZE);
    let (ox, oy) = ((tile % tx) * TILE_SIZE, (tile / tx) * TILE_SIZE);
    let (ex, ey) = ((ox + TILE_SIZE).min(width), (oy + TILE_SIZE).min(height));
    (oy..ey).flat_map(move |y| (ox..ex).map(move |x| (x, y)))
}

/// Composites `splats` (ascending depth) against the surface depth map.
pub fn rasterize_splats(splats: &[Splat], surface: &GrayImage) -> SplatRaster {
    let (w, h) = (surface.width, surface.height);
    debug_assert!(splats.windows(2).all(|p| p[0].depth <= p[1].depth));
    let conics: Vec<[f64; 3]> = splats.iter().map(|s| conic(s.cov)).collect();
    let tiles = bin_splats(splats, w, h);

    let outputs: Vec<Vec<(usize, Rgb, f64)>> = tiles
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            tile_pixels(tile, w, h)
                .map(|(x, y)| {
                    let pix = y * w + x;
                    let mut c = [0.0; 3];
                    let t = walk(list, splats, &conics, x, y, surface.data[pix], |_, _| {}, |i, e, t| {
                        let col = splats[i as usize].color;
                        for k in 0..3 {
                            c[k] += col[k] * e.alpha * t;
                        }
                    });
                    (pix, c, t)
                })
                .collect()
        })
        .collect();

    let mut premultiplied = Image::filled(w, h, [0.0; 3]);
    let mut transmittance = Image::filled(w, h, 1.0);
    for (pix, c, t) in outputs.into_iter().flatten() {
        premultiplied.data[pix] = c;
        transmittance.data[pix] = t;
    }
    SplatRaster { premultiplied, transmittance, tiles, conics }
}

impl SplatRaster {
    /// Accumulated opacity `𝒜 = 1 − T`.
    pub fn alpha(&self) -> GrayImage {
        self.transmittance.map(|t| 1.0 - t)
    }

    /// Hashes every per-pixel discrete decision: 3σ cutoff, depth mask,
    /// alpha clamp and where the early-out fired.
    pub fn gate_signature(&self, splats: &[Splat], surface: &GrayImage, hasher: &mut GateHasher) {
        let (w, h) = (surface.width, surface.height);
        for (tile, list) in self.tiles.iter().enumerate() {
            for (x, y) in tile_pixels(tile, w, h) {
                let pix = y * w + x;
                hasher.write(pix as u64);
                walk(list, splats, &self.conics, x, y, surface.data[pix], |i, st| hasher.write(((i as u64) << 3) | st as u64), |_, _, _| {});
            }
        }
    }

    /// Adjoint of the compositing pass given gradients on the premultiplied
    /// color and on the final transmittance of every pixel.
    pub fn backward(&self, splats: &[Splat], surface: &GrayImage, g_premult: &[Rgb], g_trans: &[f64]) -> Vec<SplatGrad> {
        let (w, h) = (surface.width, surface.height);
        let per_tile: Vec<Vec<[f64; 9]>> = self
            .tiles
            .par_iter()
            .enumerate()
            .map(|(tile, list)| {
                let slot_of = |i: u32| list.binary_search(&i).expect("splat in tile list");
                let mut acc = vec![[0.0; 9]; list.len()];
                let mut hits: Vec<(u32, AlphaEval, f64)> = Vec::new();
                for (x, y) in tile_pixels(tile, w, h) {
                    let pix = y * w + x;
                    let gp = g_premult[pix];
                    let gt = g_trans[pix];
                    if gp == [0.0; 3] && gt == 0.0 {
                        continue;
                    }
                    hits.clear();
                    let t_final = walk(list, splats, &self.conics, x, y, surface.data[pix], |_, _| {}, |i, e, t| hits.push((i, *e, t)));
                    let mut after = [0.0; 3];
                    for &(i, ref e, t) in hits.iter().rev() {
                        let s = &splats[i as usize];
                        let slot = &mut acc[slot_of(i)];
                        let inv = 1.0 / (1.0 - e.alpha);
                        let mut g_alpha = -gt * t_final * inv;
                        for c in 0..3 {
                            slot[5 + c] += gp[c] * e.alpha * t;
                            g_alpha += gp[c] * (s.color[c] * t - after[c] * inv);
                            after[c] += s.color[c] * e.alpha * t;
                        }
                        if e.clamped {
                            continue;
                        }
                        slot[8] += g_alpha * e.falloff;
                        let g_q = -0.5 * g_alpha * e.alpha;
                        let k = &self.conics[i as usize];
                        let [dx, dy] = e.d;
                        slot[0] -= g_q * 2.0 * (k[0] * dx + k[1] * dy);
                        slot[1] -= g_q * 2.0 * (k[1] * dx + k[2] * dy);
                        slot[2] += g_q * dx * dx;
                        slot[3] += g_q * 2.0 * dx * dy;
                        slot[4] += g_q * dy * dy;
                    }
                }
                acc
            })
            .collect();

        let mut sums = vec![[0.0; 9]; splats.len()];
        for (list, acc) in self.tiles.iter().zip(per_tile) {
            for (&i, a) in list.iter().zip(acc) {
                for k in 0..9 {
                    sums[i as usize][k] += a[k];
                }
            }
        }
        sums.iter()
            .zip(&self.conics)
            .map(|(a, k)| {
                // dL/dΣ = −K G K with G the symmetric conic gradient.
                let (ka, kb, kc) = (k[0], k[1], k[2]);
                let (ga, gb, gc) = (a[2], 0.5 * a[3], a[4]);
                let kg00 = ka * ga + kb * gb;
                let kg01 = ka * gb + kb * gc;
                let kg10 = kb * ga + kc * gb;
                let kg11 = kb * gb + kc * gc;
                let m00 = -(kg00 * ka + kg01 * kb);
                let m01 = -(kg00 * kb + kg01 * kc);
                let m11 = -(kg10 * kb + kg11 * kc);
                SplatGrad { center: [a[0], a[1]], cov: [m00, 2.0 * m01, m11], color: [a[5], a[6], a[7]], opacity: a[8] }
            })
            .collect()
    }
}
