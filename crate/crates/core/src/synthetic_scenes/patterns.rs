//! Ground-truth texture patterns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::Rgb;
use crate::mesh_pipeline::Texture;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Checker,
    Stripes,
    Noise,
}

fn lerp(a: Rgb, b: Rgb, t: f64) -> Rgb {
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
}

/// Square texture: a seeded base color per 4×4 atlas block, modulated by the
/// pattern.
pub fn pattern_texture(pattern: Pattern, size: usize, seed: u64) -> Result<Texture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let palette: Vec<Rgb> = (0..16).map(|_| [0.25 + 0.6 * rng.random::<f64>(), 0.25 + 0.6 * rng.random::<f64>(), 0.25 + 0.6 * rng.random::<f64>()]).collect();
    // Coarse value-noise lattice for the noise pattern.
    const LATTICE: usize = 9;
    let lattice: Vec<f64> = (0..LATTICE * LATTICE).map(|_| rng.random()).collect();
    let cell = (size / 16).max(1);
    let texels = (0..size * size)
        .map(|i| {
            let (x, y) = (i % size, i / size);
            let (u, v) = (x as f64 / (size - 1) as f64, y as f64 / (size - 1) as f64);
            let base = palette[((v * 4.0).min(3.999) as usize) * 4 + (u * 4.0).min(3.999) as usize];
            let dark = base.map(|c| c * 0.45);
            let t = match pattern {
                Pattern::Checker => ((x / cell + y / cell) % 2) as f64,
                Pattern::Stripes => ((y / cell) % 2) as f64,
                Pattern::Noise => {
                    let (gx, gy) = (u * (LATTICE - 1) as f64, v * (LATTICE - 1) as f64);
                    let (ix, iy) = ((gx as usize).min(LATTICE - 2), (gy as usize).min(LATTICE - 2));
                    let (fx, fy) = (gx - ix as f64, gy - iy as f64);
                    let at = |a: usize, b: usize| lattice[b * LATTICE + a];
                    let top = at(ix, iy) * (1.0 - fx) + at(ix + 1, iy) * fx;
                    let bot = at(ix, iy + 1) * (1.0 - fx) + at(ix + 1, iy + 1) * fx;
                    top * (1.0 - fy) + bot * fy
                }
            };
            lerp(dark, base, t)
        })
        .collect();
    Texture::new(size, size, texels)
}
