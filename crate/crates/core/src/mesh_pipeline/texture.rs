use crate::error::{Error, Result};
use crate::image::Rgb;

/// RGB texture. Texel `(i, j)` is centered at `uv = (i / (W-1), j / (H-1))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    pub width: usize,
    pub height: usize,
    pub texels: Vec<Rgb>,
}

impl Texture {
    pub fn new(width: usize, height: usize, texels: Vec<Rgb>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidScene(format!("texture must be at least 2x2, got {width}x{height}")));
        }
        if texels.len() != width * height {
            return Err(Error::DimensionMismatch(format!("{} texels for a {width}x{height} texture", texels.len())));
        }
        Ok(Texture { width, height, texels })
    }

    pub fn uniform(width: usize, height: usize, color: Rgb) -> Result<Self> {
        Texture::new(width, height, vec![color; width * height])
    }

    #[inline]
    pub fn texel(&self, x: usize, y: usize) -> Rgb {
        self.texels[y * self.width + x]
    }
}

/// The four texels a bilinear lookup touches, with their weights.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Footprint {
    pub idx: [usize; 4],
    pub w: [f64; 4],
    /// d(weights)/du and d(weights)/dv; zero when the coordinate was clamped.
    pub dw_du: [f64; 4],
    pub dw_dv: [f64; 4],
    pub clamped: bool,
}

pub(crate) fn footprint(tex: &Texture, uv: [f64; 2]) -> Footprint {
    let (sx, sy) = ((tex.width - 1) as f64, (tex.height - 1) as f64);
    let (u, v) = (uv[0].clamp(0.0, 1.0), uv[1].clamp(0.0, 1.0));
    let u_in = uv[0] > 0.0 && uv[0] < 1.0;
    let v_in = uv[1] > 0.0 && uv[1] < 1.0;
    let (x, y) = (u * sx, v * sy);
    let x0 = (x.floor() as usize).min(tex.width - 1);
    let y0 = (y.floor() as usize).min(tex.height - 1);
    let x1 = (x0 + 1).min(tex.width - 1);
    let y1 = (y0 + 1).min(tex.height - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let idx = [y0 * tex.width + x0, y0 * tex.width + x1, y1 * tex.width + x0, y1 * tex.width + x1];
    let w = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
    let du = if u_in { sx } else { 0.0 };
    let dv = if v_in { sy } else { 0.0 };
    let dw_du = [-(1.0 - fy) * du, (1.0 - fy) * du, -fy * du, fy * du];
    let dw_dv = [-(1.0 - fx) * dv, -fx * dv, (1.0 - fx) * dv, fx * dv];
    let clamped = !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1]);
    Footprint { idx, w, dw_du, dw_dv, clamped }
}

/// Bilinear lookup with `uv` clamped to `[0,1]`.
pub fn sample_texture(tex: &Texture, uv: [f64; 2]) -> Rgb {
    let fp = footprint(tex, uv);
    let mut out = [0.0; 3];
    for k in 0..4 {
        let t = tex.texels[fp.idx[k]];
        for c in 0..3 {
            out[c] += fp.w[k] * t[c];
        }
    }
    out
}

/// Lookup plus the derivative of every channel with respect to `u` and `v`.
pub fn sample_texture_with_grad(tex: &Texture, uv: [f64; 2]) -> (Rgb, [Rgb; 2]) {
    let fp = footprint(tex, uv);
    let mut out = [0.0; 3];
    let mut du = [0.0; 3];
    let mut dv = [0.0; 3];
    for k in 0..4 {
        let t = tex.texels[fp.idx[k]];
        for c in 0..3 {
            out[c] += fp.w[k] * t[c];
            du[c] += fp.dw_du[k] * t[c];
            dv[c] += fp.dw_dv[k] * t[c];
        }
    }
    (out, [du, dv])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Texture {
        Texture::new(3, 2, (0..6).map(|i| [i as f64, 0.5, 1.0 - i as f64 / 5.0]).collect()).unwrap()
    }

    #[test]
    fn texel_center_returns_texel() {
        let t = ramp();
        assert_eq!(sample_texture(&t, [0.5, 1.0]), t.texel(1, 1));
        assert_eq!(sample_texture(&t, [0.0, 0.0]), t.texel(0, 0));
    }

    #[test]
    fn midpoint_averages_neighbours() {
        let t = ramp();
        let s = sample_texture(&t, [0.25, 0.0]);
        let (a, b) = (t.texel(0, 0), t.texel(1, 0));
        for c in 0..3 {
            assert!((s[c] - 0.5 * (a[c] + b[c])).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_texture_is_constant() {
        let t = Texture::uniform(4, 4, [0.2, 0.3, 0.4]).unwrap();
        for uv in [[0.1, 0.9], [-3.0, 0.5], [0.77, 2.0]] {
            let s = sample_texture(&t, uv);
            for c in 0..3 {
                assert!((s[c] - [0.2, 0.3, 0.4][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uv_gradient_matches_finite_differences() {
        let t = ramp();
        let uv = [0.37, 0.41];
        let (_, d) = sample_texture_with_grad(&t, uv);
        let h = 1e-6;
        for axis in 0..2 {
            let mut a = uv;
            let mut b = uv;
            a[axis] += h;
            b[axis] -= h;
            let (sa, sb) = (sample_texture(&t, a), sample_texture(&t, b));
            for c in 0..3 {
                assert!(((sa[c] - sb[c]) / (2.0 * h) - d[axis][c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tiny_texture_rejected() {
        assert!(Texture::uniform(1, 4, [0.0; 3]).is_err());
    }
}
