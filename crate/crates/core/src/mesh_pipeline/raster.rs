//! Z-buffered triangle rasterizer producing mesh color, depth and coverage.
//!
//! Pixel `(x, y)` samples the continuous image point `(x, y)`. Coverage is
//! decided with screen-space edge functions; depth and barycentrics come from
//! intersecting the pixel ray with the triangle plane in camera space, which is
//! exactly perspective-correct and gives clean vertex gradients.

use nalgebra::Matrix3;
use rayon::prelude::*;

use super::texture::{footprint, Texture};
use crate::geometry::{Camera, Vec3, NEAR_PLANE};
use crate::image::{GrayImage, Image, Rgb, RgbImage};
use crate::util::GateHasher;

/// Surface sample stored for every covered pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fragment {
    pub triangle: u32,
    /// Barycentric weights of the triangle's three vertices.
    pub bary: [f64; 3],
    pub uv: [f64; 2],
    pub depth: f64,
}

#[derive(Clone, Debug)]
pub struct MeshRaster {
    pub rgb: RgbImage,
    /// Camera-space depth; `+∞` where nothing is covered.
    pub depth: GrayImage,
    pub fragments: Image<Option<Fragment>>,
    cam_vertices: Vec<Vec3>,
}

impl MeshRaster {
    pub fn coverage(&self) -> Image<bool> {
        self.fragments.map(|f| f.is_some())
    }

    /// Hash of every discrete decision: z-buffer winners, uv clamping and
    /// the bilinear cell each lookup falls in.
    pub fn gate_signature(&self, tex: &Texture, hasher: &mut GateHasher) {
        for (i, f) in self.fragments.data.iter().enumerate() {
            if let Some(f) = f {
                let fp = footprint(tex, f.uv);
                hasher.write(i as u64);
                hasher.write(f.triangle as u64);
                hasher.write(fp.clamped as u64);
                hasher.write(fp.idx[0] as u64);
            }
        }
    }
}

struct ScreenTri {
    id: u32,
    screen: [[f64; 2]; 3],
    area: f64,
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// [`edge`] evaluated from a fixed endpoint order, so that the two triangles
/// sharing an edge get exactly opposite values and no sample falls between them.
#[inline]
fn side(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    if (a[0], a[1]) <= (b[0], b[1]) {
        edge(a, b, p)
    } else {
        -edge(b, a, p)
    }
}

#[inline]
fn pixel_ray(cam: &Camera, x: usize, y: usize) -> Vec3 {
    Vec3::new((x as f64 - cam.cx) / cam.fx, (y as f64 - cam.cy) / cam.fy, 1.0)
}

#[inline]
fn ray_system(ray: &Vec3, v: &[Vec3; 3]) -> Matrix3<f64> {
    Matrix3::from_columns(&[*ray, -(v[1] - v[0]), -(v[2] - v[0])])
}

/// Solves `t·ray = v0 + λ1(v1 - v0) + λ2(v2 - v0)` for `(t, λ1, λ2)`.
#[inline]
fn intersect(ray: &Vec3, v: &[Vec3; 3]) -> Option<Vec3> {
    ray_system(ray, v).lu().solve(&v[0])
}

/// Rasterizes a posed mesh. `backdrop` fills uncovered pixels of the color image.
pub fn rasterize_mesh(
    vertices: &[Vec3],
    triangles: &[[u32; 3]],
    uvs: &[[f64; 2]],
    tex: &Texture,
    cam: &Camera,
    backdrop: Rgb,
) -> MeshRaster {
    let (w, h) = (cam.width, cam.height);
    let cam_vertices: Vec<Vec3> = vertices.iter().map(|v| cam.to_camera(v)).collect();

    let mut tris = Vec::new();
    for (id, t) in triangles.iter().enumerate() {
        let cv = t.map(|i| cam_vertices[i as usize]);
        if cv.iter().any(|v| !(v.z > NEAR_PLANE)) {
            continue;
        }
        let screen = cv.map(|v| cam.project_camera_point(&v));
        let area = edge(screen[0], screen[1], screen[2]);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for s in &screen {
            for k in 0..2 {
                lo[k] = lo[k].min(s[k]);
                hi[k] = hi[k].max(s[k]);
            }
        }
        if hi[0] < 0.0 || hi[1] < 0.0 || lo[0] > (w - 1) as f64 || lo[1] > (h - 1) as f64 {
            continue;
        }
        tris.push(ScreenTri {
            id: id as u32,
            screen,
            area,
            x0: lo[0].max(0.0).ceil() as usize,
            x1: (hi[0].floor() as usize).min(w - 1),
            y0: lo[1].max(0.0).ceil() as usize,
            y1: (hi[1].floor() as usize).min(h - 1),
        });
    }

    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); h];
    for (k, t) in tris.iter().enumerate() {
        if t.y0 > t.y1 {
            continue;
        }
        for row in &mut rows[t.y0..=t.y1] {
            row.push(k);
        }
    }

    let mut fragments: Vec<Option<Fragment>> = vec![None; w * h];
    fragments.par_chunks_mut(w).enumerate().for_each(|(y, out)| {
        for &k in &rows[y] {
            let t = &tris[k];
            let cv = triangles[t.id as usize].map(|i| cam_vertices[i as usize]);
            for x in t.x0..=t.x1 {
                let p = [x as f64, y as f64];
                let e0 = side(t.screen[1], t.screen[2], p) / t.area;
                let e1 = side(t.screen[2], t.screen[0], p) / t.area;
                let e2 = side(t.screen[0], t.screen[1], p) / t.area;
                if e0 < 0.0 || e1 < 0.0 || e2 < 0.0 {
                    continue;
                }
                let Some(sol) = intersect(&pixel_ray(cam, x, y), &cv) else { continue };
                let depth = sol.x;
                if !(depth > NEAR_PLANE) {
                    continue;
                }
                if out[x].is_some_and(|f| f.depth <= depth) {
                    continue;
                }
                let bary = [1.0 - sol.y - sol.z, sol.y, sol.z];
                let tri = &triangles[t.id as usize];
                let mut uv = [0.0; 2];
                for c in 0..3 {
                    let tuv = uvs[tri[c] as usize];
                    uv[0] += bary[c] * tuv[0];
                    uv[1] += bary[c] * tuv[1];
                }
                out[x] = Some(Fragment { triangle: t.id, bary, uv, depth });
            }
        }
    });

    let fragments = Image { width: w, height: h, data: fragments };
    let rgb = fragments.map(|f| match f {
        Some(f) => super::sample_texture(tex, f.uv),
        None => backdrop,
    });
    let depth = fragments.map(|f| f.map_or(f64::INFINITY, |f| f.depth));
    MeshRaster { rgb, depth, fragments, cam_vertices }
}

/// Gradients of the mesh rasterizer inputs.
#[derive(Clone, Debug)]
pub struct MeshGrad {
    pub texels: Vec<Rgb>,
    /// World-space gradient per posed vertex.
    pub vertices: Vec<Vec3>,
}

impl MeshRaster {
    /// Backward pass: `g_rgb` and `g_depth` are loss gradients per pixel.
    /// Vertex gradients only account for pixels staying inside their triangle.
    pub fn backward(
        &self,
        triangles: &[[u32; 3]],
        uvs: &[[f64; 2]],
        tex: &Texture,
        cam: &Camera,
        g_rgb: &[Rgb],
        g_depth: Option<&[f64]>,
        want_vertices: bool,
    ) -> MeshGrad {
        let w = self.fragments.width;
        let rot_t = cam.rotation_matrix().transpose();

        type RowOut = (Vec<(usize, Rgb)>, Vec<(u32, Vec3)>);
        let rows: Vec<RowOut> = self
            .fragments
            .data
            .par_chunks(w)
            .enumerate()
            .map(|(y, row)| {
                let mut tex_out = Vec::new();
                let mut vert_out = Vec::new();
                for (x, f) in row.iter().enumerate() {
                    let Some(f) = f else { continue };
                    let pix = y * w + x;
                    let g = g_rgb[pix];
                    let gd = g_depth.map_or(0.0, |d| d[pix]);
                    if g == [0.0; 3] && gd == 0.0 {
                        continue;
                    }
                    let fp = footprint(tex, f.uv);
                    for k in 0..4 {
                        tex_out.push((fp.idx[k], g.map(|c| c * fp.w[k])));
                    }
                    if !want_vertices {
                        continue;
                    }
                    let mut g_uv = [0.0; 2];
                    for k in 0..4 {
                        let t = tex.texels[fp.idx[k]];
                        for c in 0..3 {
                            g_uv[0] += g[c] * fp.dw_du[k] * t[c];
                            g_uv[1] += g[c] * fp.dw_dv[k] * t[c];
                        }
                    }
                    let tri = triangles[f.triangle as usize];
                    let g_bary: [f64; 3] = tri.map(|i| {
                        let uv = uvs[i as usize];
                        g_uv[0] * uv[0] + g_uv[1] * uv[1]
                    });
                    let g_x = Vec3::new(gd, g_bary[1] - g_bary[0], g_bary[2] - g_bary[0]);
                    let cv = tri.map(|i| self.cam_vertices[i as usize]);
                    let a = ray_system(&pixel_ray(cam, x, y), &cv);
                    let Some(a_inv) = a.try_inverse() else { continue };
                    let sol = Vec3::new(f.depth, f.bary[1], f.bary[2]);
                    let yv = a_inv.transpose() * g_x;
                    let g_a = -(yv * sol.transpose());
                    let c1 = g_a.column(1).into_owned();
                    let c2 = g_a.column(2).into_owned();
                    vert_out.push((tri[0], rot_t * (yv + c1 + c2)));
                    vert_out.push((tri[1], rot_t * (-c1)));
                    vert_out.push((tri[2], rot_t * (-c2)));
                }
                (tex_out, vert_out)
            })
            .collect();

        let mut texels = vec![[0.0; 3]; tex.texels.len()];
        let mut vertices = vec![Vec3::zeros(); self.cam_vertices.len()];
        for (tex_out, vert_out) in rows {
            for (i, g) in tex_out {
                for c in 0..3 {
                    texels[i][c] += g[c];
                }
            }
            for (i, g) in vert_out {
                vertices[i as usize] += g;
            }
        }
        MeshGrad { texels, vertices }
    }
}
