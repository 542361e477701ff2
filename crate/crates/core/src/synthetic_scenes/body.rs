//! Capsule-chain humanoid with smooth joint blending and a per-segment
//! cylindrical UV atlas.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::mesh_pipeline::{Joint, SkinnedMesh};

/// One capsule of the chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub name: &'static str,
    pub region: &'static str,
    pub parent: Option<usize>,
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub radius: f64,
}

/// The ten-segment reference humanoid, about 1.7 units tall, feet near y = 0.
pub fn humanoid_segments() -> Vec<Segment> {
    let s = |name, region, parent, start, end, radius| Segment { name, region, parent, start, end, radius };
    vec![
        s("torso", "torso", None, [0.0, 0.9, 0.0], [0.0, 1.32, 0.0], 0.16),
        s("head", "head", Some(0), [0.0, 1.44, 0.0], [0.0, 1.59, 0.0], 0.1),
        s("l_upper_arm", "arms", Some(0), [0.2, 1.36, 0.0], [0.42, 1.12, 0.0], 0.05),
        s("l_forearm", "arms", Some(2), [0.42, 1.12, 0.0], [0.6, 0.9, 0.02], 0.045),
        s("r_upper_arm", "arms", Some(0), [-0.2, 1.36, 0.0], [-0.42, 1.12, 0.0], 0.05),
        s("r_forearm", "arms", Some(4), [-0.42, 1.12, 0.0], [-0.6, 0.9, 0.02], 0.045),
        s("l_thigh", "legs", Some(0), [0.1, 0.88, 0.0], [0.12, 0.48, 0.0], 0.07),
        s("l_shin", "legs", Some(6), [0.12, 0.48, 0.0], [0.13, 0.09, 0.02], 0.06),
        s("r_thigh", "legs", Some(0), [-0.1, 0.88, 0.0], [-0.12, 0.48, 0.0], 0.07),
        s("r_shin", "legs", Some(8), [-0.12, 0.48, 0.0], [-0.13, 0.09, 0.02], 0.06),
    ]
}

/// Tessellation of one capsule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CapsuleRes {
    /// Vertices around the axis.
    pub sides: usize,
    /// Rings along the body of the capsule, end rings included.
    pub rings: usize,
}

impl Default for CapsuleRes {
    fn default() -> Self {
        Self { sides: 8, rings: 5 }
    }
}

/// The body mesh plus each triangle's segment index.
#[derive(Clone, Debug)]
pub struct ToyBody {
    pub mesh: SkinnedMesh,
    pub segments: Vec<Segment>,
    pub triangle_segment: Vec<usize>,
}

impl ToyBody {
    pub fn triangle_region(&self, t: usize) -> &'static str {
        self.segments[self.triangle_segment[t]].region
    }
}

const BLEND: f64 = 0.3;
const ATLAS_COLS: usize = 4;
const CELL_MARGIN: f64 = 0.04;

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn orthonormal(axis: &Vec3) -> (Vec3, Vec3) {
    let helper = if axis.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
    let a = axis.cross(&helper).normalize();
    let b = axis.cross(&a);
    (a, b)
}

/// Builds the first `count` segments of the humanoid.
pub fn build_toy_body(count: usize, res: CapsuleRes) -> Result<ToyBody> {
    let all = humanoid_segments();
    if count < 2 || count > all.len() {
        return Err(Error::InvalidSpec(format!("segment count {count} outside 2..={}", all.len())));
    }
    if res.sides < 3 || res.rings < 2 {
        return Err(Error::InvalidSpec("capsule needs at least 3 sides and 2 rings".into()));
    }
    let segments: Vec<Segment> = all.into_iter().take(count).collect();
    let rows = count.div_ceil(ATLAS_COLS);
    let (cw, ch) = (1.0 / ATLAS_COLS as f64, 1.0 / rows as f64);

    let mut mesh = SkinnedMesh { vertices: vec![], triangles: vec![], uvs: vec![], weights: vec![], joints: vec![] };
    let mut triangle_segment = Vec::new();
    for (si, seg) in segments.iter().enumerate() {
        mesh.joints.push(Joint { name: seg.name.to_string(), parent: seg.parent, rest_position: seg.start });
        let a = Vec3::from(seg.start);
        let b = Vec3::from(seg.end);
        let axis = (b - a).normalize();
        let len = (b - a).norm();
        let (e1, e2) = orthonormal(&axis);
        let (u0, v0) = ((si % ATLAS_COLS) as f64 * cw, (si / ATLAS_COLS) as f64 * ch);
        let cell_uv = |u: f64, v: f64| [u0 + cw * (CELL_MARGIN + (1.0 - 2.0 * CELL_MARGIN) * u), v0 + ch * (CELL_MARGIN + (1.0 - 2.0 * CELL_MARGIN) * v)];
        let weight = |t: f64| -> Vec<(u32, f64)> {
            match seg.parent {
                Some(p) if t < BLEND => {
                    let own = 0.5 + 0.5 * smoothstep(t / BLEND);
                    vec![(si as u32, own), (p as u32, 1.0 - own)]
                }
                _ => vec![(si as u32, 1.0)],
            }
        };
        // Parameter along the axis in [0, 1] for the cylinder, outside for caps.
        let total_v = len + 2.0 * seg.radius;
        let v_of = |t: f64| (seg.radius + t * len) / total_v;

        let base = mesh.vertices.len() as u32;
        let ring_len = res.sides + 1;
        for r in 0..res.rings {
            let t = r as f64 / (res.rings - 1) as f64;
            let c = a + (b - a) * t;
            for k in 0..=res.sides {
                let ang = TAU * k as f64 / res.sides as f64;
                let p = c + (e1 * ang.cos() + e2 * ang.sin()) * seg.radius;
                mesh.vertices.push([p.x, p.y, p.z]);
                mesh.uvs.push(cell_uv(k as f64 / res.sides as f64, v_of(t)));
                mesh.weights.push(weight(t));
            }
        }
        let pole_a = mesh.vertices.len() as u32;
        let pa = a - axis * seg.radius;
        mesh.vertices.push([pa.x, pa.y, pa.z]);
        mesh.uvs.push(cell_uv(0.5, 0.0));
        mesh.weights.push(weight(0.0));
        let pole_b = pole_a + 1;
        let pb = b + axis * seg.radius;
        mesh.vertices.push([pb.x, pb.y, pb.z]);
        mesh.uvs.push(cell_uv(0.5, 1.0));
        mesh.weights.push(weight(1.0));

        // Outward winding: (e1, e2, axis) is right-handed, so walking k upward
        // then r upward faces out.
        let idx = |r: usize, k: usize| base + (r * ring_len + k) as u32;
        for r in 0..res.rings - 1 {
            for k in 0..res.sides {
                mesh.triangles.push([idx(r, k), idx(r, k + 1), idx(r + 1, k + 1)]);
                mesh.triangles.push([idx(r, k), idx(r + 1, k + 1), idx(r + 1, k)]);
                triangle_segment.extend([si, si]);
            }
        }
        let last = res.rings - 1;
        for k in 0..res.sides {
            mesh.triangles.push([pole_a, idx(0, k + 1), idx(0, k)]);
            mesh.triangles.push([pole_b, idx(last, k), idx(last, k + 1)]);
            triangle_segment.extend([si, si]);
        }
    }
    mesh.validate()?;
    Ok(ToyBody { mesh, segments, triangle_segment })
}
