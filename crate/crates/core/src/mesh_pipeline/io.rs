//! Wavefront OBJ (positions, uv, faces) plus a JSON sidecar holding the joint
//! tree and skinning weights.
//!
//! Sidecar schema:
//!
//! ```json
//! { "format": "meshsplat-skin", "version": 1,
//!   "joints": [ { "name": "pelvis", "parent": null, "rest_position": [0, 1, 0] }, ... ],
//!   "weights": [ [ [0, 0.5], [1, 0.5] ], ... ] }
//! ```
//!
//! `weights` has one row per OBJ vertex, each a list of `[joint, weight]` pairs.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Joint, SkinnedMesh};
use crate::error::{Error, Result};
use crate::util::{read_to_string, write_atomic};

pub const SKIN_FORMAT: &str = "meshsplat-skin";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkinSidecar {
    pub format: String,
    pub version: u32,
    pub joints: Vec<Joint>,
    pub weights: Vec<Vec<(u32, f64)>>,
}

pub fn write_obj(mesh: &SkinnedMesh) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    for uv in &mesh.uvs {
        let _ = writeln!(s, "vt {} {}", uv[0], uv[1]);
    }
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| i + 1);
        let _ = writeln!(s, "f {a}/{a} {b}/{b} {c}/{c}");
    }
    s
}

/// Parses positions, texture coordinates and triangular faces. Each vertex
/// takes the uv of the first face corner that references it.
pub fn read_obj(text: &str) -> Result<(Vec<[f64; 3]>, Vec<[u32; 3]>, Vec<[f64; 2]>)> {
    let mut verts = Vec::new();
    let mut tcs = Vec::new();
    let mut faces = Vec::new();
    let mut corner_uv: Vec<Option<usize>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let bad = |what: &str| Error::Parse(format!("obj line {}: {what}", lineno + 1));
        let mut it = line.split_whitespace();
        let nums = |it: std::str::SplitWhitespace<'_>| -> Result<Vec<f64>> {
            it.map(|t| t.parse::<f64>().map_err(|_| bad("bad number"))).collect()
        };
        match it.next() {
            Some("v") => {
                let n = nums(it)?;
                if n.len() < 3 {
                    return Err(bad("vertex needs 3 coordinates"));
                }
                verts.push([n[0], n[1], n[2]]);
                corner_uv.push(None);
            }
            Some("vt") => {
                let n = nums(it)?;
                if n.len() < 2 {
                    return Err(bad("texture coordinate needs 2 values"));
                }
                tcs.push([n[0], n[1]]);
            }
            Some("f") => {
                let corners: Vec<&str> = it.collect();
                if corners.len() != 3 {
                    return Err(bad("only triangles are supported"));
                }
                let mut tri = [0u32; 3];
                for (k, c) in corners.iter().enumerate() {
                    let mut parts = c.split('/');
                    let vi: usize = parts.next().and_then(|p| p.parse().ok()).ok_or_else(|| bad("bad face index"))?;
                    if vi == 0 || vi > verts.len() {
                        return Err(bad("face index out of range"));
                    }
                    if let Some(ti) = parts.next().filter(|p| !p.is_empty()) {
                        let ti: usize = ti.parse().map_err(|_| bad("bad uv index"))?;
                        if ti == 0 || ti > tcs.len() {
                            return Err(bad("uv index out of range"));
                        }
                        corner_uv[vi - 1].get_or_insert(ti - 1);
                    }
                    tri[k] = (vi - 1) as u32;
                }
                faces.push(tri);
            }
            _ => {}
        }
    }
    let uvs = corner_uv.iter().map(|t| t.map_or([0.0, 0.0], |i| tcs[i])).collect();
    Ok((verts, faces, uvs))
}

pub fn write_skin_sidecar(mesh: &SkinnedMesh) -> String {
    let side = SkinSidecar { format: SKIN_FORMAT.into(), version: 1, joints: mesh.joints.clone(), weights: mesh.weights.clone() };
    serde_json::to_string_pretty(&side).expect("sidecar serializes")
}

pub fn read_skin_sidecar(text: &str) -> Result<SkinSidecar> {
    let side: SkinSidecar = serde_json::from_str(text).map_err(|e| Error::Parse(format!("skin sidecar: {e}")))?;
    if side.format != SKIN_FORMAT || side.version != 1 {
        return Err(Error::Parse(format!("unsupported skin sidecar {} v{}", side.format, side.version)));
    }
    Ok(side)
}

/// Writes `<stem>.obj` and `<stem>.skin.json`.
pub fn save_mesh(mesh: &SkinnedMesh, dir: &Path, stem: &str) -> Result<()> {
    write_atomic(&dir.join(format!("{stem}.obj")), write_obj(mesh).as_bytes())?;
    write_atomic(&dir.join(format!("{stem}.skin.json")), write_skin_sidecar(mesh).as_bytes())
}

pub fn load_mesh(dir: &Path, stem: &str) -> Result<SkinnedMesh> {
    let (vertices, triangles, uvs) = read_obj(&read_to_string(&dir.join(format!("{stem}.obj")))?)?;
    let side = read_skin_sidecar(&read_to_string(&dir.join(format!("{stem}.skin.json")))?)?;
    let mesh = SkinnedMesh { vertices, triangles, uvs, weights: side.weights, joints: side.joints };
    mesh.validate()?;
    Ok(mesh)
}
