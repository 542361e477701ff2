//! Skinned mesh, texture, linear blend skinning and the mesh rasterizer.

mod io;
mod raster;
mod skinning;
mod texture;

pub use io::{load_mesh, read_obj, read_skin_sidecar, save_mesh, write_obj, write_skin_sidecar, SkinSidecar};
pub use raster::{rasterize_mesh, Fragment, MeshGrad, MeshRaster};
pub use skinning::{rodrigues_jacobian, skin, skin_backward, PoseGrad};
pub use texture::{sample_texture, sample_texture_with_grad, Texture};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    /// Parent joint index; always smaller than the joint's own index.
    pub parent: Option<usize>,
    /// Rest-pose pivot in world space.
    pub rest_position: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkinnedMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
    pub uvs: Vec<[f64; 2]>,
    /// Sparse `(joint, weight)` list per vertex.
    pub weights: Vec<Vec<(u32, f64)>>,
    pub joints: Vec<Joint>,
}

impl SkinnedMesh {
    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        if self.uvs.len() != nv || self.weights.len() != nv {
            return Err(Error::InvalidMesh(format!(
                "{} vertices but {} uvs and {} weight rows",
                nv,
                self.uvs.len(),
                self.weights.len()
            )));
        }
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v as usize >= nv) {
                return Err(Error::InvalidMesh(format!("triangle {i} references a missing vertex")));
            }
        }
        for (i, uv) in self.uvs.iter().enumerate() {
            if !uv.iter().all(|c| (0.0..=1.0).contains(c)) {
                return Err(Error::InvalidMesh(format!("uv of vertex {i} outside [0,1]")));
            }
        }
        for (j, joint) in self.joints.iter().enumerate() {
            match joint.parent {
                None if j != 0 => return Err(Error::InvalidMesh(format!("joint {j} has no parent; only joint 0 may be the root"))),
                Some(p) if p >= j => return Err(Error::InvalidMesh(format!("joint {j} has parent {p} that is not before it"))),
                _ => {}
            }
        }
        if self.joints.is_empty() {
            return Err(Error::InvalidMesh("mesh has no joints".into()));
        }
        for (i, w) in self.weights.iter().enumerate() {
            let sum: f64 = w.iter().map(|&(_, x)| x).sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidMesh(format!("skinning weights of vertex {i} sum to {sum}")));
            }
            if w.iter().any(|&(j, x)| j as usize >= self.joints.len() || x < 0.0) {
                return Err(Error::InvalidMesh(format!("vertex {i} has an invalid skinning weight")));
            }
        }
        Ok(())
    }

    /// Area-weighted rest-pose vertex normals.
    pub fn rest_normals(&self) -> Vec<Vec3> {
        let mut n = vec![Vec3::zeros(); self.vertices.len()];
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| Vec3::from(self.vertices[i as usize]));
            let f = (b - a).cross(&(c - a));
            for &i in t {
                n[i as usize] += f;
            }
        }
        n.into_iter().map(|v| if v.norm() > 0.0 { v.normalize() } else { v }).collect()
    }

    pub fn rest_vertices(&self) -> Vec<Vec3> {
        self.vertices.iter().map(|&v| Vec3::from(v)).collect()
    }
}

/// Per-frame articulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Axis-angle rotation per joint, about the joint's rest pivot.
    pub joint_rotations: Vec<[f64; 3]>,
    pub root_translation: [f64; 3],
    /// Per-vertex offset along the rest normal; empty means all zero.
    #[serde(default)]
    pub shape: Vec<f64>,
}

impl Pose {
    pub fn identity(joints: usize) -> Self {
        Pose { joint_rotations: vec![[0.0; 3]; joints], root_translation: [0.0; 3], shape: Vec::new() }
    }

    pub fn is_identity(&self) -> bool {
        self.joint_rotations.iter().all(|r| *r == [0.0; 3])
            && self.root_translation == [0.0; 3]
            && self.shape.iter().all(|&s| s == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (j, r) in self.joint_rotations.iter().enumerate() {
            let mag = Vec3::from(*r).norm();
            if !mag.is_finite() || mag >= std::f64::consts::PI {
                return Err(Error::InvalidScene(format!("joint {j} rotation magnitude {mag} outside [0, pi)")));
            }
        }
        if !self.root_translation.iter().chain(&self.shape).all(|v| v.is_finite()) {
            return Err(Error::InvalidScene("pose has non-finite entries".into()));
        }
        Ok(())
    }

    /// Number of scalar parameters: 3 per joint, 3 for translation, one per shape entry.
    pub fn param_count(&self) -> usize {
        3 * self.joint_rotations.len() + 3 + self.shape.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.joint_rotations.iter().flatten().copied().collect();
        v.extend_from_slice(&self.root_translation);
        v.extend_from_slice(&self.shape);
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        let nj = self.joint_rotations.len();
        for j in 0..nj {
            self.joint_rotations[j] = [v[3 * j], v[3 * j + 1], v[3 * j + 2]];
        }
        self.root_translation = [v[3 * nj], v[3 * nj + 1], v[3 * nj + 2]];
        self.shape.copy_from_slice(&v[3 * nj + 3..]);
    }
}
