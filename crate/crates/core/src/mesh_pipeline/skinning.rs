//! Linear blend skinning over a joint tree.
//!
//! Joint `j` rotates about its rest pivot `c_j`: its local transform is
//! `x ↦ R(ω_j)(x - c_j) + c_j`, composed with its parent's global transform.
//! The root additionally carries the pose translation.

use nalgebra::Rotation3;

use super::{Pose, SkinnedMesh};
use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};

#[derive(Clone, Copy, Debug)]
struct Affine {
    lin: Mat3,
    trans: Vec3,
}

impl Affine {
    #[inline]
    fn apply(&self, p: &Vec3) -> Vec3 {
        self.lin * p + self.trans
    }
}

fn axis_angle_matrix(w: &[f64; 3]) -> Mat3 {
    *Rotation3::new(Vec3::from(*w)).matrix()
}

/// Partial derivatives `∂R/∂ω_i` of the axis-angle rotation `R(ω)`.
pub fn rodrigues_jacobian(w: &[f64; 3]) -> [Mat3; 3] {
    let omega = Vec3::from(*w);
    let theta2 = omega.norm_squared();
    let basis = [Vec3::x(), Vec3::y(), Vec3::z()];
    if theta2 < 1e-14 {
        return basis.map(|e| e.cross_matrix());
    }
    let r = axis_angle_matrix(w);
    let skew = omega.cross_matrix();
    let ir = Mat3::identity() - r;
    let mut out = [Mat3::zeros(); 3];
    for i in 0..3 {
        let v = omega.cross(&(ir * basis[i]));
        out[i] = (skew * omega[i] + v.cross_matrix()) * r / theta2;
    }
    out
}

fn check_pose(mesh: &SkinnedMesh, pose: &Pose) -> Result<()> {
    if pose.joint_rotations.len() != mesh.joints.len() {
        return Err(Error::JointCountMismatch { expected: mesh.joints.len(), got: pose.joint_rotations.len() });
    }
    if !pose.shape.is_empty() && pose.shape.len() != mesh.vertices.len() {
        return Err(Error::DimensionMismatch(format!(
            "pose has {} shape offsets for {} vertices",
            pose.shape.len(),
            mesh.vertices.len()
        )));
    }
    Ok(())
}

fn global_transforms(mesh: &SkinnedMesh, pose: &Pose) -> Vec<Affine> {
    let mut out: Vec<Affine> = Vec::with_capacity(mesh.joints.len());
    for (j, joint) in mesh.joints.iter().enumerate() {
        let c = Vec3::from(joint.rest_position);
        let r = axis_angle_matrix(&pose.joint_rotations[j]);
        let local = Affine { lin: r, trans: c - r * c };
        let parent = match joint.parent {
            Some(p) => out[p],
            None => Affine { lin: Mat3::identity(), trans: Vec3::from(pose.root_translation) },
        };
        out.push(Affine { lin: parent.lin * local.lin, trans: parent.lin * local.trans + parent.trans });
    }
    out
}

fn shaped_vertices(mesh: &SkinnedMesh, pose: &Pose) -> (Vec<Vec3>, Option<Vec<Vec3>>) {
    let rest = mesh.rest_vertices();
    if pose.shape.is_empty() {
        return (rest, None);
    }
    let normals = mesh.rest_normals();
    let shaped = rest.iter().zip(&normals).zip(&pose.shape).map(|((v, n), &s)| v + n * s).collect();
    (shaped, Some(normals))
}

/// Posed vertex positions. The identity pose returns the rest vertices exactly.
pub fn skin(mesh: &SkinnedMesh, pose: &Pose) -> Result<Vec<Vec3>> {
    check_pose(mesh, pose)?;
    if pose.is_identity() {
        return Ok(mesh.rest_vertices());
    }
    let globals = global_transforms(mesh, pose);
    let (shaped, _) = shaped_vertices(mesh, pose);
    Ok(shaped
        .iter()
        .zip(&mesh.weights)
        .map(|(v, w)| w.iter().fold(Vec3::zeros(), |acc, &(j, wt)| acc + globals[j as usize].apply(v) * wt))
        .collect())
}

/// Gradient of a loss with respect to pose parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseGrad {
    pub joint_rotations: Vec<[f64; 3]>,
    pub root_translation: [f64; 3],
    pub shape: Vec<f64>,
}

impl PoseGrad {
    pub fn zeros_like(pose: &Pose) -> Self {
        PoseGrad {
            joint_rotations: vec![[0.0; 3]; pose.joint_rotations.len()],
            root_translation: [0.0; 3],
            shape: vec![0.0; pose.shape.len()],
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.joint_rotations.iter().flatten().copied().collect();
        v.extend_from_slice(&self.root_translation);
        v.extend_from_slice(&self.shape);
        v
    }

    pub fn add(&mut self, o: &PoseGrad) {
        for (a, b) in self.joint_rotations.iter_mut().zip(&o.joint_rotations) {
            for i in 0..3 {
                a[i] += b[i];
            }
        }
        for i in 0..3 {
            self.root_translation[i] += o.root_translation[i];
        }
        for (a, b) in self.shape.iter_mut().zip(&o.shape) {
            *a += b;
        }
    }
}

/// Backward of [`skin`] given per-vertex gradients on posed positions.
pub fn skin_backward(mesh: &SkinnedMesh, pose: &Pose, g_posed: &[Vec3]) -> Result<PoseGrad> {
    check_pose(mesh, pose)?;
    let nj = mesh.joints.len();
    let globals = global_transforms(mesh, pose);
    let (shaped, normals) = shaped_vertices(mesh, pose);

    // ancestors-or-self chain per joint
    let chains: Vec<Vec<usize>> = (0..nj)
        .map(|j| {
            let mut chain = vec![j];
            let mut cur = mesh.joints[j].parent;
            while let Some(p) = cur {
                chain.push(p);
                cur = mesh.joints[p].parent;
            }
            chain
        })
        .collect();
    let parent_lin: Vec<Mat3> =
        (0..nj).map(|k| mesh.joints[k].parent.map_or(Mat3::identity(), |p| globals[p].lin)).collect();

    let mut outer = vec![Mat3::zeros(); nj];
    let mut grad = PoseGrad::zeros_like(pose);
    let mut sub_points = vec![Vec3::zeros(); nj];
    let mut sub_weight = vec![0.0; nj];
    let mut touched: Vec<usize> = Vec::with_capacity(nj);
    let mut marked = vec![false; nj];

    for (vi, (v, w)) in shaped.iter().zip(&mesh.weights).enumerate() {
        let g = g_posed[vi];
        if g == Vec3::zeros() {
            continue;
        }
        touched.clear();
        let mut lin_sum = Mat3::zeros();
        for &(j, wt) in w {
            let j = j as usize;
            let p = globals[j].apply(v) * wt;
            lin_sum += globals[j].lin * wt;
            for &k in &chains[j] {
                if !marked[k] {
                    marked[k] = true;
                    touched.push(k);
                }
                sub_points[k] += p;
                sub_weight[k] += wt;
            }
        }
        for &k in &touched {
            let c = Vec3::from(mesh.joints[k].rest_position);
            let y = globals[k].lin.transpose() * (sub_points[k] - globals[k].trans * sub_weight[k]) - c * sub_weight[k];
            outer[k] += (parent_lin[k].transpose() * g) * y.transpose();
            sub_points[k] = Vec3::zeros();
            sub_weight[k] = 0.0;
            marked[k] = false;
        }
        for i in 0..3 {
            grad.root_translation[i] += g[i];
        }
        if let Some(normals) = &normals {
            grad.shape[vi] = g.dot(&(lin_sum * normals[vi]));
        }
    }

    for k in 0..nj {
        let jac = rodrigues_jacobian(&pose.joint_rotations[k]);
        for a in 0..3 {
            grad.joint_rotations[k][a] = jac[a].component_mul(&outer[k]).sum();
        }
    }
    Ok(grad)
}
