//! Polygon frames, mesh-attached Gaussians, covariance and pinhole projection.
//!
//! Every Gaussian is stored relative to the triangle it is attached to. A
//! triangle contributes a rigid frame (center, rotation) plus a uniform scale,
//! and the Gaussian's world mean, rotation and scale are obtained by composing
//! its local offsets with that frame. The functions suffixed `_backward`
//! propagate gradients through the corresponding forward function.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Camera-space depth below which points are rejected.
pub const NEAR_PLANE: f64 = 0.01;
/// Added to the diagonal of every projected covariance, in px².
pub const COV2D_DILATION: f64 = 0.3;
const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Quaternion stored as `[w, x, y, z]`.
pub type Quat = [f64; 4];

pub const QUAT_IDENTITY: Quat = [1.0, 0.0, 0.0, 0.0];

pub fn quat_normalize(q: Quat) -> Quat {
    let n = quat_norm(q);
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

#[inline]
pub fn quat_norm(q: Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

/// Hamilton product `a * b`.
pub fn quat_mul(a: Quat, b: Quat) -> Quat {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

pub fn quat_from_unit(q: &UnitQuaternion<f64>) -> Quat {
    [q.w, q.i, q.j, q.k]
}

pub fn quat_to_unit(q: Quat) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]))
}

/// Rotation matrix of the normalized quaternion.
pub fn quat_to_matrix(q: Quat) -> Mat3 {
    let [w, x, y, z] = quat_normalize(q);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Gradient of `quat_to_matrix` with respect to the raw (unnormalized) quaternion.
pub fn quat_to_matrix_backward(q: Quat, g: &Mat3) -> Quat {
    let norm = quat_norm(q);
    let [w, x, y, z] = quat_normalize(q);
    let gw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)] + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)] - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let gn = [gw, gx, gy, gz];
    let qn = [w, x, y, z];
    let dot: f64 = (0..4).map(|i| gn[i] * qn[i]).sum();
    [0, 1, 2, 3].map(|i| (gn[i] - qn[i] * dot) / norm)
}

/// Rigid frame plus uniform scale attached to one triangle.
#[derive(Clone, Debug, PartialEq)]
pub struct PolygonFrame {
    pub translation: Vec3,
    pub rotation: UnitQuaternion<f64>,
    /// Same rotation as a matrix with columns `[edge, normal × edge, normal]`.
    pub basis: Mat3,
    pub scale: f64,
}

impl PolygonFrame {
    pub fn identity() -> Self {
        PolygonFrame { translation: Vec3::zeros(), rotation: UnitQuaternion::identity(), basis: Mat3::identity(), scale: 1.0 }
    }

    pub fn from_parts(translation: Vec3, rotation: UnitQuaternion<f64>, scale: f64) -> Self {
        let basis = *rotation.to_rotation_matrix().matrix();
        PolygonFrame { translation, rotation, basis, scale }
    }
}

/// Frame of triangle `(v0, v1, v2)`: centroid, edge/normal basis, and scale
/// `(|v1 - v0| + h) / 2` with `h` the height of `v2` over the edge `v0v1`.
pub fn polygon_frame(v0: &Vec3, v1: &Vec3, v2: &Vec3) -> Result<PolygonFrame> {
    let a = v1 - v0;
    let b = v2 - v0;
    let m = a.cross(&b);
    let area = 0.5 * m.norm();
    if area.is_nan() || area <= MIN_TRIANGLE_AREA {
        return Err(Error::DegenerateTriangle { area });
    }
    let a_len = a.norm();
    let e = a / a_len;
    let n = m / m.norm();
    let basis = Mat3::from_columns(&[e, n.cross(&e), n]);
    let height = m.norm() / a_len;
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(basis));
    Ok(PolygonFrame { translation: (v0 + v1 + v2) / 3.0, rotation, basis, scale: 0.5 * (a_len + height) })
}

/// Gradients of a loss with respect to a polygon frame.
#[derive(Clone, Debug, Default)]
pub struct FrameGrad {
    pub translation: Vec3,
    pub basis: Mat3,
    pub scale: f64,
}

impl FrameGrad {
    pub fn zero() -> Self {
        FrameGrad { translation: Vec3::zeros(), basis: Mat3::zeros(), scale: 0.0 }
    }

    pub fn add(&mut self, other: &FrameGrad) {
        self.translation += other.translation;
        self.basis += other.basis;
        self.scale += other.scale;
    }
}

#[inline]
fn normalize_backward(v: &Vec3, g: &Vec3) -> Vec3 {
    let len = v.norm();
    let u = v / len;
    (g - u * u.dot(g)) / len
}

/// Propagates a frame gradient back to the three triangle vertices.
pub fn polygon_frame_backward(v0: &Vec3, v1: &Vec3, v2: &Vec3, grad: &FrameGrad) -> [Vec3; 3] {
    let a = v1 - v0;
    let b = v2 - v0;
    let m = a.cross(&b);
    let a_len = a.norm();
    let m_len = m.norm();
    let e = a / a_len;
    let n = m / m_len;

    let g_c1 = grad.basis.column(1).into_owned();
    let g_e = grad.basis.column(0).into_owned() + g_c1.cross(&n);
    let g_n = grad.basis.column(2).into_owned() + e.cross(&g_c1);

    let g_alen = 0.5 * grad.scale * (1.0 - m_len / (a_len * a_len));
    let g_mlen = 0.5 * grad.scale / a_len;

    let mut g_a = normalize_backward(&a, &g_e) + e * g_alen;
    let g_m = normalize_backward(&m, &g_n) + n * g_mlen;
    g_a += b.cross(&g_m);
    let g_b = g_m.cross(&a);

    let g_t = grad.translation / 3.0;
    [g_t - g_a - g_b, g_t + g_a, g_t + g_b]
}

/// One mesh-attached Gaussian. Offsets are expressed in the parent polygon's frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub parent: u32,
    pub offset: [f64; 3],
    pub rotation: Quat,
    pub log_scale: [f64; 3],
    pub color: [f64; 3],
    pub opacity: f64,
}

/// A Gaussian after composing its offsets with its parent frame.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldGaussian {
    pub mean: Vec3,
    pub rotation: Quat,
    pub rotation_matrix: Mat3,
    pub scale: Vec3,
}

/// `r' = R r`, `μ' = k R μ + T`, `s' = k exp(s)`.
pub fn gaussian_to_world(g: &Gaussian, f: &PolygonFrame) -> WorldGaussian {
    let mu = Vec3::from(g.offset);
    let local_rot = quat_to_matrix(g.rotation);
    let scale = Vec3::from(g.log_scale.map(f64::exp)) * f.scale;
    WorldGaussian {
        mean: f.basis * mu * f.scale + f.translation,
        rotation: quat_mul(quat_from_unit(&f.rotation), quat_normalize(g.rotation)),
        rotation_matrix: f.basis * local_rot,
        scale,
    }
}

/// Gradient of a loss with respect to the local parameters of one Gaussian.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianGrad {
    pub offset: [f64; 3],
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
    pub color: [f64; 3],
    pub opacity: f64,
}

impl GaussianGrad {
    pub fn add(&mut self, o: &GaussianGrad) {
        for i in 0..3 {
            self.offset[i] += o.offset[i];
            self.log_scale[i] += o.log_scale[i];
            self.color[i] += o.color[i];
        }
        for i in 0..4 {
            self.rotation[i] += o.rotation[i];
        }
        self.opacity += o.opacity;
    }
}

/// Backward of [`gaussian_to_world`]: given gradients on the world mean,
/// world rotation matrix and world scale, returns the local-parameter gradient
/// and the frame gradient.
pub fn gaussian_to_world_backward(
    g: &Gaussian,
    f: &PolygonFrame,
    g_mean: &Vec3,
    g_rot: &Mat3,
    g_scale: &Vec3,
) -> (GaussianGrad, FrameGrad) {
    let mu = Vec3::from(g.offset);
    let local_rot = quat_to_matrix(g.rotation);
    let exp_s = Vec3::from(g.log_scale.map(f64::exp));

    let g_mu = f.basis.transpose() * g_mean * f.scale;
    let rmu = f.basis * mu;
    let mut frame = FrameGrad::zero();
    frame.translation = *g_mean;
    frame.scale = g_mean.dot(&rmu) + g_scale.dot(&exp_s);
    frame.basis = g_mean * mu.transpose() * f.scale + g_rot * local_rot.transpose();

    let g_local_rot = f.basis.transpose() * g_rot;
    let g_q = quat_to_matrix_backward(g.rotation, &g_local_rot);
    let g_s = g_scale.component_mul(&exp_s) * f.scale;

    let grad = GaussianGrad {
        offset: [g_mu.x, g_mu.y, g_mu.z],
        rotation: g_q,
        log_scale: [g_s.x, g_s.y, g_s.z],
        ..Default::default()
    };
    (grad, frame)
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(scale)`.
pub fn world_covariance(rotation: &Mat3, scale: &Vec3) -> Mat3 {
    let s2 = Mat3::from_diagonal(&scale.component_mul(scale));
    rotation * s2 * rotation.transpose()
}

/// Same as [`world_covariance`] taking a quaternion.
pub fn world_covariance_quat(rotation: Quat, scale: &Vec3) -> Mat3 {
    world_covariance(&quat_to_matrix(rotation), scale)
}

/// Backward of [`world_covariance`] for a full-matrix gradient `g_cov`.
pub fn world_covariance_backward(rotation: &Mat3, scale: &Vec3, g_cov: &Mat3) -> (Mat3, Vec3) {
    let s2 = Mat3::from_diagonal(&scale.component_mul(scale));
    let g_rot = (g_cov + g_cov.transpose()) * rotation * s2;
    let inner = rotation.transpose() * g_cov * rotation;
    let g_scale = Vec3::new(2.0 * scale.x * inner[(0, 0)], 2.0 * scale.y * inner[(1, 1)], 2.0 * scale.z * inner[(2, 2)]);
    (g_rot, g_scale)
}

/// Pinhole camera. Camera space has x right, y down, z forward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    /// World-to-camera translation.
    pub translation: [f64; 3],
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, rotation: Mat3, translation: Vec3, width: usize, height: usize) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            rotation: [0, 1, 2].map(|r| [0, 1, 2].map(|c| rotation[(r, c)])),
            translation: [translation.x, translation.y, translation.z],
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with `up` the world up direction.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fx: f64, fy: f64, width: usize, height: usize) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rot = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(rot * eye);
        Camera::new(fx, fy, width as f64 / 2.0, height as f64 / 2.0, rot, t, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidScene("camera image size must be at least 1x1".into()));
        }
        let r = self.rotation_matrix();
        let err = (r * r.transpose() - Mat3::identity()).abs().max();
        if !(err <= 1e-6) {
            return Err(Error::InvalidScene(format!("camera rotation not orthonormal (error {err:e})")));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        Mat3::from_fn(|r, c| self.rotation[r][c])
    }

    pub fn translation_vec(&self) -> Vec3 {
        Vec3::from(self.translation)
    }

    #[inline]
    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix() * p + self.translation_vec()
    }

    /// World position of the camera center.
    pub fn center(&self) -> Vec3 {
        -(self.rotation_matrix().transpose() * self.translation_vec())
    }

    #[inline]
    pub fn project_camera_point(&self, t: &Vec3) -> [f64; 2] {
        [self.fx * t.x / t.z + self.cx, self.fy * t.y / t.z + self.cy]
    }
}

/// Screen-space statistics of a projected Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    pub center: [f64; 2],
    /// Symmetric 2×2 covariance as `[xx, xy, yy]`, dilation included.
    pub cov: [f64; 3],
    pub depth: f64,
}

fn projection_jacobian(cam: &Camera, t: &Vec3) -> (Vec3, Vec3) {
    let iz = 1.0 / t.z;
    (
        Vec3::new(cam.fx * iz, 0.0, -cam.fx * t.x * iz * iz),
        Vec3::new(0.0, cam.fy * iz, -cam.fy * t.y * iz * iz),
    )
}

/// EWA projection of a world Gaussian.
pub fn project_gaussian(mean: &Vec3, cov: &Mat3, cam: &Camera) -> Result<Projected> {
    let t = cam.to_camera(mean);
    if !(t.z > NEAR_PLANE) {
        return Err(Error::BehindCamera { z: t.z });
    }
    let w = cam.rotation_matrix();
    let m = w * cov * w.transpose();
    let (j0, j1) = projection_jacobian(cam, &t);
    let a = j0.dot(&(m * j0)) + COV2D_DILATION;
    let b = j0.dot(&(m * j1));
    let d = j1.dot(&(m * j1)) + COV2D_DILATION;
    Ok(Projected { center: cam.project_camera_point(&t), cov: [a, b, d], depth: t.z })
}

/// Backward of [`project_gaussian`]. `g_cov` holds gradients for `[xx, xy, yy]`
/// with `xy` treated as a single parameter. Returns gradients for the world
/// mean and the (full-matrix) world covariance.
pub fn project_gaussian_backward(mean: &Vec3, cov: &Mat3, cam: &Camera, g_center: [f64; 2], g_cov: [f64; 3]) -> (Vec3, Mat3) {
    let t = cam.to_camera(mean);
    let w = cam.rotation_matrix();
    let m = w * cov * w.transpose();
    let (j0, j1) = projection_jacobian(cam, &t);
    let [ga, gb, gd] = g_cov;

    let g_m = j0 * j0.transpose() * ga + j0 * j1.transpose() * gb + j1 * j1.transpose() * gd;
    let g_cov_world = w.transpose() * g_m * w;

    let g_j0 = m * j0 * (2.0 * ga) + m * j1 * gb;
    let g_j1 = m * j1 * (2.0 * gd) + m * j0 * gb;

    let (fx, fy) = (cam.fx, cam.fy);
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut g_t = Vec3::zeros();
    g_t.x += g_j0.z * (-fx * iz2);
    g_t.z += g_j0.x * (-fx * iz2) + g_j0.z * (2.0 * fx * t.x * iz3);
    g_t.y += g_j1.z * (-fy * iz2);
    g_t.z += g_j1.y * (-fy * iz2) + g_j1.z * (2.0 * fy * t.y * iz3);

    g_t.x += g_center[0] * fx * iz;
    g_t.z += -g_center[0] * fx * t.x * iz2;
    g_t.y += g_center[1] * fy * iz;
    g_t.z += -g_center[1] * fy * t.y * iz2;

    (w.transpose() * g_t, g_cov_world)
}
