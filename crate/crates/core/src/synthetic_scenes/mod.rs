//! Procedural ground truth: toy body, texture, out-of-mesh "fuzz" Gaussians,
//! camera orbits and rendered frame sets.

mod body;
mod io;
mod patterns;

pub use body::{build_toy_body, humanoid_segments, CapsuleRes, Segment, ToyBody};
pub use io::{load_dataset, load_ground_truth, load_manifest, save_dataset, Manifest, ManifestFrame, Split, MANIFEST_FORMAT};
pub use patterns::{pattern_texture, Pattern};

use std::f64::consts::{PI, TAU};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{gaussian_to_world, polygon_frame, project_gaussian, world_covariance, Camera, Gaussian, Vec3, QUAT_IDENTITY};
use crate::image::{Image, RgbImage};
use crate::mesh_pipeline::{rasterize_mesh, skin, Pose, SkinnedMesh, Texture};
use crate::training_pipeline::{quantize_gaussians, quantize_texture};
use crate::splatting::{depth_mask, render_frame, splat_alpha, Background, RenderMode, Scene, Splat};

/// Everything needed to generate a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub segments: usize,
    pub capsule_sides: usize,
    pub capsule_rings: usize,
    pub texture_pattern: Pattern,
    pub texture_size: usize,
    pub train_frames: usize,
    pub test_frames: usize,
    /// Peak joint rotation of the animation curves, radians.
    pub animation_amplitude: f64,
    pub fuzz_count: usize,
    /// Offset along the parent normal, in polygon-frame units.
    pub fuzz_offset_min: f64,
    pub fuzz_offset_max: f64,
    pub fuzz_regions: Vec<String>,
    pub fuzz_color: [f64; 3],
    /// Fuzz Gaussian standard deviation in polygon-frame units.
    pub fuzz_scale: f64,
    pub fuzz_opacity: f64,
    pub orbit_radius: f64,
    pub orbit_height: f64,
    pub look_at_height: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            width: 64,
            height: 64,
            focal: 120.0,
            segments: 10,
            capsule_sides: 8,
            capsule_rings: 5,
            texture_pattern: Pattern::Checker,
            texture_size: 64,
            train_frames: 20,
            test_frames: 5,
            animation_amplitude: 0.25,
            fuzz_count: 48,
            fuzz_offset_min: 1.0,
            fuzz_offset_max: 2.0,
            fuzz_regions: vec!["head".into()],
            fuzz_color: [0.15, 0.1, 0.05],
            fuzz_scale: 1.0,
            fuzz_opacity: 0.9,
            orbit_radius: 3.5,
            orbit_height: 1.0,
            look_at_height: 0.85,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.width < 32 || self.height < 32 {
            return bad(format!("resolution {}x{} below 32x32", self.width, self.height));
        }
        if self.train_frames < 1 {
            return bad("at least one training frame is required".into());
        }
        if !(self.fuzz_offset_min > 0.0 && self.fuzz_offset_max >= self.fuzz_offset_min) {
            return bad("fuzz offsets must satisfy 0 < min <= max".into());
        }
        if !(self.focal > 0.0 && self.orbit_radius > 0.0 && self.fuzz_scale > 0.0) {
            return bad("focal, orbit_radius and fuzz_scale must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.fuzz_opacity) || self.texture_size < 2 {
            return bad("fuzz_opacity must lie in [0, 1] and texture_size be at least 2".into());
        }
        if !(0.0..PI / 2.0).contains(&self.animation_amplitude) {
            return bad("animation_amplitude must lie in [0, pi/2)".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }
}

/// One rendered view.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub image: RgbImage,
    pub mask: Image<bool>,
    pub camera: Camera,
    pub pose: Pose,
}

/// Training and test frames over one skinned mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub mesh: SkinnedMesh,
    pub train: Vec<FrameRecord>,
    pub test: Vec<FrameRecord>,
    /// Triangles that carry ground-truth fuzz.
    pub fuzz_triangles: Vec<u32>,
    pub spec: Option<SceneSpec>,
}

/// The parameters the frames were rendered from.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub gaussians: Vec<Gaussian>,
    pub texture: Texture,
}

/// Camera on the orbit at `azimuth` radians.
pub fn orbit_camera(spec: &SceneSpec, azimuth: f64) -> Result<Camera> {
    let eye = Vec3::new(spec.orbit_radius * azimuth.sin(), spec.orbit_height, spec.orbit_radius * azimuth.cos());
    let target = Vec3::new(0.0, spec.look_at_height, 0.0);
    Camera::look_at(eye, target, Vec3::y(), spec.focal, spec.focal, spec.width, spec.height)
}

/// Azimuths of the training views: evenly spaced around the body.
pub fn train_azimuths(spec: &SceneSpec) -> Vec<f64> {
    (0..spec.train_frames).map(|i| TAU * i as f64 / spec.train_frames as f64).collect()
}

/// Test azimuths sit halfway between training azimuths, so no view is shared.
pub fn test_azimuths(spec: &SceneSpec) -> Vec<f64> {
    let n = spec.train_frames as f64;
    (0..spec.test_frames).map(|j| TAU * ((j * spec.train_frames / spec.test_frames.max(1)) as f64 + 0.5) / n).collect()
}

/// Per-joint animation curves: fixed random axis and phase per joint, with
/// time in `[0, 1)`. Training uses the first half, test the second.
pub struct Animation {
    axes: Vec<Vec3>,
    phases: Vec<f64>,
    amplitude: f64,
}

impl Animation {
    pub fn new(joints: usize, amplitude: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA11A);
        let axes = (0..joints)
            .map(|_| {
                let z: f64 = rng.random_range(-1.0..1.0);
                let phi: f64 = rng.random_range(0.0..TAU);
                let r = (1.0 - z * z).sqrt();
                Vec3::new(r * phi.cos(), r * phi.sin(), z)
            })
            .collect();
        let phases = (0..joints).map(|_| rng.random_range(0.0..1.0)).collect();
        Self { axes, phases, amplitude }
    }

    pub fn pose_at(&self, t: f64) -> Pose {
        let mut pose = Pose::identity(self.axes.len());
        for j in 1..self.axes.len() {
            let a = self.amplitude * (TAU * (t + self.phases[j])).sin();
            let w = self.axes[j] * a;
            pose.joint_rotations[j] = [w.x, w.y, w.z];
        }
        pose
    }
}

fn frame_times(count: usize, start: f64) -> Vec<f64> {
    (0..count).map(|i| start + 0.5 * i as f64 / count.max(1) as f64).collect()
}

/// Largest depth-masked alpha of `g` over the 3×3 pixels around its center.
fn peak_alpha(g: &Gaussian, mesh: &SkinnedMesh, vertices: &[Vec3], depth: &crate::image::GrayImage, cam: &Camera) -> Result<f64> {
    let [a, b, c] = mesh.triangles[g.parent as usize].map(|i| vertices[i as usize]);
    let wg = gaussian_to_world(g, &polygon_frame(&a, &b, &c)?);
    let Ok(p) = project_gaussian(&wg.mean, &world_covariance(&wg.rotation_matrix, &wg.scale), cam) else { return Ok(0.0) };
    let s = Splat { center: p.center, cov: p.cov, depth: p.depth, color: g.color, opacity: g.opacity };
    let mut best: f64 = 0.0;
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (x, y) = (p.center[0].round() as i64 + dx, p.center[1].round() as i64 + dy);
            if x < 0 || y < 0 || x >= cam.width as i64 || y >= cam.height as i64 {
                continue;
            }
            let alpha = splat_alpha(&s, x as f64, y as f64);
            best = best.max(depth_mask(alpha, s.depth, *depth.get(x as usize, y as usize)));
        }
    }
    Ok(best)
}

const FUZZ_RETRIES: usize = 64;
const FUZZ_MIN_ALPHA: f64 = 0.1;

/// Renders the training and test frames of `spec`.
pub fn generate_dataset(spec: &SceneSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let body = build_toy_body(spec.segments, CapsuleRes { sides: spec.capsule_sides, rings: spec.capsule_rings })?;
    let mesh = body.mesh.clone();
    let texture = pattern_texture(spec.texture_pattern, spec.texture_size, spec.seed)?;
    let anim = Animation::new(mesh.joints.len(), spec.animation_amplitude, spec.seed);

    let views = |azimuths: Vec<f64>, times: Vec<f64>| -> Result<Vec<(Camera, Pose)>> {
        azimuths.into_iter().zip(times).map(|(a, t)| Ok((orbit_camera(spec, a)?, anim.pose_at(t)))).collect()
    };
    let train_views = views(train_azimuths(spec), frame_times(spec.train_frames, 0.0))?;
    let test_views = views(test_azimuths(spec), frame_times(spec.test_frames, 0.5))?;

    let tagged: Vec<u32> =
        (0..mesh.triangles.len()).filter(|&t| spec.fuzz_regions.iter().any(|r| r == body.triangle_region(t))).map(|t| t as u32).collect();
    if spec.fuzz_count > tagged.len() {
        return Err(Error::InvalidSpec(format!("fuzz_count {} exceeds {} tagged triangles", spec.fuzz_count, tagged.len())));
    }

    // Mesh depth of every training view, for the observability check.
    let blank = Texture::uniform(2, 2, [0.0; 3])?;
    let train_geo: Vec<(Vec<Vec3>, crate::image::GrayImage)> = train_views
        .par_iter()
        .map(|(cam, pose)| {
            let v = skin(&mesh, pose)?;
            let d = rasterize_mesh(&v, &mesh.triangles, &mesh.uvs, &blank, cam, [0.0; 3]).depth;
            Ok((v, d))
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xF022);
    let mut parents: Vec<u32> = sample(&mut rng, tagged.len(), spec.fuzz_count).into_iter().map(|i| tagged[i]).collect();
    parents.sort_unstable();
    let log_s = spec.fuzz_scale.ln();
    let mut gaussians = Vec::with_capacity(parents.len());
    for &parent in &parents {
        let mut placed = None;
        for _ in 0..FUZZ_RETRIES {
            let g = Gaussian {
                parent,
                offset: [rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25), rng.random_range(spec.fuzz_offset_min..=spec.fuzz_offset_max)],
                rotation: QUAT_IDENTITY,
                log_scale: [log_s; 3],
                color: spec.fuzz_color,
                opacity: spec.fuzz_opacity,
            };
            let mut seen = false;
            for ((cam, _), (v, d)) in train_views.iter().zip(&train_geo) {
                if peak_alpha(&g, &mesh, v, d, cam)? > FUZZ_MIN_ALPHA {
                    seen = true;
                    break;
                }
            }
            if seen {
                placed = Some(g);
                break;
            }
        }
        gaussians.push(placed.ok_or_else(|| Error::InvalidSpec(format!("fuzz on triangle {parent} is never visible")))?);
    }

    // Stored ground truth is f32; render from exactly what is stored.
    quantize_gaussians(&mut gaussians);
    let mut texture = texture;
    quantize_texture(&mut texture);
    let gt = GroundTruth { gaussians, texture };
    let render = |(cam, pose): &(Camera, Pose)| -> Result<FrameRecord> {
        let scene = Scene { gaussians: &gt.gaussians, mesh: &mesh, texture: &gt.texture, pose, camera: cam };
        let b = render_frame(&scene, RenderMode::Hybrid, Background::Color([0.0; 3]))?;
        let mask = Image {
            width: cam.width,
            height: cam.height,
            data: b.depth.data.iter().zip(&b.alpha.data).map(|(d, a)| d.is_finite() || *a > 0.5).collect(),
        };
        Ok(FrameRecord { image: b.image.quantized(), mask, camera: cam.clone(), pose: pose.clone() })
    };
    let train = train_views.par_iter().map(render).collect::<Result<Vec<_>>>()?;
    let test = test_views.par_iter().map(render).collect::<Result<Vec<_>>>()?;
    let dataset = Dataset { mesh, train, test, fuzz_triangles: parents, spec: Some(spec.clone()) };
    Ok((dataset, gt))
}
