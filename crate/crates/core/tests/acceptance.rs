//! Acceptance run: prints one PASS/FAIL line per criterion.
//!
//! Criteria report rather than abort, so a failing criterion does not hide
//! the others. Set `MESHSPLAT_ACCEPTANCE_STRICT=1` to exit nonzero on any
//! FAIL. `MESHSPLAT_ACCEPTANCE_FAST=1` skips the pipeline criteria (6 to 10).

use std::f64::consts::FRAC_PI_2;
use std::time::{Duration, Instant};

use meshsplat::diffopt::{finite_diff_check, FdReport, ParamGroup, ParamKind};
use meshsplat::geometry::{
    gaussian_to_world, polygon_frame, world_covariance, Camera, Gaussian, Mat3, PolygonFrame, Vec3, QUAT_IDENTITY,
};
use meshsplat::image::{GrayImage, Image, Rgb, RgbImage};
use meshsplat::losses_metrics::{opacity_regularizer, KnnGraph, LossWeights, Stage};
use meshsplat::mesh_pipeline::{Joint, Pose, SkinnedMesh, Texture};
use meshsplat::splatting::{
    composite_final, composite_gaussians, depth_mask, render_frame, splat_alpha, Background, GradRequest, RenderMode, Scene, Splat,
    SplatFrameInput, ALPHA_MAX, CUTOFF_MAHALANOBIS_SQ,
};
use meshsplat::synthetic_scenes::{generate_dataset, Dataset, SceneSpec};
use meshsplat::training_pipeline::{
    evaluate, pack, pack_grad, refine_pose_test_time, report_model, rest_frames, run_pipeline, unpack, Appearance, Checkpoint, Model,
    NoopObserver, Objective, Observer, TrainingConfig, View, GAUSSIAN_RECORD_BYTES,
};
use nalgebra::{Rotation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn run(id: u8, name: &'static str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let t = Instant::now();
    let (pass, detail) = f();
    let o = Outcome { id, name, pass, detail, elapsed: t.elapsed() };
    println!("criterion {:>2} {} {}: {} ({:.1}s)", o.id, if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail, o.elapsed.as_secs_f64());
    o
}

/// Named boolean checks with a short failure list.
#[derive(Default)]
struct Checks {
    total: usize,
    failed: Vec<String>,
}

impl Checks {
    fn check(&mut self, name: &str, ok: bool) {
        self.total += 1;
        if !ok {
            self.failed.push(name.to_string());
        }
    }

    fn close(&mut self, name: &str, got: f64, want: f64) {
        self.check(&format!("{name}: got {got}, want {want}"), (got - want).abs() <= 1e-6);
    }

    fn result(self) -> (bool, String) {
        let ok = self.failed.is_empty();
        let mut s = format!("{}/{} examples", self.total - self.failed.len(), self.total);
        if !ok {
            s.push_str(&format!("; failed: {}", self.failed.join("; ")));
        }
        (ok, s)
    }
}

fn v(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3::new(x, y, z)
}

fn iso(center: [f64; 2], var: f64, depth: f64, color: Rgb, opacity: f64) -> Splat {
    Splat { center, cov: [var, 0.0, var], depth, color, opacity }
}

fn gaussian(parent: u32, offset: [f64; 3], log_scale: [f64; 3], color: Rgb, opacity: f64) -> Gaussian {
    Gaussian { parent, offset, rotation: QUAT_IDENTITY, log_scale, color, opacity }
}

// ---------------------------------------------------------------- criterion 1

fn worked_examples() -> (bool, String) {
    let mut c = Checks::default();

    // Polygon frame.
    let unit = polygon_frame(&v(0., 0., 0.), &v(1., 0., 0.), &v(0., 1., 0.)).unwrap();
    c.close("centroid x", unit.translation.x, 1.0 / 3.0);
    c.close("centroid y", unit.translation.y, 1.0 / 3.0);
    c.close("centroid z", unit.translation.z, 0.0);
    // Height of (0,1,0) over the x axis is 1 by the point-line distance.
    let h = v(0., 1., 0.).cross(&v(1., 0., 0.)).norm() / v(1., 0., 0.).norm();
    c.close("unit k", unit.scale, (1.0 + h) / 2.0);
    let twice = polygon_frame(&v(0., 0., 0.), &v(2., 0., 0.), &v(0., 2., 0.)).unwrap();
    c.close("doubled k", twice.scale, 2.0 * unit.scale);

    // Offset parameterization.
    let at = |f: &PolygonFrame, offset: [f64; 3], log_scale: [f64; 3]| gaussian_to_world(&gaussian(0, offset, log_scale, [0.; 3], 1.), f);
    let w = at(&PolygonFrame::identity(), [1., 2., 3.], [0.; 3]);
    c.check("identity frame keeps the mean", (w.mean - v(1., 2., 3.)).norm() <= 1e-6);
    let f = PolygonFrame::from_parts(v(1., 0., 0.), UnitQuaternion::identity(), 2.0);
    let w = at(&f, [1., 0., 0.], [0.5f64.ln(); 3]);
    c.check("k=2 mean", (w.mean - v(3., 0., 0.)).norm() <= 1e-6);
    c.check("k=2 scale", (w.scale - v(1., 1., 1.)).norm() <= 1e-6);
    let quarter = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), FRAC_PI_2);
    let w = at(&PolygonFrame::from_parts(Vec3::zeros(), quarter, 1.0), [1., 0., 0.], [0.; 3]);
    c.check("90 degrees about z", (w.mean - v(0., 1., 0.)).norm() <= 1e-6);
    // Covariances of the transformed Gaussian.
    let cov = world_covariance(&Mat3::identity(), &v(1., 2., 3.));
    c.check("diag covariance", (cov - Mat3::from_diagonal(&v(1., 4., 9.))).norm() <= 1e-6);
    let any = *Rotation3::from_euler_angles(0.3, -1.1, 2.0).matrix();
    let cov = world_covariance(&any, &v(1.5, 1.5, 1.5));
    c.check("isotropic covariance", (cov - Mat3::identity() * 2.25).norm() <= 1e-6);
    let rz = *Rotation3::from_axis_angle(&Vec3::z_axis(), FRAC_PI_2).matrix();
    let cov = world_covariance(&rz, &v(2., 1., 1.));
    c.check("rotated covariance", (cov - Mat3::from_diagonal(&v(1., 4., 1.))).norm() <= 1e-6);

    // Opacity regularizer.
    let with_o = |os: &[f64]| os.iter().map(|&o| gaussian(0, [0.; 3], [0.; 3], [0.; 3], o)).collect::<Vec<_>>();
    c.close("opacity all zero", opacity_regularizer(&with_o(&[0., 0., 0.])), 0.0);
    c.close("opacity two ones", opacity_regularizer(&with_o(&[1., 1.])), 2.0);
    c.close("opacity one half", opacity_regularizer(&with_o(&[0.5])), 0.25);

    // Depth mask.
    c.close("mask behind", depth_mask(0.7, 5.0, 2.0), 0.0);
    c.close("mask in front", depth_mask(0.7, 1.0, 2.0), 0.7);
    c.close("mask background", depth_mask(0.7, 1e9, f64::INFINITY), 0.7);

    // Per-splat alpha.
    let s = iso([3., 3.], 2.0, 1.0, [1.; 3], 0.8);
    c.close("alpha at center", splat_alpha(&s, 3., 3.), 0.8);
    c.close("alpha zero opacity", splat_alpha(&Splat { opacity: 0.0, ..s }, 4., 3.), 0.0);
    c.close("alpha at one sigma", splat_alpha(&Splat { opacity: 1.0, ..s }, 3. + 2f64.sqrt(), 3.), (-0.5f64).exp());

    // Alpha compositing.
    let flat = |d: f64| Image::filled(5, 5, d);
    let bg = [0.2, 0.4, 0.6];
    let input = SplatFrameInput::new(vec![], flat(f64::INFINITY), Image::filled(5, 5, bg)).unwrap();
    let (g, a) = composite_gaussians(&input);
    c.check("no splats gives background", g.data.iter().all(|p| *p == bg));
    c.check("no splats gives zero alpha", a.data.iter().all(|&x| x == 0.0));
    let pair = vec![iso([2., 2.], 1., 1., [1., 0., 0.], 0.5), iso([2., 2.], 1., 2., [0., 1., 0.], 0.5)];
    let (_, a) = composite_gaussians(&SplatFrameInput::new(pair, flat(f64::INFINITY), Image::filled(5, 5, [0.; 3])).unwrap());
    c.close("two halves accumulate", *a.get(2, 2), 0.75);
    // The alpha clamp keeps 1% of the background behind an opaque splat.
    let col = [0.9, 0.3, 0.1];
    let one = vec![iso([2., 2.], 1., 1., col, 1.0)];
    let (g, _) = composite_gaussians(&SplatFrameInput::new(one, flat(f64::INFINITY), Image::filled(5, 5, bg)).unwrap());
    for k in 0..3 {
        c.close("opaque splat color", g.get(2, 2)[k], ALPHA_MAX * col[k] + (1.0 - ALPHA_MAX) * bg[k]);
    }

    // Final composite.
    let mesh_img: RgbImage = Image::from_fn(5, 5, |x, y| [x as f64 / 4.0, y as f64 / 4.0, 0.5]);
    let zero_a: GrayImage = Image::filled(5, 5, 0.0);
    let i = composite_final(&Image::filled(5, 5, [0.; 3]), &zero_a, &mesh_img).unwrap();
    c.check("zero alpha gives the mesh exactly", i.data == mesh_img.data);
    let full_a: GrayImage = Image::filled(5, 5, 1.0);
    let gl: RgbImage = Image::filled(5, 5, [0.3, 0.6, 0.9]);
    let i = composite_final(&gl, &full_a, &mesh_img).unwrap();
    c.check("unit alpha gives the gaussians", i.data == gl.data);
    let half = vec![iso([2., 2.], 1., 1., [1.; 3], 0.5)];
    let (g, a) = composite_gaussians(&SplatFrameInput::new(half, flat(f64::INFINITY), Image::filled(5, 5, [0.; 3])).unwrap());
    let i = composite_final(&g, &a, &Image::filled(5, 5, [0.; 3])).unwrap();
    for k in 0..3 {
        c.close("white half over black", i.get(2, 2)[k], 0.5);
    }
    c.result()
}

// ---------------------------------------------------------------- criterion 2

/// Per-pixel reference: every splat, every pixel, no tiles and no early out.
fn naive_composite(splats: &[Splat], depth: &GrayImage, mesh: &RgbImage) -> (RgbImage, GrayImage, RgbImage) {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| splats[a].depth.total_cmp(&splats[b].depth));
    let (w, h) = (depth.width, depth.height);
    let mut g = Image::filled(w, h, [0.0; 3]);
    let mut acc = Image::filled(w, h, 0.0);
    let mut out = Image::filled(w, h, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for &i in &order {
                let s = &splats[i];
                let [a, b, d] = s.cov;
                let det = a * d - b * b;
                let (dx, dy) = (x as f64 - s.center[0], y as f64 - s.center[1]);
                let q = (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
                if q > CUTOFF_MAHALANOBIS_SQ || s.depth > *depth.get(x, y) {
                    continue;
                }
                let alpha = (s.opacity * (-0.5 * q).exp()).min(ALPHA_MAX);
                for k in 0..3 {
                    c[k] += s.color[k] * alpha * t;
                }
                t *= 1.0 - alpha;
            }
            let m = mesh.get(x, y);
            *g.get_mut(x, y) = c;
            *acc.get_mut(x, y) = 1.0 - t;
            *out.get_mut(x, y) = [c[0] + m[0] * t, c[1] + m[1] * t, c[2] + m[2] * t];
        }
    }
    (g, acc, out)
}

fn random_splat(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Splat {
    let th: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (s1, s2): (f64, f64) = (rng.random_range(0.3..4.0), rng.random_range(0.3..4.0));
    let (c, s) = (th.cos(), th.sin());
    let cov = [c * c * s1 * s1 + s * s * s2 * s2, c * s * (s1 * s1 - s2 * s2), s * s * s1 * s1 + c * c * s2 * s2];
    Splat {
        center: [rng.random_range(-3.0..w as f64 + 3.0), rng.random_range(-3.0..h as f64 + 3.0)],
        cov: [cov[0] + 0.3, cov[1], cov[2] + 0.3],
        depth: rng.random_range(0.5..5.0),
        color: [rng.random(), rng.random(), rng.random()],
        opacity: rng.random(),
    }
}

fn rasterizer_oracle() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut bad = 0;
    for _ in 0..200 {
        let (w, h) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let n = rng.random_range(0..=8);
        let splats: Vec<Splat> = (0..n).map(|_| random_splat(&mut rng, w, h)).collect();
        let depth: GrayImage = Image::from_fn(w, h, |_, _| if rng.random_bool(0.3) { f64::INFINITY } else { rng.random_range(0.5..5.0) });
        let mesh: RgbImage = Image::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()]);
        let input = SplatFrameInput::new(splats.clone(), depth.clone(), Image::filled(w, h, [0.0; 3])).unwrap();
        let (g, a) = composite_gaussians(&input);
        let i = composite_final(&g, &a, &mesh).unwrap();
        let (ng, na, ni) = naive_composite(&splats, &depth, &mesh);
        let mut err = 0.0f64;
        for p in 0..w * h {
            err = err.max((a.data[p] - na.data[p]).abs());
            for k in 0..3 {
                err = err.max((g.data[p][k] - ng.data[p][k]).abs()).max((i.data[p][k] - ni.data[p][k]).abs());
            }
        }
        if !(err <= 1e-5) {
            bad += 1;
        }
        worst = worst.max(err);
    }
    (bad == 0, format!("200 scenes, {bad} over 1e-5, max abs error {worst:.2e}"))
}

// ---------------------------------------------------------------- criterion 3

fn two_joint_quad() -> SkinnedMesh {
    SkinnedMesh {
        vertices: vec![[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [1.0, 1.0, 0.1], [-1.0, 1.0, 0.0]],
        triangles: vec![[0, 1, 2], [0, 2, 3]],
        uvs: vec![[0.05, 0.1], [0.9, 0.05], [0.95, 0.9], [0.1, 0.95]],
        weights: vec![vec![(0, 0.6), (1, 0.4)], vec![(0, 1.0)], vec![(1, 1.0)], vec![(0, 0.5), (1, 0.5)]],
        joints: vec![
            Joint { name: "root".into(), parent: None, rest_position: [0.0; 3] },
            Joint { name: "tip".into(), parent: Some(0), rest_position: [0.5, 0.5, 0.0] },
        ],
    }
}

struct GradScene {
    mesh: SkinnedMesh,
    gaussians: Vec<Gaussian>,
    texture: Texture,
    images: Vec<RgbImage>,
    masks: Vec<Image<bool>>,
    cameras: Vec<Camera>,
    poses: Vec<Pose>,
}

fn grad_scene() -> GradScene {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = |parent, offset: [f64; 3], rotation, color, opacity| Gaussian { parent, offset, rotation, log_scale: [-0.6, -0.9, -1.6], color, opacity };
    let gaussians = vec![
        g(0, [0.1, -0.05, 0.3], [0.9, 0.1, -0.2, 0.3], [0.9, 0.2, 0.1], 0.7),
        g(1, [-0.2, 0.1, -0.3], QUAT_IDENTITY, [0.1, 0.8, 0.3], 0.6),
        g(1, [0.15, 0.2, 0.25], [0.8, -0.3, 0.1, 0.2], [0.2, 0.3, 0.9], 0.5),
        g(0, [1.2, 0.9, 0.4], [0.7, 0.2, 0.4, -0.1], [0.6, 0.6, 0.2], 0.8),
    ];
    let texture = Texture::new(4, 4, (0..16).map(|_| [rng.random(), rng.random(), rng.random()]).collect()).unwrap();
    let cameras = vec![
        Camera::look_at(v(0.2, 0.1, 3.0), Vec3::zeros(), v(0., -1., 0.), 5.0, 5.0, 8, 8).unwrap(),
        Camera::look_at(v(-0.6, 0.3, 2.8), v(0.1, 0.0, 0.0), v(0., -1., 0.), 5.5, 5.5, 8, 8).unwrap(),
    ];
    let poses = vec![
        Pose { joint_rotations: vec![[0.05, -0.1, 0.08], [0.1, 0.05, -0.2]], root_translation: [0.05, -0.02, 0.1], shape: vec![] },
        Pose { joint_rotations: vec![[-0.03, 0.07, 0.02], [0.15, -0.05, 0.1]], root_translation: [-0.04, 0.03, 0.0], shape: vec![] },
    ];
    let images = (0..2).map(|_| Image::from_fn(8, 8, |_, _| [rng.random(), rng.random(), rng.random()])).collect();
    let masks = (0..2).map(|_| Image::from_fn(8, 8, |x, y| (2..6).contains(&x) && (1..7).contains(&y))).collect();
    GradScene { mesh: two_joint_quad(), gaussians, texture, images, masks, cameras, poses }
}

const GAUSS_KINDS: [ParamKind; 5] =
    [ParamKind::GaussXyz, ParamKind::GaussRotation, ParamKind::GaussScaling, ParamKind::GaussColor, ParamKind::GaussOpacity];

fn stage_fd(sc: &GradScene, stage: Stage, kinds: &[ParamKind], seed: u64) -> FdReport {
    let weights = LossWeights::default();
    let knn = KnnGraph::build(&sc.gaussians, &rest_frames(&sc.mesh).unwrap(), 3).unwrap();
    let knn = (stage != Stage::Texture).then_some(&knn);
    let background = [0.25, 0.5, 0.7];
    let wants = |k: ParamKind| kinds.contains(&k);
    let grads = GradRequest { gaussians: GAUSS_KINDS.iter().any(|&k| wants(k)), texture: wants(ParamKind::Texture), pose: wants(ParamKind::Pose) };

    // Rebuilds the scene parameters from flat groups.
    let unflatten = |groups: &[ParamGroup]| {
        let (mut gs, mut tex, mut poses) = (sc.gaussians.clone(), sc.texture.clone(), sc.poses.clone());
        for g in groups {
            match g.kind {
                ParamKind::Texture => tex.texels = g.values.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
                ParamKind::Pose => {
                    let n = poses[0].param_count();
                    for (p, chunk) in poses.iter_mut().zip(g.values.chunks(n)) {
                        p.set_flat(chunk);
                    }
                }
                k => unpack(&mut gs, k, &g.values),
            }
        }
        (gs, tex, poses)
    };
    let eval = |gs: &[Gaussian], tex: &Texture, poses: &[Pose], grads: GradRequest| {
        let views: Vec<View> =
            (0..2).map(|i| View { image: &sc.images[i], mask: &sc.masks[i], camera: &sc.cameras[i], pose: &poses[i] }).collect();
        let obj = Objective { stage, weights: &weights, background, knn, grads };
        evaluate(&Appearance { mesh: &sc.mesh, gaussians: gs, texture: tex }, &obj, &views).unwrap()
    };

    let base = eval(&sc.gaussians, &sc.texture, &sc.poses, grads);
    let groups: Vec<ParamGroup> = kinds
        .iter()
        .map(|&k| {
            let (values, g) = match k {
                ParamKind::Texture => (sc.texture.texels.iter().flatten().copied().collect(), base.texture.iter().flatten().copied().collect()),
                ParamKind::Pose => (sc.poses.iter().flat_map(|p| p.to_flat()).collect(), base.poses.iter().flatten().copied().collect()),
                k => (pack(&sc.gaussians, k), pack_grad(&base.gaussians, k)),
            };
            let mut group = ParamGroup::new(k, values, 1.0).unwrap();
            group.grads = g;
            group
        })
        .collect();
    finite_diff_check(
        |groups| {
            let (gs, tex, poses) = unflatten(groups);
            let e = eval(&gs, &tex, &poses, GradRequest::default());
            (e.report.total, e.gate)
        },
        &groups,
        400,
        seed,
    )
}

fn gradient_suite() -> (bool, String) {
    let sc = grad_scene();
    let plan: [(Stage, &[ParamKind]); 3] = [
        (Stage::Gaussians, &[ParamKind::GaussXyz, ParamKind::GaussRotation, ParamKind::GaussScaling, ParamKind::GaussColor, ParamKind::Pose]),
        (Stage::Texture, &[ParamKind::Texture]),
        (Stage::Filter, &[ParamKind::GaussOpacity, ParamKind::GaussColor]),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (stage, kinds) in plan {
        let r = stage_fd(&sc, stage, kinds, 10 + stage.number() as u64);
        ok &= r.passed;
        parts.push(format!(
            "stage {}: {}/{} retained pass ({} excluded), max rel {:.1e}",
            stage.number(),
            (r.pass_fraction * r.retained as f64).round(),
            r.retained,
            r.excluded,
            r.max_rel
        ));
        for (group, idx, a, n) in r.failures.iter().take(3) {
            parts.push(format!("  {group}[{idx}] analytic {a:.3e} numeric {n:.3e}"));
        }
    }
    (ok, parts.join("; "))
}

// ---------------------------------------------------------------- criterion 4

/// Two triangles spanning ±10 in the z = 0 plane, facing +z.
fn wall() -> SkinnedMesh {
    SkinnedMesh {
        vertices: vec![[-10.0, -10.0, 0.0], [10.0, -10.0, 0.0], [10.0, 10.0, 0.0], [-10.0, 10.0, 0.0]],
        triangles: vec![[0, 1, 2], [0, 2, 3]],
        uvs: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        weights: vec![vec![(0, 1.0)]; 4],
        joints: vec![Joint { name: "root".into(), parent: None, rest_position: [0.0; 3] }],
    }
}

/// A Gaussian on `parent` whose world mean is `p` at the rest pose.
fn placed(frames: &[PolygonFrame], parent: u32, p: Vec3, world_scale: f64, color: Rgb, opacity: f64) -> Gaussian {
    let f = &frames[parent as usize];
    let mu = f.basis.transpose() * (p - f.translation) / f.scale;
    let s = (world_scale / f.scale).ln();
    Gaussian { parent, offset: [mu.x, mu.y, mu.z], rotation: QUAT_IDENTITY, log_scale: [s, s * 0.9, s * 1.1], color, opacity }
}

fn occlusion_property() -> (bool, String) {
    let mesh = wall();
    let frames = rest_frames(&mesh).unwrap();
    let texture = Texture::new(2, 2, vec![[0.8, 0.2, 0.1], [0.1, 0.7, 0.3], [0.2, 0.3, 0.9], [0.9, 0.9, 0.2]]).unwrap();
    let pose = Pose::identity(1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut changed = 0;
    let mut visible = 0;
    for _ in 0..50 {
        let eye = v(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 4.0);
        let camera = Camera::look_at(eye, Vec3::zeros(), v(0., -1., 0.), 16.0, 16.0, 16, 16).unwrap();
        let n = rng.random_range(0..=6);
        let rand_rgb = |rng: &mut ChaCha8Rng| -> Rgb { [rng.random(), rng.random(), rng.random()] };
        let mut gs: Vec<Gaussian> = (0..n)
            .map(|_| {
                let p = v(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(0.2..2.0));
                let c = rand_rgb(&mut rng);
                placed(&frames, rng.random_range(0..2), p, rng.random_range(0.1..0.5), c, rng.random_range(0.2..1.0))
            })
            .collect();
        let scene = Scene { gaussians: &gs, mesh: &mesh, texture: &texture, pose: &pose, camera: &camera };
        let before = render_frame(&scene, RenderMode::Hybrid, Background::Color([0.0; 3])).unwrap();
        // The wall sits at depth about 4 everywhere; one unit behind it is hidden.
        let p = v(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), -1.0);
        let c = rand_rgb(&mut rng);
        let hidden = placed(&frames, rng.random_range(0..2), p, 0.4, c, 1.0);
        let at = rng.random_range(0..=gs.len());
        gs.insert(at, hidden);
        let scene = Scene { gaussians: &gs, mesh: &mesh, texture: &texture, pose: &pose, camera: &camera };
        let after = render_frame(&scene, RenderMode::Hybrid, Background::Color([0.0; 3])).unwrap();
        if after.image.data != before.image.data {
            changed += 1;
        }
        if before.alpha.data.iter().any(|&a| a > 0.0) {
            visible += 1;
        }
    }
    (changed == 0, format!("50 scenes ({visible} with visible Gaussians), {changed} changed"))
}

// ---------------------------------------------------------------- criterion 5

fn composite_identity(reference: &Dataset, gt_texture: &Texture) -> (bool, String) {
    let mut checked = 0;
    let mut differ = 0;
    let mut compare = |scene: &Scene, bg: Background| {
        let mesh_only = render_frame(scene, RenderMode::MeshOnly, bg).unwrap();
        let hybrid = render_frame(scene, RenderMode::Hybrid, bg).unwrap();
        checked += 1;
        if mesh_only.image.data != hybrid.image.data {
            differ += 1;
        }
    };
    for f in reference.train.iter().chain(&reference.test) {
        let scene = Scene { gaussians: &[], mesh: &reference.mesh, texture: gt_texture, pose: &f.pose, camera: &f.camera };
        compare(&scene, Background::Color([0.0; 3]));
        compare(&scene, Background::Random(7));
    }
    let sc = grad_scene();
    for (cam, pose) in sc.cameras.iter().zip(&sc.poses) {
        let scene = Scene { gaussians: &[], mesh: &sc.mesh, texture: &sc.texture, pose, camera: cam };
        compare(&scene, Background::Color([0.3, 0.6, 0.1]));
    }
    (differ == 0, format!("{checked} frames, {differ} differ"))
}

// ------------------------------------------------------------ criteria 6 to 10

/// Keeps the Gaussian set as it stands after the last stage-3 step, before
/// the prune.
#[derive(Default)]
struct PrePrune(Option<Vec<Gaussian>>);

impl Observer for PrePrune {
    fn iteration(&mut self, stage: Stage, it: u64, _: &meshsplat::losses_metrics::LossReport, model: &Model) {
        if stage == Stage::Filter && it + 1 == TrainingConfig::default().iterations_stage3 {
            self.0 = Some(model.gaussians.clone());
        }
    }
}

struct Runs {
    data: Dataset,
    fuzz: std::collections::HashSet<u32>,
    init: Checkpoint,
    naive: Checkpoint,
    full: Checkpoint,
    pre_prune: Vec<Gaussian>,
}

fn fuzz_count(gs: &[Gaussian], fuzz: &std::collections::HashSet<u32>) -> usize {
    gs.iter().filter(|g| fuzz.contains(&g.parent)).count()
}

fn train_psnr(c: &Checkpoint, gaussians: &[Gaussian], data: &Dataset) -> f64 {
    let ckpt = Checkpoint { gaussians: gaussians.to_vec(), ..c.clone() };
    report_model(&ckpt, &data.mesh, &data.train, &c.poses, RenderMode::Hybrid).unwrap().mean_psnr
}

fn pruning(r: &Runs) -> (bool, String) {
    let n0 = r.init.gaussians.len();
    let n = r.full.gaussians.len();
    let removed = 1.0 - n as f64 / n0 as f64;
    let f0 = fuzz_count(&r.init.gaussians, &r.fuzz);
    let f = fuzz_count(&r.full.gaussians, &r.fuzz);
    let kept = f as f64 / f0.max(1) as f64;
    let (b0, b) = (r.init.gaussian_bytes(), r.full.gaussian_bytes());
    let expected = b0 as f64 * n as f64 / n0 as f64;
    let bytes_ok = (b as f64 - expected).abs() <= GAUSSIAN_RECORD_BYTES as f64;
    let naive = train_psnr(&r.naive, &r.naive.gaussians, &r.data);
    let final_psnr = train_psnr(&r.full, &r.full.gaussians, &r.data);
    let pre = train_psnr(&r.full, &r.pre_prune, &r.data);
    // Quality may not fall more than 1 dB below naive merging.
    let psnr_ok = final_psnr > naive - 1.0;
    let ok = removed >= 0.6 && kept >= 0.8 && bytes_ok && psnr_ok;
    (
        ok,
        format!(
            "{n0} -> {n} Gaussians ({:.1}% removed, need >= 60%); fuzz {f}/{f0} kept ({:.1}%, need >= 80%); bytes {b0} -> {b} (proportional: {bytes_ok}); \
             train PSNR naive {naive:.2} dB, final {final_psnr:.2} dB (delta {:+.2}), pre-prune {pre:.2} dB (prune delta {:+.2})",
            100.0 * removed,
            100.0 * kept,
            final_psnr - naive,
            final_psnr - pre
        ),
    )
}

fn ablations(r: &Runs) -> (bool, String) {
    let cfg = TrainingConfig::default();
    let n0 = r.init.gaussians.len() as f64;
    let f0 = fuzz_count(&r.init.gaussians, &r.fuzz);
    let nodice = run_pipeline(&r.data, &TrainingConfig { lambda_dice: 0.0, ..cfg.clone() }, Some(&r.naive), Stage::Filter, &mut NoopObserver).unwrap();
    let noopac = run_pipeline(&r.data, &TrainingConfig { lambda_opacity: 0.0, ..cfg }, Some(&r.naive), Stage::Filter, &mut NoopObserver).unwrap();
    let pruned = |c: &Checkpoint| 1.0 - c.gaussians.len() as f64 / n0;
    let fd = fuzz_count(&nodice.gaussians, &r.fuzz);
    let dice_ok = pruned(&nodice) >= 0.95;
    let opac_ok = pruned(&noopac) <= 0.10;
    (
        dice_ok && opac_ok,
        format!(
            "no dice: {:.1}% pruned (need >= 95%, {}), fuzz {fd}/{f0} kept; no opacity term: {:.1}% pruned (need <= 10%, {})",
            100.0 * pruned(&nodice),
            if dice_ok { "ok" } else { "miss" },
            100.0 * pruned(&noopac),
            if opac_ok { "ok" } else { "miss" }
        ),
    )
}

fn rotation(w: &[f64; 3]) -> Rotation3<f64> {
    Rotation3::new(Vec3::from(*w))
}

fn angle_between(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    rotation(a).rotation_to(&rotation(b)).angle()
}

fn pose_recovery(r: &Runs) -> (bool, String) {
    const JOINT: usize = 2;
    const ITERATIONS: u64 = 500;
    let frame = &r.data.test[0];
    let truth = frame.pose.joint_rotations[JOINT];
    let tilt = Rotation3::from_axis_angle(&Vec3::z_axis(), 0.05);
    let mut start = frame.pose.clone();
    start.joint_rotations[JOINT] = (tilt * rotation(&truth)).scaled_axis().into();
    let e0 = angle_between(&start.joint_rotations[JOINT], &truth);
    let cfg = TrainingConfig::default();
    let (refined, losses) =
        refine_pose_test_time(frame, &r.data.mesh, &r.full.gaussians, &r.full.texture, &start, ITERATIONS, cfg.lr_pose, &cfg.weights()).unwrap();
    let e1 = angle_between(&refined.joint_rotations[JOINT], &truth);
    let reduction = 1.0 - e1 / e0;
    (
        reduction >= 0.5,
        format!(
            "joint {JOINT}, {ITERATIONS} iterations: error {e0:.4} -> {e1:.4} rad ({:.0}% reduction, need >= 50%); loss {:.5} -> {:.5}",
            100.0 * reduction,
            losses.first().copied().unwrap_or(0.0),
            losses.last().copied().unwrap_or(0.0)
        ),
    )
}

fn determinism(r: &Runs) -> (bool, String) {
    let again = run_pipeline(&r.data, &TrainingConfig::default(), None, Stage::Filter, &mut NoopObserver).unwrap();
    let (a, b) = (r.full.to_bytes(), again.to_bytes());
    (a == b, format!("fresh uninterrupted run vs resumed run: {} vs {} bytes, identical: {}", a.len(), b.len(), a == b))
}

fn render_time(data: &Dataset, c: &Checkpoint, gaussians: &[Gaussian]) -> Duration {
    let frames: Vec<_> = data.train.iter().zip(&c.poses).collect();
    let t = Instant::now();
    for i in 0..100 {
        let (f, pose) = frames[i % frames.len()];
        let scene = Scene { gaussians, mesh: &data.mesh, texture: &c.texture, pose, camera: &f.camera };
        std::hint::black_box(render_frame(&scene, RenderMode::Hybrid, Background::Color([0.0; 3])).unwrap());
    }
    t.elapsed()
}

fn throughput(r: &Runs) -> (bool, String) {
    // Same texture and poses, so only the Gaussian set differs.
    let unpruned = &r.pre_prune;
    let (mut tp, mut tu) = (Duration::MAX, Duration::MAX);
    for _ in 0..3 {
        tu = tu.min(render_time(&r.data, &r.full, unpruned));
        tp = tp.min(render_time(&r.data, &r.full, &r.full.gaussians));
    }
    let ratio = tp.as_secs_f64() / tu.as_secs_f64();
    (
        ratio <= 1.05,
        format!(
            "100 hybrid frames: pruned ({}) {:.1} ms, unpruned ({}) {:.1} ms, ratio {ratio:.3} (need <= 1.05)",
            r.full.gaussians.len(),
            tp.as_secs_f64() * 1e3,
            unpruned.len(),
            tu.as_secs_f64() * 1e3
        ),
    )
}

fn pipeline_runs(data: Dataset) -> Runs {
    let cfg = TrainingConfig::default();
    let init = Model::init(&data, &cfg).unwrap().to_checkpoint(0, &cfg);
    let naive = run_pipeline(&data, &cfg, None, Stage::Texture, &mut NoopObserver).unwrap();
    let mut obs = PrePrune::default();
    let full = run_pipeline(&data, &cfg, Some(&naive), Stage::Filter, &mut obs).unwrap();
    let fuzz = data.fuzz_triangles.iter().copied().collect();
    Runs { data, fuzz, init, naive, full, pre_prune: obs.0.expect("stage 3 ran") }
}

fn flag(name: &str) -> bool {
    std::env::var(name).is_ok_and(|v| v == "1")
}

fn main() {
    let mut out = vec![
        run(1, "worked examples", worked_examples),
        run(2, "brute-force rasterizer oracle", rasterizer_oracle),
        run(3, "gradient suite", gradient_suite),
        run(4, "occlusion property", occlusion_property),
    ];
    let (data, gt) = generate_dataset(&SceneSpec::default()).expect("reference scene");
    out.push(run(5, "composite identity", || composite_identity(&data, &gt.texture)));
    if flag("MESHSPLAT_ACCEPTANCE_FAST") {
        println!("criteria 6-10 skipped (MESHSPLAT_ACCEPTANCE_FAST=1)");
    } else {
        let t = Instant::now();
        let runs = pipeline_runs(data);
        println!("reference pipeline trained in {:.0}s", t.elapsed().as_secs_f64());
        out.push(run(6, "end-to-end pruning", || pruning(&runs)));
        out.push(run(7, "ablations", || ablations(&runs)));
        out.push(run(8, "pose-refinement recovery", || pose_recovery(&runs)));
        out.push(run(9, "determinism", || determinism(&runs)));
        out.push(run(10, "throughput", || throughput(&runs)));
    }
    let failed: Vec<u8> = out.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!("acceptance: {}/{} criteria passed", out.len() - failed.len(), out.len());
    if !failed.is_empty() && flag("MESHSPLAT_ACCEPTANCE_STRICT") {
        std::process::exit(1);
    }
}
