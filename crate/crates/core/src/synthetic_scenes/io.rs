//! Dataset directory layout:
//!
//! ```text
//! manifest.json          cameras, poses, split membership, generating spec
//! body.obj, body.skin.json
//! gt.ckpt                ground-truth parameters (optional)
//! train/0000.png, train/0000_mask.png, ...
//! test/0000.png, test/0000_mask.png, ...
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, FrameRecord, GroundTruth, SceneSpec};
use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::image::{GrayImage, RgbImage};
use crate::mesh_pipeline::{load_mesh, save_mesh, Pose};
use crate::training_pipeline::{Checkpoint, CHECKPOINT_VERSION};
use crate::util::{read_to_string, write_atomic};

pub const MANIFEST_FORMAT: &str = "meshsplat-dataset";
const MANIFEST_VERSION: u32 = 1;
const MESH_STEM: &str = "body";
const GT_FILE: &str = "gt.ckpt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFrame {
    pub split: Split,
    pub image: String,
    pub mask: String,
    pub camera: Camera,
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub mesh: String,
    #[serde(default)]
    pub fuzz_triangles: Vec<u32>,
    #[serde(default)]
    pub spec: Option<SceneSpec>,
    pub frames: Vec<ManifestFrame>,
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e))
}

/// Writes the dataset, plus `gt.ckpt` when ground truth is given.
pub fn save_dataset(data: &Dataset, gt: Option<&GroundTruth>, dir: &Path) -> Result<()> {
    for split in [Split::Train, Split::Test] {
        mkdir(&dir.join(split.dir()))?;
    }
    save_mesh(&data.mesh, dir, MESH_STEM)?;
    let mut frames = Vec::new();
    for (split, list) in [(Split::Train, &data.train), (Split::Test, &data.test)] {
        for (i, f) in list.iter().enumerate() {
            let image = format!("{}/{i:04}.png", split.dir());
            let mask = format!("{}/{i:04}_mask.png", split.dir());
            f.image.save_png(&dir.join(&image))?;
            f.mask.map(|&m| if m { 1.0 } else { 0.0 }).save_png(&dir.join(&mask))?;
            frames.push(ManifestFrame { split, image, mask, camera: f.camera.clone(), pose: f.pose.clone() });
        }
    }
    if let Some(gt) = gt {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            stage: 0,
            config: String::new(),
            gaussians: gt.gaussians.clone(),
            texture: gt.texture.clone(),
            poses: data.train.iter().map(|f| f.pose.clone()).collect(),
        };
        ckpt.save(&dir.join(GT_FILE))?;
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        mesh: MESH_STEM.into(),
        fuzz_triangles: data.fuzz_triangles.clone(),
        spec: data.spec.clone(),
        frames,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join("manifest.json"), json.as_bytes())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let m: Manifest = serde_json::from_str(&read_to_string(&dir.join("manifest.json"))?).map_err(|e| Error::Parse(format!("manifest.json: {e}")))?;
    if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
        return Err(Error::Parse(format!("unsupported manifest {} v{}", m.format, m.version)));
    }
    Ok(m)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let m = load_manifest(dir)?;
    let mesh = load_mesh(dir, &m.mesh)?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for f in m.frames {
        let image = RgbImage::load_png(&dir.join(&f.image))?;
        let mask = GrayImage::load_png(&dir.join(&f.mask))?.map(|&v| v > 0.5);
        if !image.same_dims(&mask) || image.width != f.camera.width || image.height != f.camera.height {
            return Err(Error::DimensionMismatch(format!("{} does not match its mask or camera", f.image)));
        }
        f.camera.validate()?;
        f.pose.validate()?;
        if f.pose.joint_rotations.len() != mesh.joints.len() {
            return Err(Error::JointCountMismatch { expected: mesh.joints.len(), got: f.pose.joint_rotations.len() });
        }
        let rec = FrameRecord { image, mask, camera: f.camera, pose: f.pose };
        match f.split {
            Split::Train => train.push(rec),
            Split::Test => test.push(rec),
        }
    }
    Ok(Dataset { mesh, train, test, fuzz_triangles: m.fuzz_triangles, spec: m.spec })
}

/// Ground-truth parameters stored next to the dataset, if any.
pub fn load_ground_truth(dir: &Path) -> Result<Option<GroundTruth>> {
    let path = dir.join(GT_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let c = Checkpoint::load(&path)?;
    Ok(Some(GroundTruth { gaussians: c.gaussians, texture: c.texture }))
}
