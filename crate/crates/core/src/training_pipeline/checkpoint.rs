//! Binary checkpoint: little-endian, f32 payloads.
//!
//! ```text
//! magic    b"MSPLCKPT"
//! version  u32
//! stage    u32            0 = initialized, 1..=3 = last finished stage
//! config   u32 length + UTF-8 TOML
//! gaussians u32 count, then count × (u32 parent + 14 × f32)
//! texture  u32 width, u32 height, then width × height × 3 × f32
//! poses    u32 count, then per pose: u32 joints, u32 shape length,
//!          joints × 3 × f32 rotations, 3 × f32 root, shape × f32
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Gaussian;
use crate::mesh_pipeline::{Pose, Texture};
use crate::util::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MSPLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Bytes per serialized Gaussian.
pub const GAUSSIAN_RECORD_BYTES: usize = 4 + 14 * 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub stage: u32,
    /// TOML snapshot of the configuration that produced this checkpoint.
    pub config: String,
    pub gaussians: Vec<Gaussian>,
    pub texture: Texture,
    pub poses: Vec<Pose>,
}

/// Rounds every stored value through `f32`, so a quantized checkpoint
/// serializes losslessly.
pub fn quantize_gaussians(gs: &mut [Gaussian]) {
    let q = |v: &mut f64| *v = *v as f32 as f64;
    for g in gs {
        g.offset.iter_mut().chain(g.rotation.iter_mut()).chain(g.log_scale.iter_mut()).chain(g.color.iter_mut()).for_each(q);
        q(&mut g.opacity);
    }
}

pub fn quantize_texture(t: &mut Texture) {
    t.texels.iter_mut().flatten().for_each(|v| *v = *v as f32 as f64);
}

pub fn quantize_pose(p: &mut Pose) {
    p.joint_rotations.iter_mut().flatten().chain(p.root_translation.iter_mut()).chain(p.shape.iter_mut()).for_each(|v| *v = *v as f32 as f64);
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.0.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::BadCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u32()? as usize;
        // Every counted item occupies at least 4 bytes.
        if n.saturating_mul(4) > self.bytes.len() - self.pos {
            return Err(Error::BadCheckpoint(format!("{what} count {n} exceeds file size")));
        }
        Ok(n)
    }
    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as f64)
    }
    fn arr<const N: usize>(&mut self) -> Result<[f64; N]> {
        let mut out = [0.0; N];
        for v in &mut out {
            *v = self.f32()?;
        }
        Ok(out)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::with_capacity(self.storage_bytes() + 64 + self.config.len()));
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(self.version as usize);
        w.u32(self.stage as usize);
        w.u32(self.config.len());
        w.0.extend_from_slice(self.config.as_bytes());
        w.u32(self.gaussians.len());
        for g in &self.gaussians {
            w.u32(g.parent as usize);
            g.offset.iter().chain(&g.rotation).chain(&g.log_scale).chain(&g.color).for_each(|&v| w.f32(v));
            w.f32(g.opacity);
        }
        w.u32(self.texture.width);
        w.u32(self.texture.height);
        self.texture.texels.iter().flatten().for_each(|&v| w.f32(v));
        w.u32(self.poses.len());
        for p in &self.poses {
            w.u32(p.joint_rotations.len());
            w.u32(p.shape.len());
            p.joint_rotations.iter().flatten().chain(&p.root_translation).chain(&p.shape).for_each(|&v| w.f32(v));
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(Error::BadCheckpoint("missing magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let stage = r.u32()?;
        if stage > 3 {
            return Err(Error::BadCheckpoint(format!("stage tag {stage}")));
        }
        let n = r.u32()? as usize;
        let config = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::BadCheckpoint("config is not UTF-8".into()))?;
        let count = r.len("gaussian")?;
        let mut gaussians = Vec::with_capacity(count);
        for _ in 0..count {
            let parent = r.u32()?;
            gaussians.push(Gaussian { parent, offset: r.arr()?, rotation: r.arr()?, log_scale: r.arr()?, color: r.arr()?, opacity: r.f32()? });
        }
        let (tw, th) = (r.u32()? as usize, r.u32()? as usize);
        let texels = (0..tw.checked_mul(th).filter(|&n| n.saturating_mul(12) <= bytes.len()).ok_or_else(|| Error::BadCheckpoint("texture size".into()))?)
            .map(|_| r.arr())
            .collect::<Result<Vec<_>>>()?;
        let texture = Texture::new(tw, th, texels).map_err(|e| Error::BadCheckpoint(e.to_string()))?;
        let count = r.len("pose")?;
        let mut poses = Vec::with_capacity(count);
        for _ in 0..count {
            let joints = r.len("joint")?;
            let shape = r.len("shape")?;
            let joint_rotations = (0..joints).map(|_| r.arr()).collect::<Result<_>>()?;
            let root_translation = r.arr()?;
            let shape = (0..shape).map(|_| r.f32()).collect::<Result<_>>()?;
            poses.push(Pose { joint_rotations, root_translation, shape });
        }
        if r.pos != bytes.len() {
            return Err(Error::BadCheckpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { version, stage, config, gaussians, texture, poses })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }

    /// Serialized bytes of the Gaussian records alone.
    pub fn gaussian_bytes(&self) -> usize {
        GAUSSIAN_RECORD_BYTES * self.gaussians.len()
    }

    /// Serialized bytes of the appearance model: Gaussian block (count +
    /// records) and texture block (size + texels).
    pub fn storage_bytes(&self) -> usize {
        4 + self.gaussian_bytes() + 8 + 12 * self.texture.texels.len()
    }
}
