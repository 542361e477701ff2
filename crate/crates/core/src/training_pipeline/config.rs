//! Flat, versioned training configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses_metrics::LossWeights;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub iterations_stage1: u64,
    pub iterations_stage2: u64,
    pub iterations_stage3: u64,
    pub batch_size: usize,
    pub prune_threshold: f64,
    /// Gaussians per triangle at initialization: 1 or 4.
    pub subdivision: usize,
    pub texture_resolution: usize,
    pub knn_k: usize,
    pub knn_refresh: u64,
    pub lambda_lpips: f64,
    pub lambda_ssim: f64,
    pub lambda_sobel: f64,
    pub lambda_knn: f64,
    pub lambda_tv: f64,
    pub lambda_opacity: f64,
    pub lambda_dice: f64,
    pub lr_xyz_start: f64,
    pub lr_xyz_end: f64,
    pub lr_rotation: f64,
    pub lr_scaling: f64,
    pub lr_color: f64,
    pub lr_opacity: f64,
    pub lr_texture: f64,
    pub lr_pose: f64,
    /// Preview render period in iterations; 0 disables previews.
    pub preview_every: u64,
    /// Default iteration count of test-time pose refinement.
    pub refine_iterations: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            iterations_stage1: 3000,
            iterations_stage2: 2500,
            iterations_stage3: 5000,
            batch_size: 4,
            prune_threshold: 0.1,
            subdivision: 1,
            texture_resolution: 256,
            knn_k: 5,
            knn_refresh: 100,
            lambda_lpips: w.lpips,
            lambda_ssim: w.ssim,
            lambda_sobel: w.sobel,
            lambda_knn: w.knn,
            lambda_tv: w.tv,
            lambda_opacity: w.opacity,
            lambda_dice: w.dice,
            lr_xyz_start: 1.6e-4,
            lr_xyz_end: 1.6e-6,
            lr_rotation: 0.005,
            lr_scaling: 0.005,
            lr_color: 0.005,
            lr_opacity: 0.05,
            lr_texture: 0.01,
            lr_pose: 2e-4,
            preview_every: 500,
            refine_iterations: 50,
        }
    }
}

impl TrainingConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lpips: self.lambda_lpips,
            ssim: self.lambda_ssim,
            sobel: self.lambda_sobel,
            knn: self.lambda_knn,
            tv: self.lambda_tv,
            opacity: self.lambda_opacity,
            dice: self.lambda_dice,
        }
    }

    pub fn iterations(&self, stage: crate::losses_metrics::Stage) -> u64 {
        use crate::losses_metrics::Stage::*;
        match stage {
            Gaussians => self.iterations_stage1,
            Texture => self.iterations_stage2,
            Filter => self.iterations_stage3,
        }
    }

    /// Zero iterations are allowed (they leave parameters untouched).
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::UnsupportedVersion(self.schema_version));
        }
        if !(self.prune_threshold > 0.0 && self.prune_threshold < 1.0) {
            return bad(format!("prune_threshold {} outside (0, 1)", self.prune_threshold));
        }
        let lambdas = [
            ("lambda_lpips", self.lambda_lpips),
            ("lambda_ssim", self.lambda_ssim),
            ("lambda_sobel", self.lambda_sobel),
            ("lambda_knn", self.lambda_knn),
            ("lambda_tv", self.lambda_tv),
            ("lambda_opacity", self.lambda_opacity),
            ("lambda_dice", self.lambda_dice),
        ];
        for (name, v) in lambdas {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value >= 0"));
            }
        }
        if self.lambda_lpips != 0.0 {
            return bad("lambda_lpips must be 0: no perceptual network is available".into());
        }
        let lrs = [
            self.lr_xyz_start,
            self.lr_xyz_end,
            self.lr_rotation,
            self.lr_scaling,
            self.lr_color,
            self.lr_opacity,
            self.lr_texture,
            self.lr_pose,
        ];
        if lrs.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("learning rates must be finite and >= 0".into());
        }
        if self.batch_size == 0 || self.knn_k == 0 || self.knn_refresh == 0 {
            return bad("batch_size, knn_k and knn_refresh must be positive".into());
        }
        if !matches!(self.subdivision, 1 | 4) {
            return Err(Error::UnsupportedSubdivision(self.subdivision));
        }
        if self.texture_resolution < 2 {
            return bad("texture_resolution must be at least 2".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
