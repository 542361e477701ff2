//! Textured skinned meshes with surface-attached 3D Gaussians: rendering,
//! a three-stage fitting pipeline, and synthetic test scenes.

pub mod diffopt;
pub mod error;
pub mod geometry;
pub mod image;
pub mod losses_metrics;
pub mod mesh_pipeline;
pub mod splatting;
pub mod synthetic_scenes;
pub mod training_pipeline;
pub mod util;

pub use error::{Error, Result};

// The guide's snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/gaussians.md")]
    mod gaussians {}
    #[doc = include_str!("../../../book/src/rendering.md")]
    mod rendering {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    mod gradients {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/scenes.md")]
    mod scenes {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
