//! Spherical radial contour descriptors for 3D voxel masks, low-rank shape
//! bases fitted over a corpus, and windowed refinement of labeled volumes.

pub mod basis;
pub mod centroid;
pub mod codec;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod recon;
pub mod refine;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    pub struct Overview;
    #[doc = include_str!("../../../book/src/volumes.md")]
    pub struct Volumes;
    #[doc = include_str!("../../../book/src/descriptors.md")]
    pub struct Descriptors;
    #[doc = include_str!("../../../book/src/centroid.md")]
    pub struct Centroid;
    #[doc = include_str!("../../../book/src/basis.md")]
    pub struct Basis;
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    pub struct Reconstruction;
    #[doc = include_str!("../../../book/src/refinement.md")]
    pub struct Refinement;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
