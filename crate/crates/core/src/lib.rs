//! Scene editing for Gaussian-splat manipulation demonstrations: splat data
//! and I/O, rasterization with pose gradients, kinematics, frame alignment,
//! scene decomposition, keyframe trajectories and augmentation operators.

pub mod alignment;
pub mod augment;
pub mod decompose;
pub mod error;
pub mod geometry;
pub mod kinematics;
pub mod raster;
pub mod splat;
pub mod synthetic;
pub mod trajectory;
mod spatial;

pub use error::{Error, Result};
pub use splat::{apply_similarity, merge, Gaussian, GaussianSet, SimilarityTransform};
