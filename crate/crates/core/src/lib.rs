//! Synthetic 3D pose pipeline: parametric animal skeletons, dataset
//! generation, 2D-to-3D keypoint lifting with an attention MLP, deep-pose
//! lookup, and retargeting onto rigged skeletons.

pub mod datagen;
pub mod error;
pub mod io;
pub mod lifter;
pub mod lookup;
pub mod metrics;
pub mod retarget;
pub mod skeleton;

pub use error::{Error, Result};
