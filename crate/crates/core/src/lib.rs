//! Photo ↔ caricature translation that disentangles texture style from
//! facial geometry.
//!
//! Texture is handled by per-domain content/style encoders and decoders;
//! geometry by a generator that predicts landmark displacements, which are
//! applied to the image with a differentiable thin-plate-spline warp.

pub mod error;
pub mod evaluation;
pub mod geometric;
pub mod image;
pub mod landmarks;
pub mod losses;
pub mod style;
pub mod adversaries;
pub mod config;
pub mod data;
pub mod tensorfile;
pub mod training;
pub mod warping;

pub use error::{Error, Result};
pub use image::ImageTensor;
pub use landmarks::{DisplacementField, LandmarkSet};
