//! Quality-metric-guided translation of face photos into portrait line
//! drawings from unpaired data.

pub mod backbones;
pub mod config;
pub mod corpus;
pub mod dissect;
pub mod error;
pub mod image;
pub mod losses;
pub mod networks;
pub mod ops;
pub mod ranking;
pub mod style_vector;
pub mod styles;
pub mod trainer;

pub use error::{Error, Result};
pub use image::ImageTensor;
pub use style_vector::StyleVector;
