//! Planar scene reconstruction from posed RGB views with textured,
//! semi-transparent rectangles ("tablets") and a differentiable rasterizer.

pub type Vec3 = nalgebra::Vector3<f64>;

pub mod atlas;
pub mod camera;
pub mod error;
pub mod grid;
pub mod io;
pub mod kdtree;
pub mod losses;
pub mod merge;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod raster;
pub mod render;
pub mod slic;
pub mod synth;
pub mod tablet;

pub use error::{Error, Result};
