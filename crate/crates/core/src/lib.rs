pub mod acceptance;
pub mod bake;
pub mod error;
pub mod export;
pub mod field;
pub mod geom;
pub mod metrics;
pub mod nerf;
pub mod physics;
pub mod pipeline;
pub mod scene;

pub use error::{Error, Result};
