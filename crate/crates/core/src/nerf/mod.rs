//! Radiance field: model, rendering, losses, training, blocking.

pub mod blocks;
pub mod io;
pub mod loss;
pub mod model;
pub mod render;
pub mod train;

pub use blocks::{partition_blocks, BlockLayout};
pub use loss::{depth_align, LossTerms, LossWeights};
pub use model::{density_normal, field_query, DensityField, FieldConfig, FieldFrame, RadianceField};
pub use render::{composite, render_image, sample_along_ray, Background, RayBatch, RenderResult};
pub use train::{total_loss, train, TrainConfig, TrainOutput};
