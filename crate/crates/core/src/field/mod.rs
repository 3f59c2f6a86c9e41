//! Numerical substrate shared by every training stage.

pub mod adam;
pub mod checkpoint;
pub mod contract;
pub mod grid;
pub mod mlp;
pub mod params;
pub mod tape;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use contract::{contract, contract_jacobian, uncontract, ContractionMap};
pub use grid::{FeatureGrid, GridConfig, HashEncoder};
pub use mlp::{mlp_eval, Activation, TinyMlp};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{RayLayout, Tape, Tensor, Var};
