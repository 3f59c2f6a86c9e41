//! Engine-ready bundle: GLB meshes, manifest, shader weights, specular maps.

pub mod bundle;
pub mod glb;
pub mod view;

pub use bundle::{export_bundle, export_manifest, import_bundle, Bundle, BundleEntity, GameManifest, Sky};
pub use glb::{export_glb, import_glb, GlbMesh, RgbImage};
pub use view::{bundle_surfaces, render_bundle, BundleView};
