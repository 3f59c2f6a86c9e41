//! Distillation of a trained field into a textured mesh.

pub mod fit;
pub mod io;
pub mod march;
pub mod mesh;
pub mod post;
pub mod raster;
pub mod texture;
pub mod uv;

use serde::{Deserialize, Serialize};

pub use fit::{fit_texture, init_texture, FitConfig, InitConfig};
pub use march::{extract_mesh, MarchConfig};
pub use mesh::TriangleMesh;
pub use post::{postprocess_mesh, PostConfig};
pub use raster::{rasterize, GBuffer};
pub use texture::{shade, NeuralTexture, ShaderMlp};
pub use uv::{uv_unwrap, Atlas, UvConfig};

use crate::error::Result;
use crate::nerf::render::Background;
use crate::nerf::RadianceField;
use crate::scene::SceneDataset;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BakeConfig {
    pub march: MarchConfig,
    pub post: PostConfig,
    pub uv: UvConfig,
    pub init: InitConfig,
    pub fit: FitConfig,
}

pub struct BakeOutput {
    pub mesh: TriangleMesh,
    pub atlas: Atlas,
    pub texture: NeuralTexture,
    pub shader: ShaderMlp,
    pub post: post::PostReport,
    pub init: fit::InitReport,
    pub fit_trace: Vec<fit::FitRecord>,
    pub fit_aborted: Option<String>,
}

/// Marching, clean-up, unwrap, initialization and fitting in sequence.
pub fn bake(field: &RadianceField, ds: &SceneDataset, bg: &Background, cfg: &BakeConfig, seed: u64) -> Result<BakeOutput> {
    let raw = extract_mesh(field, &field.frame, &cfg.march)?;
    tracing::info!(faces = raw.faces.len(), vertices = raw.vertices.len(), "extract_mesh");
    let cams: Vec<_> = ds.train_indices().into_iter().map(|i| ds.frames[i].camera.clone()).collect();
    let (clean, post) = postprocess_mesh(&raw, &cams, &cfg.post)?;
    let (mesh, atlas) = uv_unwrap(&clean, &cfg.uv)?;
    let init = init_texture(field, &mesh, atlas.resolution, ds, &cfg.init, seed)?;
    let fit = fit_texture(&mesh, &init.texture, &init.shader, ds, field, bg, &cfg.fit, seed)?;
    let mut texture = fit.texture;
    texture.clamp_base();
    Ok(BakeOutput {
        mesh,
        atlas,
        texture,
        shader: fit.shader,
        post,
        init: init.report,
        fit_trace: fit.trace,
        fit_aborted: fit.aborted,
    })
}
