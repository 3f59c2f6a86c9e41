//! Reference rendering of an exported bundle, matching what a player shows.

use glam::DVec3;

use super::bundle::Bundle;
use crate::bake::texture::CHANNELS;
use crate::bake::{rasterize, shade, NeuralTexture, ShaderMlp, TriangleMesh};
use crate::error::{Error, Result};
use crate::scene::CameraModel;

/// Mesh and dequantized texture of every entity, in world space.
pub fn bundle_surfaces(b: &Bundle) -> Result<Vec<(TriangleMesh, NeuralTexture)>> {
    b.entities
        .iter()
        .map(|e| {
            let m = &e.mesh;
            let pose = glam::DMat4::from_cols_array(&e.pose).transpose();
            let vertices = m.positions.iter().map(|p| pose.transform_point3(DVec3::new(p[0] as f64, p[1] as f64, p[2] as f64))).collect();
            let faces = m.indices.chunks_exact(3).map(|f| [f[0], f[1], f[2]]).collect();
            let mut mesh = TriangleMesh::new(vertices, faces);
            mesh.uvs = Some(m.uvs.iter().map(|t| [t[0] as f64, t[1] as f64]).collect());
            let (base, spec) = (&m.base_color, &e.specular);
            if (base.width, base.height) != (spec.width, spec.height) {
                return Err(Error::Validation(format!("entity {}: base and specular sizes differ", e.id)));
            }
            let mut tex = NeuralTexture::new(base.width, base.height);
            for i in 0..tex.texel_count() {
                let mut v = [0.0; CHANNELS];
                for k in 0..3 {
                    v[k] = base.data[3 * i + k] as f64 / 255.0;
                    v[3 + k] = b.spec_quant[k].decode(spec.data[3 * i + k]);
                }
                tex.set_texel(i, &v);
                tex.filled[i] = true;
            }
            Ok((mesh, tex))
        })
        .collect()
}

pub struct BundleView {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<DVec3>,
    /// Ray distance to the nearest surface; infinite on misses.
    pub depth: Vec<f64>,
}

/// Per-entity rasterization composited by depth over the sky color.
pub fn render_bundle(b: &Bundle, surfaces: &[(TriangleMesh, NeuralTexture)], cam: &CameraModel) -> Result<BundleView> {
    let shader = ShaderMlp::from_json(&b.shader)?;
    let sky = DVec3::from_array(b.sky.color.unwrap_or([0.0; 3]));
    let (w, h) = (cam.intrinsics.w as usize, cam.intrinsics.h as usize);
    let mut out = BundleView { width: w, height: h, rgb: vec![sky; w * h], depth: vec![f64::INFINITY; w * h] };
    for (mesh, tex) in surfaces {
        let g = rasterize(mesh, cam, [0.0, 0.0]);
        let img = shade(&g, tex, &shader, cam, sky);
        for i in 0..w * h {
            if g.hit(i) && g.depth[i] < out.depth[i] {
                out.depth[i] = g.depth[i];
                out.rgb[i] = img.rgb[i];
            }
        }
    }
    Ok(out)
}
