//! On-disk form of a bake: `mesh.json`, `texture.bin` and `shader.json`.

use std::path::Path;

use super::mesh::TriangleMesh;
use super::texture::{NeuralTexture, ShaderJson, ShaderMlp, CHANNELS};
use crate::error::{Error, Result};
use crate::field::checkpoint::{decode_checkpoint, encode_checkpoint};
use crate::field::ParamStore;

pub const MESH_FILE: &str = "mesh.json";
pub const TEXTURE_FILE: &str = "texture.bin";
pub const SHADER_FILE: &str = "shader.json";

/// Texture as a checkpoint with `data [h, w, C]`, `valid [h, w]` and
/// `filled [h, w]` tensors. Values are stored as f32.
pub fn encode_texture(tex: &NeuralTexture) -> Vec<u8> {
    let (h, w) = (tex.height as usize, tex.width as usize);
    let flag = |v: &[bool]| v.iter().map(|b| *b as u8 as f64).collect::<Vec<_>>();
    let mut store = ParamStore::default();
    store.add("data", vec![h, w, CHANNELS], tex.data.clone());
    store.add("valid", vec![h, w], flag(&tex.valid));
    store.add("filled", vec![h, w], flag(&tex.filled));
    encode_checkpoint(&store)
}

pub fn decode_texture(bytes: &[u8], path: &Path) -> Result<NeuralTexture> {
    let store = decode_checkpoint(bytes, path)?;
    let get = |name: &str| store.find(name).ok_or_else(|| Error::format(path, format!("missing tensor {name}")));
    let (data, valid, filled) = (get("data")?, get("valid")?, get("filled")?);
    let shape = store.shape(data);
    if shape.len() != 3 || shape[2] != CHANNELS || store.shape(valid) != &shape[..2] || store.shape(filled) != &shape[..2] {
        return Err(Error::format(path, format!("texture tensor shapes {shape:?}, {:?}, {:?}", store.shape(valid), store.shape(filled))));
    }
    let mut tex = NeuralTexture::new(shape[1] as u32, shape[0] as u32);
    tex.data.copy_from_slice(store.get(data));
    tex.valid = store.get(valid).iter().map(|v| *v != 0.0).collect();
    tex.filled = store.get(filled).iter().map(|v| *v != 0.0).collect();
    Ok(tex)
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_bake(dir: &Path, mesh: &TriangleMesh, texture: &NeuralTexture, shader: &ShaderMlp) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(MESH_FILE), mesh)?;
    let tp = dir.join(TEXTURE_FILE);
    std::fs::write(&tp, encode_texture(texture)).map_err(|e| Error::io(&tp, e))?;
    write_json(&dir.join(SHADER_FILE), &shader.to_json())
}

pub fn load_bake(dir: &Path) -> Result<(TriangleMesh, NeuralTexture, ShaderMlp)> {
    let mp = dir.join(MESH_FILE);
    let mesh: TriangleMesh = read_json(&mp)?;
    mesh.validate().map_err(|e| Error::format(&mp, e.to_string()))?;
    let tp = dir.join(TEXTURE_FILE);
    let texture = decode_texture(&std::fs::read(&tp).map_err(|e| Error::io(&tp, e))?, &tp)?;
    let sj: ShaderJson = read_json(&dir.join(SHADER_FILE))?;
    Ok((mesh, texture, ShaderMlp::from_json(&sj)?))
}
