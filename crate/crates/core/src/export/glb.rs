//! glTF 2.0 binary container: one node, mesh and base-color texture per
//! entity, 32-bit float attributes and 32-bit indices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::image::{decode, encode_rgb8};

pub const MAGIC: u32 = 0x4654_6C67;
pub const VERSION: u32 = 2;
const CHUNK_JSON: u32 = 0x4E4F_534A;
const CHUNK_BIN: u32 = 0x004E_4942;
const FLOAT: u32 = 5126;
const UNSIGNED_INT: u32 = 5125;
const ARRAY_BUFFER: u32 = 34962;
const ELEMENT_ARRAY_BUFFER: u32 = 34963;
/// Rotates the Z-up world into glTF's Y-up convention.
pub const Z_UP_TO_Y_UP: [f64; 4] = [-std::f64::consts::FRAC_1_SQRT_2, 0.0, 0.0, std::f64::consts::FRAC_1_SQRT_2];

#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlbMesh {
    pub name: String,
    pub positions: Vec<[f32; 3]>,
    pub uvs: Vec<[f32; 2]>,
    pub indices: Vec<u32>,
    pub base_color: RgbImage,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct Asset {
    version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    generator: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SceneJson {
    nodes: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct NodeJson {
    name: String,
    mesh: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rotation: Option<[f64; 4]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Attributes {
    #[serde(rename = "POSITION")]
    position: usize,
    #[serde(rename = "TEXCOORD_0")]
    texcoord: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Primitive {
    attributes: Attributes,
    indices: usize,
    material: usize,
    mode: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct MeshJson {
    name: String,
    primitives: Vec<Primitive>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TextureRef {
    index: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Pbr {
    base_color_texture: TextureRef,
    metallic_factor: f64,
    roughness_factor: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct MaterialJson {
    name: String,
    pbr_metallic_roughness: Pbr,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TextureJson {
    sampler: usize,
    source: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ImageJson {
    buffer_view: usize,
    mime_type: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SamplerJson {
    mag_filter: u32,
    min_filter: u32,
    wrap_s: u32,
    wrap_t: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct BufferJson {
    byte_length: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct BufferViewJson {
    buffer: usize,
    byte_offset: usize,
    byte_length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<u32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct AccessorJson {
    buffer_view: usize,
    #[serde(default)]
    byte_offset: usize,
    component_type: u32,
    count: usize,
    #[serde(rename = "type")]
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max: Option<Vec<f32>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Gltf {
    asset: Asset,
    scene: usize,
    scenes: Vec<SceneJson>,
    nodes: Vec<NodeJson>,
    meshes: Vec<MeshJson>,
    materials: Vec<MaterialJson>,
    textures: Vec<TextureJson>,
    images: Vec<ImageJson>,
    samplers: Vec<SamplerJson>,
    buffers: Vec<BufferJson>,
    #[serde(rename = "bufferViews")]
    buffer_views: Vec<BufferViewJson>,
    accessors: Vec<AccessorJson>,
}

fn pad4(buf: &mut Vec<u8>, byte: u8) {
    while buf.len() % 4 != 0 {
        buf.push(byte);
    }
}

fn bounds(p: &[[f32; 3]]) -> (Vec<f32>, Vec<f32>) {
    let mut lo = vec![f32::INFINITY; 3];
    let mut hi = vec![f32::NEG_INFINITY; 3];
    for v in p {
        for k in 0..3 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    (lo, hi)
}

fn check_mesh(i: usize, m: &GlbMesh) -> Result<()> {
    if m.positions.is_empty() || m.indices.is_empty() || m.indices.len() % 3 != 0 {
        return Err(Error::InvalidInput(format!("export_glb: mesh {i} ({}) is empty or not triangles", m.name)));
    }
    if m.uvs.len() != m.positions.len() {
        return Err(Error::InvalidInput(format!("export_glb: mesh {i} ({}) has {} uvs for {} vertices", m.name, m.uvs.len(), m.positions.len())));
    }
    if m.indices.iter().any(|v| *v as usize >= m.positions.len()) {
        return Err(Error::InvalidInput(format!("export_glb: mesh {i} ({}) index out of range", m.name)));
    }
    if m.positions.iter().flatten().chain(m.uvs.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("export_glb: mesh {i} ({}) has non-finite attributes", m.name)));
    }
    let img = &m.base_color;
    if img.width == 0 || img.height == 0 || img.data.len() != (img.width * img.height * 3) as usize {
        return Err(Error::InvalidInput(format!("export_glb: mesh {i} ({}) base-color texture missing or malformed", m.name)));
    }
    Ok(())
}

pub fn export_glb(meshes: &[GlbMesh]) -> Result<Vec<u8>> {
    if meshes.is_empty() {
        return Err(Error::InvalidInput("export_glb: no meshes".into()));
    }
    let mut bin = Vec::new();
    let mut views = Vec::new();
    let mut push_view = |bin: &mut Vec<u8>, bytes: &[u8], target: Option<u32>| {
        let off = bin.len();
        bin.extend_from_slice(bytes);
        pad4(bin, 0);
        views.push(BufferViewJson { buffer: 0, byte_offset: off, byte_length: bytes.len(), target });
        views.len() - 1
    };
    let mut g = Gltf {
        asset: Asset { version: "2.0".into(), generator: Some("v2g".into()) },
        scene: 0,
        scenes: vec![SceneJson { nodes: (0..meshes.len()).collect() }],
        nodes: Vec::new(),
        meshes: Vec::new(),
        materials: Vec::new(),
        textures: Vec::new(),
        images: Vec::new(),
        samplers: vec![SamplerJson { mag_filter: 9729, min_filter: 9729, wrap_s: 33071, wrap_t: 33071 }],
        buffers: Vec::new(),
        buffer_views: Vec::new(),
        accessors: Vec::new(),
    };
    for (i, m) in meshes.iter().enumerate() {
        check_mesh(i, m)?;
        let pos: Vec<u8> = m.positions.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
        let uv: Vec<u8> = m.uvs.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
        let idx: Vec<u8> = m.indices.iter().flat_map(|v| v.to_le_bytes()).collect();
        let png = encode_rgb8(m.base_color.width, m.base_color.height, &m.base_color.data)?;
        let (vp, vu, vi, vimg) = (
            push_view(&mut bin, &pos, Some(ARRAY_BUFFER)),
            push_view(&mut bin, &uv, Some(ARRAY_BUFFER)),
            push_view(&mut bin, &idx, Some(ELEMENT_ARRAY_BUFFER)),
            push_view(&mut bin, &png, None),
        );
        let (lo, hi) = bounds(&m.positions);
        let a = g.accessors.len();
        g.accessors.push(AccessorJson { buffer_view: vp, byte_offset: 0, component_type: FLOAT, count: m.positions.len(), kind: "VEC3".into(), min: Some(lo), max: Some(hi) });
        g.accessors.push(AccessorJson { buffer_view: vu, byte_offset: 0, component_type: FLOAT, count: m.uvs.len(), kind: "VEC2".into(), min: None, max: None });
        g.accessors.push(AccessorJson { buffer_view: vi, byte_offset: 0, component_type: UNSIGNED_INT, count: m.indices.len(), kind: "SCALAR".into(), min: None, max: None });
        g.images.push(ImageJson { buffer_view: vimg, mime_type: "image/png".into() });
        g.textures.push(TextureJson { sampler: 0, source: i });
        g.materials.push(MaterialJson {
            name: m.name.clone(),
            pbr_metallic_roughness: Pbr { base_color_texture: TextureRef { index: i }, metallic_factor: 0.0, roughness_factor: 1.0 },
        });
        g.meshes.push(MeshJson {
            name: m.name.clone(),
            primitives: vec![Primitive { attributes: Attributes { position: a, texcoord: a + 1 }, indices: a + 2, material: i, mode: 4 }],
        });
        g.nodes.push(NodeJson { name: m.name.clone(), mesh: i, rotation: Some(Z_UP_TO_Y_UP) });
    }
    g.buffer_views = views;
    g.buffers.push(BufferJson { byte_length: bin.len() });
    let mut json = serde_json::to_vec(&g)?;
    pad4(&mut json, b' ');
    let total = 12 + 8 + json.len() + 8 + bin.len();
    let mut out = Vec::with_capacity(total);
    for v in [MAGIC, VERSION, total as u32, json.len() as u32, CHUNK_JSON] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&json);
    out.extend_from_slice(&(bin.len() as u32).to_le_bytes());
    out.extend_from_slice(&CHUNK_BIN.to_le_bytes());
    out.extend_from_slice(&bin);
    Ok(out)
}

fn word(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn bad(reason: impl Into<String>) -> Error {
    Error::format("<glb>", reason)
}

fn accessor_bytes<'a>(g: &Gltf, bin: &'a [u8], i: usize, component: u32, kind: &str, width: usize) -> Result<(&'a [u8], usize)> {
    let a = g.accessors.get(i).ok_or_else(|| bad(format!("accessor {i}: missing")))?;
    if a.component_type != component || a.kind != kind {
        return Err(bad(format!("accessor {i}: expected {kind} of component {component}, found {} of {}", a.kind, a.component_type)));
    }
    let v = g.buffer_views.get(a.buffer_view).ok_or_else(|| bad(format!("accessor {i}: buffer view {} missing", a.buffer_view)))?;
    let need = a.count * width * 4;
    let start = v.byte_offset + a.byte_offset;
    if v.buffer != 0 || a.byte_offset + need > v.byte_length || start + need > bin.len() {
        return Err(bad(format!("accessor {i}: {} elements do not fit buffer view {} ({} bytes)", a.count, a.buffer_view, v.byte_length)));
    }
    Ok((&bin[start..start + need], a.count))
}

fn floats<const N: usize>(bytes: &[u8]) -> Vec<[f32; N]> {
    bytes
        .chunks_exact(4 * N)
        .map(|c| std::array::from_fn(|k| f32::from_le_bytes([c[4 * k], c[4 * k + 1], c[4 * k + 2], c[4 * k + 3]])))
        .collect()
}

/// Parses a GLB written by [`export_glb`], validating the container, every
/// accessor against its buffer view and the position bounds.
pub fn import_glb(bytes: &[u8]) -> Result<Vec<GlbMesh>> {
    if bytes.len() < 20 || word(bytes, 0) != MAGIC {
        return Err(bad("not a GLB file"));
    }
    if word(bytes, 4) != VERSION {
        return Err(bad(format!("unsupported GLB version {}", word(bytes, 4))));
    }
    if word(bytes, 8) as usize != bytes.len() {
        return Err(bad(format!("header length {} != file length {}", word(bytes, 8), bytes.len())));
    }
    let jlen = word(bytes, 12) as usize;
    if word(bytes, 16) != CHUNK_JSON || jlen % 4 != 0 || 20 + jlen + 8 > bytes.len() {
        return Err(bad("malformed JSON chunk"));
    }
    let json = &bytes[20..20 + jlen];
    let at = 20 + jlen;
    let blen = word(bytes, at) as usize;
    if word(bytes, at + 4) != CHUNK_BIN || blen % 4 != 0 || at + 8 + blen != bytes.len() {
        return Err(bad("malformed BIN chunk"));
    }
    let bin = &bytes[at + 8..];
    let g: Gltf = serde_json::from_slice(json).map_err(|e| bad(format!("JSON chunk: {e}")))?;
    if g.buffers.len() != 1 || g.buffers[0].byte_length > bin.len() {
        return Err(bad("expected exactly one buffer backed by the BIN chunk"));
    }
    let mut out = Vec::new();
    for (n, node) in g.nodes.iter().enumerate() {
        let mesh = g.meshes.get(node.mesh).ok_or_else(|| bad(format!("node {n}: mesh {} missing", node.mesh)))?;
        let [p] = mesh.primitives.as_slice() else { return Err(bad(format!("mesh {}: expected one primitive", node.mesh))) };
        let (pb, np) = accessor_bytes(&g, bin, p.attributes.position, FLOAT, "VEC3", 3)?;
        let (ub, nu) = accessor_bytes(&g, bin, p.attributes.texcoord, FLOAT, "VEC2", 2)?;
        let (ib, _) = accessor_bytes(&g, bin, p.indices, UNSIGNED_INT, "SCALAR", 1)?;
        if nu != np {
            return Err(bad(format!("accessor {}: {nu} uvs for {np} positions", p.attributes.texcoord)));
        }
        let positions = floats::<3>(pb);
        let (lo, hi) = bounds(&positions);
        let acc = &g.accessors[p.attributes.position];
        if acc.min.as_deref() != Some(&lo[..]) || acc.max.as_deref() != Some(&hi[..]) {
            return Err(bad(format!("accessor {}: min/max do not match buffer contents", p.attributes.position)));
        }
        let indices: Vec<u32> = ib.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if indices.iter().any(|i| *i as usize >= np) {
            return Err(bad(format!("accessor {}: index out of range", p.indices)));
        }
        let mat = g.materials.get(p.material).ok_or_else(|| bad(format!("mesh {}: material {} missing", node.mesh, p.material)))?;
        let tex = g
            .textures
            .get(mat.pbr_metallic_roughness.base_color_texture.index)
            .ok_or_else(|| bad(format!("material {}: base-color texture missing", p.material)))?;
        let img = g.images.get(tex.source).ok_or_else(|| bad(format!("texture: image {} missing", tex.source)))?;
        let v = g.buffer_views.get(img.buffer_view).ok_or_else(|| bad(format!("image {}: buffer view missing", tex.source)))?;
        if v.byte_offset + v.byte_length > bin.len() {
            return Err(bad(format!("image {}: buffer view out of range", tex.source)));
        }
        let d = decode(&bin[v.byte_offset..v.byte_offset + v.byte_length], std::path::Path::new("<glb image>"))?;
        if d.color != png::ColorType::Rgb || d.depth != png::BitDepth::Eight {
            return Err(bad(format!("image {}: expected 8-bit RGB", tex.source)));
        }
        out.push(GlbMesh {
            name: node.name.clone(),
            positions,
            uvs: floats::<2>(ub),
            indices,
            base_color: RgbImage { width: d.width, height: d.height, data: d.bytes },
        });
    }
    Ok(out)
}
