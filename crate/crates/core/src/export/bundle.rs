//! The game bundle: `game.json`, one GLB with every entity, shader weights
//! and a quantized specular PNG per entity.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use glam::{DMat3, DMat4, DQuat, DVec3};
use serde::{Deserialize, Serialize};

use super::glb::{export_glb, import_glb, GlbMesh, RgbImage};
use crate::bake::texture::{NeuralTexture, ShaderJson, ShaderMlp, SpecularQuant};
use crate::error::{Error, Result};
use crate::physics::decompose::Entity;
use crate::physics::{BodySpec, Collider, PhysicsWorld, SolverSettings};
use crate::scene::image::{encode_rgb8, read_rgb8};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "game.json";
pub const GLB_FILE: &str = "scene.glb";
pub const SHADER_FILE: &str = "shader.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecQuantJson {
    pub scale: [f64; 3],
    pub offset: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShaderRef {
    pub widths: Vec<usize>,
    /// File holding the layer weights.
    pub weights: String,
    pub spec_quant: SpecQuantJson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityRecord {
    pub id: u32,
    pub label: String,
    pub glb: String,
    pub node: usize,
    /// Quantized specular feature PNG, decoded with the shader's `spec_quant`.
    pub specular: String,
    pub collider: Collider,
    pub mass: f64,
    pub friction: f64,
    pub restitution: f64,
    /// Column-major 4x4 from entity frame to world.
    pub pose: [f64; 16],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sky {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dome_glb: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameManifest {
    pub version: u32,
    pub gravity: [f64; 3],
    pub shader: ShaderRef,
    pub entities: Vec<EntityRecord>,
    pub sky: Sky,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BundleEntity {
    pub id: u32,
    pub label: String,
    pub collider: Collider,
    pub mass: f64,
    pub friction: f64,
    pub restitution: f64,
    pub pose: [f64; 16],
    pub mesh: GlbMesh,
    /// Quantized specular feature, same size as the base color.
    pub specular: RgbImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub gravity: [f64; 3],
    pub shader: ShaderJson,
    pub spec_quant: [SpecularQuant; 3],
    pub sky: Sky,
    pub entities: Vec<BundleEntity>,
}

pub const IDENTITY_POSE: [f64; 16] = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];

fn glb_mesh(e: &Entity) -> Result<GlbMesh> {
    let uvs = e.mesh.uvs.as_ref().ok_or_else(|| Error::InvalidInput(format!("entity {} ({}) has no UVs", e.id, e.label)))?;
    Ok(GlbMesh {
        name: e.label.clone(),
        positions: e.mesh.vertices.iter().map(|v| [v.x as f32, v.y as f32, v.z as f32]).collect(),
        uvs: uvs.iter().map(|t| [t[0] as f32, t[1] as f32]).collect(),
        indices: e.mesh.faces.iter().flatten().copied().collect(),
        base_color: RgbImage { width: e.texture.width, height: e.texture.height, data: e.texture.base_rgb8() },
    })
}

fn spec_file(id: u32) -> String {
    format!("spec_{id}.png")
}

impl Bundle {
    /// Entities at identity pose; one specular quantizer over all textures.
    pub fn from_entities(entities: &[Entity], shader: &ShaderMlp, gravity: DVec3, sky: Sky) -> Result<Bundle> {
        let textures: Vec<&NeuralTexture> = entities.iter().map(|e| &e.texture).collect();
        let spec_quant = SpecularQuant::fit(&textures);
        let entities = entities
            .iter()
            .map(|e| {
                Ok(BundleEntity {
                    id: e.id,
                    label: e.label.clone(),
                    collider: e.collider.clone(),
                    mass: e.params.mass,
                    friction: e.params.friction,
                    restitution: e.params.restitution,
                    pose: IDENTITY_POSE,
                    mesh: glb_mesh(e)?,
                    specular: RgbImage { width: e.texture.width, height: e.texture.height, data: e.texture.specular_rgb8_with(&spec_quant) },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let b = Bundle { gravity: gravity.to_array(), shader: shader.to_json(), spec_quant, sky, entities };
        b.validate()?;
        Ok(b)
    }

    /// Every schema problem, reported together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut ids = BTreeMap::new();
        if !self.gravity.iter().all(|g| g.is_finite()) {
            problems.push("gravity: non-finite".to_string());
        }
        if let Err(e) = ShaderMlp::from_json(&self.shader) {
            problems.push(format!("shader: {e}"));
        }
        if self.spec_quant.iter().any(|q| !(q.scale > 0.0) || !q.offset.is_finite()) {
            problems.push("shader.spec_quant: scale must be positive and offset finite".into());
        }
        if self.sky.color.is_some() == self.sky.dome_glb.is_some() {
            problems.push("sky: exactly one of color, dome_glb".into());
        }
        for (n, e) in self.entities.iter().enumerate() {
            let at = format!("entities[{n}]");
            if ids.insert(e.id, n).is_some() {
                problems.push(format!("{at}.id: duplicate {}", e.id));
            }
            if e.label.is_empty() {
                problems.push(format!("{at}.label: empty"));
            }
            if let Err(err) = e.collider.validate() {
                problems.push(format!("{at}.collider: {err}"));
            }
            if !(e.mass >= 0.0) || !e.mass.is_finite() {
                problems.push(format!("{at}.mass: {}", e.mass));
            }
            if e.mass > 0.0 && matches!(e.collider, Collider::TriMesh { .. }) {
                problems.push(format!("{at}.collider: dynamic entity with tri_mesh"));
            }
            if !(e.friction >= 0.0) || !e.friction.is_finite() {
                problems.push(format!("{at}.friction: {}", e.friction));
            }
            if !(0.0..=1.0).contains(&e.restitution) {
                problems.push(format!("{at}.restitution: {}", e.restitution));
            }
            if !e.pose.iter().all(|v| v.is_finite()) {
                problems.push(format!("{at}.pose: non-finite"));
            }
            let (b, s) = (&e.mesh.base_color, &e.specular);
            if (b.width, b.height) != (s.width, s.height) || s.data.len() != (s.width * s.height * 3) as usize {
                problems.push(format!("{at}.specular: size does not match base color"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!("manifest: {}", problems.join("; "))))
        }
    }

    pub fn manifest(&self) -> GameManifest {
        GameManifest {
            version: MANIFEST_VERSION,
            gravity: self.gravity,
            shader: ShaderRef {
                widths: self.shader.widths.clone(),
                weights: SHADER_FILE.into(),
                spec_quant: SpecQuantJson { scale: self.spec_quant.map(|q| q.scale), offset: self.spec_quant.map(|q| q.offset) },
            },
            entities: self
                .entities
                .iter()
                .enumerate()
                .map(|(n, e)| EntityRecord {
                    id: e.id,
                    label: e.label.clone(),
                    glb: GLB_FILE.into(),
                    node: n,
                    specular: spec_file(e.id),
                    collider: e.collider.clone(),
                    mass: e.mass,
                    friction: e.friction,
                    restitution: e.restitution,
                    pose: e.pose,
                })
                .collect(),
            sky: self.sky.clone(),
        }
    }

    /// File name and bytes of every bundle file, manifest last.
    pub fn files(&self) -> Result<Vec<(String, Vec<u8>)>> {
        self.validate()?;
        let mut out = Vec::new();
        if !self.entities.is_empty() {
            let meshes: Vec<GlbMesh> = self.entities.iter().map(|e| e.mesh.clone()).collect();
            out.push((GLB_FILE.to_string(), export_glb(&meshes)?));
        }
        out.push((SHADER_FILE.to_string(), serde_json::to_vec_pretty(&self.shader)?));
        for e in &self.entities {
            out.push((spec_file(e.id), encode_rgb8(e.specular.width, e.specular.height, &e.specular.data)?));
        }
        out.push((MANIFEST_FILE.to_string(), export_manifest(self)?));
        Ok(out)
    }

    /// Dequantized specular feature of one texel.
    pub fn specular(&self, entity: usize, texel: usize) -> [f64; 3] {
        let d = &self.entities[entity].specular.data[texel * 3..texel * 3 + 3];
        [0, 1, 2].map(|k| self.spec_quant[k].decode(d[k]))
    }

    /// Bodies for every entity, ids and order as in the bundle.
    pub fn physics_world(&self, settings: SolverSettings) -> Result<PhysicsWorld> {
        let mut w = PhysicsWorld::new(DVec3::from_array(self.gravity), settings);
        for e in &self.entities {
            let m = DMat4::from_cols_array(&e.pose);
            let rot = DQuat::from_mat3(&DMat3::from_mat4(m)).normalize();
            w.add_body(&BodySpec {
                id: e.id,
                label: e.label.clone(),
                collider: e.collider.clone(),
                mass: e.mass,
                friction: e.friction,
                restitution: e.restitution,
                position: m.w_axis.truncate().to_array(),
                orientation: rot.to_array(),
                linear_velocity: [0.0; 3],
                angular_velocity: [0.0; 3],
            })?;
        }
        Ok(w)
    }
}

pub fn export_manifest(b: &Bundle) -> Result<Vec<u8>> {
    b.validate()?;
    let mut v = serde_json::to_vec_pretty(&b.manifest())?;
    v.push(b'\n');
    Ok(v)
}

/// Writes every bundle file into `dir`; returns the manifest path.
pub fn export_bundle(b: &Bundle, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, bytes) in b.files()? {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    }
    Ok(dir.join(MANIFEST_FILE))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn parse_manifest(bytes: &[u8], path: &Path) -> Result<GameManifest> {
    let m: GameManifest = serde_json::from_slice(bytes).map_err(|e| Error::format(path, e.to_string()))?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::format(path, format!("unsupported manifest version {}", m.version)));
    }
    Ok(m)
}

pub fn import_bundle(manifest_path: &Path) -> Result<Bundle> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let m = parse_manifest(&read(manifest_path)?, manifest_path)?;
    let shader_path = dir.join(&m.shader.weights);
    let shader: ShaderJson = serde_json::from_slice(&read(&shader_path)?).map_err(|e| Error::format(&shader_path, e.to_string()))?;
    if shader.widths != m.shader.widths {
        return Err(Error::format(manifest_path, format!("shader.widths {:?} do not match {}", m.shader.widths, m.shader.weights)));
    }
    let mut glbs: BTreeMap<String, Vec<GlbMesh>> = BTreeMap::new();
    let mut entities = Vec::new();
    for (n, r) in m.entities.iter().enumerate() {
        if !glbs.contains_key(&r.glb) {
            let p = dir.join(&r.glb);
            let meshes = import_glb(&read(&p)?).map_err(|e| match e {
                Error::Format { reason, .. } => Error::format(&p, reason),
                other => other,
            })?;
            glbs.insert(r.glb.clone(), meshes);
        }
        let mesh = glbs[&r.glb]
            .get(r.node)
            .cloned()
            .ok_or_else(|| Error::format(manifest_path, format!("entities[{n}].node {} not in {}", r.node, r.glb)))?;
        let sp = dir.join(&r.specular);
        let d = read_rgb8(&sp)?;
        entities.push(BundleEntity {
            id: r.id,
            label: r.label.clone(),
            collider: r.collider.clone(),
            mass: r.mass,
            friction: r.friction,
            restitution: r.restitution,
            pose: r.pose,
            mesh,
            specular: RgbImage { width: d.width, height: d.height, data: d.bytes },
        });
    }
    let q = &m.shader.spec_quant;
    let b = Bundle {
        gravity: m.gravity,
        shader,
        spec_quant: [0, 1, 2].map(|k| SpecularQuant { scale: q.scale[k], offset: q.offset[k] }),
        sky: m.sky,
        entities,
    };
    b.validate()?;
    Ok(b)
}
