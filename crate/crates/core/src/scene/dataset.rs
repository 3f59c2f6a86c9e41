//! Scene manifests and lazily loaded frames.

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use glam::DVec3;
use serde::{Deserialize, Serialize};

use super::camera::{CameraModel, Intrinsics};
use super::image;
use super::synth::SynthScene;
use crate::error::{Error, Result};
use crate::geom::Aabb;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<String>,
    pub intrinsics: Intrinsics,
    pub pose: [f64; 16],
    #[serde(default, skip_serializing_if = "is_train")]
    pub split: Split,
}

fn is_train(s: &Split) -> bool {
    *s == Split::Train
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub id: u32,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceEntry {
    pub label: String,
    pub aabb: [f64; 6],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub version: u32,
    pub frames: Vec<FrameEntry>,
    pub classes: Vec<ClassEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instances: Option<Vec<InstanceEntry>>,
    /// World-space region that contains the scene content.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 6]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sky_class: Option<u32>,
}

/// Decoded pixel data of one frame. Cue maps use sentinels for invalid
/// pixels: depth 0, normal zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameData {
    pub rgb: Vec<[f64; 3]>,
    pub depth: Option<Vec<f64>>,
    /// Camera-frame unit normals.
    pub normal: Option<Vec<DVec3>>,
    pub semantic: Option<Vec<u8>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FramePaths {
    pub image: Option<PathBuf>,
    pub depth: Option<PathBuf>,
    pub normal: Option<PathBuf>,
    pub semantic: Option<PathBuf>,
}

#[derive(Debug)]
pub struct FrameRecord {
    pub name: String,
    pub camera: CameraModel,
    pub split: Split,
    pub paths: FramePaths,
    data: OnceLock<Arc<FrameData>>,
}

impl Clone for FrameRecord {
    fn clone(&self) -> Self {
        let data = OnceLock::new();
        if let Some(d) = self.data.get() {
            let _ = data.set(d.clone());
        }
        Self { name: self.name.clone(), camera: self.camera, split: self.split, paths: self.paths.clone(), data }
    }
}

impl FrameRecord {
    pub fn in_memory(name: impl Into<String>, camera: CameraModel, split: Split, data: FrameData) -> Self {
        let cell = OnceLock::new();
        let _ = cell.set(Arc::new(data));
        Self { name: name.into(), camera, split, paths: FramePaths::default(), data: cell }
    }

    pub fn is_loaded(&self) -> bool {
        self.data.get().is_some()
    }

    /// Pixel data, decoded on first access.
    pub fn data(&self) -> Result<Arc<FrameData>> {
        if let Some(d) = self.data.get() {
            return Ok(d.clone());
        }
        let d = Arc::new(self.decode()?);
        Ok(self.data.get_or_init(|| d).clone())
    }

    pub fn has_depth(&self) -> bool {
        self.cue_present(|p| &p.depth, |d| d.depth.is_some())
    }

    pub fn has_normal(&self) -> bool {
        self.cue_present(|p| &p.normal, |d| d.normal.is_some())
    }

    pub fn has_semantic(&self) -> bool {
        self.cue_present(|p| &p.semantic, |d| d.semantic.is_some())
    }

    fn cue_present(&self, path: impl Fn(&FramePaths) -> &Option<PathBuf>, data: impl Fn(&FrameData) -> bool) -> bool {
        match self.data.get() {
            Some(d) => data(d),
            None => path(&self.paths).is_some(),
        }
    }

    fn decode(&self) -> Result<FrameData> {
        let path = self
            .paths
            .image
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("frame {} has neither data nor an image path", self.name)))?;
        let (w, h) = (self.camera.intrinsics.w, self.camera.intrinsics.h);
        let img = image::read_rgb8(path)?;
        check_dims(&self.name, "image", img.width, img.height, w, h)?;
        let rgb = img.bytes.chunks_exact(3).map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0]).collect();

        let depth = match &self.paths.depth {
            Some(p) => {
                let (d, vals, scale) = image::read_gray16(p)?;
                check_dims(&self.name, "depth", d.width, d.height, w, h)?;
                let scale: f64 = match scale {
                    Some(s) => s.parse().map_err(|_| Error::format(p, format!("bad {} value {s:?}", image::DEPTH_SCALE_KEY)))?,
                    None => 1.0,
                };
                Some(vals.iter().map(|v| *v as f64 * scale).collect())
            }
            None => None,
        };
        let normal = match &self.paths.normal {
            Some(p) => {
                let d = image::read_rgb8(p)?;
                check_dims(&self.name, "normal", d.width, d.height, w, h)?;
                Some(d.bytes.chunks_exact(3).map(|c| decode_normal([c[0], c[1], c[2]])).collect())
            }
            None => None,
        };
        let semantic = match &self.paths.semantic {
            Some(p) => {
                let d = image::read_indexed8(p)?;
                check_dims(&self.name, "semantic", d.width, d.height, w, h)?;
                Some(d.bytes)
            }
            None => None,
        };
        Ok(FrameData { rgb, depth, normal, semantic })
    }
}

fn check_dims(frame: &str, what: &str, w: u32, h: u32, ew: u32, eh: u32) -> Result<()> {
    if (w, h) != (ew, eh) {
        return Err(Error::Validation(format!("frame {frame}: {what} map is {w}x{h}, expected {ew}x{eh}")));
    }
    Ok(())
}

pub fn encode_normal(n: DVec3) -> [u8; 3] {
    if n == DVec3::ZERO {
        return [0, 0, 0];
    }
    let q = |v: f64| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
    [q(n.x), q(n.y), q(n.z)]
}

/// Inverse of [`encode_normal`]; returns zero for entries that are not
/// close to unit length.
pub fn decode_normal(c: [u8; 3]) -> DVec3 {
    let v = DVec3::new(c[0] as f64, c[1] as f64, c[2] as f64) / 127.5 - DVec3::ONE;
    let n = v.length();
    if (n - 1.0).abs() > 0.1 {
        DVec3::ZERO
    } else {
        v / n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub label: String,
    pub aabb: Aabb,
}

#[derive(Clone, Debug)]
pub struct SceneDataset {
    pub frames: Vec<FrameRecord>,
    pub classes: Vec<ClassEntry>,
    pub bounds: Aabb,
    pub instances: Vec<Instance>,
    pub sky_class: Option<u32>,
    /// Analytic geometry when the dataset came from the synthetic generator.
    pub synthetic: Option<SynthScene>,
}

impl SceneDataset {
    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.frames.len()).filter(|i| self.frames[*i].split == Split::Train).collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.frames.len()).filter(|i| self.frames[*i].split == Split::Test).collect()
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn class_id(&self, name: &str) -> Option<u32> {
        self.classes.iter().find(|c| c.name == name).map(|c| c.id)
    }

    /// Mean color of sky-labeled pixels over the training frames, or black.
    pub fn background_color(&self) -> Result<DVec3> {
        let Some(sky) = self.sky_class else { return Ok(DVec3::ZERO) };
        let mut sum = DVec3::ZERO;
        let mut n = 0usize;
        for i in self.train_indices() {
            let d = self.frames[i].data()?;
            let Some(sem) = &d.semantic else { continue };
            for (s, c) in sem.iter().zip(&d.rgb) {
                if *s as u32 == sky {
                    sum += DVec3::from_array(*c);
                    n += 1;
                }
            }
        }
        Ok(if n == 0 { DVec3::ZERO } else { sum / n as f64 })
    }

    fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Validation("scene has no frames".into()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.id as usize != i {
                return Err(Error::Validation(format!("class ids must be dense from 0; entry {i} has id {}", c.id)));
            }
        }
        if let Some(s) = self.sky_class {
            if s as usize >= self.classes.len() {
                return Err(Error::Validation(format!("sky class {s} not in class table")));
            }
        }
        Ok(())
    }
}

/// Reads and validates a manifest. Image headers are checked immediately;
/// pixel data is decoded on first use.
pub fn load_scene(manifest_path: &Path) -> Result<SceneDataset> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: SceneManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Validation(format!("{}: {e}", manifest_path.display())))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Validation(format!("unsupported scene manifest version {}", manifest.version)));
    }
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for (i, f) in manifest.frames.iter().enumerate() {
        let camera = CameraModel::from_pose_row_major(f.intrinsics, &f.pose)
            .map_err(|e| Error::Validation(format!("frame {i} ({}): {e}", f.image)))?;
        let image_path = root.join(&f.image);
        if !image_path.is_file() {
            return Err(Error::io(&image_path, std::io::Error::new(std::io::ErrorKind::NotFound, "image file missing")));
        }
        let name = f.image.clone();
        let (w, h) = image::read_dimensions(&image_path)?;
        check_dims(&name, "image", w, h, f.intrinsics.w, f.intrinsics.h)?;
        let cue = |p: &Option<String>, what: &str| -> Result<Option<PathBuf>> {
            let Some(p) = p else { return Ok(None) };
            let path = root.join(p);
            if !path.is_file() {
                tracing::warn!(frame = %name, cue = what, path = %path.display(), "cue map missing; frame loads without it");
                return Ok(None);
            }
            let (w, h) = image::read_dimensions(&path)?;
            check_dims(&name, what, w, h, f.intrinsics.w, f.intrinsics.h)?;
            Ok(Some(path))
        };
        let paths = FramePaths {
            depth: cue(&f.depth, "depth")?,
            normal: cue(&f.normal, "normal")?,
            semantic: cue(&f.semantic, "semantic")?,
            image: Some(image_path),
        };
        frames.push(FrameRecord { name, camera, split: f.split, paths, data: OnceLock::new() });
    }
    let bounds = match manifest.bounds {
        Some(b) => Aabb::from_array(b),
        None => {
            let b = Aabb::from_points(frames.iter().map(|f| &f.camera.translation));
            b.inflate(0.1 * b.diagonal().max(1.0))
        }
    };
    let ds = SceneDataset {
        frames,
        classes: manifest.classes,
        bounds,
        instances: manifest
            .instances
            .unwrap_or_default()
            .into_iter()
            .map(|i| Instance { label: i.label, aabb: Aabb::from_array(i.aabb) })
            .collect(),
        sky_class: manifest.sky_class,
        synthetic: None,
    };
    ds.validate()?;
    Ok(ds)
}

const SEMANTIC_PALETTE: [[u8; 3]; 8] =
    [[135, 190, 235], [220, 60, 60], [90, 160, 70], [150, 100, 50], [200, 200, 60], [160, 80, 200], [60, 200, 200], [128, 128, 128]];

/// Writes every frame as PNG files plus `scene.json` under `dir`.
pub fn write_scene(ds: &SceneDataset, dir: &Path, depth_scale: f64) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for (i, f) in ds.frames.iter().enumerate() {
        let d = f.data()?;
        let (w, h) = (f.camera.intrinsics.w, f.camera.intrinsics.h);
        let image = format!("rgb_{i:03}.png");
        let bytes: Vec<u8> = d.rgb.iter().flat_map(|c| c.map(image::to_u8)).collect();
        image::write_rgb8(&dir.join(&image), w, h, &bytes)?;
        let depth = match &d.depth {
            Some(dm) => {
                let name = format!("depth_{i:03}.png");
                let q: Vec<u16> = dm.iter().map(|v| (v / depth_scale).round().clamp(0.0, 65535.0) as u16).collect();
                image::write_gray16(&dir.join(&name), w, h, &q, &[(image::DEPTH_SCALE_KEY, format!("{depth_scale}"))])?;
                Some(name)
            }
            None => None,
        };
        let normal = match &d.normal {
            Some(nm) => {
                let name = format!("normal_{i:03}.png");
                let bytes: Vec<u8> = nm.iter().flat_map(|n| encode_normal(*n)).collect();
                image::write_rgb8(&dir.join(&name), w, h, &bytes)?;
                Some(name)
            }
            None => None,
        };
        let semantic = match &d.semantic {
            Some(sm) => {
                let name = format!("semantic_{i:03}.png");
                let n = ds.classes.len().max(1);
                let palette: Vec<[u8; 3]> = (0..n).map(|k| SEMANTIC_PALETTE[k % SEMANTIC_PALETTE.len()]).collect();
                image::write_indexed8(&dir.join(&name), w, h, sm, &palette)?;
                Some(name)
            }
            None => None,
        };
        entries.push(FrameEntry {
            image,
            depth,
            normal,
            semantic,
            intrinsics: f.camera.intrinsics,
            pose: f.camera.pose_row_major(),
            split: f.split,
        });
    }
    let manifest = SceneManifest {
        version: MANIFEST_VERSION,
        frames: entries,
        classes: ds.classes.clone(),
        instances: (!ds.instances.is_empty())
            .then(|| ds.instances.iter().map(|i| InstanceEntry { label: i.label.clone(), aabb: i.aabb.to_array() }).collect()),
        bounds: Some(ds.bounds.to_array()),
        sky_class: ds.sky_class,
    };
    let path = dir.join("scene.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
