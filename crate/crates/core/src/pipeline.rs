//! Stage directories for the end-to-end run. Each stage reads its inputs
//! from upstream directories and leaves a `stage.json` stamp with a hash of
//! everything it consumed; rerunning with identical inputs is a no-op.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use glam::DVec3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bake::io::{decode_texture, encode_texture, load_bake, read_json, save_bake, write_json};
use crate::bake::{bake, BakeConfig, TriangleMesh};
use crate::error::{Error, Result};
use crate::export::bundle::MANIFEST_FILE;
use crate::export::{bundle_surfaces, export_bundle, import_bundle, render_bundle, Bundle, Sky};
use crate::metrics::{depth_errors, psnr};
use crate::nerf::io::{load_field, save_field, FieldMeta, FIELD_JSON};
use crate::nerf::render::render_image;
use crate::nerf::train::background_of;
use crate::nerf::{train, TrainConfig};
use crate::physics::decompose::{decompose, DecomposeConfig, Entity, PhysicalParams};
use crate::physics::{parse_replay, replay_bytes, run_script, Collider, Script, SolverSettings};
use crate::scene::image::{self, DEPTH_SCALE_KEY};
use crate::scene::{load_scene, synth_scene, write_scene, CameraModel, Intrinsics, SynthConfig, SynthScene};

pub const STAMP_FILE: &str = "stage.json";
pub const SCENE_FILE: &str = "scene.json";
pub const ENTITIES_FILE: &str = "entities.json";
pub const REPLAY_FILE: &str = "replay.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
/// Exact renders of the held-out views, written next to the synthetic scene.
pub const TRUTH_DIR: &str = "truth";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub gravity: [f64; 3],
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self { gravity: [0.0, 0.0, -9.81] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Samples per ray for volume renders.
    pub samples: usize,
    /// Metres per unit of the 16-bit depth PNGs.
    pub depth_scale: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { samples: 64, depth_scale: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Absolute depth error counted as an outlier.
    pub outlier_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { outlier_threshold: 0.1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub settings: SolverSettings,
    pub script: Script,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub bake: BakeConfig,
    pub decompose: DecomposeConfig,
    pub export: ExportConfig,
    pub render: RenderConfig,
    pub eval: EvalConfig,
    pub simulate: SimulateConfig,
    pub accept: crate::acceptance::AcceptConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Validation("a seed is required (config `seed` or --seed)".into()))
    }

    pub fn out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| Error::Validation("an output directory is required (config `out` or --out)".into()))
    }
}

/// Default stage directories under the output root.
pub struct Layout {
    pub scene: PathBuf,
    pub field: PathBuf,
    pub bake: PathBuf,
    pub entities: PathBuf,
    pub bundle: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self {
            scene: root.join("scene"),
            field: root.join("field"),
            bake: root.join("bake"),
            entities: root.join("entities"),
            bundle: root.join("bundle"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stamp {
    pub stage: String,
    pub inputs: String,
    /// Relative path to SHA-256 of every file the stage wrote.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    /// Stamp matched the inputs and outputs; nothing was done.
    UpToDate,
}

fn hex(d: impl AsRef<[u8]>) -> String {
    d.as_ref().iter().map(|b| format!("{b:02x}")).collect()
}

fn files_under(dir: &Path, rel: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir.join(rel)).map_err(|e| Error::io(dir.join(rel), e))?.collect::<Result<_, _>>().map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let r = rel.join(e.file_name());
        if e.path().is_dir() {
            files_under(dir, &r, out)?;
        } else if r != Path::new(STAMP_FILE) {
            out.push(r);
        }
    }
    Ok(())
}

fn output_hashes(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    files_under(dir, Path::new(""), &mut files)?;
    files
        .into_iter()
        .map(|r| {
            let p = dir.join(&r);
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            Ok((r.to_string_lossy().replace('\\', "/"), hex(Sha256::digest(&bytes))))
        })
        .collect()
}

/// Hash of a stage's name, configuration, seed and upstream stamps.
fn input_hash(stage: &str, config: &impl Serialize, seed: Option<u64>, upstream: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(stage.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(config)?);
    h.update(seed.map(|s| s.to_le_bytes()).unwrap_or_default());
    for dir in upstream {
        let p = dir.join(STAMP_FILE);
        let incomplete = || Error::Validation(format!("{}: upstream stage has not completed", dir.display()));
        let bytes = std::fs::read(&p).map_err(|_| incomplete())?;
        let stamp: Stamp = serde_json::from_slice(&bytes).map_err(|e| Error::format(&p, e.to_string()))?;
        if stamp.inputs == "incomplete" {
            return Err(incomplete());
        }
        h.update(Sha256::digest(&bytes));
    }
    Ok(hex(h.finalize()))
}

fn is_fresh(dir: &Path, stage: &str, inputs: &str) -> bool {
    let Ok(stamp) = read_json::<Stamp>(&dir.join(STAMP_FILE)) else { return false };
    stamp.stage == stage && stamp.inputs == inputs && output_hashes(dir).map(|o| o == stamp.outputs).unwrap_or(false)
}

fn run_stage(dir: &Path, stage: &str, inputs: String, body: impl FnOnce(&Path) -> Result<()>) -> Result<Outcome> {
    if is_fresh(dir, stage, &inputs) {
        tracing::info!(stage, dir = %dir.display(), "stage up to date");
        return Ok(Outcome::UpToDate);
    }
    if dir.exists() {
        let empty = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_none();
        if !empty && !dir.join(STAMP_FILE).is_file() {
            return Err(Error::Validation(format!("{}: exists and is not a stage directory; refusing to overwrite", dir.display())));
        }
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    // placeholder so a failed run can be retried over its own leftovers
    write_json(&dir.join(STAMP_FILE), &Stamp { stage: stage.into(), inputs: "incomplete".into(), outputs: BTreeMap::new() })?;
    let t = std::time::Instant::now();
    body(dir)?;
    let stamp = Stamp { stage: stage.into(), inputs, outputs: output_hashes(dir)? };
    write_json(&dir.join(STAMP_FILE), &stamp)?;
    tracing::info!(stage, dir = %dir.display(), seconds = t.elapsed().as_secs_f64(), "stage done");
    Ok(Outcome::Ran)
}

fn stem(name: &str) -> &str {
    name.strip_suffix(".png").unwrap_or(name)
}

fn write_depth(path: &Path, w: u32, h: u32, depth: &[f64], scale: f64) -> Result<()> {
    let q: Vec<u16> = depth.iter().map(|d| if d.is_finite() && *d > 0.0 { (d / scale).round().clamp(1.0, 65535.0) as u16 } else { 0 }).collect();
    image::write_gray16(path, w, h, &q, &[(DEPTH_SCALE_KEY, format!("{scale}"))])
}

/// Zero means no depth and decodes to infinity.
fn read_depth(path: &Path) -> Result<(u32, u32, Vec<f64>)> {
    let (d, q, scale) = image::read_gray16(path)?;
    let scale: f64 = scale.and_then(|s| s.parse().ok()).ok_or_else(|| Error::format(path, format!("missing {DEPTH_SCALE_KEY} text chunk")))?;
    Ok((d.width, d.height, q.iter().map(|v| if *v == 0 { f64::INFINITY } else { *v as f64 * scale }).collect()))
}

fn write_rgb(path: &Path, w: u32, h: u32, rgb: &[DVec3]) -> Result<()> {
    let bytes: Vec<u8> = rgb.iter().flat_map(|c| c.to_array().map(image::to_u8)).collect();
    image::write_rgb8(path, w, h, &bytes)
}

/// Oracle dataset plus exact renders of its held-out views.
pub fn cmd_synth(cfg: &SynthConfig, seed: u64, dir: &Path) -> Result<Outcome> {
    let inputs = input_hash("synth", cfg, Some(seed), &[])?;
    run_stage(dir, "synth", inputs, |dir| {
        let ds = synth_scene(cfg, seed)?;
        write_scene(&ds, dir, cfg.depth_cue_scale)?;
        let scene = SynthScene::new(cfg.clone())?;
        let truth = dir.join(TRUTH_DIR);
        std::fs::create_dir_all(&truth).map_err(|e| Error::io(&truth, e))?;
        for i in ds.test_indices() {
            let f = &ds.frames[i];
            let (w, h) = (f.camera.intrinsics.w, f.camera.intrinsics.h);
            let ex = scene.render(&f.camera);
            write_rgb(&truth.join(&f.name), w, h, &ex.rgb)?;
            write_depth(&truth.join(format!("{}_depth.png", stem(&f.name))), w, h, &ex.depth, 1e-4)?;
        }
        tracing::info!(frames = ds.frames.len(), "synth");
        Ok(())
    })
}

pub fn cmd_train(cfg: &TrainConfig, seed: u64, scene_dir: &Path, dir: &Path) -> Result<Outcome> {
    let inputs = input_hash("train", cfg, Some(seed), &[scene_dir])?;
    run_stage(dir, "train", inputs, |dir| {
        let ds = load_scene(&scene_dir.join(SCENE_FILE))?;
        let out = train(&ds, cfg, seed)?;
        let lines: Vec<String> = out.trace.iter().map(serde_json::to_string).collect::<Result<_, _>>()?;
        let tp = dir.join("trace.jsonl");
        std::fs::write(&tp, lines.join("\n") + "\n").map_err(|e| Error::io(&tp, e))?;
        if let Some(reason) = out.aborted {
            return Err(Error::Numerical(format!("training stopped: {reason}")));
        }
        let bg = background_of(&ds)?;
        let meta = FieldMeta {
            config: out.field.config.clone(),
            frame: out.field.frame,
            num_classes: out.field.num_classes,
            sky_class: ds.sky_class,
            background: bg.color.to_array(),
            bounds: ds.bounds.to_array(),
        };
        save_field(&out.field, &meta, dir)
    })
}

#[derive(Serialize)]
struct BakeReport<'a> {
    faces: usize,
    vertices: usize,
    atlas_resolution: u32,
    charts: usize,
    post: &'a crate::bake::post::PostReport,
    init: &'a crate::bake::fit::InitReport,
    fit_last: Option<&'a crate::bake::fit::FitRecord>,
    fit_aborted: &'a Option<String>,
}

pub fn cmd_bake(cfg: &BakeConfig, seed: u64, scene_dir: &Path, field_dir: &Path, dir: &Path) -> Result<Outcome> {
    let inputs = input_hash("bake", cfg, Some(seed), &[scene_dir, field_dir])?;
    run_stage(dir, "bake", inputs, |dir| {
        let ds = load_scene(&scene_dir.join(SCENE_FILE))?;
        let (field, meta) = load_field(field_dir)?;
        let out = bake(&field, &ds, &meta.background(), cfg, seed)?;
        if let Some(r) = &out.fit_aborted {
            tracing::warn!(reason = %r, "texture fit stopped early; keeping last good state");
        }
        save_bake(dir, &out.mesh, &out.texture, &out.shader)?;
        let report = BakeReport {
            faces: out.mesh.faces.len(),
            vertices: out.mesh.vertices.len(),
            atlas_resolution: out.atlas.resolution,
            charts: out.atlas.charts.len(),
            post: &out.post,
            init: &out.init,
            fit_last: out.fit_trace.last(),
            fit_aborted: &out.fit_aborted,
        };
        write_json(&dir.join("report.json"), &report)
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityJson {
    id: u32,
    label: String,
    mesh: TriangleMesh,
    texture: String,
    collider: Collider,
    params: PhysicalParams,
}

pub fn save_entities(dir: &Path, entities: &[Entity]) -> Result<()> {
    let mut list = Vec::new();
    for e in entities {
        let name = format!("texture_{}.bin", e.id);
        let p = dir.join(&name);
        std::fs::write(&p, encode_texture(&e.texture)).map_err(|err| Error::io(&p, err))?;
        list.push(EntityJson { id: e.id, label: e.label.clone(), mesh: e.mesh.clone(), texture: name, collider: e.collider.clone(), params: e.params });
    }
    write_json(&dir.join(ENTITIES_FILE), &list)
}

pub fn load_entities(dir: &Path) -> Result<Vec<Entity>> {
    let list: Vec<EntityJson> = read_json(&dir.join(ENTITIES_FILE))?;
    list.into_iter()
        .map(|e| {
            let p = dir.join(&e.texture);
            let texture = decode_texture(&std::fs::read(&p).map_err(|err| Error::io(&p, err))?, &p)?;
            Ok(Entity { id: e.id, label: e.label, mesh: e.mesh, texture, collider: e.collider, params: e.params })
        })
        .collect()
}

pub fn cmd_decompose(cfg: &DecomposeConfig, scene_dir: &Path, field_dir: &Path, bake_dir: &Path, dir: &Path) -> Result<Outcome> {
    let inputs = input_hash("decompose", cfg, None, &[scene_dir, field_dir, bake_dir])?;
    run_stage(dir, "decompose", inputs, |dir| {
        let ds = load_scene(&scene_dir.join(SCENE_FILE))?;
        let (field, _) = load_field(field_dir)?;
        let (mesh, texture, _) = load_bake(bake_dir)?;
        let (entities, _) = decompose(&field, &field.frame, &ds, &mesh, &texture, cfg)?;
        for e in &entities {
            tracing::info!(id = e.id, label = %e.label, faces = e.mesh.faces.len(), collider = e.collider.type_name(), mass = e.params.mass, "entity");
        }
        save_entities(dir, &entities)
    })
}

pub fn cmd_export(cfg: &ExportConfig, field_dir: &Path, bake_dir: &Path, entities_dir: &Path, dir: &Path) -> Result<Outcome> {
    let inputs = input_hash("export", cfg, None, &[field_dir, bake_dir, entities_dir])?;
    run_stage(dir, "export", inputs, |dir| {
        let meta: FieldMeta = read_json(&field_dir.join(FIELD_JSON))?;
        let (_, _, shader) = load_bake(bake_dir)?;
        let entities = load_entities(entities_dir)?;
        let sky = Sky { color: Some(meta.background), dome_glb: None };
        let b = Bundle::from_entities(&entities, &shader, DVec3::from_array(cfg.gravity), sky)?;
        export_bundle(&b, dir).map(|_| ())
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    pub name: String,
    pub intrinsics: Intrinsics,
    /// Row-major camera-to-world transform.
    pub pose: [f64; 16],
}

/// Cameras from a scene manifest (its held-out views) or from a JSON list of
/// [`CameraEntry`].
pub fn load_cameras(path: &Path) -> Result<Vec<(String, CameraModel)>> {
    let value: serde_json::Value = read_json(path)?;
    if value.get("frames").is_some() {
        let ds = load_scene(path)?;
        return Ok(ds.test_indices().into_iter().map(|i| (stem(&ds.frames[i].name).to_string(), ds.frames[i].camera)).collect());
    }
    let list: Vec<CameraEntry> = serde_json::from_value(value).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    list.into_iter()
        .map(|c| Ok((c.name.clone(), CameraModel::from_pose_row_major(c.intrinsics, &c.pose).map_err(|e| Error::Validation(format!("camera {}: {e}", c.name)))?)))
        .collect()
}

/// Renders every camera from a trained field directory or a bundle (its
/// directory or `game.json`) into `<name>.png` and `<name>_depth.png`.
pub fn cmd_render(source: &Path, cameras: &[(String, CameraModel)], cfg: &RenderConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = if source.is_dir() { source.join(MANIFEST_FILE) } else { source.to_path_buf() };
    let mut written = Vec::new();
    let mut emit = |name: &str, cam: &CameraModel, rgb: &[DVec3], depth: &[f64]| -> Result<()> {
        let (w, h) = (cam.intrinsics.w, cam.intrinsics.h);
        let p = dir.join(format!("{name}.png"));
        write_rgb(&p, w, h, rgb)?;
        write_depth(&dir.join(format!("{name}_depth.png")), w, h, depth, cfg.depth_scale)?;
        written.push(p);
        Ok(())
    };
    if source.is_dir() && source.join(FIELD_JSON).is_file() {
        let (field, meta) = load_field(source)?;
        let bounds = crate::geom::Aabb::from_array(meta.bounds);
        for (name, cam) in cameras {
            let img = render_image(&field, cam, cfg.samples, &bounds, &meta.background(), false)?;
            emit(name, cam, &img.rgb, &img.depth)?;
        }
    } else if manifest.is_file() {
        let b = import_bundle(&manifest)?;
        let surfaces = bundle_surfaces(&b)?;
        for (name, cam) in cameras {
            let v = render_bundle(&b, &surfaces, cam)?;
            emit(name, cam, &v.rgb, &v.depth)?;
        }
    } else {
        return Err(Error::Validation(format!("{}: neither a field directory nor a bundle", source.display())));
    }
    Ok(written)
}

/// Runs the script against the bundle's bodies and writes the replay file.
pub fn cmd_simulate(manifest: &Path, cfg: &SimulateConfig, dir: &Path) -> Result<PathBuf> {
    let manifest = if manifest.is_dir() { manifest.join(MANIFEST_FILE) } else { manifest.to_path_buf() };
    let b = import_bundle(&manifest)?;
    let mut world = b.physics_world(cfg.settings.clone())?;
    let frames = run_script(&mut world, &cfg.script)?;
    let bytes = replay_bytes(&frames)?;
    parse_replay(&bytes)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(REPLAY_FILE);
    std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    Ok(p)
}

fn psnr_json<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageScore {
    pub name: String,
    #[serde(serialize_with = "psnr_json")]
    pub psnr: f64,
}

/// PSNR pools squared error over every image; depth errors pool every pixel
/// with depth on both sides. Identical images give `"inf"`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(serialize_with = "psnr_json")]
    pub psnr: f64,
    pub depth_mae: Option<f64>,
    pub depth_rmse: Option<f64>,
    pub outlier_pct: Option<f64>,
    pub depth_pixels: usize,
    pub images: Vec<ImageScore>,
}

fn rgb_of(path: &Path) -> Result<(u32, u32, Vec<[f64; 3]>)> {
    let d = image::read_rgb8(path)?;
    Ok((d.width, d.height, d.bytes.chunks_exact(3).map(|c| [c[0], c[1], c[2]].map(|v| v as f64 / 255.0)).collect()))
}

/// Compares every `<name>.png` in `renders` with the same file in `truth`,
/// plus `<name>_depth.png` where both sides have one.
pub fn cmd_eval(renders: &Path, truth: &Path, cfg: &EvalConfig) -> Result<EvalReport> {
    let mut names: Vec<String> = std::fs::read_dir(renders)
        .map_err(|e| Error::io(renders, e))?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n.ends_with(".png") && !n.ends_with("_depth.png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Validation(format!("{}: no PNG renders", renders.display())));
    }
    let (mut all_a, mut all_b) = (Vec::new(), Vec::new());
    let (mut dp, mut dt) = (Vec::new(), Vec::new());
    let mut images = Vec::new();
    for n in &names {
        let (wa, ha, a) = rgb_of(&renders.join(n))?;
        let tp = truth.join(n);
        if !tp.is_file() {
            return Err(Error::io(&tp, std::io::Error::new(std::io::ErrorKind::NotFound, "no ground truth for render")));
        }
        let (wb, hb, b) = rgb_of(&tp)?;
        if (wa, ha) != (wb, hb) {
            return Err(Error::Validation(format!("{n}: render is {wa}x{ha}, truth is {wb}x{hb}")));
        }
        images.push(ImageScore { name: stem(n).to_string(), psnr: psnr(&a, &b) });
        all_a.extend(a);
        all_b.extend(b);
        let dn = format!("{}_depth.png", stem(n));
        let (ra, rb) = (renders.join(&dn), truth.join(&dn));
        if ra.is_file() && rb.is_file() {
            let (w1, h1, a) = read_depth(&ra)?;
            let (w2, h2, b) = read_depth(&rb)?;
            if (w1, h1) != (w2, h2) {
                return Err(Error::Validation(format!("{dn}: depth sizes differ")));
            }
            dp.extend(a);
            dt.extend(b);
        }
    }
    let d = depth_errors(&dp, &dt, cfg.outlier_threshold);
    let has = d.count > 0;
    Ok(EvalReport {
        psnr: psnr(&all_a, &all_b),
        depth_mae: has.then_some(d.mae),
        depth_rmse: has.then_some(d.rmse),
        outlier_pct: has.then_some(d.outlier_pct),
        depth_pixels: d.count,
        images,
    })
}

/// Every stage from synthesis to export under `cfg.out`.
pub fn run_all(cfg: &PipelineConfig) -> Result<Layout> {
    let seed = cfg.seed()?;
    let l = Layout::new(cfg.out()?);
    cmd_synth(&cfg.synth, seed, &l.scene)?;
    cmd_train(&cfg.train, seed, &l.scene, &l.field)?;
    cmd_bake(&cfg.bake, seed, &l.scene, &l.field, &l.bake)?;
    cmd_decompose(&cfg.decompose, &l.scene, &l.field, &l.bake, &l.entities)?;
    cmd_export(&cfg.export, &l.field, &l.bake, &l.entities, &l.bundle)?;
    Ok(l)
}
