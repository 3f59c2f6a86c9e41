//! Splitting a baked scene into entities: voxel labels, masked mesh
//! extraction, texture inpainting and physical parameters.

use std::collections::{BTreeMap, HashMap, VecDeque};

use glam::DVec3;
use serde::{Deserialize, Serialize};

use super::collider::{make_collider, Collider, ColliderConfig, ColliderKind};
use crate::bake::fit::texel_surface;
use crate::bake::march::{extract_mesh, MarchConfig};
use crate::bake::post::remove_small_components;
use crate::bake::texture::{NeuralTexture, CHANNELS};
use crate::bake::uv::{uv_unwrap, UvConfig};
use crate::bake::TriangleMesh;
use crate::error::{Error, Result};
use crate::geom::Aabb;
use crate::nerf::model::{DensityField, FieldFrame};
use crate::nerf::RadianceField;
use crate::scene::dataset::Instance;
use crate::scene::{SceneDataset, SynthField};

pub const BACKGROUND: u32 = 0;

/// A density field that can also report class scores.
pub trait SemanticField: DensityField {
    fn semantics(&self, x: DVec3) -> Vec<f64>;
}

impl SemanticField for RadianceField {
    fn semantics(&self, x: DVec3) -> Vec<f64> {
        self.color_semantics(x, DVec3::Z).1
    }
}

impl SemanticField for SynthField {
    fn semantics(&self, x: DVec3) -> Vec<f64> {
        SynthField::semantics(self, x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub bounds: Aabb,
    pub dims: [usize; 3],
    /// x-fastest; [`BACKGROUND`] or an entity id.
    pub labels: Vec<u32>,
}

impl VoxelGrid {
    pub fn voxel_size(&self) -> DVec3 {
        self.bounds.extent() / DVec3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64)
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> DVec3 {
        self.bounds.min + self.voxel_size() * DVec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5)
    }

    pub fn index_of(&self, p: DVec3) -> Option<usize> {
        let q = (p - self.bounds.min) / self.voxel_size();
        if !(q.min_element() >= 0.0) {
            return None;
        }
        let (i, j, k) = (q.x as usize, q.y as usize, q.z as usize);
        (i < self.dims[0] && j < self.dims[1] && k < self.dims[2]).then(|| (k * self.dims[1] + j) * self.dims[0] + i)
    }

    /// Label of the voxel holding `p`; background outside the grid.
    pub fn label_at(&self, p: DVec3) -> u32 {
        self.index_of(p).map_or(BACKGROUND, |i| self.labels[i])
    }

    pub fn count(&self, label: u32) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    /// Bounding box of the voxels carrying `label`.
    pub fn region(&self, label: u32) -> Aabb {
        let s = self.voxel_size();
        let mut b = Aabb::empty();
        for k in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    if self.labels[(k * self.dims[1] + j) * self.dims[0] + i] == label {
                        let c = self.center(i, j, k);
                        b.grow(c - s * 0.5);
                        b.grow(c + s * 0.5);
                    }
                }
            }
        }
        b
    }
}

pub enum LabelSource<'a> {
    /// Entity `i + 1` is instance `i`; the smallest containing box wins.
    Boxes(&'a [Instance]),
    /// Entity id per class id; unmapped classes are background.
    Semantic(&'a [u32]),
}

/// Labels every voxel of `bounds` from its center point.
pub fn label_voxels(field: &(impl SemanticField + ?Sized), bounds: &Aabb, voxel_size: f64, source: &LabelSource) -> Result<VoxelGrid> {
    if !(voxel_size > 0.0) || bounds.is_empty() {
        return Err(Error::InvalidInput(format!("label_voxels: bad voxel size {voxel_size} or empty bounds")));
    }
    let e = bounds.extent();
    let dims = [e.x, e.y, e.z].map(|v| ((v / voxel_size).ceil() as usize).max(1));
    let mut grid = VoxelGrid { bounds: *bounds, dims, labels: vec![BACKGROUND; dims[0] * dims[1] * dims[2]] };
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = grid.center(i, j, k);
                let label = match source {
                    LabelSource::Boxes(inst) => inst
                        .iter()
                        .enumerate()
                        .filter(|(_, b)| b.aabb.contains(p))
                        .min_by(|a, b| volume(&a.1.aabb).total_cmp(&volume(&b.1.aabb)))
                        .map_or(BACKGROUND, |(n, _)| n as u32 + 1),
                    LabelSource::Semantic(map) => {
                        let s = field.semantics(p);
                        let c = s.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(c, _)| c);
                        c.and_then(|c| map.get(c).copied()).unwrap_or(BACKGROUND)
                    }
                };
                grid.labels[(k * dims[1] + j) * dims[0] + i] = label;
            }
        }
    }
    Ok(grid)
}

fn volume(b: &Aabb) -> f64 {
    let e = b.extent();
    e.x * e.y * e.z
}

/// The wrapped field with zero density outside voxels carrying `target`.
pub struct MaskedField<'a, F: ?Sized> {
    pub field: &'a F,
    pub grid: &'a VoxelGrid,
    pub target: u32,
}

impl<F: DensityField + ?Sized> DensityField for MaskedField<'_, F> {
    fn density(&self, x: DVec3) -> f64 {
        if self.grid.label_at(x) == self.target {
            self.field.density(x)
        } else {
            0.0
        }
    }

    fn density_gradient(&self, x: DVec3) -> DVec3 {
        if self.grid.label_at(x) == self.target {
            self.field.density_gradient(x)
        } else {
            DVec3::ZERO
        }
    }
}

/// Isosurface of the field restricted to one label.
pub fn extract_entity(field: &(impl DensityField + ?Sized), frame: &FieldFrame, grid: &VoxelGrid, target: u32, cfg: &MarchConfig) -> Result<TriangleMesh> {
    if grid.count(target) == 0 {
        return Err(Error::InvalidInput(format!("extract_entity: label {target} has no voxels")));
    }
    extract_mesh(&MaskedField { field, grid, target }, frame, cfg)
}

/// Entity texture from the whole-scene texture. Texels whose surface point
/// has a source texel within `tol` copy it; the remaining surface texels
/// copy the nearest valid texel in atlas space.
pub fn inpaint_entity_texture(entity: &TriangleMesh, res: u32, source_mesh: &TriangleMesh, source: &NeuralTexture, tol: f64) -> Result<NeuralTexture> {
    if entity.uvs.is_none() || source_mesh.uvs.is_none() {
        return Err(Error::InvalidInput("inpaint_entity_texture: meshes must be UV-unwrapped".into()));
    }
    let src = texel_surface(source_mesh, source.width);
    let key = |p: DVec3| {
        let q = (p / tol).floor();
        (q.x as i64, q.y as i64, q.z as i64)
    };
    let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (n, (&t, p)) in src.texel.iter().zip(&src.point).enumerate() {
        if source.valid[t as usize] {
            cells.entry(key(*p)).or_default().push(n);
        }
    }
    let dst = texel_surface(entity, res);
    let mut out = NeuralTexture::new(res, res);
    let mut exposed = Vec::new();
    for (&t, p) in dst.texel.iter().zip(&dst.point) {
        let (x, y, z) = key(*p);
        let mut best: Option<(f64, usize)> = None;
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    for &n in cells.get(&(x + dx, y + dy, z + dz)).into_iter().flatten() {
                        let d = src.point[n].distance_squared(*p);
                        if d <= tol * tol && best.map_or(true, |b| d < b.0) {
                            best = Some((d, n));
                        }
                    }
                }
            }
        }
        match best {
            Some((_, n)) => out.set_texel(t as usize, source.texel(src.texel[n] as usize)),
            None => exposed.push(t as usize),
        }
    }
    let copied = dst.texel.len() - exposed.len();
    if !exposed.is_empty() {
        if copied == 0 {
            // nothing to propagate from: fall back to the source mean
            let mut mean = [0.0; CHANNELS];
            let n = source.valid.iter().filter(|v| **v).count().max(1) as f64;
            for (i, _) in source.valid.iter().enumerate().filter(|(_, v)| **v) {
                for (m, v) in mean.iter_mut().zip(source.texel(i)) {
                    *m += v / n;
                }
            }
            for t in exposed.iter() {
                out.set_texel(*t, &mean);
            }
        } else {
            let nearest = nearest_valid(&out);
            let fill: Vec<(usize, usize)> = exposed.iter().map(|t| (*t, nearest[*t])).collect();
            for (t, from) in fill {
                let v = out.texel(from).to_vec();
                out.set_texel(t, &v);
            }
        }
    }
    tracing::info!(copied, exposed = exposed.len(), "inpaint_entity_texture");
    out.dilate(4);
    Ok(out)
}

/// Breadth-first transform over the 4-neighbour texel grid: for every
/// texel, the index of a valid texel at minimal grid distance.
fn nearest_valid(tex: &NeuralTexture) -> Vec<usize> {
    let (w, h) = (tex.width as usize, tex.height as usize);
    let mut from = vec![usize::MAX; w * h];
    let mut queue = VecDeque::new();
    for i in 0..w * h {
        if tex.valid[i] {
            from[i] = i;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let nbrs = [(x > 0).then(|| i - 1), (x + 1 < w).then(|| i + 1), (y > 0).then(|| i - w), (y + 1 < h).then(|| i + w)];
        for j in nbrs.into_iter().flatten() {
            if from[j] == usize::MAX {
                from[j] = from[i];
                queue.push_back(j);
            }
        }
    }
    from
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    /// Kilograms; 0 is static.
    pub mass: f64,
    pub friction: f64,
    pub restitution: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self { mass: 0.0, friction: 0.5, restitution: 0.2 }
    }
}

/// Plausible `[low, high]` ranges per label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRange {
    pub mass: [f64; 2],
    pub friction: [f64; 2],
    pub restitution: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamTable {
    pub ranges: BTreeMap<String, ParamRange>,
    /// Exact values that take precedence over `ranges`.
    pub overrides: BTreeMap<String, PhysicalParams>,
}

impl Default for ParamTable {
    fn default() -> Self {
        let r = |m: [f64; 2], f: [f64; 2], e: [f64; 2]| ParamRange { mass: m, friction: f, restitution: e };
        let ranges = [
            ("vase", r([0.5, 1.5], [0.4, 0.6], [0.1, 0.3])),
            ("ball", r([0.3, 0.5], [0.5, 0.7], [0.6, 0.8])),
            ("chair", r([4.0, 8.0], [0.4, 0.6], [0.1, 0.2])),
            ("box", r([1.0, 3.0], [0.4, 0.6], [0.1, 0.3])),
            ("table", r([10.0, 20.0], [0.5, 0.7], [0.0, 0.1])),
        ];
        Self { ranges: ranges.into_iter().map(|(k, v)| (k.to_string(), v)).collect(), overrides: BTreeMap::new() }
    }
}

fn check_params(label: &str, p: &PhysicalParams) -> Result<()> {
    if !(p.mass >= 0.0) || !p.mass.is_finite() {
        return Err(Error::Validation(format!("params for {label}: negative or non-finite mass {}", p.mass)));
    }
    if !(p.friction >= 0.0) || !p.friction.is_finite() || !(0.0..=1.0).contains(&p.restitution) {
        return Err(Error::Validation(format!("params for {label}: friction must be >= 0 and restitution in [0, 1]")));
    }
    Ok(())
}

/// Override if present, else the midpoint of the label's ranges, else
/// static defaults.
pub fn assign_params(label: &str, table: &ParamTable) -> Result<PhysicalParams> {
    for (name, r) in &table.ranges {
        for (what, [lo, hi]) in [("mass", r.mass), ("friction", r.friction), ("restitution", r.restitution)] {
            if !(lo <= hi) {
                return Err(Error::Validation(format!("params for {name}: {what} range [{lo}, {hi}] is empty")));
            }
        }
        let lows = PhysicalParams { mass: r.mass[0], friction: r.friction[0], restitution: r.restitution[0] };
        let highs = PhysicalParams { mass: r.mass[1], friction: r.friction[1], restitution: r.restitution[1] };
        check_params(name, &lows)?;
        check_params(name, &highs)?;
    }
    for (name, p) in &table.overrides {
        check_params(name, p)?;
    }
    if let Some(p) = table.overrides.get(label) {
        return Ok(*p);
    }
    Ok(match table.ranges.get(label) {
        Some(r) => PhysicalParams {
            mass: 0.5 * (r.mass[0] + r.mass[1]),
            friction: 0.5 * (r.friction[0] + r.friction[1]),
            restitution: 0.5 * (r.restitution[0] + r.restitution[1]),
        },
        None => PhysicalParams::default(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entity {
    pub id: u32,
    pub label: String,
    /// World-space, UV-unwrapped.
    pub mesh: TriangleMesh,
    pub texture: NeuralTexture,
    /// In the same frame as `mesh`.
    pub collider: Collider,
    pub params: PhysicalParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum LabelMode {
    Boxes,
    /// Class name to entity label; classes sharing a label merge.
    Semantic { classes: BTreeMap<String, String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeConfig {
    pub labels: LabelMode,
    pub voxel_size: f64,
    pub march: MarchConfig,
    /// Entity mesh components with fewer faces are dropped.
    pub min_faces: usize,
    pub uv: UvConfig,
    pub inpaint_tol: f64,
    pub collider: ColliderConfig,
    pub dynamic_collider: ColliderKind,
    pub static_collider: ColliderKind,
    pub params: ParamTable,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        Self {
            labels: LabelMode::Boxes,
            voxel_size: 0.025,
            march: MarchConfig::default(),
            min_faces: 32,
            uv: UvConfig::default(),
            inpaint_tol: 0.04,
            collider: ColliderConfig::default(),
            dynamic_collider: ColliderKind::Convex,
            static_collider: ColliderKind::TriMesh,
            params: ParamTable::default(),
        }
    }
}

/// Background (id 0, static) followed by one entity per label present in the
/// voxel grid.
pub fn decompose(
    field: &(impl SemanticField + ?Sized),
    frame: &FieldFrame,
    ds: &SceneDataset,
    scene_mesh: &TriangleMesh,
    scene_texture: &NeuralTexture,
    cfg: &DecomposeConfig,
) -> Result<(Vec<Entity>, VoxelGrid)> {
    if cfg.dynamic_collider == ColliderKind::TriMesh {
        return Err(Error::Validation("decompose: dynamic entities cannot use trimesh colliders".into()));
    }
    let (names, grid) = match &cfg.labels {
        LabelMode::Boxes => {
            let names: Vec<String> = ds.instances.iter().map(|i| i.label.clone()).collect();
            (names, label_voxels(field, &ds.bounds, cfg.voxel_size, &LabelSource::Boxes(&ds.instances))?)
        }
        LabelMode::Semantic { classes } => {
            let mut names: Vec<String> = classes.values().cloned().collect();
            names.sort();
            names.dedup();
            let mut map = vec![BACKGROUND; ds.class_count()];
            for (class, label) in classes {
                let c = ds.class_id(class).ok_or_else(|| Error::Validation(format!("decompose: unknown class {class}")))?;
                map[c as usize] = names.iter().position(|n| n == label).unwrap() as u32 + 1;
            }
            (names, label_voxels(field, &ds.bounds, cfg.voxel_size, &LabelSource::Semantic(&map))?)
        }
    };
    let mut entities = Vec::new();
    for id in 0..=names.len() as u32 {
        let label = if id == BACKGROUND { "background".to_string() } else { names[id as usize - 1].clone() };
        if grid.count(id) == 0 && id != BACKGROUND {
            tracing::warn!(label, "decompose: no voxels, skipped");
            continue;
        }
        let raw = extract_entity(field, frame, &grid, id, &cfg.march)?;
        let mesh = remove_small_components(&raw, cfg.min_faces);
        if mesh.is_empty() {
            tracing::warn!(label, "decompose: empty entity mesh, skipped");
            continue;
        }
        let (mesh, atlas) = uv_unwrap(&mesh, &cfg.uv)?;
        let texture = inpaint_entity_texture(&mesh, atlas.resolution, scene_mesh, scene_texture, cfg.inpaint_tol)?;
        let params = if id == BACKGROUND { PhysicalParams::default() } else { assign_params(&label, &cfg.params)? };
        let kind = if params.mass > 0.0 { cfg.dynamic_collider } else { cfg.static_collider };
        let collider = make_collider(&mesh, kind, &cfg.collider)?;
        tracing::info!(id, label, faces = mesh.faces.len(), collider = collider.type_name(), mass = params.mass, "entity");
        entities.push(Entity { id, label, mesh, texture, collider, params });
    }
    Ok((entities, grid))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exposed_texel_copies_its_only_valid_neighbour() {
        let mut t = NeuralTexture::new(4, 4);
        t.set_texel(5, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        t.set_texel(15, &[1.0; CHANNELS]);
        let from = nearest_valid(&t);
        assert_eq!(from[6], 5);
        assert_eq!(from[0], 5);
        assert_eq!(from[11], 15);
        assert_eq!(from[5], 5);
    }
}
