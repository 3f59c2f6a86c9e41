//! Analytic ray-traced scene used as ground truth: a textured ground
//! square with boxes and spheres, Lambertian shading, constant sky.

use glam::DVec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::camera::{camera_ray, CameraModel, Intrinsics, Ray};
use super::dataset::{decode_normal, encode_normal, ClassEntry, FrameData, FrameRecord, Instance, SceneDataset, Split};
use super::image::to_u8;
use crate::error::{Error, Result};
use crate::geom::Aabb;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Box { center: [f64; 3], half: [f64; 3] },
}

impl Shape {
    pub fn aabb(&self) -> Aabb {
        match self {
            Shape::Sphere { center, radius } => {
                let c = DVec3::from_array(*center);
                Aabb::new(c - DVec3::splat(*radius), c + DVec3::splat(*radius))
            }
            Shape::Box { center, half } => {
                let c = DVec3::from_array(*center);
                let h = DVec3::from_array(*half);
                Aabb::new(c - h, c + h)
            }
        }
    }

    /// Signed distance (exact for spheres, exact outside and interior-max
    /// inside for boxes).
    pub fn sdf(&self, p: DVec3) -> f64 {
        match self {
            Shape::Sphere { center, radius } => (p - DVec3::from_array(*center)).length() - radius,
            Shape::Box { center, half } => {
                let q = (p - DVec3::from_array(*center)).abs() - DVec3::from_array(*half);
                q.max(DVec3::ZERO).length() + q.max_element().min(0.0)
            }
        }
    }

    fn intersect(&self, ray: &Ray) -> Option<(f64, DVec3)> {
        match self {
            Shape::Sphere { center, radius } => {
                let c = DVec3::from_array(*center);
                let oc = ray.origin - c;
                let b = oc.dot(ray.dir);
                let disc = b * b - (oc.length_squared() - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t = if -b - s > 1e-9 { -b - s } else { -b + s };
                (t > 1e-9).then(|| (t, (ray.at(t) - c) / *radius))
            }
            Shape::Box { .. } => {
                let b = self.aabb();
                let (t0, _) = b.ray_interval(ray.origin, ray.dir)?;
                if t0 <= 1e-9 {
                    return None;
                }
                let p = ray.at(t0);
                let rel = (p - b.center()) / (b.extent() * 0.5);
                let a = rel.abs();
                let k = if a.x >= a.y && a.x >= a.z { 0 } else if a.y >= a.z { 1 } else { 2 };
                let mut n = DVec3::ZERO;
                n[k] = rel[k].signum();
                Some((t0, n))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthObject {
    pub name: String,
    pub class: u32,
    pub shape: Shape,
    pub albedo: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub width: u32,
    pub height: u32,
    pub fov_deg: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub orbit_radius: f64,
    /// Camera heights cycled over the orbit.
    pub orbit_heights: Vec<f64>,
    pub look_at: [f64; 3],
    /// Half side of the ground square at z = 0; `None` removes the ground.
    pub ground_half: Option<f64>,
    pub ground_class: u32,
    pub ground_albedo: [f64; 3],
    pub ground_pattern_amplitude: f64,
    pub ground_pattern_period: f64,
    pub sky_color: [f64; 3],
    pub sky_class: u32,
    pub light_dir: [f64; 3],
    pub ambient: f64,
    pub classes: Vec<String>,
    pub objects: Vec<SynthObject>,
    /// Depth cue is `a * distance + b`.
    pub depth_cue_affine: [f64; 2],
    pub depth_cue_scale: f64,
    pub bounds: [f64; 6],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            fov_deg: 50.0,
            n_train: 64,
            n_test: 8,
            orbit_radius: 2.6,
            orbit_heights: vec![1.0, 1.5, 2.0],
            look_at: [0.0, 0.0, 0.35],
            ground_half: Some(1.5),
            ground_class: 2,
            ground_albedo: [0.55, 0.5, 0.4],
            ground_pattern_amplitude: 0.15,
            ground_pattern_period: 1.0,
            sky_color: [0.6, 0.75, 0.95],
            sky_class: 0,
            light_dir: [0.4, 0.3, 1.0],
            ambient: 0.35,
            classes: ["sky", "vase", "ground", "table"].map(String::from).to_vec(),
            objects: vec![
                SynthObject {
                    name: "table".into(),
                    class: 3,
                    shape: Shape::Box { center: [0.0, 0.0, 0.25], half: [0.45, 0.35, 0.25] },
                    albedo: [0.65, 0.35, 0.2],
                },
                SynthObject {
                    name: "vase".into(),
                    class: 1,
                    shape: Shape::Sphere { center: [0.0, 0.0, 0.72], radius: 0.22 },
                    albedo: [0.2, 0.45, 0.8],
                },
            ],
            depth_cue_affine: [0.5, 0.2],
            depth_cue_scale: 1e-4,
            bounds: [-1.6, -1.6, -0.1, 1.6, 1.6, 1.2],
        }
    }
}

impl SynthConfig {
    /// One sphere of radius `radius` at the origin, no ground.
    pub fn single_sphere(radius: f64) -> Self {
        Self {
            ground_half: None,
            look_at: [0.0; 3],
            objects: vec![SynthObject {
                name: "ball".into(),
                class: 1,
                shape: Shape::Sphere { center: [0.0; 3], radius },
                albedo: [0.8, 0.3, 0.3],
            }],
            classes: ["sky", "ball"].map(String::from).to_vec(),
            bounds: [-1.0, -1.0, -1.0, 1.0, 1.0, 1.0],
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.classes.len() as u32;
        if self.width == 0 || self.height == 0 || self.n_train + self.n_test == 0 || self.orbit_heights.is_empty() {
            return Err(Error::Validation("synth: empty image size, view count, or height list".into()));
        }
        if self.sky_class >= n || (self.ground_half.is_some() && self.ground_class >= n) {
            return Err(Error::Validation("synth: class id out of range".into()));
        }
        for o in &self.objects {
            if o.class >= n {
                return Err(Error::Validation(format!("synth: object {} has unknown class {}", o.name, o.class)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: DVec3,
    pub class: u32,
    pub albedo: DVec3,
    /// Index into the object list, `None` for the ground.
    pub object: Option<usize>,
}

/// Exact per-pixel ground truth of one view. Misses have infinite depth.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactFrame {
    pub rgb: Vec<DVec3>,
    pub depth: Vec<f64>,
    pub normal: Vec<DVec3>,
    pub class: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub config: SynthConfig,
}

impl SynthScene {
    pub fn new(config: SynthConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn ground_albedo(&self, p: DVec3) -> DVec3 {
        let c = &self.config;
        let k = std::f64::consts::TAU / c.ground_pattern_period;
        let s = (k * p.x).sin() * (k * p.y).sin();
        (DVec3::from_array(c.ground_albedo) + DVec3::new(1.0, 0.6, 0.2) * (c.ground_pattern_amplitude * s)).clamp(DVec3::ZERO, DVec3::ONE)
    }

    pub fn trace(&self, ray: &Ray) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, o) in self.config.objects.iter().enumerate() {
            if let Some((t, n)) = o.shape.intersect(ray) {
                if best.map_or(true, |b| t < b.t) {
                    best = Some(Hit { t, normal: n, class: o.class, albedo: DVec3::from_array(o.albedo), object: Some(i) });
                }
            }
        }
        if let Some(h) = self.config.ground_half {
            if ray.dir.z < 0.0 && ray.origin.z > 0.0 {
                let t = -ray.origin.z / ray.dir.z;
                let p = ray.at(t);
                if p.x.abs() <= h && p.y.abs() <= h && best.map_or(true, |b| t < b.t) {
                    let albedo = self.ground_albedo(p);
                    best = Some(Hit { t, normal: DVec3::Z, class: self.config.ground_class, albedo, object: None });
                }
            }
        }
        best
    }

    pub fn shade(&self, hit: &Hit) -> DVec3 {
        let l = DVec3::from_array(self.config.light_dir).normalize();
        let a = self.config.ambient;
        hit.albedo * (a + (1.0 - a) * hit.normal.dot(l).max(0.0))
    }

    pub fn sky(&self) -> DVec3 {
        DVec3::from_array(self.config.sky_color)
    }

    pub fn render(&self, cam: &CameraModel) -> ExactFrame {
        let i = cam.intrinsics;
        let n = i.pixel_count();
        let mut f = ExactFrame {
            rgb: Vec::with_capacity(n),
            depth: Vec::with_capacity(n),
            normal: Vec::with_capacity(n),
            class: Vec::with_capacity(n),
        };
        for v in 0..i.h {
            for u in 0..i.w {
                let ray = camera_ray(cam, u as f64, v as f64, [0.0, 0.0]);
                match self.trace(&ray) {
                    Some(h) => {
                        f.rgb.push(self.shade(&h));
                        f.depth.push(h.t);
                        f.normal.push(h.normal);
                        f.class.push(h.class as u8);
                    }
                    None => {
                        f.rgb.push(self.sky());
                        f.depth.push(f64::INFINITY);
                        f.normal.push(DVec3::ZERO);
                        f.class.push(self.config.sky_class as u8);
                    }
                }
            }
        }
        f
    }

    /// Signed distance to the union of all solids (ground as a thin slab).
    pub fn sdf(&self, p: DVec3) -> f64 {
        let mut d = f64::INFINITY;
        for o in &self.config.objects {
            d = d.min(o.shape.sdf(p));
        }
        if let Some(h) = self.config.ground_half {
            let ground = Shape::Box { center: [0.0, 0.0, -0.05], half: [h, h, 0.05] };
            d = d.min(ground.sdf(p));
        }
        d
    }

    pub fn cameras(&self, seed: u64) -> Result<Vec<(CameraModel, Split)>> {
        let c = &self.config;
        let total = c.n_train + c.n_test;
        let stride = if c.n_test == 0 { usize::MAX } else { (total / c.n_test).max(1) };
        let intr = Intrinsics::from_fov(c.width, c.height, c.fov_deg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let step = std::f64::consts::TAU / total as f64;
        let mut out = Vec::with_capacity(total);
        let mut n_test = 0;
        for k in 0..total {
            let az = k as f64 * step + rng.gen_range(-0.2..0.2) * step;
            let h = c.orbit_heights[k % c.orbit_heights.len()];
            let eye = DVec3::new(c.orbit_radius * az.cos(), c.orbit_radius * az.sin(), h);
            let cam = CameraModel::look_at(intr, eye, DVec3::from_array(c.look_at), DVec3::Z)?;
            let is_test = n_test < c.n_test && k % stride == stride / 2;
            if is_test {
                n_test += 1;
            }
            out.push((cam, if is_test { Split::Test } else { Split::Train }));
        }
        Ok(out)
    }

    /// Cue maps as stored on disk: quantized exactly like the PNG encodings.
    pub fn frame_data(&self, exact: &ExactFrame, cam: &CameraModel) -> FrameData {
        let c = &self.config;
        let [a, b] = c.depth_cue_affine;
        let rt = cam.rotation.transpose();
        FrameData {
            rgb: exact.rgb.iter().map(|v| v.to_array().map(|x| to_u8(x) as f64 / 255.0)).collect(),
            depth: Some(
                exact
                    .depth
                    .iter()
                    .map(|t| if t.is_finite() { ((a * t + b) / c.depth_cue_scale).round().clamp(0.0, 65535.0) * c.depth_cue_scale } else { 0.0 })
                    .collect(),
            ),
            normal: Some(exact.normal.iter().map(|n| decode_normal(encode_normal(rt * *n))).collect()),
            semantic: Some(exact.class.clone()),
        }
    }
}

/// Renders the configured scene from an orbit of cameras.
pub fn synth_scene(config: &SynthConfig, seed: u64) -> Result<SceneDataset> {
    let scene = SynthScene::new(config.clone())?;
    let mut frames = Vec::new();
    for (i, (cam, split)) in scene.cameras(seed)?.into_iter().enumerate() {
        let exact = scene.render(&cam);
        let data = scene.frame_data(&exact, &cam);
        frames.push(FrameRecord::in_memory(format!("rgb_{i:03}.png"), cam, split, data));
    }
    Ok(SceneDataset {
        frames,
        classes: config.classes.iter().enumerate().map(|(i, n)| ClassEntry { id: i as u32, name: n.clone() }).collect(),
        bounds: Aabb::from_array(config.bounds),
        instances: config.objects.iter().map(|o| Instance { label: o.name.clone(), aabb: o.shape.aabb() }).collect(),
        sky_class: Some(config.sky_class),
        synthetic: Some(scene),
    })
}

impl SynthScene {
    /// Class of the nearest solid, or `None` when the scene is empty.
    pub fn nearest_class(&self, p: DVec3) -> Option<u32> {
        let mut best: Option<(f64, u32)> = None;
        for o in &self.config.objects {
            let d = o.shape.sdf(p);
            if best.map_or(true, |b| d < b.0) {
                best = Some((d, o.class));
            }
        }
        if let Some(h) = self.config.ground_half {
            let d = Shape::Box { center: [0.0, 0.0, -0.05], half: [h, h, 0.05] }.sdf(p);
            if best.map_or(true, |b| d < b.0) {
                best = Some((d, self.config.ground_class));
            }
        }
        best.map(|b| b.1)
    }
}

/// Closed-form density `surface * exp(-sdf / width)` and one-hot
/// semantics of the nearest solid. Stands in for a trained field where
/// exact geometry is wanted.
#[derive(Clone, Debug)]
pub struct SynthField {
    pub scene: SynthScene,
    /// Density on the zero level set.
    pub surface: f64,
    pub width: f64,
}

impl SynthField {
    pub fn new(scene: SynthScene, surface: f64, width: f64) -> Self {
        Self { scene, surface, width }
    }

    pub fn semantics(&self, x: DVec3) -> Vec<f64> {
        let mut s = vec![0.0; self.scene.config.classes.len()];
        if let Some(c) = self.scene.nearest_class(x) {
            s[c as usize] = 1.0;
        }
        s
    }
}

impl crate::nerf::model::DensityField for SynthField {
    fn density(&self, x: DVec3) -> f64 {
        self.surface * (-self.scene.sdf(x) / self.width).min(40.0).exp()
    }

    fn density_gradient(&self, x: DVec3) -> DVec3 {
        let h = 1e-6;
        let g = DVec3::new(
            self.scene.sdf(x + DVec3::X * h) - self.scene.sdf(x - DVec3::X * h),
            self.scene.sdf(x + DVec3::Y * h) - self.scene.sdf(x - DVec3::Y * h),
            self.scene.sdf(x + DVec3::Z * h) - self.scene.sdf(x - DVec3::Z * h),
        ) / (2.0 * h);
        -self.density(x) / self.width * g
    }
}
