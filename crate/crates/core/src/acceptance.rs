//! Headless acceptance checks. Each check returns a [`Verdict`]; the ones
//! that need a trained field share a single training run on the synthetic
//! oracle scene.

use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use glam::{DQuat, DVec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bake::fit::{FitState, PixelBatch};
use crate::bake::texture::CHANNELS;
use crate::bake::{bake, extract_mesh, rasterize, shade, BakeConfig, MarchConfig, NeuralTexture, ShaderMlp};
use crate::error::{Error, Result};
use crate::export::bundle::MANIFEST_FILE;
use crate::export::glb::{MAGIC, VERSION};
use crate::export::{export_bundle, export_glb, import_bundle, import_glb, Bundle, GlbMesh, Sky};
use crate::field::{GridConfig, Tape, Tensor};
use crate::metrics::{depth_errors, psnr};
use crate::nerf::loss::{self, depth_align};
use crate::nerf::model::{DensityField, FieldConfig, FieldFrame, RadianceField};
use crate::nerf::render::render_image;
use crate::nerf::train::{background_of, total_loss, BatchSampler};
use crate::nerf::{train, LossWeights, TrainConfig};
use crate::physics::decompose::{decompose, DecomposeConfig, Entity};
use crate::physics::{Action, BodySpec, Collider, PhysicsWorld, SolverSettings};
use crate::scene::{synth_scene, SceneDataset, SynthConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {} [{:.1} s]", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail, self.seconds)
    }
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> Verdict {
    let t = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    let v = Verdict { name: name.into(), passed, detail, seconds: t.elapsed().as_secs_f64() };
    tracing::info!(criterion = name, passed = v.passed, detail = %v.detail, seconds = v.seconds, "acceptance");
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcceptConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub render_samples: usize,
    pub bake: BakeConfig,
    pub decompose: DecomposeConfig,
    /// Scratch directory for the export round trip; the system temp dir when unset.
    pub scratch: Option<PathBuf>,
}

impl Default for AcceptConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            synth: SynthConfig::default(),
            train: TrainConfig { steps: 1500, eval_every: 0, ..TrainConfig::default() },
            render_samples: 64,
            bake: BakeConfig::default(),
            decompose: DecomposeConfig::default(),
            scratch: None,
        }
    }
}

/// Relative error of a central difference against the analytic gradient.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (numeric - analytic).abs() / analytic.abs().max(numeric.abs())
}

fn tiny_field_config() -> FieldConfig {
    let grid = GridConfig { levels: 3, features_per_level: 2, log2_table_size: 10, base_resolution: 4, per_level_scale: 2.0 };
    FieldConfig { density_grid: grid.clone(), color_grid: grid, hidden: vec![8], head_hidden: vec![6], grid_init_scale: 0.5, density_bias_init: 0.0 }
}

/// Worst relative error and number of entries checked for the full training
/// objective (encoders, MLPs, compositing, all six loss terms, density normals).
fn field_gradient_check() -> Result<(f64, usize)> {
    let scfg = SynthConfig { width: 16, height: 16, n_train: 2, n_test: 0, ..SynthConfig::default() };
    let ds = synth_scene(&scfg, 3)?;
    let field = RadianceField::new(tiny_field_config(), FieldFrame::from_bounds(&ds.bounds), ds.class_count(), 11);
    let cfg = TrainConfig { images_per_batch: 2, rays_per_image: 2, samples_per_ray: 8, normal_rays: 4, sparsity_points: 3, ..Default::default() };
    let w = LossWeights { rgb: 1.0, depth: 0.5, normal: 0.3, semantic: 0.2, sky: 0.4, sparsity: 0.1, alpha: 0.5 };
    let sampler = BatchSampler::new(&ds, &[0, 1])?;
    let bg = background_of(&ds)?;
    let batch = sampler.sample(&ds, &cfg, &mut ChaCha8Rng::seed_from_u64(9));
    let eval = total_loss(&field, &batch, &w, &bg)?;
    let terms = eval.terms;
    if [terms.rgb, terms.depth, terms.normal, terms.semantic, terms.sky, terms.sparsity].iter().any(Option::is_none) {
        return Err(Error::Numerical("gradient fixture does not exercise every loss term".into()));
    }
    let grads = eval.gradients()?;
    drop(eval);
    let loss_at = |f: &RadianceField| total_loss(f, &batch, &w, &bg).map(|e| e.terms.total);
    let h = 1e-6;
    let (mut worst, mut n) = (0.0f64, 0);
    for id in field.params.ids() {
        let g = grads.get(id);
        let mut order: Vec<usize> = (0..g.len()).collect();
        order.sort_by(|a, b| g[*b].abs().total_cmp(&g[*a].abs()));
        for &k in order.iter().take(4).filter(|k| g[**k].abs() > 1e-9) {
            let (mut fp, mut fm) = (field.clone(), field.clone());
            fp.params.get_mut(id)[k] += h;
            fm.params.get_mut(id)[k] -= h;
            worst = worst.max(rel_err(g[k], (loss_at(&fp)? - loss_at(&fm)?) / (2.0 * h)));
            n += 1;
        }
    }
    Ok((worst, n))
}

/// Same for the baked-texture objective: bilinear texture taps and the shader MLP.
fn texture_gradient_check() -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tex = NeuralTexture::new(16, 16);
    for i in 0..tex.texel_count() {
        let v: Vec<f64> = (0..CHANNELS).map(|k| if k < 3 { rng.gen_range(0.3..0.7) } else { rng.gen_range(-1.0..1.0) }).collect();
        tex.set_texel(i, &v);
    }
    let mut shader = ShaderMlp::new(5);
    for id in shader.params.ids().collect::<Vec<_>>() {
        shader.params.get_mut(id).iter_mut().for_each(|v| *v *= 0.3);
    }
    let state = FitState::new(&tex, &shader)?;
    let mut batch = PixelBatch::default();
    for _ in 0..40 {
        batch.uv.push([rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)]);
        batch.dirs.push(DVec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..-0.2)).normalize());
        batch.gt.push([rng.gen(), rng.gen(), rng.gen()]);
    }
    let loss = |s: &FitState| {
        let mut t = Tape::new(&s.params);
        let l = s.record_color_loss(&mut t, &batch)?;
        Ok::<_, Error>(t.scalar(l))
    };
    let grads = {
        let mut t = Tape::new(&state.params);
        let l = state.record_color_loss(&mut t, &batch)?;
        t.backward(l)?
    };
    let h = 1e-6;
    let (mut worst, mut n) = (0.0f64, 0);
    for id in state.params.ids() {
        let g = grads.get(id);
        let mut order: Vec<usize> = (0..g.len()).collect();
        order.sort_by(|a, b| g[*b].abs().total_cmp(&g[*a].abs()));
        for &k in order.iter().take(8).filter(|k| g[**k].abs() > 1e-9) {
            let (mut p, mut m) = (state.clone(), state.clone());
            p.params.get_mut(id)[k] += h;
            m.params.get_mut(id)[k] -= h;
            worst = worst.max(rel_err(g[k], (loss(&p)? - loss(&m)?) / (2.0 * h)));
            n += 1;
        }
    }
    Ok((worst, n))
}

pub fn gradient_suite() -> Verdict {
    timed("gradient suite", || {
        let t = Instant::now();
        let (fw, fnum) = field_gradient_check()?;
        let (tw, tnum) = texture_gradient_check()?;
        let secs = t.elapsed().as_secs_f64();
        let worst = fw.max(tw);
        Ok((
            worst < 1e-3 && secs < 60.0 && fnum > 20 && tnum > 10,
            format!("max rel err {worst:.2e} over {} entries (field {fnum}, texture {tnum}); limit 1e-3 in < 60 s", fnum + tnum),
        ))
    })
}

pub fn losses() -> Verdict {
    timed("losses", || {
        let store = Default::default();
        let mut tape = Tape::new(&store);
        let gt = [[0.2, 0.4, 0.6], [1.0, 0.0, 0.5], [0.25, 0.75, 0.125]];
        let color = tape.input(Tensor::new(3, 3, gt.iter().flatten().copied().collect()));
        let rgb = loss::rgb_term(&mut tape, color, &gt)?;
        let d = [1.5, 2.25, 3.0, f64::INFINITY];
        let depth = tape.input(Tensor::new(4, 1, d.to_vec()));
        let dterm = loss::depth_term(&mut tape, depth, &d, &[vec![0, 1, 2]])?;
        let normals = [DVec3::X, DVec3::NEG_Z, DVec3::Y];
        let nm = tape.input(Tensor::from_vec3s(&normals));
        let nd = tape.input(Tensor::from_vec3s(&normals));
        let nterm = loss::normal_term(&mut tape, nm, Some(nd), &[0, 1, 2], &normals)?;
        let sem = tape.input(Tensor::new(2, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]));
        let sterm = loss::semantic_term(&mut tape, sem, &[1, 0])?;
        let sky = loss::sky_term(&mut tape, depth, &[3]);
        let sigma = tape.input(Tensor::new(5, 1, vec![0.0; 5]));
        let sp = loss::sparsity_term(&mut tape, sigma, 0.01)?;
        let (_, terms) = loss::combine(&mut tape, [(Some(rgb), 1.0), (dterm, 1.0), (nterm, 1.0), (sterm, 1.0), (Some(sky), 1.0), (Some(sp), 1.0)])?;
        let values = [terms.rgb, terms.depth, terms.normal, terms.semantic, terms.sky, terms.sparsity];
        let zeros = values.iter().filter(|v| **v == Some(0.0)).count();

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dr: Vec<f64> = (0..64).map(|_| rng.gen_range(0.5..4.0)).collect();
        let mono: Vec<f64> = dr.iter().map(|v| 0.3 * v + 1.2 + rng.gen_range(-0.05..0.05)).collect();
        let mask: Vec<bool> = (0..64).map(|i| i % 7 != 3).collect();
        let al = depth_align(&dr, &mono, &mask);
        let (mut s1, mut sd) = (0.0f64, 0.0f64);
        for i in (0..64).filter(|i| mask[*i]) {
            let r = al.a * dr[i] + al.b - mono[i];
            s1 += r;
            sd += r * dr[i];
        }
        let resid = s1.abs().max(sd.abs());
        Ok((zeros == 6 && resid < 1e-9 && !al.degenerate, format!("{zeros}/6 terms exactly 0 on perfect inputs; normal-equation residual {resid:.1e} (limit 1e-9)")))
    })
}

struct Ball {
    r: f64,
}

impl DensityField for Ball {
    fn density(&self, x: DVec3) -> f64 {
        10.0 + 100.0 * (self.r - x.length()) / self.r
    }
    fn density_gradient(&self, x: DVec3) -> DVec3 {
        -100.0 / self.r * x.normalize_or_zero()
    }
}

pub fn geometry() -> Verdict {
    timed("geometry", || {
        let cfg = MarchConfig { cells_per_region: 16, ..Default::default() };
        let r = 0.55;
        let m = extract_mesh(&Ball { r }, &FieldFrame { center: [0.0; 3], scale: 1.0 }, &cfg)?;
        let err = m.vertices.iter().map(|v| (v.length() - r).abs()).sum::<f64>() / m.vertices.len().max(1) as f64;
        let cracks = m.edge_counts().values().filter(|c| **c != 2).count();
        let spacings = err / cfg.spacing();
        Ok((
            !m.is_empty() && spacings < 2.0 && cracks == 0,
            format!("mean radial error {spacings:.3} spacings (limit 2) over {} regions^3; {cracks} boundary cracks", cfg.regions),
        ))
    })
}

const DT: f64 = 1.0 / 60.0;

fn ball(id: u32, p: [f64; 3], r: f64, mass: f64, v: [f64; 3], friction: f64, restitution: f64) -> BodySpec {
    BodySpec {
        id,
        label: format!("ball{id}"),
        collider: Collider::Sphere { center: [0.0; 3], radius: r },
        mass,
        friction,
        restitution,
        position: p,
        orientation: [0.0, 0.0, 0.0, 1.0],
        linear_velocity: v,
        angular_velocity: [0.0; 3],
    }
}

fn cuboid(id: u32, p: [f64; 3], half: [f64; 3], mass: f64, friction: f64, restitution: f64) -> BodySpec {
    BodySpec {
        id,
        label: format!("box{id}"),
        collider: Collider::Box { half, center: [0.0; 3], rotation: [0.0, 0.0, 0.0, 1.0] },
        mass,
        friction,
        restitution,
        position: p,
        orientation: [0.0, 0.0, 0.0, 1.0],
        linear_velocity: [0.0; 3],
        angular_velocity: [0.0; 3],
    }
}

fn v(w: &PhysicsWorld, id: u32) -> Result<DVec3> {
    Ok(DVec3::from_array(w.body(id).ok_or_else(|| Error::InvalidInput(format!("no body {id}")))?.state.linear_velocity))
}

fn scripted_replay() -> Result<Vec<String>> {
    let g = DVec3::new(0.0, 0.0, -9.81);
    let mut w = PhysicsWorld::new(g, SolverSettings::default());
    w.add_body(&cuboid(0, [0.0, 0.0, -0.5], [5.0, 5.0, 0.5], 0.0, 0.5, 0.0))?;
    w.add_body(&cuboid(1, [0.0, 0.0, 0.3], [0.2, 0.2, 0.2], 1.0, 0.5, 0.0))?;
    w.add_body(&ball(2, [-2.0, 0.1, 0.3], 0.15, 0.4, [0.0; 3], 0.5, 0.5))?;
    let mut lines = Vec::new();
    for k in 0..200 {
        let actions = if k == 20 { vec![Action { body: 2, impulse: [2.5, 0.0, 0.4], point: None }] } else { vec![] };
        w.step(DT, &actions)?;
        lines.push(serde_json::to_string(&w.snapshot())?);
    }
    Ok(lines)
}

pub fn physics() -> Verdict {
    timed("physics", || {
        // frictionless sphere-box impact
        let mut w = PhysicsWorld::new(DVec3::ZERO, SolverSettings::default());
        w.add_body(&ball(1, [-1.0, 0.1, 0.05], 0.3, 1.0, [2.0, 0.0, 0.0], 0.0, 1.0))?;
        w.add_body(&cuboid(2, [0.5, 0.0, 0.0], [0.2, 0.3, 0.4], 3.0, 0.0, 0.5))?;
        let p0 = w.momentum();
        let (mut drift, mut contacts) = (0.0f64, 0);
        for _ in 0..90 {
            contacts += w.step(DT, &[])?;
            drift = drift.max((w.momentum() - p0).length() / p0.length());
        }

        // elastic head-on collision of equal masses
        let mut w = PhysicsWorld::new(DVec3::ZERO, SolverSettings::default());
        w.add_body(&ball(1, [-1.0, 0.0, 0.0], 0.5, 1.0, [1.5, 0.0, 0.0], 0.0, 1.0))?;
        w.add_body(&ball(2, [1.0, 0.0, 0.0], 0.5, 1.0, [-0.5, 0.0, 0.0], 0.0, 1.0))?;
        for _ in 0..90 {
            w.step(DT, &[])?;
        }
        let swap = (v(&w, 1)? - DVec3::new(-0.5, 0.0, 0.0)).length().max((v(&w, 2)? - DVec3::new(1.5, 0.0, 0.0)).length());

        // resting contact: a sphere and a box settle on the ground
        let s = SolverSettings::default();
        let mut w = PhysicsWorld::new(DVec3::new(0.0, 0.0, -9.81), s.clone());
        w.add_body(&cuboid(0, [0.0, 0.0, -0.5], [5.0, 5.0, 0.5], 0.0, 0.5, 0.0))?;
        w.add_body(&ball(1, [0.0, 0.0, 0.8], 0.3, 2.0, [0.0; 3], 0.5, 0.0))?;
        w.add_body(&cuboid(2, [1.0, 0.0, 0.4], [0.2, 0.3, 0.25], 1.0, 0.5, 0.0))?;
        let mut pen = 0.0f64;
        for _ in 0..300 {
            w.step(DT, &[])?;
            let b1 = w.body(1).map(|b| b.state.position[2]).unwrap_or(0.0);
            let b2 = w.body(2).map(|b| (b.state.position[2], b.state.rotation())).unwrap_or((0.0, DQuat::IDENTITY));
            // lowest box corner
            let low = (0..8)
                .map(|i| {
                    let c = DVec3::new(if i & 1 == 0 { -0.2 } else { 0.2 }, if i & 2 == 0 { -0.3 } else { 0.3 }, if i & 4 == 0 { -0.25 } else { 0.25 });
                    b2.0 + (b2.1 * c).z
                })
                .fold(f64::INFINITY, f64::min);
            pen = pen.max(0.3 - b1).max(-low);
        }

        let identical = scripted_replay()? == scripted_replay()?;
        let ok = drift < 1e-6 && contacts > 0 && swap < 1e-6 && pen <= s.slop + 1e-12 && identical;
        Ok((
            ok,
            format!(
                "momentum drift {drift:.1e} (limit 1e-6); swap error {swap:.1e} (limit 1e-6); max penetration {pen:.2e} over 300 steps (slop {}); replays identical: {identical}",
                s.slop
            ),
        ))
    })
}

pub struct Trained {
    pub ds: SceneDataset,
    pub field: RadianceField,
    pub volume_psnr: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn rgb_arrays(v: &[DVec3]) -> Vec<[f64; 3]> {
    v.iter().map(|c| c.to_array()).collect()
}

/// Trains on the synthetic scene and scores the held-out views.
pub fn volume_quality(cfg: &AcceptConfig) -> (Verdict, Option<Trained>) {
    let mut trained = None;
    let v = timed("volume quality", || {
        let ds = synth_scene(&cfg.synth, cfg.seed)?;
        let out = train(&ds, &cfg.train, cfg.seed)?;
        if let Some(r) = &out.aborted {
            return Err(Error::Numerical(format!("training stopped: {r}")));
        }
        let bg = background_of(&ds)?;
        let synth = ds.synthetic.as_ref().ok_or_else(|| Error::InvalidInput("dataset is not synthetic".into()))?;
        let diam = ds.bounds.diagonal();
        let (mut ps, mut maes) = (Vec::new(), Vec::new());
        let tests = ds.test_indices();
        for &i in &tests {
            let cam = &ds.frames[i].camera;
            let img = render_image(&out.field, cam, cfg.render_samples, &ds.bounds, &bg, false)?;
            ps.push(psnr(&rgb_arrays(&img.rgb), &ds.frames[i].data()?.rgb));
            maes.push(depth_errors(&img.depth, &synth.render(cam).depth, 0.05 * diam).mae);
        }
        let (p, mae) = (mean(&ps), mean(&maes));
        let min = ps.iter().copied().fold(f64::INFINITY, f64::min);
        let detail = format!(
            "{} held-out views after {} steps: PSNR mean {p:.2} dB, min {min:.2} dB (limit 27); depth MAE {:.3}% of diameter (limit 2%)",
            tests.len(),
            cfg.train.steps,
            100.0 * mae / diam
        );
        let ok = !tests.is_empty() && p >= 27.0 && mae < 0.02 * diam && cfg.train.steps <= 20_000;
        trained = Some(Trained { ds, field: out.field, volume_psnr: p });
        Ok((ok, detail))
    });
    let v = Verdict { passed: v.passed && v.seconds < 1800.0, ..v };
    (v, trained)
}

pub struct Baked {
    pub mesh: crate::bake::TriangleMesh,
    pub texture: NeuralTexture,
    pub shader: ShaderMlp,
}

pub fn bake_fidelity(cfg: &AcceptConfig, t: &Trained) -> (Verdict, Option<Baked>) {
    let mut baked = None;
    let v = timed("bake fidelity", || {
        let bg = background_of(&t.ds)?;
        let out = bake(&t.field, &t.ds, &bg, &cfg.bake, cfg.seed)?;
        let mut ps = Vec::new();
        for i in t.ds.test_indices() {
            let cam = &t.ds.frames[i].camera;
            let g = rasterize(&out.mesh, cam, [0.0, 0.0]);
            let img = shade(&g, &out.texture, &out.shader, cam, bg.color);
            ps.push(psnr(&rgb_arrays(&img.rgb), &t.ds.frames[i].data()?.rgb));
        }
        let p = mean(&ps);
        let detail = format!("baked mesh PSNR {p:.2} dB vs volume {:.2} dB (drop {:.2}, limit 5); {} faces", t.volume_psnr, t.volume_psnr - p, out.mesh.faces.len());
        baked = Some(Baked { mesh: out.mesh, texture: out.texture, shader: out.shader });
        Ok((p >= t.volume_psnr - 5.0, detail))
    });
    (v, baked)
}

pub fn decomposition(cfg: &AcceptConfig, t: &Trained, b: &Baked) -> (Verdict, Option<Vec<Entity>>) {
    let mut ents = None;
    let v = timed("decomposition", || {
        let dc = &cfg.decompose;
        let (entities, _) = decompose(&t.field, &t.field.frame, &t.ds, &b.mesh, &b.texture, dc)?;
        let labels: Vec<&str> = entities.iter().map(|e| e.label.as_str()).collect();
        let objects = t.ds.instances.len();
        let mut invalid = 0;
        let mut outside = 0;
        for e in &entities {
            let texels = crate::bake::fit::texel_surface(&e.mesh, e.texture.width);
            invalid += texels.texel.iter().filter(|i| !e.texture.valid[**i as usize]).count();
            let tol = if e.collider.type_name() == "tri_mesh" { dc.collider.max_error + 1e-9 } else { dc.collider.eps };
            outside += e.mesh.vertices.iter().filter(|v| !e.collider.contains(**v, tol)).count();
        }
        let ok = entities.len() == objects + 1 && labels[0] == "background" && invalid == 0 && outside == 0;
        let kinds: Vec<String> = entities.iter().map(|e| format!("{}:{}", e.label, e.collider.type_name())).collect();
        ents = Some(entities);
        Ok((ok, format!("entities [{}] for {objects} objects + background; {invalid} invalid texels; {outside} vertices outside colliders", kinds.join(", "))))
    });
    (v, ents)
}

fn glb_invariants(g: &[u8]) -> std::result::Result<(), String> {
    let word = |at: usize| g.get(at..at + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).ok_or("truncated");
    if word(0)? != MAGIC || word(4)? != VERSION || word(8)? as usize != g.len() {
        return Err("bad header".into());
    }
    let jl = word(12)? as usize;
    if &g[16..20] != b"JSON" || jl % 4 != 0 {
        return Err("JSON chunk misaligned".into());
    }
    let bl = word(20 + jl)? as usize;
    if g.get(24 + jl..28 + jl) != Some(b"BIN\0") || bl % 4 != 0 || 28 + jl + bl != g.len() {
        return Err("BIN chunk misaligned".into());
    }
    Ok(())
}

pub fn export_roundtrip(cfg: &AcceptConfig, entities: &[Entity], shader: &ShaderMlp, sky: [f64; 3]) -> Verdict {
    timed("export", || {
        let b = Bundle::from_entities(entities, shader, DVec3::new(0.0, 0.0, -9.81), Sky { color: Some(sky), dome_glb: None })?;
        let meshes: Vec<GlbMesh> = b.entities.iter().map(|e| e.mesh.clone()).collect();
        let g = export_glb(&meshes)?;
        let header = glb_invariants(&g);
        let glb_fixed = export_glb(&import_glb(&g)?)? == g;

        let root = cfg.scratch.clone().unwrap_or_else(std::env::temp_dir).join(format!("v2g-accept-{}-{}", std::process::id(), cfg.seed));
        let (d1, d2) = (root.join("a"), root.join("b"));
        let m = export_bundle(&b, &d1)?;
        let back = import_bundle(&m)?;
        export_bundle(&back, &d2)?;
        let mut same_files = true;
        for (name, bytes) in b.files()? {
            let a = std::fs::read(d1.join(&name)).map_err(|e| Error::io(d1.join(&name), e))?;
            let c = std::fs::read(d2.join(&name)).map_err(|e| Error::io(d2.join(&name), e))?;
            same_files &= a == bytes && c == bytes;
        }
        let manifest_found = d1.join(MANIFEST_FILE).is_file();
        let _ = std::fs::remove_dir_all(&root);
        let ok = header.is_ok() && glb_fixed && back == b && same_files && manifest_found;
        Ok((
            ok,
            format!(
                "{} entities; GLB header/alignment {}; GLB re-export identical: {glb_fixed}; bundle import(export(b)) == b: {}; deterministic bytes: {same_files}",
                b.entities.len(),
                header.map(|_| "ok".to_string()).unwrap_or_else(|e| e),
                back == b
            ),
        ))
    })
}

/// Every primary criterion, in a fixed order.
pub fn run(cfg: &AcceptConfig) -> Vec<Verdict> {
    let mut out = vec![gradient_suite(), losses(), geometry(), physics()];
    let (vol, trained) = volume_quality(cfg);
    out.push(vol);
    let skipped = |name: &str, why: &str| Verdict { name: name.into(), passed: false, detail: format!("not run: {why}"), seconds: 0.0 };
    let Some(t) = trained else {
        out.extend(["bake fidelity", "decomposition", "export"].map(|n| skipped(n, "no trained field")));
        return out;
    };
    let (bv, baked) = bake_fidelity(cfg, &t);
    out.push(bv);
    let Some(b) = baked else {
        out.extend(["decomposition", "export"].map(|n| skipped(n, "bake failed")));
        return out;
    };
    let (dv, ents) = decomposition(cfg, &t, &b);
    out.push(dv);
    match ents {
        Some(e) => {
            let sky = background_of(&t.ds).map(|bg| bg.color.to_array()).unwrap_or([0.0; 3]);
            out.push(export_roundtrip(cfg, &e, &b.shader, sky))
        }
        None => out.push(skipped("export", "decomposition failed")),
    }
    out
}
