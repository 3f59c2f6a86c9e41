//! Texture and shader fitting against the training images.

use glam::DVec3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mesh::TriangleMesh;
use super::raster::rasterize;
use super::texture::{NeuralTexture, ShaderMlp, CHANNELS, SHADER_WIDTHS};
use super::uv::texel_coverage;
use crate::error::{Error, Result};
use crate::field::{adam_update, Activation, AdamConfig, AdamState, GridConfig, HashEncoder, ParamId, ParamStore, Tape, Tensor, TinyMlp, Var};
use crate::nerf::render::{render_rays, Background};
use crate::nerf::RadianceField;
use crate::scene::{camera_ray, Ray, SceneDataset};

/// Surface point behind every texel that carries a value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TexelSurface {
    pub texel: Vec<u32>,
    pub face: Vec<u32>,
    pub point: Vec<DVec3>,
}

/// Texels whose centers fall inside a face, plus the centroid texel of every
/// face too small to cover a texel center.
pub fn texel_surface(mesh: &TriangleMesh, res: u32) -> TexelSurface {
    let (cov, _) = texel_coverage(mesh, res);
    let mut taken: Vec<bool> = cov.iter().map(|c| c.is_some()).collect();
    let mut covered = vec![false; mesh.faces.len()];
    let mut out = TexelSurface::default();
    for (t, c) in cov.iter().enumerate() {
        if let Some((f, l)) = c {
            covered[*f as usize] = true;
            let [a, b, cc] = mesh.corners(*f as usize);
            out.texel.push(t as u32);
            out.face.push(*f);
            out.point.push(a * l[0] + b * l[1] + cc * l[2]);
        }
    }
    if let Some(uvs) = &mesh.uvs {
        for (f, face) in mesh.faces.iter().enumerate() {
            if covered[f] {
                continue;
            }
            let (mut u, mut v) = (0.0, 0.0);
            for i in face {
                u += uvs[*i as usize][0] / 3.0;
                v += uvs[*i as usize][1] / 3.0;
            }
            let x = ((u * res as f64) as u32).min(res - 1);
            let y = ((v * res as f64) as u32).min(res - 1);
            let t = (y * res + x) as usize;
            if !taken[t] {
                taken[t] = true;
                let [a, b, c] = mesh.corners(f);
                out.texel.push(t as u32);
                out.face.push(f as u32);
                out.point.push((a + b + c) / 3.0);
            }
        }
    }
    out
}

/// Rasterized training pixels with their supervision.
#[derive(Clone, Debug, Default)]
pub struct PixelBatch {
    pub frame: usize,
    pub uv: Vec<[f64; 2]>,
    pub points: Vec<DVec3>,
    pub dirs: Vec<DVec3>,
    pub rays: Vec<Ray>,
    pub gt: Vec<[f64; 3]>,
    /// Rasterized distance along the ray.
    pub depth: Vec<f64>,
}

impl PixelBatch {
    pub fn len(&self) -> usize {
        self.uv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uv.is_empty()
    }
}

/// Rasterizes `frame` with `jitter` and keeps up to `count` hit pixels
/// (all of them, in scan order, when `rng` is `None`).
pub fn pixel_batch(mesh: &TriangleMesh, ds: &SceneDataset, frame: usize, jitter: [f64; 2], count: usize, rng: Option<&mut ChaCha8Rng>) -> Result<PixelBatch> {
    let cam = &ds.frames[frame].camera;
    let data = ds.frames[frame].data()?;
    let g = rasterize(mesh, cam, jitter);
    let mut hits: Vec<usize> = (0..g.face.len()).filter(|i| g.hit(*i)).collect();
    if let Some(r) = rng {
        hits.shuffle(r);
    }
    hits.truncate(count);
    let mut b = PixelBatch { frame, ..Default::default() };
    for i in hits {
        let ray = camera_ray(cam, (i % g.width) as f64, (i / g.width) as f64, jitter);
        b.uv.push(g.uv[i]);
        b.points.push(g.position(mesh, i));
        b.dirs.push(ray.dir);
        b.rays.push(ray);
        b.gt.push(data.rgb[i]);
        b.depth.push(g.depth[i]);
    }
    Ok(b)
}

/// Records `clamp(B + shader(S, d))` for the batch.
pub fn record_shading<'a>(tape: &mut Tape<'a>, base: Var, spec: Var, shader: &TinyMlp, dirs: &[DVec3]) -> Result<Var> {
    let d = tape.input(Tensor::from_vec3s(dirs));
    let x = tape.concat(&[spec, d])?;
    let off = shader.forward(tape, x)?.out;
    let c = tape.add(base, off)?;
    Ok(tape.clamp_unit(c))
}

fn color_mse(tape: &mut Tape, color: Var, gt: &[[f64; 3]]) -> Result<Var> {
    let target = tape.input(Tensor::new(gt.len(), 3, gt.iter().flatten().copied().collect()));
    let d = tape.sub(color, target)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// Texture and shader tensors in one store, as optimized together.
#[derive(Clone, Debug)]
pub struct FitState {
    pub params: ParamStore,
    pub texture: ParamId,
    pub shader: TinyMlp,
    pub width: u32,
    pub height: u32,
    pub valid: Vec<bool>,
    pub filled: Vec<bool>,
}

impl FitState {
    pub fn new(tex: &NeuralTexture, shader: &ShaderMlp) -> Result<Self> {
        let mut params = ParamStore::default();
        let texture = params.add("texture", vec![tex.texel_count(), CHANNELS], tex.data.clone());
        for id in shader.params.ids() {
            params.add(shader.params.name(id), shader.params.shape(id).to_vec(), shader.params.get(id).to_vec());
        }
        let shader = TinyMlp::bind(&params, ShaderMlp::PREFIX, &SHADER_WIDTHS, Activation::None)?;
        Ok(Self { params, texture, shader, width: tex.width, height: tex.height, valid: tex.valid.clone(), filled: tex.filled.clone() })
    }

    pub fn split(&self) -> Result<(NeuralTexture, ShaderMlp)> {
        let tex = NeuralTexture {
            width: self.width,
            height: self.height,
            data: self.params.get(self.texture).to_vec(),
            valid: self.valid.clone(),
            filled: self.filled.clone(),
        };
        Ok((tex, ShaderMlp::from_store(&self.params)?))
    }

    fn taps(&self, uv: &[[f64; 2]]) -> Vec<[crate::field::tape::Tap; 4]> {
        let probe = NeuralTexture { width: self.width, height: self.height, data: vec![], valid: vec![], filled: vec![] };
        uv.iter().map(|u| probe.taps(*u)).collect()
    }

    /// Color term of the fitting objective on `batch`.
    pub fn record_color_loss<'a>(&'a self, tape: &mut Tape<'a>, batch: &PixelBatch) -> Result<Var> {
        let t = tape.texture(self.texture, CHANNELS, self.taps(&batch.uv));
        let base = tape.slice(t, 0, 3)?;
        let spec = tape.slice(t, 3, 3)?;
        let c = record_shading(tape, base, spec, &self.shader, &batch.dirs)?;
        color_mse(tape, c, &batch.gt)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub steps: usize,
    pub pixels_per_step: usize,
    pub adam: AdamConfig,
    /// Learning-rate multiplier for the shader tensors.
    pub shader_lr_scale: f64,
    pub depth_weight: f64,
    /// Rays per step on which the field depth is rendered for the depth term.
    pub depth_pixels: usize,
    pub nerf_samples: usize,
    /// Optical-center jitter, uniform in `[-jitter, jitter]` pixels per axis.
    pub jitter: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            pixels_per_step: 4096,
            adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
            shader_lr_scale: 0.2,
            depth_weight: 1.0,
            depth_pixels: 16,
            nerf_samples: 32,
            jitter: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub step: usize,
    pub color: f64,
    /// Mean |D_mesh - D_field| on the depth sub-batch; constant with respect
    /// to the optimized tensors because geometry is frozen.
    pub depth: f64,
    pub total: f64,
}

pub struct FitOutput {
    pub texture: NeuralTexture,
    pub shader: ShaderMlp,
    pub trace: Vec<FitRecord>,
    pub aborted: Option<String>,
}

fn jitter(rng: &mut ChaCha8Rng, amount: f64) -> [f64; 2] {
    if amount > 0.0 {
        [rng.gen_range(-amount..=amount), rng.gen_range(-amount..=amount)]
    } else {
        [0.0, 0.0]
    }
}

/// Optimizes texels and shader weights with frozen geometry.
pub fn fit_texture(
    mesh: &TriangleMesh,
    tex: &NeuralTexture,
    shader: &ShaderMlp,
    ds: &SceneDataset,
    field: &RadianceField,
    bg: &Background,
    cfg: &FitConfig,
    seed: u64,
) -> Result<FitOutput> {
    if mesh.uvs.is_none() {
        return Err(Error::InvalidInput("fit_texture: mesh has no uvs".into()));
    }
    let frames = ds.train_indices();
    if frames.is_empty() {
        return Err(Error::InvalidInput("fit_texture: no training frames".into()));
    }
    let mut state = FitState::new(tex, shader)?;
    let mut adam = AdamState::new(&state.params, cfg.adam);
    for (w, b) in state.shader.layers().to_vec() {
        adam.set_lr_scale(w, cfg.shader_lr_scale);
        adam.set_lr_scale(b, cfg.shader_lr_scale);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba4e);
    let mut trace = Vec::new();
    for step in 0..cfg.steps {
        let frame = frames[rng.gen_range(0..frames.len())];
        let j = jitter(&mut rng, cfg.jitter);
        let batch = pixel_batch(mesh, ds, frame, j, cfg.pixels_per_step, Some(&mut rng))?;
        if batch.is_empty() {
            continue;
        }
        let k = cfg.depth_pixels.min(batch.len());
        let depth = if k > 0 && cfg.depth_weight > 0.0 {
            let r = render_rays(field, &batch.rays[..k], cfg.nerf_samples, &ds.bounds, bg, false)?;
            r.depth.iter().zip(&batch.depth).map(|(a, b)| (a - b).abs()).sum::<f64>() / k as f64
        } else {
            0.0
        };
        let (color, grads) = {
            let mut tape = Tape::new(&state.params);
            let l = state.record_color_loss(&mut tape, &batch)?;
            (tape.scalar(l), tape.backward(l)?)
        };
        let total = color + cfg.depth_weight * depth;
        if !total.is_finite() {
            let (texture, shader) = state.split()?;
            return Ok(FitOutput { texture, shader, trace, aborted: Some(format!("non-finite loss at step {step}")) });
        }
        if let Err(e) = adam_update(&mut state.params, &grads, &mut adam) {
            let (texture, shader) = state.split()?;
            return Ok(FitOutput { texture, shader, trace, aborted: Some(e.to_string()) });
        }
        for t in state.params.get_mut(state.texture).chunks_exact_mut(CHANNELS) {
            for v in &mut t[..3] {
                *v = v.clamp(0.0, 1.0);
            }
        }
        if step % 100 == 0 {
            tracing::info!(step, color, depth, "fit_texture");
        }
        trace.push(FitRecord { step, color, depth, total });
    }
    let (texture, shader) = state.split()?;
    Ok(FitOutput { texture, shader, trace, aborted: None })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub steps: usize,
    pub pixels_per_step: usize,
    pub grid: GridConfig,
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
    pub eval_every: usize,
    /// Consecutive rising evaluations that count as divergence.
    pub patience: usize,
    pub jitter: f64,
    pub dilation: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            pixels_per_step: 4096,
            grid: GridConfig { levels: 8, features_per_level: 2, log2_table_size: 16, base_resolution: 16, per_level_scale: 1.6 },
            hidden: vec![32],
            adam: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
            eval_every: 25,
            patience: 3,
            jitter: 0.5,
            dilation: 2,
        }
    }
}

/// Auxiliary network mapping a surface point to texel values.
#[derive(Clone, Debug)]
pub struct AuxNet {
    pub encoder: HashEncoder,
    pub table: ParamId,
    pub mlp: TinyMlp,
}

impl AuxNet {
    /// Base color through a sigmoid, specular feature raw.
    pub fn eval(&self, store: &ParamStore, field: &RadianceField, x: DVec3) -> [f64; CHANNELS] {
        let (c, _) = field.contract_point(x);
        let mut feats = vec![0.0; self.encoder.output_dim()];
        self.encoder.encode(store.get(self.table), c, &mut feats);
        let y = self.mlp.eval(store, &feats).expect("aux width");
        let s = crate::field::tape::sigmoid;
        [s(y[0]), s(y[1]), s(y[2]), y[3], y[4], y[5]]
    }

    fn record<'a>(&'a self, tape: &mut Tape<'a>, field: &RadianceField, points: &[DVec3]) -> Result<(Var, Var)> {
        let c: Vec<DVec3> = points.iter().map(|p| field.contract_point(*p).0).collect();
        let f = tape.grid(&self.encoder, self.table, c);
        let y = self.mlp.forward(tape, f)?.out;
        let b = tape.slice(y, 0, 3)?;
        let b = tape.sigmoid(b);
        let s = tape.slice(y, 3, 3)?;
        Ok((b, s))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub fallback: bool,
    pub reason: Option<String>,
    /// `(step, eval loss)` pairs.
    pub evals: Vec<(usize, f64)>,
    pub valid_texels: usize,
}

pub struct InitOutput {
    pub texture: NeuralTexture,
    pub shader: ShaderMlp,
    pub aux: Option<(ParamStore, AuxNet)>,
    pub report: InitReport,
}

/// Fits the auxiliary network jointly with the shader, then fills every
/// texel with the network's value at its surface point. Falls back to field
/// colors when the fit diverges.
pub fn init_texture(
    field: &RadianceField,
    mesh: &TriangleMesh,
    res: u32,
    ds: &SceneDataset,
    cfg: &InitConfig,
    seed: u64,
) -> Result<InitOutput> {
    if mesh.uvs.is_none() {
        return Err(Error::InvalidInput("init_texture: mesh has no uvs".into()));
    }
    let frames = ds.train_indices();
    if frames.is_empty() {
        return Err(Error::InvalidInput("init_texture: no training frames".into()));
    }
    let surface = texel_surface(mesh, res);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1417);
    let mut store = ParamStore::default();
    let encoder = HashEncoder::new(cfg.grid.clone());
    let t0 = encoder.init_params(&mut rng, 1e-4);
    let table = store.add("aux.grid", vec![t0.len()], t0);
    let mut widths = vec![encoder.output_dim()];
    widths.extend_from_slice(&cfg.hidden);
    widths.push(CHANNELS);
    let mlp = TinyMlp::new(&mut store, "aux.mlp", &widths, Activation::None, &mut rng);
    let shader0 = ShaderMlp::new(seed);
    for id in shader0.params.ids() {
        store.add(shader0.params.name(id), shader0.params.shape(id).to_vec(), shader0.params.get(id).to_vec());
    }
    let shader_mlp = TinyMlp::bind(&store, ShaderMlp::PREFIX, &SHADER_WIDTHS, Activation::None)?;
    let aux = AuxNet { encoder, table, mlp };

    let eval_batch = pixel_batch(mesh, ds, frames[0], [0.0, 0.0], cfg.pixels_per_step, None)?;
    let eval_loss = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let (b, s) = aux.record(&mut tape, field, &eval_batch.points)?;
        let c = record_shading(&mut tape, b, s, &shader_mlp, &eval_batch.dirs)?;
        let l = color_mse(&mut tape, c, &eval_batch.gt)?;
        Ok(tape.scalar(l))
    };

    let mut adam = AdamState::new(&store, cfg.adam);
    let mut report = InitReport { fallback: false, reason: None, evals: vec![], valid_texels: surface.texel.len() };
    let mut rising = 0;
    for step in 0..cfg.steps {
        if cfg.eval_every > 0 && step % cfg.eval_every == 0 && !eval_batch.is_empty() {
            let l = eval_loss(&store)?;
            if let Some(&(_, prev)) = report.evals.last() {
                rising = if l > prev { rising + 1 } else { 0 };
            }
            report.evals.push((step, l));
            if !l.is_finite() || rising >= cfg.patience {
                report.fallback = true;
                report.reason = Some(if l.is_finite() { format!("eval loss rose {rising} times in a row") } else { "non-finite loss".into() });
                break;
            }
        }
        let frame = frames[rng.gen_range(0..frames.len())];
        let j = jitter(&mut rng, cfg.jitter);
        let batch = pixel_batch(mesh, ds, frame, j, cfg.pixels_per_step, Some(&mut rng))?;
        if batch.is_empty() {
            continue;
        }
        let grads = {
            let mut tape = Tape::new(&store);
            let (b, s) = aux.record(&mut tape, field, &batch.points)?;
            let c = record_shading(&mut tape, b, s, &shader_mlp, &batch.dirs)?;
            let l = color_mse(&mut tape, c, &batch.gt)?;
            tape.backward(l)?
        };
        if let Err(e) = adam_update(&mut store, &grads, &mut adam) {
            report.fallback = true;
            report.reason = Some(e.to_string());
            break;
        }
    }

    let mut tex = NeuralTexture::new(res, res);
    let (shader, aux_out) = if report.fallback {
        tracing::warn!(reason = ?report.reason, "init_texture: falling back to field colors");
        for (k, &t) in surface.texel.iter().enumerate() {
            let n = mesh.face_normal(surface.face[k] as usize);
            let (c, _) = field.color_semantics(surface.point[k], -n);
            tex.set_texel(t as usize, &[c.x, c.y, c.z, 0.0, 0.0, 0.0]);
        }
        (ShaderMlp::zeros(), None)
    } else {
        for (k, &t) in surface.texel.iter().enumerate() {
            tex.set_texel(t as usize, &aux.eval(&store, field, surface.point[k]));
        }
        (ShaderMlp::from_store(&store)?, Some((store, aux)))
    };
    tex.dilate(cfg.dilation);
    Ok(InitOutput { texture: tex, shader, aux: aux_out, report })
}
