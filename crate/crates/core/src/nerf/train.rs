//! Optimization loop for the radiance field.

use std::sync::Arc;

use glam::DVec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{self, LossTerms, LossWeights};
use super::model::{FieldConfig, FieldFrame, Heads, RadianceField};
use super::render::{argmax, record_render, render_image, Background, RayBatch};
use crate::error::{Error, Result};
use crate::field::{adam_update, AdamConfig, AdamState, Gradients, Tape, Var};
use crate::geom::Aabb;
use crate::metrics::psnr;
use crate::scene::{camera_ray, FrameData, Ray, SceneDataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub images_per_batch: usize,
    pub rays_per_image: usize,
    pub samples_per_ray: usize,
    /// Leading rays of each batch that receive density normals.
    pub normal_rays: usize,
    pub sparsity_points: usize,
    pub adam: AdamConfig,
    /// Learning rate decays exponentially to `lr * lr_final_ratio`.
    pub lr_final_ratio: f64,
    pub weights: LossWeights,
    pub eval_every: usize,
    pub field: FieldConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            images_per_batch: 8,
            rays_per_image: 32,
            samples_per_ray: 32,
            normal_rays: 32,
            sparsity_points: 128,
            adam: AdamConfig { lr: 1e-2, beta1: 0.9, beta2: 0.99, eps: 1e-10 },
            lr_final_ratio: 0.1,
            weights: LossWeights::default(),
            eval_every: 1000,
            field: FieldConfig::default(),
        }
    }
}

/// Rays plus the supervision that applies to each of them.
pub struct TrainBatch {
    pub rays: RayBatch,
    pub rgb: Vec<[f64; 3]>,
    /// Depth cue per ray (meaningless where not in a group).
    pub depth_cue: Vec<f64>,
    /// Rays with a valid depth cue, grouped by source image.
    pub depth_groups: Vec<Vec<usize>>,
    /// World-frame normal cue per ray.
    pub normal_cue: Vec<Option<DVec3>>,
    pub semantic_cue: Vec<Option<usize>>,
    pub free_points: Vec<DVec3>,
    pub has_depth: bool,
    pub has_normal: bool,
    pub has_semantic: bool,
}

pub struct LossEval<'a> {
    pub tape: Tape<'a>,
    pub root: Var,
    pub terms: LossTerms,
}

impl LossEval<'_> {
    pub fn gradients(&self) -> Result<Gradients> {
        self.tape.backward(self.root)
    }
}

/// Renders the batch and records the weighted six-term objective.
pub fn total_loss<'a>(field: &'a RadianceField, batch: &'a TrainBatch, w: &LossWeights, bg: &Background) -> Result<LossEval<'a>> {
    w.validate()?;
    let mut tape = Tape::new(&field.params);
    let want_normals = batch.has_normal && w.normal > 0.0 && batch.rays.normal_layout.num_rays() > 0;
    let heads = Heads { color: true, semantics: batch.has_semantic || bg.sky_class.is_some(), normals: want_normals, density_normals: 0 };
    let rv = record_render(field, &mut tape, &batch.rays, heads, bg)?;

    let rgb = loss::rgb_term(&mut tape, rv.color, &batch.rgb)?;
    let depth = if batch.has_depth { loss::depth_term(&mut tape, rv.depth, &batch.depth_cue, &batch.depth_groups)? } else { None };

    let normal = match (want_normals, rv.normal_mlp) {
        (true, Some(nm)) => {
            let k = batch.rays.normal_layout.num_rays();
            let op = tape.value(rv.opacity).data.clone();
            let mut rows = Vec::new();
            let mut mono = Vec::new();
            for i in 0..k {
                if let Some(n) = batch.normal_cue[i] {
                    if op[i] > 0.5 {
                        rows.push(i);
                        mono.push(n);
                    }
                }
            }
            loss::normal_term(&mut tape, nm, rv.normal_density, &rows, &mono)?
        }
        _ => None,
    };

    let (semantic, sky) = match rv.semantics {
        Some(s) => {
            let semantic = if batch.has_semantic {
                let (rows, labels): (Vec<usize>, Vec<usize>) =
                    batch.semantic_cue.iter().enumerate().filter_map(|(i, l)| l.map(|l| (i, l))).unzip();
                let sel = tape.select_rows(s, rows);
                loss::semantic_term(&mut tape, sel, &labels)?
            } else {
                None
            };
            let sky = bg.sky_class.map(|k| {
                let sv = tape.value(s).clone();
                let rows: Vec<usize> = (0..sv.rows).filter(|r| argmax(sv.row(*r)) == k as usize).collect();
                loss::sky_term(&mut tape, rv.depth, &rows)
            });
            (semantic, sky)
        }
        None => (None, None),
    };

    let sparsity = if batch.free_points.is_empty() {
        None
    } else {
        let sigma = field.record_density(&mut tape, &batch.free_points)?;
        Some(loss::sparsity_term(&mut tape, sigma, w.alpha)?)
    };

    let (root, terms) = loss::combine(
        &mut tape,
        [(Some(rgb), w.rgb), (depth, w.depth), (normal, w.normal), (semantic, w.semantic), (sky, w.sky), (sparsity, w.sparsity)],
    )?;
    Ok(LossEval { tape, root, terms })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub loss: LossTerms,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
}

pub struct TrainOutput {
    pub field: RadianceField,
    pub trace: Vec<MetricRecord>,
    /// Reason training stopped early; the field is the last good state.
    pub aborted: Option<String>,
}

/// Samples training batches from a fixed set of frames.
pub struct BatchSampler {
    frames: Vec<(usize, Arc<FrameData>)>,
    bounds: Aabb,
    pub has_depth: bool,
    pub has_normal: bool,
    pub has_semantic: bool,
}

impl BatchSampler {
    pub fn new(ds: &SceneDataset, frame_indices: &[usize]) -> Result<Self> {
        if frame_indices.is_empty() {
            return Err(Error::InvalidInput("train: no training frames".into()));
        }
        let mut frames = Vec::new();
        for &i in frame_indices {
            frames.push((i, ds.frames[i].data()?));
        }
        let has_depth = frames.iter().any(|(_, d)| d.depth.is_some());
        let has_normal = frames.iter().any(|(_, d)| d.normal.is_some());
        let has_semantic = frames.iter().any(|(_, d)| d.semantic.is_some());
        Ok(Self { frames, bounds: ds.bounds, has_depth, has_normal, has_semantic })
    }

    pub fn sample(&self, ds: &SceneDataset, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> TrainBatch {
        let mut rays: Vec<Ray> = Vec::new();
        let mut b = TrainBatch {
            rays: RayBatch::default(),
            rgb: vec![],
            depth_cue: vec![],
            depth_groups: vec![],
            normal_cue: vec![],
            semantic_cue: vec![],
            free_points: vec![],
            has_depth: self.has_depth,
            has_normal: self.has_normal,
            has_semantic: self.has_semantic,
        };
        for _ in 0..cfg.images_per_batch {
            let (fi, data) = &self.frames[rng.gen_range(0..self.frames.len())];
            let cam = &ds.frames[*fi].camera;
            let (w, h) = (cam.intrinsics.w as usize, cam.intrinsics.h as usize);
            let mut group = Vec::new();
            for _ in 0..cfg.rays_per_image {
                let p = rng.gen_range(0..w * h);
                let row = rays.len();
                rays.push(camera_ray(cam, (p % w) as f64, (p / w) as f64, [0.0, 0.0]));
                b.rgb.push(data.rgb[p]);
                let d = data.depth.as_ref().map_or(0.0, |d| d[p]);
                b.depth_cue.push(d);
                if d > 0.0 {
                    group.push(row);
                }
                b.normal_cue.push(data.normal.as_ref().and_then(|n| {
                    let v = n[p];
                    (v != DVec3::ZERO).then(|| cam.rotation * v)
                }));
                b.semantic_cue.push(data.semantic.as_ref().map(|s| s[p] as usize));
            }
            b.depth_groups.push(group);
        }
        b.rays = RayBatch::new(&rays, cfg.samples_per_ray, &self.bounds, Some(rng), cfg.normal_rays);
        let (lo, hi) = (self.bounds.min, self.bounds.max);
        b.free_points = (0..cfg.sparsity_points)
            .map(|_| DVec3::new(rng.gen_range(lo.x..=hi.x), rng.gen_range(lo.y..=hi.y), rng.gen_range(lo.z..=hi.z)))
            .collect();
        b
    }
}

/// Held-out PSNR of the volume render of frame `idx`.
pub fn view_psnr(field: &RadianceField, ds: &SceneDataset, idx: usize, samples: usize, bg: &Background) -> Result<f64> {
    let f = &ds.frames[idx];
    let img = render_image(field, &f.camera, samples, &ds.bounds, bg, false)?;
    let gt = f.data()?;
    let pred: Vec<[f64; 3]> = img.rgb.iter().map(|c| c.to_array()).collect();
    Ok(psnr(&pred, &gt.rgb))
}

pub fn background_of(ds: &SceneDataset) -> Result<Background> {
    Ok(Background { color: ds.background_color()?, sky_class: ds.sky_class })
}

/// Trains a fresh field on the dataset's training frames.
pub fn train(ds: &SceneDataset, cfg: &TrainConfig, seed: u64) -> Result<TrainOutput> {
    let frame = FieldFrame::from_bounds(&ds.bounds);
    let field = RadianceField::new(cfg.field.clone(), frame, ds.class_count(), seed);
    train_frames(ds, &ds.train_indices(), cfg, field, seed)
}

pub fn train_frames(ds: &SceneDataset, frames: &[usize], cfg: &TrainConfig, mut field: RadianceField, seed: u64) -> Result<TrainOutput> {
    cfg.weights.validate()?;
    let mut trace = Vec::new();
    if cfg.steps == 0 {
        return Ok(TrainOutput { field, trace, aborted: None });
    }
    let sampler = BatchSampler::new(ds, frames)?;
    let bg = background_of(ds)?;
    let tests = ds.test_indices();
    let mut adam = AdamState::new(&field.params, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_f1e1d);
    for step in 0..cfg.steps {
        adam.config.lr = cfg.adam.lr * cfg.lr_final_ratio.powf(step as f64 / cfg.steps as f64);
        let batch = sampler.sample(ds, cfg, &mut rng);
        let (terms, grads) = {
            let eval = total_loss(&field, &batch, &cfg.weights, &bg)?;
            if !eval.terms.total.is_finite() {
                let reason = format!("non-finite loss at step {step}");
                tracing::error!(step, "{reason}");
                return Ok(TrainOutput { field, trace, aborted: Some(reason) });
            }
            (eval.terms, eval.gradients()?)
        };
        if let Err(e) = adam_update(&mut field.params, &grads, &mut adam) {
            tracing::error!(step, error = %e, "optimizer step rejected");
            return Ok(TrainOutput { field, trace, aborted: Some(e.to_string()) });
        }
        let last = step + 1 == cfg.steps;
        let psnr = if !tests.is_empty() && cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || last) {
            let idx = tests[(step / cfg.eval_every) % tests.len()];
            Some(view_psnr(&field, ds, idx, cfg.samples_per_ray, &bg)?)
        } else {
            None
        };
        if step % 100 == 0 || psnr.is_some() {
            tracing::info!(step, loss = terms.total, rgb = terms.rgb, psnr, "train");
        }
        trace.push(MetricRecord { step, loss: terms, psnr });
    }
    Ok(TrainOutput { field, trace, aborted: None })
}
