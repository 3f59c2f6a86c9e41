//! Ray sampling and front-to-back compositing.

use glam::DVec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{Heads, RadianceField, SampleVars};
use crate::error::Result;
use crate::field::tape::composite_weights;
use crate::field::{RayLayout, Tape, Tensor, Var};
use crate::geom::Aabb;
use crate::scene::{camera_ray, CameraModel, Ray};

/// Stratified distances in `[near, far]`: sample `i` is uniform in bin `i`,
/// or at the bin midpoint when `seed` is `None`.
pub fn sample_along_ray(ray: &Ray, n: usize, seed: Option<u64>) -> Vec<f64> {
    let mut out = vec![0.0; n];
    match seed {
        Some(s) => stratified(ray.near, ray.far, &mut out, Some(&mut ChaCha8Rng::seed_from_u64(s))),
        None => stratified::<ChaCha8Rng>(ray.near, ray.far, &mut out, None),
    }
    out
}

fn stratified<R: Rng>(near: f64, far: f64, out: &mut [f64], mut rng: Option<&mut R>) {
    let n = out.len();
    let step = (far - near) / n as f64;
    for (i, t) in out.iter_mut().enumerate() {
        let u = match rng.as_deref_mut() {
            Some(r) => r.gen_range(0.0..1.0),
            None => 0.5,
        };
        *t = near + (i as f64 + u) * step;
    }
}

/// Interval owned by each sample: distance to the next one, and `far - t_n`
/// for the last.
pub fn sample_deltas(t: &[f64], far: f64) -> Vec<f64> {
    (0..t.len()).map(|i| if i + 1 < t.len() { t[i + 1] - t[i] } else { far - t[i] }).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderResult {
    pub color: DVec3,
    pub depth: f64,
    pub semantics: Vec<f64>,
    pub normal_mlp: DVec3,
    pub normal_density: DVec3,
    pub opacity: f64,
    pub weights: Vec<f64>,
}

/// Per-sample inputs of [`composite`]. Optional attributes may be empty.
#[derive(Clone, Debug, Default)]
pub struct SampleSet {
    pub sigma: Vec<f64>,
    pub t: Vec<f64>,
    pub far: f64,
    pub color: Vec<DVec3>,
    pub semantics: Vec<Vec<f64>>,
    pub normal_mlp: Vec<DVec3>,
    pub normal_density: Vec<DVec3>,
}

pub fn composite(s: &SampleSet) -> RenderResult {
    let n = s.sigma.len();
    let delta = sample_deltas(&s.t, s.far);
    let mut w = vec![0.0; n];
    composite_weights(&s.sigma, &delta, &mut w, None);
    let mut r = RenderResult {
        color: DVec3::ZERO,
        depth: 0.0,
        semantics: vec![0.0; s.semantics.first().map_or(0, |v| v.len())],
        normal_mlp: DVec3::ZERO,
        normal_density: DVec3::ZERO,
        opacity: 0.0,
        weights: Vec::new(),
    };
    for i in 0..n {
        r.opacity += w[i];
        r.depth += w[i] * s.t[i];
        if let Some(c) = s.color.get(i) {
            r.color += w[i] * *c;
        }
        if let Some(sv) = s.semantics.get(i) {
            for (o, v) in r.semantics.iter_mut().zip(sv) {
                *o += w[i] * v;
            }
        }
        if let Some(v) = s.normal_mlp.get(i) {
            r.normal_mlp += w[i] * *v;
        }
        if let Some(v) = s.normal_density.get(i) {
            r.normal_density += w[i] * *v;
        }
    }
    r.weights = w;
    r
}

/// Constant terms composited behind the field: sky color, sky class, and
/// a depth at the far bound.
#[derive(Clone, Debug, PartialEq)]
pub struct Background {
    pub color: DVec3,
    pub sky_class: Option<u32>,
}

/// Sample positions for a set of rays clipped to a bounding box.
#[derive(Clone, Debug, Default)]
pub struct RayBatch {
    pub layout: RayLayout,
    /// Layout restricted to the first `normal_rays` rays.
    pub normal_layout: RayLayout,
    pub points: Vec<DVec3>,
    pub dirs: Vec<DVec3>,
    pub far: Vec<f64>,
}

impl RayBatch {
    pub fn new(rays: &[Ray], samples: usize, bounds: &Aabb, mut rng: Option<&mut ChaCha8Rng>, normal_rays: usize) -> Self {
        let mut b = RayBatch { layout: RayLayout { offsets: vec![0], ..Default::default() }, ..Default::default() };
        let mut ts = vec![0.0; samples];
        let center = bounds.center();
        let radius = 0.5 * bounds.diagonal();
        for ray in rays {
            match bounds.ray_interval(ray.origin, ray.dir) {
                Some((t0, t1)) if t1.min(ray.far) > t0.max(ray.near) => {
                    let (near, far) = (t0.max(ray.near), t1.min(ray.far));
                    stratified(near, far, &mut ts, rng.as_deref_mut());
                    for (i, t) in ts.iter().enumerate() {
                        b.points.push(ray.at(*t));
                        b.dirs.push(ray.dir);
                        b.layout.t.push(*t);
                        b.layout.delta.push(if i + 1 < samples { ts[i + 1] - t } else { far - t });
                    }
                    b.far.push(far);
                }
                _ => b.far.push((ray.origin - center).length() + radius),
            }
            b.layout.offsets.push(b.points.len());
        }
        let k = normal_rays.min(rays.len());
        let end = b.layout.offsets[k];
        b.normal_layout = RayLayout {
            offsets: b.layout.offsets[..=k].to_vec(),
            t: b.layout.t[..end].to_vec(),
            delta: b.layout.delta[..end].to_vec(),
        };
        b
    }

    pub fn num_rays(&self) -> usize {
        self.layout.num_rays()
    }

    pub fn normal_samples(&self) -> usize {
        self.normal_layout.num_samples()
    }
}

/// Per-ray tape variables, with the background composited behind the field.
pub struct RenderVars {
    pub color: Var,
    pub depth: Var,
    pub opacity: Var,
    pub semantics: Option<Var>,
    pub normal_mlp: Option<Var>,
    /// Density normals for the leading `normal_rays` rays.
    pub normal_density: Option<Var>,
    pub normal_opacity: Option<Var>,
    pub weights: Var,
    pub samples: SampleVars,
}

pub fn record_render<'a>(
    field: &'a RadianceField,
    tape: &mut Tape<'a>,
    batch: &'a RayBatch,
    heads: Heads,
    bg: &Background,
) -> Result<RenderVars> {
    let heads = Heads { density_normals: if heads.normals { batch.normal_samples() } else { 0 }, ..heads };
    let s = field.record_samples(tape, &batch.points, &batch.dirs, heads)?;
    let r = batch.num_rays();
    let w = tape.composite(s.sigma, &batch.layout)?;
    let ones_n = tape.input(Tensor::new(batch.points.len(), 1, vec![1.0; batch.points.len()]));
    let opacity = tape.ray_sum(w, ones_n, &batch.layout)?;
    let ones_r = tape.input(Tensor::new(r, 1, vec![1.0; r]));
    let empty = tape.sub(ones_r, opacity)?;

    let t = tape.input(Tensor::column(batch.layout.t.clone()));
    let d = tape.ray_sum(w, t, &batch.layout)?;
    let far = tape.input(Tensor::column(batch.far.clone()));
    let far_term = tape.mul(empty, far)?;
    let depth = tape.add(d, far_term)?;

    let color = if heads.color {
        let c = tape.ray_sum(w, s.color, &batch.layout)?;
        let bgc = tape.input(Tensor::new(r, 3, (0..r).flat_map(|_| bg.color.to_array()).collect()));
        let bgt = tape.mul_col(bgc, empty)?;
        tape.add(c, bgt)?
    } else {
        opacity
    };

    let semantics = match s.semantics {
        Some(sv) => {
            let sem = tape.ray_sum(w, sv, &batch.layout)?;
            Some(match bg.sky_class {
                Some(k) => {
                    let nc = field.num_classes;
                    let mut onehot = vec![0.0; r * nc];
                    for i in 0..r {
                        onehot[i * nc + k as usize] = 1.0;
                    }
                    let oh = tape.input(Tensor::new(r, nc, onehot));
                    let bt = tape.mul_col(oh, empty)?;
                    tape.add(sem, bt)?
                }
                None => sem,
            })
        }
        None => None,
    };
    let normal_mlp = match s.normal_mlp {
        Some(n) => Some(tape.ray_sum(w, n, &batch.layout)?),
        None => None,
    };
    let (normal_density, normal_opacity) = match s.normal_density {
        Some(nd) => {
            let k = batch.normal_samples();
            let wk = tape.select_rows(w, (0..k).collect());
            let ones_k = tape.input(Tensor::new(k, 1, vec![1.0; k]));
            (Some(tape.ray_sum(wk, nd, &batch.normal_layout)?), Some(tape.ray_sum(wk, ones_k, &batch.normal_layout)?))
        }
        None => (None, None),
    };
    Ok(RenderVars { color, depth, opacity, semantics, normal_mlp, normal_density, normal_opacity, weights: w, samples: s })
}

/// Deterministic (midpoint-sampled) render of a full view.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<DVec3>,
    pub depth: Vec<f64>,
    pub opacity: Vec<f64>,
    /// Argmax of the rendered semantics, when requested.
    pub class: Vec<u8>,
}

pub fn render_image(
    field: &RadianceField,
    cam: &CameraModel,
    samples: usize,
    bounds: &Aabb,
    bg: &Background,
    semantics: bool,
) -> Result<RenderedImage> {
    let i = cam.intrinsics;
    let rays: Vec<Ray> = (0..i.h)
        .flat_map(|v| (0..i.w).map(move |u| (u, v)))
        .map(|(u, v)| camera_ray(cam, u as f64, v as f64, [0.0, 0.0]))
        .collect();
    let mut out = render_rays(field, &rays, samples, bounds, bg, semantics)?;
    out.width = i.w;
    out.height = i.h;
    Ok(out)
}

/// Renders arbitrary rays at bin midpoints; the result is one row of `rays.len()` pixels.
pub fn render_rays(field: &RadianceField, rays: &[Ray], samples: usize, bounds: &Aabb, bg: &Background, semantics: bool) -> Result<RenderedImage> {
    let mut out = RenderedImage { width: rays.len() as u32, height: 1, rgb: vec![], depth: vec![], opacity: vec![], class: vec![] };
    for chunk in rays.chunks(1024) {
        let batch = RayBatch::new(chunk, samples, bounds, None, 0);
        let mut tape = Tape::new(&field.params);
        let heads = Heads { color: true, semantics, normals: false, density_normals: 0 };
        let rv = record_render(field, &mut tape, &batch, heads, bg)?;
        let c = tape.value(rv.color);
        for k in 0..chunk.len() {
            out.rgb.push(c.row_vec3(k));
        }
        out.depth.extend_from_slice(&tape.value(rv.depth).data);
        out.opacity.extend_from_slice(&tape.value(rv.opacity).data);
        if let Some(s) = rv.semantics {
            let sv = tape.value(s);
            for k in 0..chunk.len() {
                out.class.push(argmax(sv.row(k)) as u8);
            }
        }
    }
    Ok(out)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ray(near: f64, far: f64) -> Ray {
        Ray { origin: DVec3::ZERO, dir: DVec3::Z, near, far }
    }

    #[test]
    fn midpoint_and_stratification() {
        assert_eq!(sample_along_ray(&ray(1.0, 3.0), 1, None), vec![2.0]);
        let a = sample_along_ray(&ray(0.0, 4.0), 16, Some(7));
        assert_eq!(a, sample_along_ray(&ray(0.0, 4.0), 16, Some(7)));
        for (i, t) in a.iter().enumerate() {
            assert!(*t >= i as f64 * 0.25 && *t < (i + 1) as f64 * 0.25);
        }
        assert!(a.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn saturated_and_empty() {
        let s = SampleSet { sigma: vec![40.0], t: vec![1.0], far: 1.5, color: vec![DVec3::new(0.2, 0.4, 0.6)], ..Default::default() };
        let r = composite(&s);
        assert!((r.weights[0] - 1.0).abs() < 1e-8);
        assert!((r.color - DVec3::new(0.2, 0.4, 0.6)).length() < 1e-8);

        let s = SampleSet { sigma: vec![0.0; 5], t: vec![0.1, 0.2, 0.3, 0.4, 0.5], far: 0.6, color: vec![DVec3::ONE; 5], ..Default::default() };
        let r = composite(&s);
        assert!(r.weights.iter().all(|w| *w == 0.0));
        assert_eq!(r.opacity, 0.0);
        assert_eq!(r.color, DVec3::ZERO);
    }

    #[test]
    fn two_sample_hand_formula() {
        let c1 = DVec3::new(1.0, 0.0, 0.5);
        let c2 = DVec3::new(0.0, 1.0, 0.25);
        let s = SampleSet { sigma: vec![1.0, 2.0], t: vec![0.0, 0.5], far: 1.0, color: vec![c1, c2], ..Default::default() };
        let r = composite(&s);
        let a1 = 1.0 - (-0.5f64).exp();
        let a2 = 1.0 - (-1.0f64).exp();
        let expected = c1 * a1 + c2 * ((1.0 - a1) * a2);
        assert!((r.color - expected).length() < 1e-15);
        assert!((r.depth - 0.5 * (1.0 - a1) * a2).abs() < 1e-15);
    }
}
