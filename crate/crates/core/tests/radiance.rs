use glam::DVec3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use v2g_core::field::{GridConfig, Tape, Tensor};
use v2g_core::nerf::loss::{self, depth_align};
use v2g_core::nerf::model::{density_normal, field_query, DensityField, FieldConfig, FieldFrame, RadianceField};
use v2g_core::nerf::render::{composite, sample_deltas, SampleSet};
use v2g_core::nerf::train::{background_of, total_loss, train_frames, BatchSampler, TrainConfig};
use v2g_core::nerf::LossWeights;
use v2g_core::scene::{synth_scene, SceneDataset, SynthConfig};

fn tiny_config() -> FieldConfig {
    let grid = GridConfig { levels: 3, features_per_level: 2, log2_table_size: 10, base_resolution: 4, per_level_scale: 2.0 };
    FieldConfig { density_grid: grid.clone(), color_grid: grid, hidden: vec![8], head_hidden: vec![6], grid_init_scale: 0.5, density_bias_init: 0.0 }
}

fn tiny_scene(frames: usize) -> SceneDataset {
    let cfg = SynthConfig { width: 16, height: 16, n_train: frames, n_test: 0, ..SynthConfig::default() };
    synth_scene(&cfg, 3).unwrap()
}

fn tiny_field(ds: &SceneDataset) -> RadianceField {
    RadianceField::new(tiny_config(), FieldFrame::from_bounds(&ds.bounds), ds.class_count(), 11)
}

#[test]
fn query_ranges() {
    let ds = tiny_scene(1);
    let f = tiny_field(&ds);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let x = DVec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let d = DVec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.3).normalize();
        let s = field_query(&f, x, d).unwrap();
        assert!(s.sigma >= 0.0);
        assert!(s.color.min_element() >= 0.0 && s.color.max_element() <= 1.0);
        assert_eq!(s.semantics.len(), 4);
        assert!((s.semantics.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((s.normal_mlp.length() - 1.0).abs() < 1e-12);
    }
    assert!(field_query(&f, DVec3::new(f64::NAN, 0.0, 0.0), DVec3::Z).is_err());
}

struct Analytic<F: Fn(DVec3) -> f64, G: Fn(DVec3) -> DVec3>(F, G);

impl<F: Fn(DVec3) -> f64, G: Fn(DVec3) -> DVec3> DensityField for Analytic<F, G> {
    fn density(&self, x: DVec3) -> f64 {
        (self.0)(x)
    }
    fn density_gradient(&self, x: DVec3) -> DVec3 {
        (self.1)(x)
    }
}

#[test]
fn analytic_density_normals() {
    let ramp = Analytic(|x: DVec3| x.z, |_| DVec3::Z);
    let n = density_normal(&ramp, DVec3::new(0.3, -2.0, 5.0)).unwrap();
    assert_eq!(n.normal, DVec3::new(0.0, 0.0, -1.0));
    assert!(!n.degenerate);

    // density falls off from the origin: normals point outward
    let blob = Analytic(|x: DVec3| (-x.length_squared()).exp(), |x: DVec3| -2.0 * x * (-x.length_squared()).exp());
    let p = DVec3::new(0.2, -0.4, 0.5);
    let n = density_normal(&blob, p).unwrap();
    assert!((n.normal - p.normalize()).length() < 1e-12);

    let flat = Analytic(|_| 3.0, |_| DVec3::ZERO);
    let n = density_normal(&flat, DVec3::ONE).unwrap();
    assert!(n.degenerate);
    assert_eq!(n.normal, DVec3::Z);
}

#[test]
fn field_density_normal_matches_finite_differences() {
    let ds = tiny_scene(1);
    let f = tiny_field(&ds);
    let h = 1e-6;
    for p in [DVec3::new(0.1, 0.2, 0.3), DVec3::new(-0.7, 0.43, 0.9), DVec3::new(3.0, -2.0, 1.0)] {
        let g = f.density_gradient(p);
        for k in 0..3 {
            let mut e = DVec3::ZERO;
            e[k] = h;
            let fd = (f.density(p + e) - f.density(p - e)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * (1.0 + g[k].abs()), "axis {k}: {fd} vs {}", g[k]);
        }
    }
}

fn brute_force(s: &SampleSet) -> (DVec3, f64, f64) {
    let delta = sample_deltas(&s.t, s.far);
    let (mut c, mut d, mut o) = (DVec3::ZERO, 0.0, 0.0);
    for i in 0..s.sigma.len() {
        let acc: f64 = (0..i).map(|j| s.sigma[j] * delta[j]).sum();
        let w = (-acc).exp() * (1.0 - (-s.sigma[i] * delta[i]).exp());
        c += w * s.color[i];
        d += w * s.t[i];
        o += w;
    }
    (c, d, o)
}

proptest! {
    #[test]
    fn composite_matches_direct_sum(
        sig in prop::collection::vec(0.0f64..20.0, 1..24),
        gaps in prop::collection::vec(0.001f64..0.3, 24),
        cols in prop::collection::vec(0.0f64..1.0, 72),
    ) {
        let n = sig.len();
        let mut t = vec![0.1];
        for g in &gaps[..n - 1] {
            t.push(t.last().unwrap() + g);
        }
        let s = SampleSet {
            sigma: sig.clone(),
            far: t[n - 1] + gaps[n - 1],
            t,
            color: (0..n).map(|i| DVec3::new(cols[3 * i], cols[3 * i + 1], cols[3 * i + 2])).collect(),
            ..Default::default()
        };
        let r = composite(&s);
        let (c, d, o) = brute_force(&s);
        prop_assert!((r.color - c).abs().max_element() <= 1e-12);
        prop_assert!((r.depth - d).abs() <= 1e-12 * (1.0 + d));
        prop_assert!((r.opacity - o).abs() <= 1e-12);
        prop_assert!(r.opacity <= 1.0 + 1e-15);
        prop_assert!(r.weights.iter().all(|w| *w >= 0.0));
    }
}

#[test]
fn depth_alignment_satisfies_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d: Vec<f64> = (0..50).map(|_| rng.gen_range(0.5..4.0)).collect();
    let m: Vec<f64> = d.iter().map(|v| 0.3 * v + 1.2 + rng.gen_range(-0.05..0.05)).collect();
    let mask: Vec<bool> = (0..50).map(|i| i % 7 != 3).collect();
    let al = depth_align(&d, &m, &mask);
    assert!(!al.degenerate);
    let (mut s1, mut sd) = (0.0, 0.0);
    for i in (0..50).filter(|i| mask[*i]) {
        let r = al.a * d[i] + al.b - m[i];
        s1 += r;
        sd += r * d[i];
    }
    assert!(s1.abs() < 1e-9 && sd.abs() < 1e-9, "{s1} {sd}");

    let flat = depth_align(&[2.0; 4], &[1.0, 2.0, 3.0, 4.0], &[true; 4]);
    assert!(flat.degenerate);
    assert_eq!((flat.a, flat.b), (1.0, 0.5));
}

#[test]
fn perfect_supervision_gives_zero_terms() {
    let store = Default::default();
    let mut tape = Tape::new(&store);
    let gt = [[0.2, 0.4, 0.6], [1.0, 0.0, 0.5], [0.25, 0.75, 0.125]];
    let color = tape.input(Tensor::new(3, 3, gt.iter().flatten().copied().collect()));
    let rgb = loss::rgb_term(&mut tape, color, &gt).unwrap();

    let d = [1.5, 2.25, 3.0, f64::INFINITY];
    let depth = tape.input(Tensor::new(4, 1, d.to_vec()));
    let dterm = loss::depth_term(&mut tape, depth, &d, &[vec![0, 1, 2]]).unwrap().unwrap();

    let normals = [DVec3::X, DVec3::NEG_Z, DVec3::Y];
    let nm = tape.input(Tensor::from_vec3s(&normals));
    let nd = tape.input(Tensor::from_vec3s(&normals));
    let nterm = loss::normal_term(&mut tape, nm, Some(nd), &[0, 1, 2], &normals).unwrap().unwrap();

    let sem = tape.input(Tensor::new(2, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]));
    let sterm = loss::semantic_term(&mut tape, sem, &[1, 0]).unwrap().unwrap();
    let sky = loss::sky_term(&mut tape, depth, &[3]);
    let sigma = tape.input(Tensor::new(5, 1, vec![0.0; 5]));
    let sp = loss::sparsity_term(&mut tape, sigma, 0.01).unwrap();
    let (root, terms) = loss::combine(&mut tape, [(Some(rgb), 1.0), (Some(dterm), 1.0), (Some(nterm), 1.0), (Some(sterm), 1.0), (Some(sky), 1.0), (Some(sp), 1.0)]).unwrap();
    for v in [terms.rgb, terms.depth, terms.normal, terms.semantic, terms.sky, terms.sparsity] {
        assert_eq!(v, Some(0.0));
    }
    assert_eq!(tape.scalar(root), 0.0);
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let ds = tiny_scene(2);
    let field = tiny_field(&ds);
    let cfg = TrainConfig { images_per_batch: 2, rays_per_image: 2, samples_per_ray: 8, normal_rays: 4, sparsity_points: 3, ..Default::default() };
    let weights = LossWeights { rgb: 1.0, depth: 0.5, normal: 0.3, semantic: 0.2, sky: 0.4, sparsity: 0.1, alpha: 0.5 };
    let sampler = BatchSampler::new(&ds, &[0, 1]).unwrap();
    let bg = background_of(&ds).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let batch = sampler.sample(&ds, &cfg, &mut rng);
    assert_eq!(batch.rays.num_rays(), 4);

    let eval = total_loss(&field, &batch, &weights, &bg).unwrap();
    assert!(eval.terms.rgb.is_some() && eval.terms.sparsity.is_some());
    let grads = eval.gradients().unwrap();
    drop(eval);
    let loss_at = |f: &RadianceField| total_loss(f, &batch, &weights, &bg).unwrap().terms.total;

    let h = 1e-6;
    let mut checked = 0;
    for id in field.params.ids() {
        let g = grads.get(id);
        let mut order: Vec<usize> = (0..g.len()).collect();
        order.sort_by(|a, b| g[*b].abs().total_cmp(&g[*a].abs()));
        for &k in order.iter().take(4) {
            if g[k].abs() < 1e-9 {
                continue;
            }
            let mut fp = field.clone();
            fp.params.get_mut(id)[k] += h;
            let mut fm = field.clone();
            fm.params.get_mut(id)[k] -= h;
            let fd = (loss_at(&fp) - loss_at(&fm)) / (2.0 * h);
            let rel = (fd - g[k]).abs() / g[k].abs().max(fd.abs());
            assert!(rel < 1e-3, "{}[{k}]: analytic {} numeric {fd}", field.params.name(id), g[k]);
            checked += 1;
        }
    }
    assert!(checked > 20, "only {checked} entries checked");
}

#[test]
fn zero_steps_leave_field_unchanged() {
    let ds = tiny_scene(2);
    let field = tiny_field(&ds);
    let cfg = TrainConfig { steps: 0, field: tiny_config(), ..Default::default() };
    let out = train_frames(&ds, &[0, 1], &cfg, field.clone(), 1).unwrap();
    assert!(out.trace.is_empty());
    for id in field.params.ids() {
        assert_eq!(out.field.params.get(id), field.params.get(id));
    }
}

#[test]
fn training_reduces_color_loss_and_is_deterministic() {
    let ds = tiny_scene(2);
    let cfg = TrainConfig {
        steps: 500,
        images_per_batch: 2,
        rays_per_image: 32,
        samples_per_ray: 16,
        normal_rays: 8,
        sparsity_points: 16,
        eval_every: 0,
        field: tiny_config(),
        ..Default::default()
    };
    let out = train_frames(&ds, &[0, 1], &cfg, tiny_field(&ds), 4).unwrap();
    assert!(out.aborted.is_none());
    let mean_rgb = |r: std::ops::Range<usize>| r.clone().map(|i| out.trace[i].loss.rgb.unwrap()).sum::<f64>() / r.len() as f64;
    let (early, late) = (mean_rgb(0..20), mean_rgb(480..500));
    assert!(late < 0.5 * early, "rgb loss {early} -> {late}");

    let short = TrainConfig { steps: 30, ..cfg };
    let a = train_frames(&ds, &[0, 1], &short, tiny_field(&ds), 4).unwrap();
    let b = train_frames(&ds, &[0, 1], &short, tiny_field(&ds), 4).unwrap();
    assert_eq!(a.trace, b.trace);
    for id in a.field.params.ids() {
        assert_eq!(a.field.params.get(id), b.field.params.get(id));
    }
}

#[test]
fn field_round_trips_through_disk() {
    use v2g_core::nerf::io::{load_field, save_field, FieldMeta};
    let ds = tiny_scene(1);
    let mut field = tiny_field(&ds);
    field.params.quantize_f32();
    let meta = FieldMeta {
        config: field.config.clone(),
        frame: field.frame,
        num_classes: field.num_classes,
        sky_class: ds.sky_class,
        background: [0.6, 0.75, 0.95],
        bounds: ds.bounds.to_array(),
    };
    let dir = tempfile::tempdir().unwrap();
    save_field(&field, &meta, dir.path()).unwrap();
    let (back, meta2) = load_field(dir.path()).unwrap();
    assert_eq!(meta, meta2);
    let p = DVec3::new(0.1, 0.2, 0.3);
    assert_eq!(field_query(&back, p, DVec3::Z).unwrap(), field_query(&field, p, DVec3::Z).unwrap());
}
