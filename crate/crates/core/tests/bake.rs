use glam::DVec3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use v2g_core::bake::fit::{pixel_batch, FitState};
use v2g_core::bake::post::{postprocess_mesh, weld_vertices, PostConfig};
use v2g_core::bake::raster::{rasterize, NO_HIT};
use v2g_core::bake::texture::{shade, NeuralTexture, ShaderMlp};
use v2g_core::bake::uv::{texel_coverage, uv_unwrap, UvConfig};
use v2g_core::bake::{extract_mesh, init_texture, InitConfig, MarchConfig, TriangleMesh};
use v2g_core::field::{Tape, GridConfig};
use v2g_core::nerf::model::{DensityField, FieldConfig, FieldFrame, RadianceField};
use v2g_core::scene::{synth_scene, CameraModel, Intrinsics, SynthConfig};

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

struct Constant(f64);

impl DensityField for Constant {
    fn density(&self, _: DVec3) -> f64 {
        self.0
    }
    fn density_gradient(&self, _: DVec3) -> DVec3 {
        DVec3::ZERO
    }
}

fn unit_frame() -> FieldFrame {
    FieldFrame { center: [0.0; 3], scale: 1.0 }
}

#[test]
fn low_density_gives_empty_mesh() {
    let m = extract_mesh(&Constant(3.0), &unit_frame(), &MarchConfig { cells_per_region: 4, ..Default::default() }).unwrap();
    assert!(m.is_empty());
}

#[test]
fn sphere_isosurface_is_accurate_closed_and_outward() {
    let cfg = MarchConfig { cells_per_region: 10, ..Default::default() };
    let r = 0.55;
    let m = extract_mesh(&Ball { r }, &unit_frame(), &cfg).unwrap();
    assert!(m.faces.len() > 200);
    let err: f64 = m.vertices.iter().map(|v| (v.length() - r).abs()).sum::<f64>() / m.vertices.len() as f64;
    assert!(err < 2.0 * cfg.spacing(), "mean radial error {err}");
    // every edge borders exactly two faces: no cracks at region seams
    assert!(m.edge_counts().values().all(|c| *c == 2));
    // seam vertices exist and are shared (one vertex per lattice edge)
    let seam = 2.0 * cfg.extent / cfg.regions as f64 - cfg.extent;
    assert!(m.vertices.iter().any(|v| (v.x - seam).abs() < 1e-12));
    for f in 0..m.faces.len() {
        let [a, b, c] = m.corners(f);
        assert!(m.face_normal(f).dot((a + b + c) / 3.0) > 0.0);
    }
}

fn camera(eye: DVec3, target: DVec3, w: u32, h: u32) -> CameraModel {
    CameraModel::look_at(Intrinsics::from_fov(w, h, 60.0), eye, target, DVec3::Z).unwrap()
}

#[test]
fn pruning_removes_hidden_faces_and_floaters() {
    let cam = camera(DVec3::new(0.0, -3.0, 0.0), DVec3::ZERO, 64, 64);
    let mut m = TriangleMesh::default();
    // a 20-face strip in front of the camera
    for i in 0..11 {
        let x = -0.5 + 0.1 * i as f64;
        m.vertices.push(DVec3::new(x, 0.0, -0.2));
        m.vertices.push(DVec3::new(x, 0.0, 0.2));
    }
    for i in 0..10u32 {
        m.faces.push([2 * i, 2 * i + 2, 2 * i + 1]);
        m.faces.push([2 * i + 1, 2 * i + 2, 2 * i + 3]);
    }
    // a face behind the camera
    let b = m.vertices.len() as u32;
    m.vertices.extend([DVec3::new(0.0, -5.0, 0.0), DVec3::new(0.3, -5.0, 0.0), DVec3::new(0.0, -5.0, 0.3)]);
    m.faces.push([b, b + 1, b + 2]);
    // a visible 3-face floater
    let f = m.vertices.len() as u32;
    m.vertices.extend([DVec3::new(0.3, -1.0, 0.3), DVec3::new(0.4, -1.0, 0.3), DVec3::new(0.4, -1.0, 0.4), DVec3::new(0.3, -1.0, 0.4), DVec3::new(0.35, -1.0, 0.45)]);
    m.faces.extend([[f, f + 1, f + 2], [f, f + 2, f + 3], [f + 3, f + 2, f + 4]]);
    let cfg = PostConfig { min_faces: 10, max_edge: 10.0, min_edge: 0.0, ..Default::default() };
    let (out, rep) = postprocess_mesh(&m, &[cam.clone()], &cfg).unwrap();
    assert_eq!(rep.invisible_faces, 1);
    assert_eq!(rep.small_component_faces, 3);
    assert_eq!(out.faces.len(), 20);
    assert!(out.vertices.iter().all(|v| v.y == 0.0));

    let behind = TriangleMesh::new(vec![DVec3::new(0.0, -5.0, 0.0), DVec3::new(0.3, -5.0, 0.0), DVec3::new(0.0, -5.0, 0.3)], vec![[0, 1, 2]]);
    let err = postprocess_mesh(&behind, &[cam], &cfg).unwrap_err();
    assert!(err.to_string().contains("no visible geometry"));
}

#[test]
fn weld_merges_duplicates() {
    let m = TriangleMesh::new(
        vec![DVec3::ZERO, DVec3::X, DVec3::Y, DVec3::X, DVec3::ONE],
        vec![[0, 1, 2], [3, 4, 2]],
    );
    let (w, n) = weld_vertices(&m, 1e-9);
    assert_eq!(n, 1);
    assert_eq!(w.vertices.len(), 4);
    assert_eq!(w.faces, vec![[0, 1, 2], [1, 3, 2]]);
}

fn unit_cube() -> TriangleMesh {
    let v: Vec<DVec3> = (0..8).map(|c| DVec3::new((c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64)).collect();
    let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let faces = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    TriangleMesh::new(v, faces)
}

#[test]
fn atlas_has_no_overlaps() {
    let cube = unit_cube();
    for f in 0..12 {
        let [a, b, c] = cube.corners(f);
        assert!(cube.face_normal(f).dot((a + b + c) / 3.0 - DVec3::splat(0.5)) > 0.0);
    }
    let cfg = UvConfig { resolution: 64, ..Default::default() };
    let (m, atlas) = uv_unwrap(&cube, &cfg).unwrap();
    assert_eq!(m.faces.len(), 12);
    assert_eq!(atlas.charts.len(), 6);
    let uvs = m.uvs.as_ref().unwrap();
    assert!(uvs.iter().all(|uv| (0.0..=1.0).contains(&uv[0]) && (0.0..=1.0).contains(&uv[1])));
    let (cov, overlaps) = texel_coverage(&m, atlas.resolution);
    assert_eq!(overlaps, 0);
    assert!(cov.iter().filter(|c| c.is_some()).count() > 100);
    // per-face orientation in uv space is preserved (no inverted faces)
    let signs: Vec<f64> = m
        .faces
        .iter()
        .map(|f| {
            let [a, b, c] = f.map(|i| uvs[i as usize]);
            (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        })
        .collect();
    assert!(signs.iter().all(|s| *s > 0.0) || signs.iter().all(|s| *s < 0.0));

    let tri = TriangleMesh::new(vec![DVec3::ZERO, DVec3::X, DVec3::Y], vec![[0, 1, 2]]);
    let (t, a) = uv_unwrap(&tri, &cfg).unwrap();
    assert_eq!(a.charts.len(), 1);
    let u = t.uvs.unwrap();
    let area = ((u[1][0] - u[0][0]) * (u[2][1] - u[0][1]) - (u[1][1] - u[0][1]) * (u[2][0] - u[0][0])).abs();
    assert!(area > 0.0);
}

fn screen_camera() -> CameraModel {
    // looks along +y from the origin, image x = world x, image y = -world z
    camera(DVec3::ZERO, DVec3::Y, 32, 24)
}

#[test]
fn rasterizer_basics() {
    let cam = screen_camera();
    let big = TriangleMesh::new(vec![DVec3::new(-50.0, 1.0, -50.0), DVec3::new(100.0, 1.0, -50.0), DVec3::new(-50.0, 1.0, 100.0)], vec![[0, 1, 2]]);
    let g = rasterize(&big, &cam, [0.0, 0.0]);
    assert_eq!(g.hit_count(), 32 * 24);

    let mut two = TriangleMesh::new(
        vec![
            DVec3::new(-5.0, 3.0, -5.0), DVec3::new(5.0, 3.0, -5.0), DVec3::new(0.0, 3.0, 5.0),
            DVec3::new(-5.0, 2.0, -5.0), DVec3::new(5.0, 2.0, -5.0), DVec3::new(0.0, 2.0, 5.0),
        ],
        vec![[0, 1, 2], [3, 4, 5]],
    );
    let g = rasterize(&two, &cam, [0.0, 0.0]);
    assert!(g.face.iter().all(|f| *f == NO_HIT || *f == 1));
    two.faces.swap(0, 1);
    let g = rasterize(&two, &cam, [0.0, 0.0]);
    assert!(g.face.iter().all(|f| *f == NO_HIT || *f == 0));

    // triangle parallel to the image plane: barycentrics are affine, so the
    // pixel whose sample lies on the centroid gets the mean uv
    let i = cam.intrinsics;
    let px = |u: f64, v: f64| DVec3::new((u - i.cx) / i.fx * 2.0, 2.0, -(v - i.cy) / i.fy * 2.0);
    let (c_u, c_v) = (10.5, 12.5);
    let mut tri = TriangleMesh::new(vec![px(c_u - 6.0, c_v - 3.0), px(c_u + 6.0, c_v - 3.0), px(c_u, c_v + 6.0)], vec![[0, 1, 2]]);
    tri.uvs = Some(vec![[0.1, 0.2], [0.7, 0.3], [0.4, 0.9]]);
    let g = rasterize(&tri, &cam, [0.0, 0.0]);
    let idx = 12 * 32 + 10;
    assert!(g.hit(idx));
    assert!((g.uv[idx][0] - 0.4).abs() < 1e-6 && (g.uv[idx][1] - (1.4 / 3.0)).abs() < 1e-6, "{:?}", g.uv[idx]);
    assert!((g.depth[idx] - g.position(&tri, idx).length()).abs() < 1e-12);
}

fn one_texel(b: [f64; 3], s: [f64; 3]) -> NeuralTexture {
    let mut t = NeuralTexture::new(1, 1);
    t.set_texel(0, &[b[0], b[1], b[2], s[0], s[1], s[2]]);
    t
}

#[test]
fn shading_rules() {
    let cam = screen_camera();
    let mut big = TriangleMesh::new(vec![DVec3::new(-50.0, 1.0, -50.0), DVec3::new(100.0, 1.0, -50.0), DVec3::new(-50.0, 1.0, 100.0)], vec![[0, 1, 2]]);
    big.uvs = Some(vec![[0.5, 0.5]; 3]);
    let g = rasterize(&big, &cam, [0.0, 0.0]);

    let tex = one_texel([0.2, 0.5, 0.9], [3.0, -1.0, 0.5]);
    let img = shade(&g, &tex, &ShaderMlp::zeros(), &cam, DVec3::ZERO);
    assert!(img.rgb.iter().all(|c| *c == DVec3::new(0.2, 0.5, 0.9)));

    // hand-set shader: hidden unit 0 = relu(s0 + 0.5), output r = 2 * h0 - 0.25
    let mut sh = ShaderMlp::zeros();
    let (w0, b0) = sh.mlp.layers()[0];
    let (w1, b1) = sh.mlp.layers()[1];
    sh.params.get_mut(w0)[0] = 1.0;
    sh.params.get_mut(b0)[0] = 0.5;
    sh.params.get_mut(w1)[0] = 2.0;
    sh.params.get_mut(b1)[0] = -0.25;
    sh.params.get_mut(b1)[1] = -10.0;
    let tex = one_texel([0.1, 0.5, 0.9], [0.05, 0.0, 0.0]);
    let img = shade(&g, &tex, &sh, &cam, DVec3::ZERO);
    let expect_r: f64 = 0.1 + 2.0 * (0.05f64 + 0.5) - 0.25;
    for c in &img.rgb {
        assert!((c.x - expect_r).abs() < 1e-15);
        assert_eq!(c.y, 0.0);
        assert_eq!(c.z, 0.9);
    }
    let tex = one_texel([0.9, 0.5, 0.9], [5.0, 0.0, 0.0]);
    let img = shade(&g, &tex, &sh, &cam, DVec3::ZERO);
    assert!(img.rgb.iter().all(|c| c.x == 1.0));

    let empty = NeuralTexture::new(1, 1);
    assert_eq!(shade(&g, &empty, &sh, &cam, DVec3::ZERO).invalid_samples, 32 * 24);
}

#[test]
fn dilation_fills_two_rings_only() {
    let mut t = NeuralTexture::new(7, 1);
    t.set_texel(0, &[1.0; 6]);
    t.dilate(2);
    assert_eq!(t.filled, vec![true, true, true, false, false, false, false]);
    assert_eq!(t.valid, vec![true, false, false, false, false, false, false]);
    assert_eq!(t.texel(2), &[1.0; 6]);
}

fn plane_scene() -> (v2g_core::scene::SceneDataset, TriangleMesh) {
    let cfg = SynthConfig { width: 24, height: 24, n_train: 4, n_test: 0, ..SynthConfig::default() };
    let ds = synth_scene(&cfg, 2).unwrap();
    let mut m = TriangleMesh::new(
        vec![DVec3::new(-1.5, -1.5, 0.0), DVec3::new(1.5, -1.5, 0.0), DVec3::new(1.5, 1.5, 0.0), DVec3::new(-1.5, 1.5, 0.0)],
        vec![[0, 1, 2], [0, 2, 3]],
    );
    m = v2g_core::bake::post::split_long_edges(&m, 0.8, 4).0;
    let (m, _) = uv_unwrap(&m, &UvConfig { resolution: 32, ..Default::default() }).unwrap();
    (ds, m)
}

#[test]
fn init_fills_texels_from_aux_network() {
    let (ds, mesh) = plane_scene();
    let grid = GridConfig { levels: 2, features_per_level: 2, log2_table_size: 8, base_resolution: 4, per_level_scale: 2.0 };
    let fc = FieldConfig { density_grid: grid.clone(), color_grid: grid.clone(), hidden: vec![4], head_hidden: vec![4], ..Default::default() };
    let field = RadianceField::new(fc, FieldFrame::from_bounds(&ds.bounds), ds.class_count(), 1);
    let cfg = InitConfig { steps: 5, pixels_per_step: 64, grid, hidden: vec![8], eval_every: 0, dilation: 0, ..Default::default() };
    let out = init_texture(&field, &mesh, 32, &ds, &cfg, 1).unwrap();
    assert!(!out.report.fallback);
    let (store, aux) = out.aux.as_ref().unwrap();
    let surf = v2g_core::bake::fit::texel_surface(&mesh, 32);
    assert_eq!(surf.texel.len(), out.report.valid_texels);
    for (k, &t) in surf.texel.iter().enumerate() {
        assert_eq!(out.texture.texel(t as usize), &aux.eval(store, &field, surf.point[k]));
    }
    let valid = out.texture.valid.iter().filter(|v| **v).count();
    assert_eq!(valid, surf.texel.len());
    assert_eq!(out.texture.filled, out.texture.valid);
    assert!(valid < 32 * 32);
}

#[test]
fn texture_gradient_matches_finite_differences() {
    let (ds, mesh) = plane_scene();
    let mut tex = NeuralTexture::new(32, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    use rand::Rng;
    for i in 0..tex.texel_count() {
        let v: Vec<f64> = (0..6).map(|k| if k < 3 { rng.gen_range(0.2..0.8) } else { rng.gen_range(-1.0..1.0) }).collect();
        tex.set_texel(i, &v);
    }
    let state = FitState::new(&tex, &ShaderMlp::new(5)).unwrap();
    let batch = pixel_batch(&mesh, &ds, 0, [0.3, -0.2], 50, Some(&mut rng)).unwrap();
    assert_eq!(batch.len(), 50);
    let loss = |s: &FitState| {
        let mut t = Tape::new(&s.params);
        let l = s.record_color_loss(&mut t, &batch).unwrap();
        t.scalar(l)
    };
    let grads = {
        let mut t = Tape::new(&state.params);
        let l = state.record_color_loss(&mut t, &batch).unwrap();
        t.backward(l).unwrap()
    };
    let g = grads.get(state.texture);
    let probe = NeuralTexture::new(32, 32);
    let mut sampled = vec![false; 32 * 32];
    for uv in &batch.uv {
        for (t, w) in probe.taps(*uv) {
            if w > 0.0 {
                sampled[t as usize] = true;
            }
        }
    }
    for (t, s) in sampled.iter().enumerate() {
        if !s {
            assert!(g[t * 6..t * 6 + 6].iter().all(|v| *v == 0.0));
        }
    }
    let mut checked = 0;
    for t in (0..32 * 32).filter(|t| sampled[*t]).take(12) {
        for c in [0, 4] {
            let k = t * 6 + c;
            if g[k].abs() < 1e-9 {
                continue;
            }
            let h = 1e-6;
            let mut p = state.clone();
            p.params.get_mut(p.texture)[k] += h;
            let mut m = state.clone();
            m.params.get_mut(m.texture)[k] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - g[k]).abs() / g[k].abs() < 1e-3, "texel {t} channel {c}: {fd} vs {}", g[k]);
            checked += 1;
        }
    }
    assert!(checked >= 8);
}
