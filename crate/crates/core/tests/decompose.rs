use std::collections::BTreeSet;

use glam::DVec3;
use v2g_core::bake::fit::texel_surface;
use v2g_core::bake::{extract_mesh, uv_unwrap, MarchConfig, NeuralTexture, TriangleMesh, UvConfig};
use v2g_core::geom::Aabb;
use v2g_core::nerf::model::{DensityField, FieldFrame};
use v2g_core::physics::collider::ColliderKind;
use v2g_core::physics::decompose::{PhysicalParams, ParamRange};
use v2g_core::physics::{
    assign_params, decompose, extract_entity, inpaint_entity_texture, label_voxels, DecomposeConfig, LabelSource, ParamTable, VoxelGrid,
};
use v2g_core::scene::dataset::Instance;
use v2g_core::scene::synth::{Shape, SynthObject};
use v2g_core::scene::{synth_scene, SynthConfig, SynthField, SynthScene};

fn field(cfg: SynthConfig) -> SynthField {
    SynthField::new(SynthScene::new(cfg).unwrap(), 10.0, 0.02)
}

fn march() -> MarchConfig {
    MarchConfig { cells_per_region: 24, ..Default::default() }
}

fn vase_frame() -> FieldFrame {
    FieldFrame { center: [0.0, 0.0, 0.55], scale: 1.6 }
}

/// Sphere of radius 0.3 resting on the ground at the origin.
fn ball_on_ground() -> SynthConfig {
    SynthConfig {
        objects: vec![SynthObject {
            name: "ball".into(),
            class: 1,
            shape: Shape::Sphere { center: [0.0, 0.0, 0.3], radius: 0.3 },
            albedo: [0.8, 0.2, 0.2],
        }],
        classes: ["sky", "ball", "ground"].map(String::from).to_vec(),
        ..SynthConfig::default()
    }
}

#[test]
fn box_labels_are_membership() {
    let f = field(ball_on_ground());
    let inst = vec![Instance { label: "ball".into(), aabb: Aabb::new(DVec3::splat(-0.3), DVec3::splat(0.3)) }];
    let g = label_voxels(&f, &Aabb::new(DVec3::splat(-1.0), DVec3::splat(1.0)), 0.1, &LabelSource::Boxes(&inst)).unwrap();
    assert_eq!(g.dims, [20, 20, 20]);
    assert_eq!(g.label_at(DVec3::new(0.05, -0.05, 0.15)), 1);
    assert_eq!(g.label_at(DVec3::new(0.55, 0.0, 0.0)), 0);
    assert_eq!(g.label_at(DVec3::new(5.0, 0.0, 0.0)), 0);
    assert_eq!(g.count(1), 6 * 6 * 6);
}

fn occupied_labels(f: &SynthField, g: &VoxelGrid) -> BTreeSet<u32> {
    let mut out = BTreeSet::new();
    for k in 0..g.dims[2] {
        for j in 0..g.dims[1] {
            for i in 0..g.dims[0] {
                let c = g.center(i, j, k);
                if f.density(c) >= 10.0 {
                    out.insert(g.label_at(c));
                }
            }
        }
    }
    out
}

#[test]
fn vase_on_table_labels_split_into_two_entities() {
    let cfg = SynthConfig::default();
    let f = field(cfg.clone());
    let bounds = Aabb::from_array(cfg.bounds);
    let inst: Vec<Instance> = cfg.objects.iter().map(|o| Instance { label: o.name.clone(), aabb: o.shape.aabb() }).collect();
    let g = label_voxels(&f, &bounds, 0.04, &LabelSource::Boxes(&inst)).unwrap();
    assert_eq!(occupied_labels(&f, &g), BTreeSet::from([0, 1, 2]));
    // semantic path: vase -> 1, table -> 2, sky and ground background
    let g = label_voxels(&f, &bounds, 0.04, &LabelSource::Semantic(&[0, 1, 0, 2])).unwrap();
    assert_eq!(occupied_labels(&f, &g), BTreeSet::from([0, 1, 2]));
    assert_eq!(g.label_at(DVec3::new(0.0, 0.0, 0.72)), 1);
    assert_eq!(g.label_at(DVec3::new(0.3, 0.0, 0.25)), 2);
}

#[test]
fn all_target_labels_reproduce_plain_extraction() {
    let f = field(SynthConfig::default());
    let frame = vase_frame();
    let g = VoxelGrid { bounds: Aabb::new(DVec3::splat(-1e6), DVec3::splat(1e6)), dims: [1, 1, 1], labels: vec![3] };
    let a = extract_entity(&f, &frame, &g, 3, &march()).unwrap();
    let b = extract_mesh(&f, &frame, &march()).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert!(extract_entity(&f, &frame, &g, 4, &march()).is_err());
}

fn boundary_edges(m: &TriangleMesh) -> Vec<(DVec3, DVec3)> {
    m.edge_counts()
        .into_iter()
        .filter(|(_, c)| *c == 1)
        .map(|((a, b), _)| (m.vertices[a as usize], m.vertices[b as usize]))
        .collect()
}

#[test]
fn sphere_on_plane_separates_cleanly() {
    let cfg = ball_on_ground();
    let f = field(cfg.clone());
    let frame = FieldFrame { center: [0.0, 0.0, 0.3], scale: 1.0 };
    let inst = vec![Instance { label: "ball".into(), aabb: cfg.objects[0].shape.aabb() }];
    let g = label_voxels(&f, &Aabb::from_array(cfg.bounds), 0.025, &LabelSource::Boxes(&inst)).unwrap();
    let mc = march();
    let ball = extract_entity(&f, &frame, &g, 1, &mc).unwrap();
    let bg = extract_entity(&f, &frame, &g, 0, &mc).unwrap();
    // lattice spacing is largest at the outside of the unit ball
    let spacing = mc.spacing() * frame.scale;
    let region = g.region(1).inflate(spacing);
    assert!(ball.vertices.iter().all(|v| region.contains(*v)));
    assert!(boundary_edges(&ball).is_empty());
    // the ball's sphere shape is recovered
    let err = ball.vertices.iter().filter(|v| v.z > 0.05).map(|v| (v.distance(DVec3::new(0.0, 0.0, 0.3)) - 0.3).abs()).fold(0.0, f64::max);
    assert!(err < spacing, "{err}");
    // no holes around the contact where the ball was cut out
    let near = boundary_edges(&bg).into_iter().filter(|(a, b)| a.distance(DVec3::ZERO) < 0.5 || b.distance(DVec3::ZERO) < 0.5).count();
    assert_eq!(near, 0);
    assert!(bg.vertices.iter().all(|v| v.distance(DVec3::new(0.0, 0.0, 0.3)) > 0.2));
}

fn color_at(p: DVec3) -> [f64; 6] {
    [0.5 + 0.4 * (3.0 * p.x).sin(), 0.5 + 0.4 * (3.0 * p.y).cos(), (0.5 * p.z + 0.3).clamp(0.0, 1.0), p.x, p.y, p.z]
}

/// Stand-in for the whole-scene bake: a UV-unwrapped mesh whose texture is
/// a smooth function of position.
fn baked(f: &SynthField, frame: &FieldFrame) -> (TriangleMesh, NeuralTexture) {
    let raw = extract_mesh(f, frame, &march()).unwrap();
    let (mesh, atlas) = uv_unwrap(&raw, &UvConfig { resolution: 256, ..Default::default() }).unwrap();
    let mut tex = NeuralTexture::new(atlas.resolution, atlas.resolution);
    let ts = texel_surface(&mesh, atlas.resolution);
    for (t, p) in ts.texel.iter().zip(&ts.point) {
        tex.set_texel(*t as usize, &color_at(*p));
    }
    (mesh, tex)
}

#[test]
fn inpainting_copies_source_and_fills_exposed_texels() {
    let cfg = ball_on_ground();
    let f = field(cfg.clone());
    let frame = FieldFrame { center: [0.0, 0.0, 0.3], scale: 1.0 };
    let (mesh, tex) = baked(&f, &frame);

    // same surface: identical on every valid texel
    let same = inpaint_entity_texture(&mesh, tex.width, &mesh, &tex, 1e-9).unwrap();
    for i in 0..tex.texel_count() {
        if tex.valid[i] {
            assert!(same.valid[i]);
            assert_eq!(same.texel(i), tex.texel(i));
        }
    }

    let inst = vec![Instance { label: "ball".into(), aabb: cfg.objects[0].shape.aabb() }];
    let g = label_voxels(&f, &Aabb::from_array(cfg.bounds), 0.025, &LabelSource::Boxes(&inst)).unwrap();
    let bg = extract_entity(&f, &frame, &g, 0, &march()).unwrap();
    let (bg, atlas) = uv_unwrap(&bg, &UvConfig { resolution: 256, ..Default::default() }).unwrap();
    let out = inpaint_entity_texture(&bg, atlas.resolution, &mesh, &tex, 0.03).unwrap();
    let ts = texel_surface(&bg, atlas.resolution);
    assert!(ts.texel.iter().all(|t| out.valid[*t as usize]), "invalid texels left");
    // away from the cut, copied values match the source function
    let mut checked = 0;
    for (t, p) in ts.texel.iter().zip(&ts.point) {
        if p.distance(DVec3::ZERO) > 0.5 && p.length() < 1.2 {
            let want = color_at(*p);
            let got = out.texel(*t as usize);
            assert!((got[3] - want[3]).abs() < 0.05 && (got[4] - want[4]).abs() < 0.05, "{got:?} vs {want:?}");
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn parameter_table_lookup() {
    let mut table = ParamTable::default();
    table.ranges.insert("crate".into(), ParamRange { mass: [2.0, 4.0], friction: [0.2, 0.4], restitution: [0.0, 0.2] });
    let p = assign_params("crate", &table).unwrap();
    assert_eq!(p, PhysicalParams { mass: 3.0, friction: 0.30000000000000004, restitution: 0.1 });
    assert_eq!(assign_params("unknown", &table).unwrap(), PhysicalParams { mass: 0.0, friction: 0.5, restitution: 0.2 });
    let o = PhysicalParams { mass: 9.0, friction: 0.1, restitution: 0.9 };
    table.overrides.insert("crate".into(), o);
    assert_eq!(assign_params("crate", &table).unwrap(), o);
    table.ranges.insert("bad".into(), ParamRange { mass: [-1.0, 2.0], friction: [0.2, 0.4], restitution: [0.0, 0.2] });
    assert!(assign_params("crate", &table).unwrap_err().is_validation());
}

#[test]
fn vase_on_table_decomposes_into_entities_with_colliders() {
    let mut cfg = SynthConfig { width: 16, height: 16, n_train: 2, n_test: 0, ..Default::default() };
    cfg.bounds = [-1.6, -1.6, -0.1, 1.6, 1.6, 1.2];
    let ds = synth_scene(&cfg, 1).unwrap();
    let f = field(cfg.clone());
    let frame = vase_frame();
    let (mesh, tex) = baked(&f, &frame);
    let mut dc = DecomposeConfig { march: march(), voxel_size: 0.04, ..Default::default() };
    dc.uv.resolution = 256;
    dc.params.ranges.insert("table".into(), ParamRange { mass: [10.0, 20.0], friction: [0.5, 0.7], restitution: [0.0, 0.1] });
    let (ents, _) = decompose(&f, &frame, &ds, &mesh, &tex, &dc).unwrap();
    let labels: Vec<&str> = ents.iter().map(|e| e.label.as_str()).collect();
    assert_eq!(labels, ["background", "table", "vase"]);
    assert_eq!(ents[0].params.mass, 0.0);
    assert_eq!(ents[2].params.mass, 1.0);
    for e in &ents {
        let kind = if e.params.mass > 0.0 { ColliderKind::Convex } else { ColliderKind::TriMesh };
        assert_eq!(e.collider.type_name(), if kind == ColliderKind::Convex { "convex_set" } else { "tri_mesh" });
        let tol = if kind == ColliderKind::Convex { dc.collider.eps } else { dc.collider.max_error + 1e-9 };
        let outside = e.mesh.vertices.iter().filter(|v| !e.collider.contains(**v, tol)).count();
        assert_eq!(outside, 0, "{}: {outside} vertices outside collider", e.label);
        let ts = texel_surface(&e.mesh, e.texture.width);
        assert!(ts.texel.iter().all(|t| e.texture.valid[*t as usize]), "{}", e.label);
    }
    // the vase sits on the table
    let vase = ents[2].mesh.aabb();
    assert!((vase.min.z - 0.5).abs() < 0.05 && (vase.max.z - 0.94).abs() < 0.05, "{vase:?}");
}
