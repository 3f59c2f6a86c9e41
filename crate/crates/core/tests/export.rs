use glam::DVec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use v2g_core::bake::fit::texel_surface;
use v2g_core::bake::{uv_unwrap, NeuralTexture, ShaderMlp, TriangleMesh, UvConfig};
use v2g_core::export::bundle::{parse_manifest, GLB_FILE, MANIFEST_FILE};
use v2g_core::export::glb::{MAGIC, VERSION};
use v2g_core::export::{export_bundle, export_glb, import_bundle, import_glb, Bundle, GlbMesh, RgbImage, Sky};
use v2g_core::physics::decompose::{Entity, PhysicalParams};
use v2g_core::physics::{
    make_collider, parse_replay, replay_bytes, run_script, BodySpec, Collider, ColliderConfig, ColliderKind, Script, ScriptAction,
    SolverSettings, Spawn,
};

fn box_mesh(c: DVec3, h: DVec3) -> TriangleMesh {
    let v = (0..8)
        .map(|i| c + DVec3::new(if i & 1 == 0 { -h.x } else { h.x }, if i & 2 == 0 { -h.y } else { h.y }, if i & 4 == 0 { -h.z } else { h.z }))
        .collect();
    let faces = vec![[0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6], [0, 1, 4], [1, 5, 4], [2, 6, 3], [3, 6, 7], [0, 4, 2], [2, 4, 6], [1, 3, 5], [3, 7, 5]];
    TriangleMesh::new(v, faces)
}

fn entity(id: u32, label: &str, c: DVec3, h: DVec3, mass: f64, seed: u64) -> Entity {
    let (mesh, atlas) = uv_unwrap(&box_mesh(c, h), &UvConfig { resolution: 32, ..Default::default() }).unwrap();
    let mut tex = NeuralTexture::new(atlas.resolution, atlas.resolution);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in texel_surface(&mesh, atlas.resolution).texel {
        let v: Vec<f64> = (0..6).map(|k| if k < 3 { rng.gen::<f64>() } else { rng.gen_range(-2.0..3.0) }).collect();
        tex.set_texel(t as usize, &v);
    }
    tex.dilate(2);
    let kind = if mass > 0.0 { ColliderKind::Box } else { ColliderKind::TriMesh };
    let collider = make_collider(&mesh, kind, &ColliderConfig::default()).unwrap();
    Entity { id, label: label.into(), mesh, texture: tex, collider, params: PhysicalParams { mass, friction: 0.5, restitution: 0.2 } }
}

fn scene() -> (Vec<Entity>, Bundle) {
    let ents = vec![
        entity(0, "background", DVec3::new(0.0, 0.0, -0.05), DVec3::new(2.0, 2.0, 0.05), 0.0, 1),
        entity(1, "crate", DVec3::new(0.0, 0.0, 0.25), DVec3::new(0.25, 0.2, 0.25), 2.0, 2),
        entity(2, "vase", DVec3::new(0.8, 0.1, 0.15), DVec3::new(0.1, 0.1, 0.15), 1.0, 3),
    ];
    let b = Bundle::from_entities(&ents, &ShaderMlp::new(5), DVec3::new(0.0, 0.0, -9.81), Sky { color: Some([0.6, 0.75, 0.95]), dome_glb: None }).unwrap();
    (ents, b)
}

fn word(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

#[test]
fn glb_header_and_chunk_alignment() {
    let (_, b) = scene();
    let meshes: Vec<GlbMesh> = b.entities.iter().map(|e| e.mesh.clone()).collect();
    let g = export_glb(&meshes).unwrap();
    assert_eq!(&g[0..4], b"glTF");
    assert_eq!(word(&g, 0), MAGIC);
    assert_eq!(word(&g, 4), VERSION);
    assert_eq!(word(&g, 8) as usize, g.len());
    let jl = word(&g, 12) as usize;
    assert_eq!(jl % 4, 0);
    assert_eq!(&g[16..20], b"JSON");
    let bl = word(&g, 20 + jl) as usize;
    assert_eq!(bl % 4, 0);
    assert_eq!(&g[24 + jl..28 + jl], b"BIN\0");
    assert_eq!(28 + jl + bl, g.len());
    let json: serde_json::Value = serde_json::from_slice(&g[20..20 + jl]).unwrap();
    assert_eq!(json["nodes"].as_array().unwrap().len(), 3);
    assert_eq!(json["asset"]["version"], "2.0");
    for v in json["bufferViews"].as_array().unwrap() {
        assert_eq!(v["byteOffset"].as_u64().unwrap() % 4, 0);
    }
}

#[test]
fn glb_round_trip_is_a_fixed_point() {
    let (ents, b) = scene();
    let meshes: Vec<GlbMesh> = b.entities.iter().map(|e| e.mesh.clone()).collect();
    let g = export_glb(&meshes).unwrap();
    let back = import_glb(&g).unwrap();
    assert_eq!(back, meshes);
    assert_eq!(export_glb(&back).unwrap(), g);
    // positions are the f32 rounding of the source, bit for bit
    for (e, m) in ents.iter().zip(&back) {
        for (v, p) in e.mesh.vertices.iter().zip(&m.positions) {
            assert_eq!([v.x as f32, v.y as f32, v.z as f32].map(f32::to_bits), p.map(f32::to_bits));
        }
    }
}

fn edit_json(g: &[u8], f: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
    let jl = word(g, 12) as usize;
    let mut json: serde_json::Value = serde_json::from_slice(&g[20..20 + jl]).unwrap();
    f(&mut json);
    let mut j = serde_json::to_vec(&json).unwrap();
    while j.len() % 4 != 0 {
        j.push(b' ');
    }
    let bin = &g[20 + jl..];
    let mut out = Vec::new();
    for v in [MAGIC, VERSION, (12 + 8 + j.len() + bin.len()) as u32, j.len() as u32, 0x4E4F_534A] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&j);
    out.extend_from_slice(bin);
    out
}

#[test]
fn glb_accessor_mismatches_name_the_accessor() {
    let (_, b) = scene();
    let g = export_glb(&[b.entities[1].mesh.clone()]).unwrap();
    let bad = edit_json(&g, |j| j["accessors"][1]["count"] = serde_json::json!(100000));
    let err = import_glb(&bad).unwrap_err().to_string();
    assert!(err.contains("accessor 1"), "{err}");
    let bad = edit_json(&g, |j| j["accessors"][0]["max"][2] = serde_json::json!(7.0));
    let err = import_glb(&bad).unwrap_err().to_string();
    assert!(err.contains("accessor 0") && err.contains("min/max"), "{err}");
    let bad = edit_json(&g, |j| j["accessors"][2]["componentType"] = serde_json::json!(5123));
    assert!(import_glb(&bad).unwrap_err().to_string().contains("accessor 2"));
    let mut truncated = g.clone();
    truncated.truncate(g.len() - 4);
    assert!(import_glb(&truncated).is_err());
    assert!(export_glb(&[]).is_err());
    let mut m = b.entities[1].mesh.clone();
    m.base_color = RgbImage { width: 0, height: 0, data: vec![] };
    assert!(export_glb(&[m]).unwrap_err().to_string().contains("texture"));
}

#[test]
fn bundle_round_trip_and_determinism() {
    let (ents, b) = scene();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let m1 = export_bundle(&b, d1.path()).unwrap();
    let back = import_bundle(&m1).unwrap();
    assert_eq!(back, b);
    export_bundle(&back, d2.path()).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(d1.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["game.json", "scene.glb", "shader.json", "spec_0.png", "spec_1.png", "spec_2.png"]);
    for n in &names {
        assert_eq!(std::fs::read(d1.path().join(n)).unwrap(), std::fs::read(d2.path().join(n)).unwrap(), "{n} differs");
    }
    // same state exported twice
    assert_eq!(b.files().unwrap(), b.clone().files().unwrap());

    // specular is within half a quantization step of the source texture
    for (n, e) in ents.iter().enumerate() {
        for i in 0..e.texture.texel_count() {
            if e.texture.filled[i] {
                let got = back.specular(n, i);
                for k in 0..3 {
                    assert!((got[k] - e.texture.texel(i)[3 + k]).abs() <= 0.5 * back.spec_quant[k].scale * (1.0 + 1e-9));
                }
            }
        }
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(&m1).unwrap()).unwrap();
    assert_eq!(manifest["version"], 1);
    assert_eq!(manifest["entities"][1]["collider"]["type"], "box");
    assert_eq!(manifest["entities"][0]["collider"]["type"], "tri_mesh");
    assert_eq!(manifest["shader"]["widths"], serde_json::json!([6, 32, 3]));
    assert_eq!(manifest["entities"][2]["glb"], GLB_FILE);
}

#[test]
fn empty_bundle_is_valid() {
    let b = Bundle::from_entities(&[], &ShaderMlp::zeros(), DVec3::ZERO, Sky { color: Some([0.0; 3]), dome_glb: None }).unwrap();
    let d = tempfile::tempdir().unwrap();
    let m = export_bundle(&b, d.path()).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&m).unwrap()).unwrap();
    assert_eq!(v["entities"], serde_json::json!([]));
    assert_eq!(import_bundle(&m).unwrap(), b);
}

#[test]
fn import_rejects_unknown_fields_and_missing_files() {
    let (_, b) = scene();
    let d = tempfile::tempdir().unwrap();
    let m = export_bundle(&b, d.path()).unwrap();
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&m).unwrap()).unwrap();
    v["cheats"] = serde_json::json!(true);
    let err = parse_manifest(&serde_json::to_vec(&v).unwrap(), &m).unwrap_err().to_string();
    assert!(err.contains("cheats"), "{err}");
    v.as_object_mut().unwrap().remove("cheats");
    v["entities"][0]["colour"] = serde_json::json!(1);
    let err = parse_manifest(&serde_json::to_vec(&v).unwrap(), &m).unwrap_err().to_string();
    assert!(err.contains("colour"), "{err}");

    std::fs::remove_file(d.path().join("spec_2.png")).unwrap();
    let err = import_bundle(&d.path().join(MANIFEST_FILE)).unwrap_err().to_string();
    assert!(err.contains("spec_2.png"), "{err}");
}

#[test]
fn export_rejects_invalid_entities_listing_fields() {
    let (_, mut b) = scene();
    b.entities[1].restitution = 2.0;
    b.entities[2].mass = -1.0;
    b.entities[2].id = 1;
    let err = b.files().unwrap_err().to_string();
    assert!(err.contains("entities[1].restitution") && err.contains("entities[2].mass") && err.contains("entities[2].id"), "{err}");
    let (_, mut b) = scene();
    b.entities[0].mass = 3.0;
    assert!(b.files().unwrap_err().to_string().contains("tri_mesh"));
}

fn shot(b: &Bundle) -> Vec<u8> {
    let mut w = b.physics_world(SolverSettings::default()).unwrap();
    let script = Script {
        steps: 120,
        spawns: vec![Spawn {
            step: 10,
            body: BodySpec {
                id: 100,
                label: "football".into(),
                collider: Collider::Sphere { center: [0.0; 3], radius: 0.11 },
                mass: 0.43,
                friction: 0.5,
                restitution: 0.6,
                position: [-1.5, 0.0, 0.3],
                orientation: [0.0, 0.0, 0.0, 1.0],
                linear_velocity: [6.0, 0.0, 1.0],
                angular_velocity: [0.0; 3],
            },
        }],
        actions: vec![ScriptAction { step: 5, body: 2, impulse: [0.0, 0.5, 0.0], point: None }],
        ..Default::default()
    };
    replay_bytes(&run_script(&mut w, &script).unwrap()).unwrap()
}

#[test]
fn bundle_physics_replays_are_identical() {
    let (_, b) = scene();
    let a = shot(&b);
    assert_eq!(a, shot(&b));
    let frames = parse_replay(&a).unwrap();
    assert_eq!(frames.len(), 121);
    assert_eq!(replay_bytes(&frames).unwrap(), a);
    let last = frames.last().unwrap();
    assert_eq!(last.bodies.len(), 4);
    // the crate was hit and moved
    let crate_p = last.bodies.iter().find(|b| b.id == 1).unwrap().p;
    assert!(crate_p[0] > 0.01, "{crate_p:?}");
    // nothing over the ground sinks into it
    for bd in last.bodies.iter().filter(|b| b.p[0].abs() < 1.9 && b.p[1].abs() < 1.9) {
        assert!(bd.p[2] > -0.01, "{} {:?}", bd.id, bd.p);
    }
}
