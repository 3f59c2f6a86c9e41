use glam::DVec3;
use v2g_core::scene::dataset::{FrameEntry, SceneManifest};
use v2g_core::scene::image;
use v2g_core::scene::{camera_ray, load_scene, synth_scene, write_scene, CameraModel, Intrinsics, SynthConfig, SynthScene};
use v2g_core::Error;

fn small() -> SynthConfig {
    SynthConfig { width: 24, height: 20, n_train: 3, n_test: 1, ..SynthConfig::default() }
}

#[test]
fn sphere_center_depth_is_distance_minus_radius() {
    let scene = SynthScene::new(SynthConfig::single_sphere(0.5)).unwrap();
    let intr = Intrinsics { fx: 80.0, fy: 80.0, cx: 32.5, cy: 32.5, w: 65, h: 65 };
    let eye = DVec3::new(1.3, -2.1, 0.7);
    let cam = CameraModel::look_at(intr, eye, DVec3::ZERO, DVec3::Z).unwrap();
    let f = scene.render(&cam);
    let d = f.depth[32 * 65 + 32];
    assert!((d - (eye.length() - 0.5)).abs() < 1e-12, "{d}");
    assert_eq!(f.class[32 * 65 + 32], 1);
    assert_eq!(f.class[0], 0);
}

#[test]
fn ground_normal_and_labels() {
    let scene = SynthScene::new(SynthConfig::default()).unwrap();
    let intr = Intrinsics::from_fov(64, 64, 60.0);
    let cam = CameraModel::look_at(intr, DVec3::new(2.0, 0.3, 1.2), DVec3::new(0.0, 0.0, 0.3), DVec3::Z).unwrap();
    let f = scene.render(&cam);
    let mut seen = [false; 4];
    for (k, c) in f.class.iter().enumerate() {
        seen[*c as usize] = true;
        if *c == 2 {
            assert_eq!(f.normal[k], DVec3::Z);
        }
        if *c == 0 {
            assert!(f.depth[k].is_infinite());
        }
    }
    assert_eq!(seen, [true; 4]);
}

#[test]
fn stored_depth_cue_matches_rerendering() {
    let cfg = small();
    let ds = synth_scene(&cfg, 3).unwrap();
    let scene = ds.synthetic.as_ref().unwrap();
    let [a, b] = cfg.depth_cue_affine;
    for fr in &ds.frames {
        let data = fr.data().unwrap();
        let depth = data.depth.as_ref().unwrap();
        let i = fr.camera.intrinsics;
        for v in 0..i.h {
            for u in 0..i.w {
                let ray = camera_ray(&fr.camera, u as f64, v as f64, [0.0, 0.0]);
                let want = match scene.trace(&ray) {
                    Some(h) => ((a * h.t + b) / cfg.depth_cue_scale).round() * cfg.depth_cue_scale,
                    None => 0.0,
                };
                assert_eq!(depth[(v * i.w + u) as usize], want);
            }
        }
    }
}

#[test]
fn manifest_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_scene(&small(), 5).unwrap();
    let path = write_scene(&ds, dir.path(), ds.synthetic.as_ref().unwrap().config.depth_cue_scale).unwrap();
    let loaded = load_scene(&path).unwrap();
    assert_eq!(loaded.frames.len(), ds.frames.len());
    assert!(!loaded.frames[0].is_loaded());
    for (a, b) in ds.frames.iter().zip(&loaded.frames) {
        assert_eq!(a.camera, b.camera);
        assert_eq!(a.split, b.split);
        assert_eq!(*a.data().unwrap(), *b.data().unwrap());
    }
    assert_eq!(loaded.classes, ds.classes);
    assert_eq!(loaded.instances, ds.instances);
    assert_eq!(loaded.bounds, ds.bounds);
    assert_eq!(loaded.test_indices(), ds.test_indices());

    let again = load_scene(&path).unwrap();
    for (a, b) in again.frames.iter().zip(&loaded.frames) {
        assert_eq!(a.camera, b.camera);
        assert_eq!(*a.data().unwrap(), *b.data().unwrap());
    }
}

fn manifest_with(dir: &std::path::Path, frames: Vec<FrameEntry>) -> std::path::PathBuf {
    let m = SceneManifest {
        version: 1,
        frames,
        classes: vec![v2g_core::scene::dataset::ClassEntry { id: 0, name: "sky".into() }],
        instances: None,
        bounds: None,
        sky_class: None,
    };
    let p = dir.join("scene.json");
    std::fs::write(&p, serde_json::to_string(&m).unwrap()).unwrap();
    p
}

fn entry(image: &str, cam: &CameraModel) -> FrameEntry {
    FrameEntry {
        image: image.into(),
        depth: None,
        normal: None,
        semantic: None,
        intrinsics: cam.intrinsics,
        pose: cam.pose_row_major(),
        split: Default::default(),
    }
}

#[test]
fn frames_without_cues_and_bad_cues() {
    let dir = tempfile::tempdir().unwrap();
    let intr = Intrinsics::from_fov(8, 6, 60.0);
    let cam = CameraModel::look_at(intr, DVec3::new(2.0, 0.0, 1.0), DVec3::ZERO, DVec3::Z).unwrap();
    for n in ["a.png", "b.png"] {
        image::write_rgb8(&dir.path().join(n), 8, 6, &[128; 8 * 6 * 3]).unwrap();
    }
    let p = manifest_with(dir.path(), vec![entry("a.png", &cam), entry("b.png", &cam)]);
    let ds = load_scene(&p).unwrap();
    assert_eq!(ds.frames.len(), 2);
    for f in &ds.frames {
        assert!(!f.has_depth() && !f.has_normal() && !f.has_semantic());
        let d = f.data().unwrap();
        assert!(d.depth.is_none() && d.normal.is_none() && d.semantic.is_none());
    }

    // Depth map of the wrong size names the frame.
    image::write_gray16(&dir.path().join("d.png"), 4, 6, &[1; 24], &[]).unwrap();
    let mut e = entry("b.png", &cam);
    e.depth = Some("d.png".into());
    let p = manifest_with(dir.path(), vec![entry("a.png", &cam), e]);
    match load_scene(&p) {
        Err(Error::Validation(msg)) => assert!(msg.contains("b.png") && msg.contains("depth"), "{msg}"),
        other => panic!("expected validation error, got {other:?}"),
    }

    // Missing cue file: frame loads without it.
    let mut e = entry("b.png", &cam);
    e.normal = Some("nope.png".into());
    let p = manifest_with(dir.path(), vec![e]);
    let ds = load_scene(&p).unwrap();
    assert!(!ds.frames[0].has_normal());

    // Missing image: hard error.
    let p = manifest_with(dir.path(), vec![entry("missing.png", &cam)]);
    assert!(matches!(load_scene(&p), Err(Error::Io { .. })));
}
