use std::path::Path;
use std::process::{Command, Output};

use glam::DVec3;
use v2g_core::bake::ShaderMlp;
use v2g_core::export::{export_bundle, Bundle, Sky};
use v2g_core::scene::image::write_rgb8;

fn v2g(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_v2g")).args(args).output().unwrap()
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

fn solid(path: &Path, v: u8) {
    write_rgb8(path, 8, 8, &[v; 8 * 8 * 3]).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn eval_identical_images_is_inf() {
    let d = tempfile::tempdir().unwrap();
    let (r, t) = (d.path().join("r"), d.path().join("t"));
    std::fs::create_dir_all(&r).unwrap();
    std::fs::create_dir_all(&t).unwrap();
    solid(&r.join("a.png"), 100);
    solid(&t.join("a.png"), 100);
    let o = v2g(&["eval", "--renders", s(&r), "--truth", s(&t)]);
    assert!(o.status.success());
    assert_eq!(stdout_json(&o)["psnr"], "inf");
}

#[test]
fn eval_one_level_offset_is_48_13_db() {
    let d = tempfile::tempdir().unwrap();
    let (r, t) = (d.path().join("r"), d.path().join("t"));
    std::fs::create_dir_all(&r).unwrap();
    std::fs::create_dir_all(&t).unwrap();
    for (n, v) in [("a.png", 40), ("b.png", 200)] {
        solid(&r.join(n), v);
        solid(&t.join(n), v + 1);
    }
    let out = d.path().join("m");
    let o = v2g(&["--out", s(&out), "eval", "--renders", s(&r), "--truth", s(&t)]);
    assert!(o.status.success());
    let psnr = stdout_json(&o)["psnr"].as_f64().unwrap();
    assert!((psnr - 48.13).abs() < 0.01, "{psnr}");
    assert!(out.join("metrics.json").is_file());
}

#[test]
fn eval_size_mismatch_is_a_validation_error() {
    let d = tempfile::tempdir().unwrap();
    let (r, t) = (d.path().join("r"), d.path().join("t"));
    std::fs::create_dir_all(&r).unwrap();
    std::fs::create_dir_all(&t).unwrap();
    solid(&r.join("a.png"), 1);
    write_rgb8(&t.join("a.png"), 4, 4, &[0; 48]).unwrap();
    assert_eq!(v2g(&["eval", "--renders", s(&r), "--truth", s(&t)]).status.code(), Some(2));
}

#[test]
fn missing_seed_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let o = v2g(&["--out", s(d.path()), "synth"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
}

#[test]
fn unknown_config_field_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let c = d.path().join("c.json");
    std::fs::write(&c, r#"{"seed": 1, "trian": {}}"#).unwrap();
    let o = v2g(&["--config", s(&c), "--out", s(d.path()), "synth"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("trian"));
}

#[test]
fn synth_rerun_is_a_no_op_and_seed_change_reruns() {
    let d = tempfile::tempdir().unwrap();
    let out = s(d.path());
    assert!(v2g(&["--seed", "3", "--out", out, "synth"]).status.success());
    let stamp = std::fs::read(d.path().join("scene/stage.json")).unwrap();
    let o = v2g(&["--seed", "3", "--out", out, "synth"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains(r#""up_to_date":true"#));
    assert_eq!(std::fs::read(d.path().join("scene/stage.json")).unwrap(), stamp);
    let o = v2g(&["--seed", "4", "--out", out, "synth"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains(r#""up_to_date":false"#));
    assert_ne!(std::fs::read(d.path().join("scene/stage.json")).unwrap(), stamp);
}

#[test]
fn stage_refuses_foreign_directory() {
    let d = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(d.path().join("scene")).unwrap();
    std::fs::write(d.path().join("scene/keep.txt"), "x").unwrap();
    let o = v2g(&["--seed", "1", "--out", s(d.path()), "synth"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(d.path().join("scene/keep.txt").is_file());
}

#[test]
fn train_without_scene_exits_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(v2g(&["--seed", "1", "--out", s(d.path()), "train"]).status.code(), Some(2));
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let d = tempfile::tempdir().unwrap();
    let b = Bundle::from_entities(&[], &ShaderMlp::new(1), DVec3::new(0.0, 0.0, -9.81), Sky { color: Some([0.5; 3]), dome_glb: None }).unwrap();
    let bundle = d.path().join("bundle");
    export_bundle(&b, &bundle).unwrap();
    let script = d.path().join("script.json");
    std::fs::write(
        &script,
        r#"{"dt": 0.0166, "steps": 30, "actions": [], "spawns": [{"step": 2, "body": {"id": 9, "label": "ball",
            "collider": {"type": "sphere", "center": [0,0,0], "radius": 0.1}, "mass": 1.0, "friction": 0.5, "restitution": 0.5,
            "position": [0,0,1], "orientation": [0,0,0,1], "linear_velocity": [1,0,0], "angular_velocity": [0,0,0]}}]}"#,
    )
    .unwrap();
    let run = |tag: &str| {
        let out = d.path().join(tag);
        let o = v2g(&["--out", s(&out), "simulate", "--bundle", s(&bundle), "--script", s(&script)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out.join("sim/replay.jsonl")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    assert_eq!(a.iter().filter(|c| **c == b'\n').count(), 31);
}
