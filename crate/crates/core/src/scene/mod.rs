//! Posed images, monocular cue maps, and the analytic synthetic scene.

pub mod camera;
pub mod dataset;
pub mod image;
pub mod synth;

pub use camera::{camera_ray, CameraModel, Intrinsics, Ray};
pub use dataset::{load_scene, write_scene, FrameData, FrameRecord, SceneDataset, Split};
pub use synth::{synth_scene, SynthConfig, SynthField, SynthScene};
