//! Scripted headless runs and their line-delimited JSON replays.

use serde::{Deserialize, Serialize};

use super::world::{Action, BodySpec, PhysicsWorld, ReplayFrame};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptAction {
    /// Applied at the start of this step (0-based).
    pub step: usize,
    pub body: u32,
    pub impulse: [f64; 3],
    #[serde(default)]
    pub point: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spawn {
    pub step: usize,
    pub body: BodySpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Script {
    pub dt: f64,
    pub steps: usize,
    pub actions: Vec<ScriptAction>,
    pub spawns: Vec<Spawn>,
}

impl Default for Script {
    fn default() -> Self {
        Self { dt: 1.0 / 60.0, steps: 120, actions: Vec::new(), spawns: Vec::new() }
    }
}

/// Runs the script; the first frame is the initial state.
pub fn run_script(world: &mut PhysicsWorld, script: &Script) -> Result<Vec<ReplayFrame>> {
    if let Some(a) = script.actions.iter().find(|a| a.step >= script.steps) {
        return Err(Error::Validation(format!("script: action at step {} beyond {} steps", a.step, script.steps)));
    }
    let mut frames = vec![world.snapshot()];
    for k in 0..script.steps {
        for s in script.spawns.iter().filter(|s| s.step == k) {
            world.add_body(&s.body)?;
        }
        let actions: Vec<Action> = script.actions.iter().filter(|a| a.step == k).map(|a| Action { body: a.body, impulse: a.impulse, point: a.point }).collect();
        world.step(script.dt, &actions)?;
        frames.push(world.snapshot());
    }
    Ok(frames)
}

pub fn replay_bytes(frames: &[ReplayFrame]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for f in frames {
        serde_json::to_writer(&mut out, f)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn parse_replay(bytes: &[u8]) -> Result<Vec<ReplayFrame>> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::format("<replay>", "not UTF-8"))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}
