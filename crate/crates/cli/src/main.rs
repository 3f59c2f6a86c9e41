//! `v2g`: drives the capture-to-game pipeline stage by stage.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use v2g_core::acceptance;
use v2g_core::bake::io::{read_json, write_json};
use v2g_core::pipeline::{self, Layout, Outcome, PipelineConfig, METRICS_FILE, SCENE_FILE, TRUTH_DIR};
use v2g_core::physics::Script;
use v2g_core::Error;

#[derive(Parser)]
#[command(name = "v2g", version, about = "Radiance field to interactive game scene")]
struct Cli {
    /// Pipeline configuration (JSON). Missing sections take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root of the stage directories.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic oracle scene into <out>/scene.
    Synth,
    /// Train a radiance field into <out>/field.
    Train {
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Bake mesh, neural texture and shader into <out>/bake.
    Bake {
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Split the scene into entities with colliders into <out>/entities.
    Decompose {
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        bake: Option<PathBuf>,
    },
    /// Write the GLB + manifest bundle into <out>/bundle.
    Export {
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        bake: Option<PathBuf>,
        #[arg(long)]
        entities: Option<PathBuf>,
    },
    /// All stages from synth to export.
    Run,
    /// Render a field directory or a bundle along a camera path.
    Render {
        /// Field directory, bundle directory or game.json.
        #[arg(long)]
        source: PathBuf,
        /// Scene manifest (its held-out views) or a JSON camera list.
        #[arg(long)]
        cameras: Option<PathBuf>,
        /// Output directory for PNG frames; defaults to <out>/renders.
        #[arg(long)]
        frames: Option<PathBuf>,
    },
    /// Headless physics replay of a bundle.
    Simulate {
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Script JSON; overrides the config's script.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Compare renders against ground truth and print metrics JSON.
    Eval {
        #[arg(long)]
        renders: PathBuf,
        /// Ground-truth frames; defaults to <out>/scene/truth.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run every primary acceptance criterion.
    Accept,
}

fn outcome(stage: &str, o: Outcome) {
    tracing::info!(stage, up_to_date = o == Outcome::UpToDate, "finished");
}

fn or<'a>(given: &'a Option<PathBuf>, default: &'a Path) -> &'a Path {
    given.as_deref().unwrap_or(default)
}

fn run(cli: Cli) -> Result<bool, Error> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    let root = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let l = Layout::new(&root);
    match &cli.command {
        Command::Synth => outcome("synth", pipeline::cmd_synth(&cfg.synth, cfg.seed()?, &l.scene)?),
        Command::Train { scene } => outcome("train", pipeline::cmd_train(&cfg.train, cfg.seed()?, or(scene, &l.scene), &l.field)?),
        Command::Bake { scene, field } => outcome("bake", pipeline::cmd_bake(&cfg.bake, cfg.seed()?, or(scene, &l.scene), or(field, &l.field), &l.bake)?),
        Command::Decompose { scene, field, bake } => {
            outcome("decompose", pipeline::cmd_decompose(&cfg.decompose, or(scene, &l.scene), or(field, &l.field), or(bake, &l.bake), &l.entities)?)
        }
        Command::Export { field, bake, entities } => {
            outcome("export", pipeline::cmd_export(&cfg.export, or(field, &l.field), or(bake, &l.bake), or(entities, &l.entities), &l.bundle)?)
        }
        Command::Run => {
            cfg.out = Some(root.clone());
            pipeline::run_all(&cfg)?;
        }
        Command::Render { source, cameras, frames } => {
            let cams = pipeline::load_cameras(&cameras.clone().unwrap_or_else(|| l.scene.join(SCENE_FILE)))?;
            let dir = frames.clone().unwrap_or_else(|| root.join("renders"));
            let written = pipeline::cmd_render(source, &cams, &cfg.render, &dir)?;
            tracing::info!(frames = written.len(), dir = %dir.display(), "render");
        }
        Command::Simulate { bundle, script, steps } => {
            let mut sim = cfg.simulate.clone();
            if let Some(p) = script {
                sim.script = read_json::<Script>(p).map_err(|e| Error::Validation(e.to_string()))?;
            }
            if let Some(n) = steps {
                sim.script.steps = *n;
            }
            let p = pipeline::cmd_simulate(or(bundle, &l.bundle), &sim, &root.join("sim"))?;
            tracing::info!(replay = %p.display(), steps = sim.script.steps, "simulate");
        }
        Command::Eval { renders, truth } => {
            let truth = truth.clone().unwrap_or_else(|| l.scene.join(TRUTH_DIR));
            let report = pipeline::cmd_eval(renders, &truth, &cfg.eval)?;
            println!("{}", serde_json::to_string(&report)?);
            if cli.out.is_some() {
                std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
                write_json(&root.join(METRICS_FILE), &report)?;
            }
        }
        Command::Accept => {
            let mut ac = cfg.accept.clone();
            if let Some(s) = cli.seed {
                ac.seed = s;
            }
            let verdicts = acceptance::run(&ac);
            for v in &verdicts {
                println!("{v}");
            }
            if cli.out.is_some() {
                std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
                write_json(&root.join("acceptance.json"), &verdicts)?;
            }
            return Ok(verdicts.iter().all(|v| v.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt().json().with_writer(std::io::stderr).with_max_level(tracing::Level::INFO).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let code = if matches!(e, Error::Numerical(_)) { 3 } else { 2 };
            tracing::error!(error = %e, exit_code = code, "failed");
            ExitCode::from(code)
        }
    }
}
