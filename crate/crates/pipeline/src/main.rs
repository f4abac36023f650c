use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use splatgen::config::{validate_config, GenerationConfig};
use splatgen::fixture::{write_fixture, FixtureOptions};
use splatgen::generate::{build_decomposition, estimate_alignment, generate, load_base, resolve_alignment, scene_at};
use splatgen::{PipelineError, Result};
use splatgen_core::raster::render;

#[derive(Parser)]
#[command(version, about = "Generate robot manipulation datasets from one demonstration and a Gaussian splat scene")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate episodes and a manifest.
    Gen {
        config: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "output")]
        out: PathBuf,
    },
    /// Estimate the scene-to-robot alignment and print its report as JSON.
    Align {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split the aligned scene into links, objects and background.
    Decompose {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a config and list every problem found.
    Validate { config: PathBuf },
    /// Render one camera at one demonstration step.
    RenderPreview {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        camera: usize,
        #[arg(long, default_value_t = 0)]
        step: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic scene, demonstration and config to a folder.
    Fixture {
        dir: PathBuf,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        #[arg(long, default_value_t = 64)]
        demo_size: usize,
        #[arg(long, default_value_t = 4)]
        episodes: usize,
    },
}

fn checked(mut config: GenerationConfig, f: impl FnOnce(&mut GenerationConfig)) -> Result<GenerationConfig> {
    f(&mut config);
    let issues = config.check();
    if issues.is_empty() {
        Ok(config)
    } else {
        Err(PipelineError::Validation(issues))
    }
}

fn write_json(value: &impl serde::Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| PipelineError::io(p, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            config,
            episodes,
            workers,
            seed,
            out,
        } => {
            let config = checked(validate_config(&config)?, |c| {
                if let Some(n) = episodes {
                    c.generation.episodes = n;
                }
                if let Some(w) = workers {
                    c.generation.workers = w;
                }
                if let Some(s) = seed {
                    c.generation.seed = s;
                }
            })?;
            let manifest = generate(&config, &out)?;
            let frames: usize = manifest.episodes.iter().map(|e| e.frame_count).sum();
            println!("{} episodes, {frames} frames written to {}", manifest.episodes.len(), out.display());
        }
        Command::Align { config, out } => {
            let config = validate_config(&config)?;
            let base = load_base(&config)?;
            write_json(&estimate_alignment(&config, &base)?, out.as_deref())?;
        }
        Command::Decompose { config, out } => {
            let config = validate_config(&config)?;
            let base = load_base(&config)?;
            let t = resolve_alignment(&config, &base)?;
            let d = build_decomposition(&config, &base, &t)?;
            d.save_dir(&out)?;
            println!("{}", serde_json::to_string_pretty(&d.manifest()).expect("serializable"));
        }
        Command::Validate { config } => {
            validate_config(&config)?;
            println!("{}: ok", config.display());
        }
        Command::RenderPreview { config, camera, step, out } => {
            let config = validate_config(&config)?;
            let prepared = splatgen::prepare(&config)?;
            let cam = prepared.cameras.get(camera).ok_or_else(|| {
                PipelineError::Validation(vec![splatgen::Issue::new("--camera", format!("only {} cameras", prepared.cameras.len()))])
            })?;
            let q = &prepared
                .base
                .demo
                .steps()
                .get(step)
                .ok_or_else(|| {
                    PipelineError::Validation(vec![splatgen::Issue::new("--step", format!("only {} steps", prepared.base.demo.len()))])
                })?
                .q;
            let scene = scene_at(&prepared.decomposition, &prepared.base.chain, q)?;
            render(&scene, cam, config.generation.background).pixels.save_png(&out)?;
            info!("wrote {}", out.display());
        }
        Command::Fixture {
            dir,
            image_size,
            demo_size,
            episodes,
        } => {
            let opts = FixtureOptions {
                image_size,
                demo_size,
                episodes,
                ..FixtureOptions::default()
            };
            let path = write_fixture(&dir, &opts)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.issues().is_empty() {
                eprintln!("error: {e}");
            } else {
                eprintln!("invalid configuration:");
                for i in e.issues() {
                    eprintln!("  {}: {}", i.path, i.message);
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
