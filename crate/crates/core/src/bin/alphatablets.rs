use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use alphatablets::io::export::{export_planes_with_renders, render_camera, RUN_JSON};
use alphatablets::io::formats::{read_color, write_color};
use alphatablets::io::{export_reconstruction, load_config, load_ground_truth, load_planes, load_run, load_scene, write_synth};
use alphatablets::metrics::evaluate;
use alphatablets::pipeline::{edit_plane_texture, reconstruct, PipelineConfig, TextureEdit};
use alphatablets::synth::{box_room, quad_scene};
use alphatablets::{Error, Result};

#[derive(Parser)]
#[command(name = "alphatablets", version, about = "Planar scene reconstruction with textured alpha tablets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Open-top five-plane room.
    Box,
    /// One fronto-parallel quad.
    Quad,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstructs planes from a scene directory.
    Reconstruct {
        scene_dir: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Renders a reconstruction from one of its cameras.
    Render {
        out_dir: PathBuf,
        #[arg(long)]
        view: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Changes one plane's texture and re-exports the reconstruction.
    Edit {
        out_dir: PathBuf,
        #[arg(long)]
        plane: usize,
        /// Image stretched over the plane.
        #[arg(long, group = "edit")]
        texture: Option<PathBuf>,
        /// Per-channel multiplier `r,g,b`.
        #[arg(long, group = "edit", value_parser = parse_rgb)]
        tint: Option<[f64; 3]>,
        /// Solid color `r,g,b` in [0, 1].
        #[arg(long, group = "edit", value_parser = parse_rgb)]
        color: Option<[f64; 3]>,
    },
    /// Scores a reconstruction against ground truth; prints metrics JSON.
    Eval {
        out_dir: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Distance threshold; defaults to 0.05 times the ground-truth scale.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Writes a synthetic scene with ground truth.
    Synth {
        preset: Preset,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 20)]
        views: usize,
        #[arg(long, default_value_t = 320)]
        width: usize,
        #[arg(long, default_value_t = 240)]
        height: usize,
    },
}

fn parse_rgb(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad number {t:?}")))
        .collect::<std::result::Result<_, _>>()?;
    match v.as_slice() {
        [r, g, b] if v.iter().all(|c| c.is_finite() && *c >= 0.0) => Ok([*r, *g, *b]),
        _ => Err("expected three non-negative numbers r,g,b".into()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Reconstruct {
            scene_dir,
            output,
            config,
            seed,
        } => {
            let mut cfg = match config {
                Some(p) => load_config(&p)?,
                None => PipelineConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (views, _) = load_scene(&scene_dir)?;
            info!("loaded {} views from {}", views.len(), scene_dir.display());
            let rec = reconstruct(&views, &cfg)?;
            export_reconstruction(&output, &rec, &cfg)?;
            println!("{} planes written to {}", rec.planes.len(), output.display());
        }
        Command::Render { out_dir, view, output } => {
            let run = load_run(&out_dir)?;
            let planes = load_planes(&out_dir)?;
            write_color(&output, &render_camera(&planes, &run, view)?)?;
        }
        Command::Edit {
            out_dir,
            plane,
            texture,
            tint,
            color,
        } => {
            let edit = match (texture, tint, color) {
                (Some(p), _, _) => TextureEdit::Image(read_color(&p)?),
                (_, Some(t), _) => TextureEdit::Scale(t),
                (_, _, Some(c)) => TextureEdit::Solid(c),
                _ => return Err(Error::Config("edit needs one of --texture, --tint or --color".into())),
            };
            let mut planes = load_planes(&out_dir)?;
            edit_plane_texture(&mut planes, plane, &edit)?;
            let run = load_run(&out_dir)?;
            export_planes_with_renders(&out_dir, &planes, &run)?;
        }
        Command::Eval {
            out_dir,
            gt,
            tau,
            output,
        } => {
            let truth = load_ground_truth(&gt)?;
            let planes = load_planes(&out_dir)?;
            let tau = tau.unwrap_or(0.05 * truth.scale);
            let report = evaluate(&planes, &truth.points, tau)?;
            let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Json {
                path: out_dir.join(RUN_JSON),
                source: e,
            })?;
            if let Some(p) = output {
                std::fs::write(&p, &json).map_err(|e| Error::Io { path: p, source: e })?;
            }
            println!("{json}");
        }
        Command::Synth {
            preset,
            output,
            views,
            width,
            height,
        } => {
            if views == 0 || width < 8 || height < 8 {
                return Err(Error::Config("synth needs at least one view and an 8x8 image".into()));
            }
            let scene = match preset {
                Preset::Box => box_room(views, width, height),
                Preset::Quad => quad_scene(views, width, height),
            };
            write_synth(&output, &scene)?;
            println!("{} views written to {}", views, output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
