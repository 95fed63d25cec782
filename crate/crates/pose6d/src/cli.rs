//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error
//! (including unreadable or invalid input files).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pose6d_core::gridcodec::ConfidenceForm;
use pose6d_core::synth::{generate_frame, ConfidenceMode};
use pose6d_core::{Anchor, GridSpec, GroundTruthFrame, LabelGrid, NoiseModel, ObjectModel};
use rayon::prelude::*;

use crate::bench::{bench_csv, run_bench, MIN_BENCH_FRAMES};
use crate::config::SceneFile;
use crate::formats::{
    grid_file_name, read_frames, read_json, read_jsonl, read_models, write_frames, write_json,
    write_jsonl, write_models, FrameDetections, TensorFile,
};
use crate::report::{curve_csv, curve_svg, evaluate_run, projection_curve, report_json};
use crate::run::{decode_frames, encode_frames, fit_anchors, num_classes, with_thread_pool};

#[derive(Debug, Parser)]
#[command(
    name = "pose6d",
    version,
    about = "Single-shot 6D pose decoding, PnP and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Grid layout and decoding parameters.
#[derive(Debug, Clone, Args)]
pub struct SpecArgs {
    /// Cells per grid side (default 13; decode takes it from the files).
    #[arg(long = "spec-s")]
    pub spec_s: Option<usize>,
    /// Pixels per cell.
    #[arg(long = "spec-stride", default_value_t = 32.0)]
    pub spec_stride: f64,
    /// Confidence sharpness.
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    /// Confidence cutoff distance in pixels.
    #[arg(long, default_value_t = 30.0)]
    pub dth: f64,
    /// Detection threshold on the confidence channel.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset: frames.jsonl and models.json.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Unit scale for PLY models without their own (0.001 for millimetres).
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Encode frames into one SS6D grid file per frame.
    Encode {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
        /// Anchor count for k-means over the frames' boxes, or an explicit
        /// list such as `60x60,120x90`.
        #[arg(long, default_value = "5")]
        anchors: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Simulate a noisy prediction with this pixel sigma instead of
        /// writing the exact target.
        #[arg(long)]
        sigma: Option<f64>,
        /// Fixed confidence for simulated slots instead of the oracle value.
        #[arg(long)]
        conf_fixed: Option<f64>,
        /// Probability of flipping a simulated class.
        #[arg(long, default_value_t = 0.0)]
        flip_prob: f64,
        /// Simulate votes from the neighbouring cells too.
        #[arg(long)]
        neighbours: bool,
        /// Store pre-activation values.
        #[arg(long)]
        network: bool,
    },
    /// Decode grid files, fuse, and solve poses into detections JSONL.
    Decode {
        #[arg(long)]
        grids: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
        /// Confidence-weighted fusion over neighbouring cells.
        #[arg(long)]
        fuse: bool,
    },
    /// Score detections against ground truth.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Accuracy-vs-threshold curve; `.svg` paths get a chart, others CSV.
        #[arg(long)]
        curve: Vec<PathBuf>,
    },
    /// Time decode, fusion and PnP on synthetic frames.
    Bench {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value = "5")]
        anchors: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failed command and its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

fn usage(e: impl ToString) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl ToString) -> Failure {
    Failure::Runtime(e.to_string())
}

enum AnchorChoice {
    Count(usize),
    List(Vec<Anchor>),
}

fn parse_anchors(text: &str) -> Result<AnchorChoice, Failure> {
    if let Ok(k) = text.trim().parse::<usize>() {
        return Ok(AnchorChoice::Count(k));
    }
    text.split(',')
        .map(|pair| {
            let (w, h) = pair
                .split_once('x')
                .ok_or_else(|| usage(format!("anchor '{pair}' is not WxH")))?;
            let w: f64 = w.trim().parse().map_err(usage)?;
            let h: f64 = h.trim().parse().map_err(usage)?;
            Anchor::new(w, h).map_err(usage)
        })
        .collect::<Result<Vec<_>, _>>()
        .map(AnchorChoice::List)
}

fn anchor_count(choice: &AnchorChoice) -> usize {
    match choice {
        AnchorChoice::Count(k) => *k,
        AnchorChoice::List(l) => l.len(),
    }
}

impl SpecArgs {
    fn build(&self, grid_size: usize, anchors: usize, classes: usize) -> Result<GridSpec, Failure> {
        let spec = GridSpec {
            grid_size,
            stride: self.spec_stride,
            num_anchors: anchors,
            num_classes: classes,
            alpha: self.alpha,
            distance_threshold: self.dth,
            conf_threshold: self.threshold,
            confidence_form: ConfidenceForm::Normalized,
        };
        spec.validate().map_err(usage)?;
        Ok(spec)
    }
}

fn load_inputs(
    frames: &Path,
    models: &Path,
) -> Result<(Vec<GroundTruthFrame>, Vec<ObjectModel>), Failure> {
    let models = read_models(models).map_err(usage)?;
    let frames = read_frames(frames, &models).map_err(usage)?;
    Ok((frames, models))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

pub fn cmd_synth(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    scale: f64,
) -> Result<String, Failure> {
    let file = SceneFile::load(config).map_err(usage)?;
    let base = config.parent().unwrap_or(Path::new("."));
    let mut scene = file.to_scene(base, scale).map_err(usage)?;
    if let Some(s) = seed {
        scene.seed = s;
    }
    let frames = (0..scene.n_frames)
        .into_par_iter()
        .map(|i| generate_frame(&scene, i))
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?;
    create_dir(out)?;
    write_frames(&out.join("frames.jsonl"), &frames).map_err(runtime)?;
    write_models(&out.join("models.json"), &scene.models).map_err(runtime)?;
    Ok(format!("{} frames", frames.len()))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_encode(
    frames: &Path,
    models: &Path,
    out: &Path,
    spec: &SpecArgs,
    anchors: &str,
    seed: u64,
    noise: Option<NoiseModel>,
    network: bool,
) -> Result<String, Failure> {
    let choice = parse_anchors(anchors)?;
    let (frames, models) = load_inputs(frames, models)?;
    let spec = spec.build(
        spec.spec_s.unwrap_or(13),
        anchor_count(&choice),
        num_classes(&models),
    )?;
    let anchors = match choice {
        AnchorChoice::List(l) => l,
        AnchorChoice::Count(k) => fit_anchors(&frames, k, seed).map_err(usage)?,
    };
    if let Some(n) = &noise {
        n.validate().map_err(usage)?;
    }
    let grids = encode_frames(&frames, &spec, &anchors, noise.as_ref(), seed).map_err(runtime)?;
    create_dir(out)?;
    grids
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let g = if network { g.to_network() } else { g.clone() };
            TensorFile::from_grid(&g).save(&out.join(grid_file_name(i)))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?;
    let anchor_pairs: Vec<[f64; 2]> = anchors.iter().map(|a| [a.width, a.height]).collect();
    write_json(&out.join("anchors.json"), &anchor_pairs).map_err(runtime)?;
    Ok(format!("{} grids", grids.len()))
}

/// Reads the grid files for `n` frames; all must share one shape.
pub fn load_grids(
    dir: &Path,
    n: usize,
    spec: &SpecArgs,
) -> Result<(Vec<LabelGrid>, GridSpec), Failure> {
    let files = (0..n)
        .map(|i| TensorFile::load(&dir.join(grid_file_name(i))))
        .collect::<Result<Vec<_>, _>>()
        .map_err(usage)?;
    let Some(first) = files.first() else {
        return Ok((Vec::new(), spec.build(spec.spec_s.unwrap_or(13), 1, 1)?));
    };
    let shape = (first.grid_size, first.num_anchors, first.num_classes);
    if files
        .iter()
        .any(|f| (f.grid_size, f.num_anchors, f.num_classes) != shape)
    {
        return Err(usage("grid files differ in shape"));
    }
    if spec.spec_s.is_some_and(|s| s != shape.0 as usize) {
        return Err(usage(format!(
            "--spec-s does not match the files' grid size {}",
            shape.0
        )));
    }
    let grid_spec = spec.build(shape.0 as usize, shape.1 as usize, shape.2 as usize)?;
    let grids = files
        .iter()
        .map(|f| f.to_grid(&grid_spec))
        .collect::<Result<Vec<_>, _>>()
        .map_err(usage)?;
    Ok((grids, grid_spec))
}

pub fn cmd_decode(
    grids: &Path,
    frames: &Path,
    models: &Path,
    out: &Path,
    spec: &SpecArgs,
    fuse: bool,
) -> Result<String, Failure> {
    let (frames, models) = load_inputs(frames, models)?;
    let (grids, grid_spec) = load_grids(grids, frames.len(), spec)?;
    let dets = decode_frames(&grids, &frames, &models, &grid_spec, fuse).map_err(runtime)?;
    write_jsonl(out, &dets).map_err(runtime)?;
    let total: usize = dets.iter().map(|d| d.detections.len()).sum();
    let failed = dets
        .iter()
        .flat_map(|d| &d.detections)
        .filter(|d| d.pose.is_none())
        .count();
    let mut msg = format!("{} frames, {total} detections", dets.len());
    if failed > 0 {
        msg.push_str(&format!("; warning: {failed} detections without a pose"));
    }
    Ok(msg)
}

pub fn cmd_eval(
    detections: &Path,
    frames: &Path,
    models: &Path,
    out: Option<&Path>,
    curves: &[PathBuf],
) -> Result<String, Failure> {
    let (frames, models) = load_inputs(frames, models)?;
    let dets: Vec<FrameDetections> = read_jsonl(detections).map_err(usage)?;
    if dets.len() != frames.len() {
        return Err(usage(format!(
            "{} detection records for {} frames",
            dets.len(),
            frames.len()
        )));
    }
    if let Some((i, d)) = dets.iter().enumerate().find(|(i, d)| d.frame != *i) {
        return Err(usage(format!("record {i} is labelled frame {}", d.frame)));
    }
    let eval = evaluate_run(&frames, &dets, &models);
    let json = report_json(&eval.report);
    let curve = projection_curve(&eval.outcomes);
    for path in curves {
        let text = if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("svg"))
        {
            curve_svg(&curve)
        } else {
            curve_csv(&curve)
        };
        std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    }
    match out {
        Some(path) => {
            std::fs::write(path, &json).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            Ok(format!("report written to {}", path.display()))
        }
        None => Ok(json.trim_end().to_string()),
    }
}

pub fn cmd_bench(
    n: usize,
    spec: &SpecArgs,
    anchors: &str,
    seed: u64,
    out: Option<&Path>,
) -> Result<String, Failure> {
    if n < MIN_BENCH_FRAMES {
        return Err(usage(format!("--n must be at least {MIN_BENCH_FRAMES}")));
    }
    let AnchorChoice::Count(k) = parse_anchors(anchors)? else {
        return Err(usage("bench takes an anchor count"));
    };
    let spec = spec.build(spec.spec_s.unwrap_or(13), k, 3)?;
    let rows = run_bench(n, &spec, seed).map_err(runtime)?;
    let csv = bench_csv(&rows);
    match out {
        Some(path) => {
            std::fs::write(path, &csv).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            Ok(format!("timings written to {}", path.display()))
        }
        None => Ok(csv.trim_end().to_string()),
    }
}

/// Executes a parsed command; the message goes to stdout on success.
pub fn execute(cli: Cli) -> Result<String, Failure> {
    with_thread_pool(move || match cli.command {
        Command::Synth {
            config,
            out,
            seed,
            scale,
        } => cmd_synth(&config, &out, seed, scale),
        Command::Encode {
            frames,
            models,
            out,
            spec,
            anchors,
            seed,
            sigma,
            conf_fixed,
            flip_prob,
            neighbours,
            network,
        } => {
            let simulate = sigma.is_some() || conf_fixed.is_some() || flip_prob > 0.0 || neighbours;
            let noise = simulate.then(|| NoiseModel {
                sigma_px: sigma.unwrap_or(0.0),
                conf_mode: conf_fixed.map_or(ConfidenceMode::Oracle, ConfidenceMode::Fixed),
                class_flip_prob: flip_prob,
                neighbour_votes: neighbours,
            });
            cmd_encode(
                &frames, &models, &out, &spec, &anchors, seed, noise, network,
            )
        }
        Command::Decode {
            grids,
            frames,
            models,
            out,
            spec,
            fuse,
        } => cmd_decode(&grids, &frames, &models, &out, &spec, fuse),
        Command::Eval {
            detections,
            frames,
            models,
            out,
            curve,
        } => cmd_eval(&detections, &frames, &models, out.as_deref(), &curve),
        Command::Bench {
            n,
            spec,
            anchors,
            seed,
            out,
        } => cmd_bench(n, &spec, &anchors, seed, out.as_deref()),
    })
    .map_err(usage)?
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(msg) => {
            if !msg.is_empty() {
                println!("{msg}");
            }
            0
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.exit_code()
        }
    }
}

/// Reads `anchors.json` written by `encode`.
pub fn load_anchors(path: &Path) -> Result<Vec<Anchor>, Failure> {
    let pairs: Vec<[f64; 2]> = read_json(path).map_err(usage)?;
    pairs
        .iter()
        .map(|p| Anchor::new(p[0], p[1]).map_err(usage))
        .collect()
}
