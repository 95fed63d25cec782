//! Whole-dataset stages shared by the command line and in-process callers.
//!
//! Every stage parallelizes over frames and returns results in frame order,
//! so output does not depend on the thread count.

use pose6d_core::gridcodec::{encode_targets, kmeans_anchors, AnchorDistance, GridError};
use pose6d_core::pipeline::estimate_poses;
use pose6d_core::synth::{frame_rng, simulate_prediction, SynthError};
use pose6d_core::{Anchor, GridSpec, GroundTruthFrame, LabelGrid, NoiseModel, ObjectModel};
use rayon::prelude::*;

use crate::formats::{quantize, DetectionRecord, FrameDetections};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "POSE6D_THREADS";

/// Runs `f` on a pool sized by [`THREADS_ENV`] when set, else on rayon's
/// global pool.
pub fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T, String> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize =
                v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
                    format!("{THREADS_ENV} must be a positive integer, got '{v}'")
                })?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| e.to_string())?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}

/// Classes needed to cover every model.
pub fn num_classes(models: &[ObjectModel]) -> usize {
    models.iter().map(|m| m.class_index + 1).max().unwrap_or(1)
}

/// k-means anchors over the projected box sizes of all objects.
pub fn fit_anchors(
    frames: &[GroundTruthFrame],
    k: usize,
    seed: u64,
) -> Result<Vec<Anchor>, GridError> {
    let boxes: Vec<Anchor> = frames
        .iter()
        .flat_map(|f| f.objects.iter().map(|o| o.box_size()))
        .collect();
    kmeans_anchors(&boxes, k, seed, AnchorDistance::OneMinusIou)
}

/// Encoding failure, tagged with the frame it happened in.
#[derive(Debug, thiserror::Error)]
#[error("frame {frame}: {source}")]
pub struct FrameError {
    pub frame: usize,
    pub source: SynthError,
}

/// Target grids, or simulated predictions when `noise` is given (frame `i`
/// draws from stream `i` of `seed`).
pub fn encode_frames(
    frames: &[GroundTruthFrame],
    spec: &GridSpec,
    anchors: &[Anchor],
    noise: Option<&NoiseModel>,
    seed: u64,
) -> Result<Vec<LabelGrid>, FrameError> {
    frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let grid = match noise {
                Some(n) => simulate_prediction(f, spec, anchors, n, &mut frame_rng(seed, i)),
                None => encode_targets(f, spec, anchors)
                    .map(|(g, _)| g)
                    .map_err(SynthError::from),
            };
            grid.map_err(|source| FrameError { frame: i, source })
        })
        .collect()
}

/// Decodes, optionally fuses, and solves every grid.
pub fn decode_frames(
    grids: &[LabelGrid],
    frames: &[GroundTruthFrame],
    models: &[ObjectModel],
    spec: &GridSpec,
    fuse: bool,
) -> Result<Vec<FrameDetections>, GridError> {
    grids
        .par_iter()
        .zip(frames)
        .enumerate()
        .map(|(i, (g, f))| {
            let estimates = estimate_poses(g, spec, models, &f.camera, fuse)?;
            Ok(FrameDetections {
                frame: i,
                detections: estimates
                    .iter()
                    .map(|e| DetectionRecord::from_estimate(e, models))
                    .collect(),
            })
        })
        .collect()
}

/// Grids as they come back from SS6D files.
pub fn quantize_all(grids: &[LabelGrid]) -> Vec<LabelGrid> {
    grids.par_iter().map(quantize).collect()
}
