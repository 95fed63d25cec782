//! Wall-clock timing of the decode, fusion and PnP stages.

use std::time::Instant;

use pose6d_core::gridcodec::{decode, fuse_detections};
use pose6d_core::pipeline::solve_detection;
use pose6d_core::synth::{frame_rng, generate_dataset, simulate_prediction, SynthError};
use pose6d_core::{CameraIntrinsics, GridSpec, NoiseModel, SceneConfig};

use crate::run::fit_anchors;

/// Fewest frames for meaningful percentiles.
pub const MIN_BENCH_FRAMES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct StageTiming {
    pub stage: &'static str,
    pub unit: &'static str,
    pub samples: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn summarize(stage: &'static str, unit: &'static str, mut ms: Vec<f64>) -> StageTiming {
    ms.sort_by(f64::total_cmp);
    StageTiming {
        stage,
        unit,
        samples: ms.len(),
        median_ms: percentile(&ms, 0.5),
        p95_ms: percentile(&ms, 0.95),
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Times the stages over `n` demo frames laid out for `spec`, with σ = 2 px
/// simulated predictions including neighbour votes. Runs single-threaded.
pub fn run_bench(n: usize, spec: &GridSpec, seed: u64) -> Result<Vec<StageTiming>, SynthError> {
    if n < MIN_BENCH_FRAMES {
        return Err(SynthError::InvalidConfig("bench needs at least 10 frames"));
    }
    let side = spec.input_size();
    let mut cfg = SceneConfig::demo(seed, n);
    cfg.camera = CameraIntrinsics::new(
        500.0,
        500.0,
        side / 2.0,
        side / 2.0,
        side as u32,
        side as u32,
    )?;
    cfg.cell_size = spec.stride;
    cfg.min_separation_px = 2.0 * spec.stride;
    cfg.models.truncate(spec.num_classes);
    let frames = generate_dataset(&cfg)?;
    let anchors = fit_anchors(&frames, spec.num_anchors, seed)?;
    let noise = NoiseModel {
        neighbour_votes: true,
        ..NoiseModel::gaussian(2.0)
    };
    let (mut t_decode, mut t_fuse, mut t_pnp) = (Vec::new(), Vec::new(), Vec::new());
    for (i, f) in frames.iter().enumerate() {
        let grid = simulate_prediction(f, spec, &anchors, &noise, &mut frame_rng(seed, i))?;
        let start = Instant::now();
        let dets = decode(&grid, spec)?;
        t_decode.push(elapsed_ms(start));
        let start = Instant::now();
        let fused = fuse_detections(&dets, spec);
        t_fuse.push(elapsed_ms(start));
        for d in fused {
            let start = Instant::now();
            let e = solve_detection(d, &cfg.models, &f.camera);
            t_pnp.push(elapsed_ms(start));
            std::hint::black_box(e);
        }
    }
    Ok(vec![
        summarize("decode", "ms/frame", t_decode),
        summarize("fusion", "ms/frame", t_fuse),
        summarize("pnp", "ms/object", t_pnp),
    ])
}

pub fn bench_csv(rows: &[StageTiming]) -> String {
    let mut out = String::from("stage,unit,samples,median_ms,p95_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            r.stage, r.unit, r.samples, r.median_ms, r.p95_ms
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_is_nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.5), 10.0);
        assert_eq!(percentile(&v, 0.95), 19.0);
        assert_eq!(percentile(&[3.0], 0.95), 3.0);
    }

    #[test]
    fn bench_reports_three_positive_stages() {
        let spec = GridSpec::paper_default(3).unwrap();
        let rows = run_bench(10, &spec, 1).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows
            .iter()
            .all(|r| r.median_ms > 0.0 && r.p95_ms >= r.median_ms));
        assert_eq!(bench_csv(&rows).lines().count(), 4);
        assert!(run_bench(9, &spec, 1).is_err());
    }
}
