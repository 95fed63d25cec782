//! Deterministic synthetic scenes and simulated network outputs.
//!
//! Every frame draws from its own ChaCha8 stream (`seed`, stream = frame
//! index), so frames can be generated in any order or in parallel.

use alloc::string::String;
use alloc::vec::Vec;

// Unused when feature unification links std and inherent float methods win.
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::geometry::{project_control_points, CameraIntrinsics, GeometryError, ObjectModel, Pose};
use crate::gridcodec::{
    encode_targets, point_confidence_mean, Anchor, GridError, GridSpec, GroundTruthFrame,
    LabelGrid, CLASS_CHANNEL, CONFIDENCE_CHANNEL,
};
use crate::{Mat3, Vec2, Vec3, CENTROID_INDEX, NUM_CONTROL_POINTS};

/// Rejection-sampling budget per pose and per object placement.
pub const MAX_TRIES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(&'static str),
    #[error("invalid noise model: {0}")]
    InvalidNoise(&'static str),
    #[error("no valid pose after {MAX_TRIES} tries; check depth range and camera")]
    FrustumExhausted,
    #[error("could not place object {object} of frame {frame} after {MAX_TRIES} tries")]
    PlacementExhausted { frame: usize, object: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Scene generation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub seed: u64,
    pub n_frames: usize,
    pub models: Vec<ObjectModel>,
    pub camera: CameraIntrinsics,
    /// Centroid depth range in metres, `0 < near ≤ far`.
    pub depth_range: (f64, f64),
    pub max_objects: usize,
    /// Minimum distance between projected centroids in a frame, in pixels.
    pub min_separation_px: f64,
    /// Side of the square cells objects must not share, in pixels. Match the
    /// grid stride used for encoding.
    pub cell_size: f64,
}

impl SceneConfig {
    /// Three cuboid classes in a 416×416 view, 13×13 cells of 32 px.
    pub fn demo(seed: u64, n_frames: usize) -> Self {
        let size = [
            Vec3::new(0.10, 0.08, 0.06),
            Vec3::new(0.06, 0.06, 0.14),
            Vec3::new(0.12, 0.05, 0.05),
        ];
        let models = size
            .iter()
            .enumerate()
            .map(|(i, s)| {
                ObjectModel::cuboid(alloc::format!("obj{i}"), i, *s, Vec3::zeros(), i == 1)
                    .expect("demo cuboid is valid")
            })
            .collect();
        Self {
            seed,
            n_frames,
            models,
            camera: CameraIntrinsics::new(500.0, 500.0, 208.0, 208.0, 416, 416)
                .expect("demo camera is valid"),
            depth_range: (0.6, 1.4),
            max_objects: 3,
            min_separation_px: 64.0,
            cell_size: 32.0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let (near, far) = self.depth_range;
        if !(near.is_finite() && far.is_finite() && near > 0.0 && near <= far) {
            return Err(SynthError::InvalidConfig(
                "depth range must be positive and ordered",
            ));
        }
        if self.max_objects == 0 {
            return Err(SynthError::InvalidConfig("max objects must be at least 1"));
        }
        if self.models.is_empty() {
            return Err(SynthError::InvalidConfig("at least one model is required"));
        }
        if !(self.min_separation_px.is_finite() && self.min_separation_px >= 0.0) {
            return Err(SynthError::InvalidConfig("separation must be non-negative"));
        }
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(SynthError::InvalidConfig("cell size must be positive"));
        }
        self.camera.validate()?;
        for m in &self.models {
            m.validate()?;
        }
        Ok(())
    }
}

/// How the simulated confidence channel is filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConfidenceMode {
    /// Mean point confidence of the perturbed against the true points.
    Oracle,
    /// A fixed value for every written slot.
    Fixed(f64),
}

/// Perturbation applied by [`simulate_prediction`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Gaussian pixel noise on each control-point coordinate.
    pub sigma_px: f64,
    pub conf_mode: ConfidenceMode,
    pub class_flip_prob: f64,
    /// Also write independent noisy copies into the 8 neighbouring cells, as
    /// a trained network does around the responsible cell.
    pub neighbour_votes: bool,
}

impl NoiseModel {
    pub fn gaussian(sigma_px: f64) -> Self {
        Self {
            sigma_px,
            conf_mode: ConfidenceMode::Oracle,
            class_flip_prob: 0.0,
            neighbour_votes: false,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.sigma_px.is_finite() && self.sigma_px >= 0.0) {
            return Err(SynthError::InvalidNoise("sigma must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.class_flip_prob) {
            return Err(SynthError::InvalidNoise(
                "class flip probability must be in [0, 1]",
            ));
        }
        if let ConfidenceMode::Fixed(c) = self.conf_mode {
            if !c.is_finite() {
                return Err(SynthError::InvalidNoise("fixed confidence must be finite"));
            }
        }
        Ok(())
    }
}

/// Uniform rotation from a normalized 4-D Gaussian quaternion.
pub fn sample_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    loop {
        let q: [f64; 4] = core::array::from_fn(|_| rng.sample(StandardNormal));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < 1e-12 {
            continue;
        }
        let [w, x, y, z] = q.map(|v| v / n);
        return Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        );
    }
}

/// Random pose whose centroid depth lies in `depth_range` and whose nine
/// control points all project inside the image.
pub fn sample_pose<R: Rng + ?Sized>(
    rng: &mut R,
    model: &ObjectModel,
    camera: &CameraIntrinsics,
    depth_range: (f64, f64),
) -> Result<Pose, SynthError> {
    let (near, far) = depth_range;
    if !(near > 0.0 && near <= far) {
        return Err(SynthError::InvalidConfig(
            "depth range must be positive and ordered",
        ));
    }
    let centroid = model.control_points[CENTROID_INDEX];
    for _ in 0..MAX_TRIES {
        let r = sample_rotation(rng);
        let pixel = Vec2::new(
            rng.random_range(0.0..camera.width as f64),
            rng.random_range(0.0..camera.height as f64),
        );
        let depth = if near == far {
            near
        } else {
            rng.random_range(near..far)
        };
        let t = camera.backproject(&pixel, depth) - r * centroid;
        let Ok(pose) = Pose::new(r, t) else {
            continue;
        };
        if let Ok(points) = project_control_points(&model.control_points, &pose, camera) {
            if points.iter().all(|p| camera.contains(p)) {
                return Ok(pose);
            }
        }
    }
    Err(SynthError::FrustumExhausted)
}

/// RNG for frame `index` of a dataset seeded with `seed`.
pub fn frame_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Generates frame `index`: 1..=max objects in distinct cells, centroids at
/// least `min_separation_px` apart.
pub fn generate_frame(cfg: &SceneConfig, index: usize) -> Result<GroundTruthFrame, SynthError> {
    cfg.validate()?;
    let mut rng = frame_rng(cfg.seed, index);
    let n = rng.random_range(1..=cfg.max_objects);
    let mut placed: Vec<(String, usize, Pose)> = Vec::with_capacity(n);
    let mut centroids: Vec<Vec2> = Vec::with_capacity(n);
    let cell = |p: &Vec2| {
        (
            (p.x / cfg.cell_size).floor() as i64,
            (p.y / cfg.cell_size).floor() as i64,
        )
    };
    for object in 0..n {
        let mut done = false;
        for _ in 0..MAX_TRIES {
            let model = &cfg.models[rng.random_range(0..cfg.models.len())];
            let pose = sample_pose(&mut rng, model, &cfg.camera, cfg.depth_range)?;
            let c =
                project_control_points(&model.control_points, &pose, &cfg.camera)?[CENTROID_INDEX];
            let clash = centroids
                .iter()
                .any(|o| cell(o) == cell(&c) || (o - c).norm() < cfg.min_separation_px);
            if !clash {
                placed.push((model.model_id.clone(), model.class_index, pose));
                centroids.push(c);
                done = true;
                break;
            }
        }
        if !done {
            return Err(SynthError::PlacementExhausted {
                frame: index,
                object,
            });
        }
    }
    Ok(GroundTruthFrame::new(cfg.camera, placed, &cfg.models)?)
}

/// All `n_frames` frames in index order.
pub fn generate_dataset(cfg: &SceneConfig) -> Result<Vec<GroundTruthFrame>, SynthError> {
    (0..cfg.n_frames).map(|i| generate_frame(cfg, i)).collect()
}

fn perturbed<R: Rng + ?Sized>(
    rng: &mut R,
    truth: &[Vec2; NUM_CONTROL_POINTS],
    sigma: f64,
) -> [Vec2; NUM_CONTROL_POINTS] {
    core::array::from_fn(|i| {
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        truth[i] + Vec2::new(dx, dy) * sigma
    })
}

fn write_slot<R: Rng + ?Sized>(
    rng: &mut R,
    values: &mut [f64],
    truth: &[Vec2; NUM_CONTROL_POINTS],
    cell: (usize, usize),
    class_index: usize,
    spec: &GridSpec,
    noise: &NoiseModel,
) {
    let points = perturbed(rng, truth, noise.sigma_px);
    let (row, col) = cell;
    for (i, p) in points.iter().enumerate() {
        values[2 * i] = p.x / spec.stride - col as f64;
        values[2 * i + 1] = p.y / spec.stride - row as f64;
    }
    values[CONFIDENCE_CHANNEL] = match noise.conf_mode {
        ConfidenceMode::Oracle => point_confidence_mean(&points, truth, spec),
        ConfidenceMode::Fixed(c) => c,
    };
    let flip: f64 = rng.random();
    let other = rng.random_range(0..spec.num_classes.max(2) - 1);
    let class = if spec.num_classes > 1 && flip < noise.class_flip_prob {
        // Uniform over the other classes.
        if other >= class_index {
            other + 1
        } else {
            other
        }
    } else {
        class_index
    };
    for v in &mut values[CLASS_CHANNEL..] {
        *v = 0.0;
    }
    values[CLASS_CHANNEL + class] = 1.0;
}

/// Simulated activated network output for a frame.
///
/// The target grid is encoded, then every responsible slot's 18 coordinates
/// get Gaussian noise of `sigma_px` pixels (`sigma_px / stride` in offset
/// units). Offsets are not clamped. With `neighbour_votes`, the same anchor
/// slot of each in-grid neighbouring cell not owned by an object receives an
/// independent noisy copy; a slot already written is left alone.
pub fn simulate_prediction<R: Rng + ?Sized>(
    frame: &GroundTruthFrame,
    spec: &GridSpec,
    anchors: &[Anchor],
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<LabelGrid, SynthError> {
    noise.validate()?;
    let (mut grid, mask) = encode_targets(frame, spec, anchors)?;
    let mut owned = alloc::vec![false; spec.grid_size * spec.grid_size];
    let mut responsible = Vec::with_capacity(frame.objects.len());
    for obj in &frame.objects {
        let (row, col) = spec
            .cell_of(&obj.centroid())
            .expect("encode_targets checked the cell");
        owned[row * spec.grid_size + col] = true;
        responsible.push((row, col));
    }
    let mut written = mask.clone();
    for (obj, &(row, col)) in frame.objects.iter().zip(&responsible) {
        let anchor = (0..spec.num_anchors)
            .find(|&a| mask.get(spec.slot_index(row, col, a)))
            .expect("encode_targets set one slot per object");
        let slot = spec.slot_index(row, col, anchor);
        write_slot(
            rng,
            grid.slot_mut(slot),
            &obj.points2d,
            (row, col),
            obj.class_index,
            spec,
            noise,
        );
        if !noise.neighbour_votes {
            continue;
        }
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let (r, c) = (row as i64 + dr, col as i64 + dc);
                let s = spec.grid_size as i64;
                if (dr, dc) == (0, 0) || r < 0 || c < 0 || r >= s || c >= s {
                    continue;
                }
                let (r, c) = (r as usize, c as usize);
                let slot = spec.slot_index(r, c, anchor);
                if owned[r * spec.grid_size + c] || written.get(slot) {
                    continue;
                }
                written.set(slot, true);
                write_slot(
                    rng,
                    grid.slot_mut(slot),
                    &obj.points2d,
                    (r, c),
                    obj.class_index,
                    spec,
                    noise,
                );
            }
        }
    }
    Ok(grid)
}
