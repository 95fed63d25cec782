//! Scene configuration file for `pose6d synth`.
//!
//! ```json
//! {
//!   "seed": 7, "n_frames": 100,
//!   "camera": {"fx": 500, "fy": 500, "cx": 208, "cy": 208, "width": 416, "height": 416},
//!   "depth_range": [0.6, 1.4], "max_objects": 3, "min_separation_px": 64, "cell_size": 32,
//!   "models": [
//!     {"model_id": "box", "class_index": 0, "size": [0.1, 0.08, 0.06]},
//!     {"model_id": "ape", "class_index": 1, "ply": "ape.ply", "scale": 0.001, "symmetric": false}
//!   ]
//! }
//! ```
//!
//! PLY paths are relative to the config file.

use std::path::Path;

use pose6d_core::{ObjectModel, SceneConfig, Vec3};
use serde::{Deserialize, Serialize};

use crate::formats::{read_json, CameraRecord, FormatError};
use crate::ply::{load_ply, PlyError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSource {
    pub model_id: String,
    pub class_index: usize,
    #[serde(default)]
    pub symmetric: bool,
    /// Cuboid edge lengths in metres.
    #[serde(default)]
    pub size: Option<[f64; 3]>,
    /// ASCII PLY mesh.
    #[serde(default)]
    pub ply: Option<String>,
    /// Unit scale for the PLY; defaults to the command-line `--scale`.
    #[serde(default)]
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub seed: u64,
    pub n_frames: usize,
    pub camera: CameraRecord,
    pub depth_range: [f64; 2],
    pub max_objects: usize,
    #[serde(default)]
    pub min_separation_px: f64,
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    pub models: Vec<ModelSource>,
}

fn default_cell_size() -> f64 {
    32.0
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error("model '{0}': give exactly one of 'size' or 'ply'")]
    ModelSource(String),
    #[error("model '{id}': {message}")]
    Model { id: String, message: String },
    #[error("camera: {0}")]
    Camera(String),
    #[error("{0}")]
    Scene(String),
}

impl SceneFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Ok(read_json(path)?)
    }

    /// Builds the scene; `base` resolves PLY paths and `default_scale` applies
    /// to PLY models without their own scale.
    pub fn to_scene(&self, base: &Path, default_scale: f64) -> Result<SceneConfig, ConfigError> {
        let camera = self
            .camera
            .to_camera()
            .map_err(|e| ConfigError::Camera(e.to_string()))?;
        let models = self
            .models
            .iter()
            .map(|m| m.build(base, default_scale))
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = SceneConfig {
            seed: self.seed,
            n_frames: self.n_frames,
            models,
            camera,
            depth_range: (self.depth_range[0], self.depth_range[1]),
            max_objects: self.max_objects,
            min_separation_px: self.min_separation_px,
            cell_size: self.cell_size,
        };
        cfg.validate()
            .map_err(|e| ConfigError::Scene(e.to_string()))?;
        Ok(cfg)
    }
}

impl ModelSource {
    fn build(&self, base: &Path, default_scale: f64) -> Result<ObjectModel, ConfigError> {
        let model_err = |e: pose6d_core::GeometryError| ConfigError::Model {
            id: self.model_id.clone(),
            message: e.to_string(),
        };
        match (&self.size, &self.ply) {
            (Some(size), None) => ObjectModel::cuboid(
                self.model_id.clone(),
                self.class_index,
                Vec3::from(*size),
                Vec3::zeros(),
                self.symmetric,
            )
            .map_err(model_err),
            (None, Some(ply)) => {
                let mesh = load_ply(&base.join(ply), self.scale.unwrap_or(default_scale))?;
                let faces = (!mesh.faces.is_empty()).then_some(mesh.faces);
                ObjectModel::from_mesh(
                    self.model_id.clone(),
                    self.class_index,
                    mesh.vertices,
                    faces,
                    self.symmetric,
                )
                .map_err(model_err)
            }
            _ => Err(ConfigError::ModelSource(self.model_id.clone())),
        }
    }
}

/// The config equivalent of [`SceneConfig::demo`], all cuboids.
pub fn demo_file(seed: u64, n_frames: usize) -> SceneFile {
    let demo = SceneConfig::demo(seed, n_frames);
    SceneFile {
        seed,
        n_frames,
        camera: (&demo.camera).into(),
        depth_range: [demo.depth_range.0, demo.depth_range.1],
        max_objects: demo.max_objects,
        min_separation_px: demo.min_separation_px,
        cell_size: demo.cell_size,
        models: demo
            .models
            .iter()
            .map(|m| {
                let c = &m.control_points;
                ModelSource {
                    model_id: m.model_id.clone(),
                    class_index: m.class_index,
                    symmetric: m.symmetric,
                    size: Some([c[7].x - c[0].x, c[7].y - c[0].y, c[7].z - c[0].z]),
                    ply: None,
                    scale: None,
                }
            })
            .collect(),
    }
}
