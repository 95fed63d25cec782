//! On-disk formats: SS6D grid tensors, JSONL frames and detections, and the
//! models file.
//!
//! JSON numbers are written in shortest round-trip form, so every `f64`
//! reads back bit-identical.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use pose6d_core::gridcodec::{Detection, GroundTruthFrame};
use pose6d_core::pipeline::PoseEstimate;
use pose6d_core::{
    CameraIntrinsics, GridSpec, LabelGrid, ObjectModel, Pose, TensorSpace, Vec2, Vec3,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TENSOR_MAGIC: &[u8; 4] = b"SS6D";
pub const TENSOR_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn invalid(path: &Path, message: impl ToString) -> FormatError {
    FormatError::Invalid {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Contents of an SS6D grid tensor file, values kept as stored (`f32`).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub grid_size: u32,
    pub num_anchors: u32,
    pub num_classes: u32,
    pub space: TensorSpace,
    pub values: Vec<f32>,
}

impl TensorFile {
    /// Rounds every entry of `grid` to `f32`.
    pub fn from_grid(grid: &LabelGrid) -> Self {
        let spec = grid.spec();
        Self {
            grid_size: spec.grid_size as u32,
            num_anchors: spec.num_anchors as u32,
            num_classes: spec.num_classes as u32,
            space: grid.space(),
            values: grid.data().iter().map(|&v| v as f32).collect(),
        }
    }

    /// Widens the stored values into a grid decoded with `spec`, whose
    /// dimensions must match the header.
    pub fn to_grid(&self, spec: &GridSpec) -> Result<LabelGrid, pose6d_core::GridError> {
        if (spec.grid_size, spec.num_anchors, spec.num_classes)
            != (
                self.grid_size as usize,
                self.num_anchors as usize,
                self.num_classes as usize,
            )
        {
            return Err(pose6d_core::GridError::SpecMismatch);
        }
        LabelGrid::from_data(
            spec,
            self.space,
            self.values.iter().map(|&v| f64::from(v)).collect(),
        )
    }

    fn expected_len(&self) -> usize {
        let s = self.grid_size as usize;
        s * s * self.num_anchors as usize * (19 + self.num_classes as usize)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(21 + 4 * self.values.len());
        out.extend_from_slice(TENSOR_MAGIC);
        for v in [
            TENSOR_VERSION,
            self.grid_size,
            self.num_anchors,
            self.num_classes,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(match self.space {
            TensorSpace::Activated => 0,
            TensorSpace::Network => 1,
        });
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < 21 || &bytes[..4] != TENSOR_MAGIC {
            return Err("not an SS6D tensor file".into());
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        if word(0) != TENSOR_VERSION {
            return Err(format!("unsupported version {}", word(0)));
        }
        let space = match bytes[20] {
            0 => TensorSpace::Activated,
            1 => TensorSpace::Network,
            f => return Err(format!("unknown space flag {f}")),
        };
        let mut file = Self {
            grid_size: word(1),
            num_anchors: word(2),
            num_classes: word(3),
            space,
            values: Vec::new(),
        };
        let payload = &bytes[21..];
        if payload.len() != 4 * file.expected_len() {
            return Err(format!(
                "payload holds {} bytes, header implies {}",
                payload.len(),
                4 * file.expected_len()
            ));
        }
        file.values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err(path))?;
        Self::from_bytes(&bytes).map_err(|m| invalid(path, m))
    }
}

/// Grid after a trip through the file format.
pub fn quantize(grid: &LabelGrid) -> LabelGrid {
    TensorFile::from_grid(grid)
        .to_grid(grid.spec())
        .expect("dimensions come from the grid itself")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl From<&CameraIntrinsics> for CameraRecord {
    fn from(k: &CameraIntrinsics) -> Self {
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

impl CameraRecord {
    pub fn to_camera(&self) -> Result<CameraIntrinsics, pose6d_core::GeometryError> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        let t = p.translation();
        Self {
            r: p.rotation_row_major(),
            t: [t.x, t.y, t.z],
        }
    }
}

impl PoseRecord {
    pub fn to_pose(&self) -> Result<Pose, pose6d_core::GeometryError> {
        Pose::from_row_major(&self.r, &self.t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub model_id: String,
    pub class_index: usize,
    #[serde(flatten)]
    pub pose: PoseRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub camera: CameraRecord,
    pub objects: Vec<ObjectRecord>,
}

impl From<&GroundTruthFrame> for FrameRecord {
    fn from(f: &GroundTruthFrame) -> Self {
        Self {
            camera: (&f.camera).into(),
            objects: f
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    model_id: o.model_id.clone(),
                    class_index: o.class_index,
                    pose: (&o.pose).into(),
                })
                .collect(),
        }
    }
}

impl FrameRecord {
    pub fn to_frame(&self, models: &[ObjectModel]) -> Result<GroundTruthFrame, String> {
        let camera = self.camera.to_camera().map_err(|e| e.to_string())?;
        let objects = self
            .objects
            .iter()
            .map(|o| Ok((o.model_id.clone(), o.class_index, o.pose.to_pose()?)))
            .collect::<Result<Vec<_>, pose6d_core::GeometryError>>()
            .map_err(|e| e.to_string())?;
        GroundTruthFrame::new(camera, objects, models).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_id: String,
    pub class_index: usize,
    pub control_points: [[f64; 3]; 9],
    pub diameter: f64,
    pub symmetric: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub faces: Option<Vec<[u32; 3]>>,
}

fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl From<&ObjectModel> for ModelRecord {
    fn from(m: &ObjectModel) -> Self {
        Self {
            model_id: m.model_id.clone(),
            class_index: m.class_index,
            control_points: m.control_points.map(|p| arr3(&p)),
            diameter: m.diameter,
            symmetric: m.symmetric,
            vertices: m.vertices.as_ref().map(|v| v.iter().map(arr3).collect()),
            faces: m.faces.clone(),
        }
    }
}

impl ModelRecord {
    pub fn to_model(&self) -> Result<ObjectModel, pose6d_core::GeometryError> {
        ObjectModel::from_parts(
            self.model_id.clone(),
            self.class_index,
            self.control_points.map(Vec3::from),
            self.diameter,
            self.symmetric,
            self.vertices
                .as_ref()
                .map(|v| v.iter().copied().map(Vec3::from).collect()),
            self.faces.clone(),
        )
    }
}

/// One detection with its pose, as written by `decode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub class_index: usize,
    pub score: f64,
    pub confidence: f64,
    pub cell: [usize; 2],
    pub anchor: usize,
    pub points2d: [[f64; 2]; 9],
    pub model_id: Option<String>,
    pub pose: Option<PoseRecord>,
}

impl DetectionRecord {
    pub fn from_estimate(e: &PoseEstimate, models: &[ObjectModel]) -> Self {
        let d = &e.detection;
        Self {
            class_index: d.class_index,
            score: d.score,
            confidence: d.confidence,
            cell: [d.cell.0, d.cell.1],
            anchor: d.anchor_index,
            points2d: d.points2d.map(|p| [p.x, p.y]),
            model_id: e.model_index.map(|i| models[i].model_id.clone()),
            pose: e.pose().map(PoseRecord::from),
        }
    }

    pub fn detection(&self) -> Detection {
        Detection {
            class_index: self.class_index,
            score: self.score,
            points2d: self.points2d.map(Vec2::from),
            cell: (self.cell[0], self.cell[1]),
            anchor_index: self.anchor,
            confidence: self.confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame: usize,
    pub detections: Vec<DetectionRecord>,
}

/// Writes one JSON value per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|source| FormatError::Json {
            path: path.to_path_buf(),
            line: 0,
            source,
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads one JSON value per non-empty line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, FormatError> {
    let r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| FormatError::Json {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        line: 0,
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FormatError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        line: source.line(),
        source,
    })
}

pub fn write_models(path: &Path, models: &[ObjectModel]) -> Result<(), FormatError> {
    let records: Vec<ModelRecord> = models.iter().map(ModelRecord::from).collect();
    write_json(path, &records)
}

pub fn read_models(path: &Path) -> Result<Vec<ObjectModel>, FormatError> {
    let records: Vec<ModelRecord> = read_json(path)?;
    records
        .iter()
        .map(|r| {
            r.to_model()
                .map_err(|e| invalid(path, format!("model '{}': {e}", r.model_id)))
        })
        .collect()
}

pub fn write_frames(path: &Path, frames: &[GroundTruthFrame]) -> Result<(), FormatError> {
    let records: Vec<FrameRecord> = frames.iter().map(FrameRecord::from).collect();
    write_jsonl(path, &records)
}

pub fn read_frames(
    path: &Path,
    models: &[ObjectModel],
) -> Result<Vec<GroundTruthFrame>, FormatError> {
    let records: Vec<FrameRecord> = read_jsonl(path)?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.to_frame(models)
                .map_err(|e| invalid(path, format!("frame {i}: {e}")))
        })
        .collect()
}

/// File name of frame `index` in a grid directory.
pub fn grid_file_name(index: usize) -> String {
    format!("frame_{index:06}.ss6d")
}

#[cfg(test)]
mod tests {
    use super::*;
    use pose6d_core::synth::generate_dataset;
    use pose6d_core::{Anchor, SceneConfig};

    #[test]
    fn tensor_bytes_round_trip() {
        let cfg = SceneConfig::demo(3, 4);
        let spec = GridSpec::paper_default(3).unwrap();
        let anchors = [Anchor::new(64.0, 64.0).unwrap(); 5];
        for f in generate_dataset(&cfg).unwrap() {
            let (grid, _) = pose6d_core::gridcodec::encode_targets(&f, &spec, &anchors).unwrap();
            let file = TensorFile::from_grid(&grid.to_network());
            let bytes = file.to_bytes();
            assert_eq!(&bytes[..4], b"SS6D");
            assert_eq!(bytes.len(), 21 + 4 * spec.tensor_len());
            assert_eq!(bytes[20], 1);
            let back = TensorFile::from_bytes(&bytes).unwrap();
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn tensor_header_errors() {
        assert!(TensorFile::from_bytes(b"NOPE").is_err());
        let file = TensorFile {
            grid_size: 1,
            num_anchors: 1,
            num_classes: 1,
            space: TensorSpace::Activated,
            values: vec![0.0; 20],
        };
        let mut bytes = file.to_bytes();
        bytes.pop();
        assert!(TensorFile::from_bytes(&bytes)
            .unwrap_err()
            .contains("payload"));
    }

    #[test]
    fn records_round_trip_exactly() {
        let cfg = SceneConfig::demo(9, 5);
        let frames = generate_dataset(&cfg).unwrap();
        for f in &frames {
            let text = serde_json::to_string(&FrameRecord::from(f)).unwrap();
            let back: FrameRecord = serde_json::from_str(&text).unwrap();
            assert_eq!(&back.to_frame(&cfg.models).unwrap(), f);
        }
        for m in &cfg.models {
            let text = serde_json::to_string(&ModelRecord::from(m)).unwrap();
            let back: ModelRecord = serde_json::from_str(&text).unwrap();
            assert_eq!(&back.to_model().unwrap(), m);
        }
    }
}
