//! Label grid encoding and decoding.
//!
//! The image is divided into `S×S` cells of `stride` pixels. Each cell holds
//! `A` anchor slots of `D = 19 + C` channels:
//!
//! ```text
//! [x0, y0, ..., x7, y7, x8, y8, confidence, class_0, ..., class_{C-1}]
//! ```
//!
//! Points 0..8 are the projected box corners, point 8 the projected centroid.
//! Coordinates are stored as offsets from the cell's top-left corner in cell
//! units. In the canonical [`TensorSpace::Activated`] form the centroid offset
//! lies in `[0, 1]`, the confidence in `[0, 1]` and the class channels are
//! probabilities. [`TensorSpace::Network`] holds the pre-activation values a
//! network would emit: logits for the centroid offset and confidence, and
//! log-probabilities for the classes.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

// Unused when feature unification links std and inherent float methods win.
#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{project_control_points, CameraIntrinsics, GeometryError, ObjectModel, Pose};
use crate::{Vec2, CENTROID_INDEX, NUM_CONTROL_POINTS};

/// Coordinate channels per slot (9 points × 2).
pub const POINT_CHANNELS: usize = 2 * NUM_CONTROL_POINTS;
/// Channel index of the confidence value.
pub const CONFIDENCE_CHANNEL: usize = POINT_CHANNELS;
/// Channel index of the first class probability.
pub const CLASS_CHANNEL: usize = POINT_CHANNELS + 1;

pub const DEFAULT_GRID_SIZE: usize = 13;
pub const DEFAULT_STRIDE: f64 = 32.0;
pub const DEFAULT_NUM_ANCHORS: usize = 5;
pub const DEFAULT_ALPHA: f64 = 2.0;
pub const DEFAULT_DISTANCE_THRESHOLD: f64 = 30.0;
pub const DEFAULT_CONF_THRESHOLD: f64 = 0.5;

/// Probabilities are clamped to `[ε, 1 − ε]` before taking logits or logs.
pub const PROBABILITY_EPSILON: f64 = 1e-12;

const KMEANS_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(&'static str),
    #[error("centroid offset ({x}, {y}) lies outside its cell")]
    CentroidOutsideCell { x: f64, y: f64 },
    #[error("centroid offset ({x}, {y}) is on a cell boundary; its logit is undefined")]
    LogitSingularity { x: f64, y: f64 },
    #[error("object {object}: projected centroid lies outside the grid")]
    OutsideGrid { object: usize },
    #[error("object {object}: projected centroid lies outside the image")]
    CentroidOutsideImage { object: usize },
    #[error("objects {first} and {second} both map to cell ({row}, {col}) anchor {anchor}")]
    SlotCollision {
        row: usize,
        col: usize,
        anchor: usize,
        first: usize,
        second: usize,
    },
    #[error("expected {expected} anchors, got {got}")]
    AnchorCountMismatch { expected: usize, got: usize },
    #[error("at least one anchor is required")]
    NoAnchors,
    #[error("invalid anchor size {width}×{height}")]
    InvalidAnchor { width: f64, height: f64 },
    #[error("k-means needs at least k = {k} boxes, got {boxes}")]
    TooFewBoxes { boxes: usize, k: usize },
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("unknown model id {0:?}")]
    UnknownModel(String),
    #[error("tensor has {got} values, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("grid dimensions do not match the spec")]
    SpecMismatch,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Which form of the confidence function to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConfidenceForm {
    /// `(e^{α(1 − d/d_th)} − 1) / (e^α − 1)`: 1 at `d = 0`, 0 at the cutoff.
    #[default]
    Normalized,
    /// `e^{α(1 − d/d_th)}` as printed, which exceeds 1 near `d = 0`.
    Raw,
}

impl ConfidenceForm {
    pub fn eval(self, d: f64, alpha: f64, d_th: f64) -> f64 {
        if d >= d_th {
            return 0.0;
        }
        let z = alpha * (1.0 - d / d_th);
        match self {
            ConfidenceForm::Normalized => z.exp_m1() / alpha.exp_m1(),
            ConfidenceForm::Raw => z.exp(),
        }
    }

    /// Derivative with respect to `d`; zero beyond the cutoff.
    pub fn derivative(self, d: f64, alpha: f64, d_th: f64) -> f64 {
        if d >= d_th {
            return 0.0;
        }
        let z = alpha * (1.0 - d / d_th);
        let e = z.exp() * (-alpha / d_th);
        match self {
            ConfidenceForm::Normalized => e / alpha.exp_m1(),
            ConfidenceForm::Raw => e,
        }
    }
}

/// Normalized confidence of a single point at pixel distance `d`.
pub fn confidence(d: f64, alpha: f64, d_th: f64) -> f64 {
    ConfidenceForm::Normalized.eval(d, alpha, d_th)
}

/// Pre-activation or activated tensor values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TensorSpace {
    #[default]
    Activated,
    Network,
}

/// Grid geometry and decoding parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Cells per side (`S`).
    pub grid_size: usize,
    /// Input pixels per cell.
    pub stride: f64,
    /// Anchor slots per cell (`A`).
    pub num_anchors: usize,
    /// Number of classes (`C`).
    pub num_classes: usize,
    /// Confidence sharpness `α`.
    pub alpha: f64,
    /// Confidence cutoff distance `d_th` in pixels.
    pub distance_threshold: f64,
    /// Detection threshold on the confidence channel. Values above 1 are
    /// accepted and prune every slot.
    pub conf_threshold: f64,
    pub confidence_form: ConfidenceForm,
}

impl GridSpec {
    /// Spec with the default α, `d_th` and detection threshold.
    pub fn new(
        grid_size: usize,
        stride: f64,
        num_anchors: usize,
        num_classes: usize,
    ) -> Result<Self, GridError> {
        let spec = Self {
            grid_size,
            stride,
            num_anchors,
            num_classes,
            alpha: DEFAULT_ALPHA,
            distance_threshold: DEFAULT_DISTANCE_THRESHOLD,
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            confidence_form: ConfidenceForm::Normalized,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 13×13 cells of 32 px (416 px input) with 5 anchors.
    pub fn paper_default(num_classes: usize) -> Result<Self, GridError> {
        Self::new(
            DEFAULT_GRID_SIZE,
            DEFAULT_STRIDE,
            DEFAULT_NUM_ANCHORS,
            num_classes,
        )
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.grid_size == 0 {
            return Err(GridError::InvalidSpec("grid size must be at least 1"));
        }
        if !(self.stride.is_finite() && self.stride > 0.0) {
            return Err(GridError::InvalidSpec("stride must be positive"));
        }
        if !(1..=5).contains(&self.num_anchors) {
            return Err(GridError::InvalidSpec("anchors per cell must be in 1..=5"));
        }
        if self.num_classes == 0 {
            return Err(GridError::InvalidSpec("at least one class is required"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(GridError::InvalidSpec("alpha must be positive"));
        }
        if !(self.distance_threshold.is_finite() && self.distance_threshold > 0.0) {
            return Err(GridError::InvalidSpec(
                "distance threshold must be positive",
            ));
        }
        if !(self.conf_threshold.is_finite() && self.conf_threshold >= 0.0) {
            return Err(GridError::InvalidSpec(
                "confidence threshold must be non-negative",
            ));
        }
        Ok(())
    }

    /// Channels per slot, `19 + C`.
    pub fn channels(&self) -> usize {
        CLASS_CHANNEL + self.num_classes
    }

    pub fn num_slots(&self) -> usize {
        self.grid_size * self.grid_size * self.num_anchors
    }

    /// Total tensor length `S·S·A·(19 + C)`.
    pub fn tensor_len(&self) -> usize {
        self.num_slots() * self.channels()
    }

    /// Slot number in row-major `(row, col, anchor)` order.
    pub fn slot_index(&self, row: usize, col: usize, anchor: usize) -> usize {
        (row * self.grid_size + col) * self.num_anchors + anchor
    }

    /// Inverse of [`GridSpec::slot_index`].
    pub fn slot_coords(&self, slot: usize) -> (usize, usize, usize) {
        let anchor = slot % self.num_anchors;
        let cell = slot / self.num_anchors;
        (cell / self.grid_size, cell % self.grid_size, anchor)
    }

    /// Side length of the square area covered by the grid, in pixels.
    pub fn input_size(&self) -> f64 {
        self.grid_size as f64 * self.stride
    }

    /// Cell `(row, col)` containing `point`, if inside the grid.
    pub fn cell_of(&self, point: &Vec2) -> Option<(usize, usize)> {
        let col = (point.x / self.stride).floor();
        let row = (point.y / self.stride).floor();
        let s = self.grid_size as f64;
        if col >= 0.0 && row >= 0.0 && col < s && row < s {
            Some((row as usize, col as usize))
        } else {
            None
        }
    }

    pub fn confidence(&self, d: f64) -> f64 {
        self.confidence_form
            .eval(d, self.alpha, self.distance_threshold)
    }

    /// Dimensions (`S`, `A`, `C`) agree; decoding parameters may differ.
    pub fn same_shape(&self, other: &GridSpec) -> bool {
        self.grid_size == other.grid_size
            && self.num_anchors == other.num_anchors
            && self.num_classes == other.num_classes
    }
}

/// Mean confidence over the nine control points.
pub fn point_confidence_mean(
    pred: &[Vec2; NUM_CONTROL_POINTS],
    truth: &[Vec2; NUM_CONTROL_POINTS],
    spec: &GridSpec,
) -> f64 {
    pred.iter()
        .zip(truth)
        .map(|(p, t)| spec.confidence((p - t).norm()))
        .sum::<f64>()
        / NUM_CONTROL_POINTS as f64
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Offset of `point` from the top-left corner of `cell = (row, col)` in cell
/// units. In network space the centroid offset is returned as a logit.
pub fn encode_offsets(
    point: &Vec2,
    cell: (usize, usize),
    stride: f64,
    is_centroid: bool,
    space: TensorSpace,
) -> Result<Vec2, GridError> {
    let (row, col) = cell;
    let offset = Vec2::new(point.x / stride - col as f64, point.y / stride - row as f64);
    if !is_centroid {
        return Ok(offset);
    }
    let inside = |v: f64| (0.0..=1.0).contains(&v);
    if !(inside(offset.x) && inside(offset.y)) {
        return Err(GridError::CentroidOutsideCell {
            x: offset.x,
            y: offset.y,
        });
    }
    match space {
        TensorSpace::Activated => Ok(offset),
        TensorSpace::Network => {
            let open = |v: f64| v > 0.0 && v < 1.0;
            if !(open(offset.x) && open(offset.y)) {
                return Err(GridError::LogitSingularity {
                    x: offset.x,
                    y: offset.y,
                });
            }
            Ok(offset.map(logit))
        }
    }
}

/// Inverse of [`encode_offsets`]: pixel position from cell offsets.
pub fn decode_offsets(
    offsets: &Vec2,
    cell: (usize, usize),
    stride: f64,
    is_centroid: bool,
    space: TensorSpace,
) -> Vec2 {
    let (row, col) = cell;
    let f = if is_centroid && space == TensorSpace::Network {
        offsets.map(sigmoid)
    } else {
        *offsets
    };
    Vec2::new((f.x + col as f64) * stride, (f.y + row as f64) * stride)
}

/// A 2D box prior, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub width: f64,
    pub height: f64,
}

impl Anchor {
    pub fn new(width: f64, height: f64) -> Result<Self, GridError> {
        if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
            return Err(GridError::InvalidAnchor { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

/// IoU of two boxes sharing a centre.
pub fn co_centered_iou(a: &Anchor, b: &Anchor) -> f64 {
    let inter = a.width.min(b.width) * a.height.min(b.height);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Index of the anchor with the highest co-centred IoU; ties go to the
/// lowest index.
pub fn assign_anchor(object_box: &Anchor, anchors: &[Anchor]) -> Result<usize, GridError> {
    if anchors.is_empty() {
        return Err(GridError::NoAnchors);
    }
    let mut best = 0;
    let mut best_iou = f64::NEG_INFINITY;
    for (i, a) in anchors.iter().enumerate() {
        let iou = co_centered_iou(object_box, a);
        if iou > best_iou {
            best = i;
            best_iou = iou;
        }
    }
    Ok(best)
}

/// Distance used by anchor clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnchorDistance {
    /// `1 − IoU` of co-centred boxes.
    #[default]
    OneMinusIou,
    /// Euclidean distance in `(w, h)`.
    Euclidean,
}

impl AnchorDistance {
    fn eval(self, a: &Anchor, b: &Anchor) -> f64 {
        match self {
            AnchorDistance::OneMinusIou => 1.0 - co_centered_iou(a, b),
            AnchorDistance::Euclidean => {
                ((a.width - b.width).powi(2) + (a.height - b.height).powi(2)).sqrt()
            }
        }
    }
}

/// k-means over box sizes, seeded by `k` distinct boxes drawn at random.
///
/// Centroids are per-cluster mean sizes; an emptied cluster keeps its previous
/// centroid. Stops after 100 iterations or when assignments no longer change.
/// The result is sorted by ascending area.
pub fn kmeans_anchors(
    boxes: &[Anchor],
    k: usize,
    seed: u64,
    distance: AnchorDistance,
) -> Result<Vec<Anchor>, GridError> {
    if k == 0 {
        return Err(GridError::NoAnchors);
    }
    if boxes.len() < k {
        return Err(GridError::TooFewBoxes {
            boxes: boxes.len(),
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Anchor> = rand::seq::index::sample(&mut rng, boxes.len(), k)
        .iter()
        .map(|i| boxes[i])
        .collect();
    let mut assignment = vec![usize::MAX; boxes.len()];
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut changed = false;
        for (b, slot) in boxes.iter().zip(assignment.iter_mut()) {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centroids.iter().enumerate() {
                let d = distance.eval(b, c);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            if *slot != best {
                *slot = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (b, &j) in boxes.iter().zip(&assignment) {
            sums[j].0 += b.width;
            sums[j].1 += b.height;
            sums[j].2 += 1;
        }
        for (c, (w, h, n)) in centroids.iter_mut().zip(sums) {
            if n > 0 {
                *c = Anchor {
                    width: w / n as f64,
                    height: h / n as f64,
                };
            }
        }
    }
    centroids.sort_by(|a, b| {
        a.area()
            .total_cmp(&b.area())
            .then(a.width.total_cmp(&b.width))
    });
    Ok(centroids)
}

/// Per-slot binary responsibility mask, indexed like [`GridSpec::slot_index`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotMask {
    bits: Vec<bool>,
}

impl SlotMask {
    pub fn empty(spec: &GridSpec) -> Self {
        Self {
            bits: vec![false; spec.num_slots()],
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn get(&self, slot: usize) -> bool {
        self.bits[slot]
    }

    pub fn set(&mut self, slot: usize, value: bool) {
        self.bits[slot] = value;
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// `S×S×A×(19 + C)` tensor in row-major `(row, col, anchor, channel)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    spec: GridSpec,
    space: TensorSpace,
    data: Vec<f64>,
}

impl LabelGrid {
    pub fn zeros(spec: &GridSpec) -> Self {
        Self {
            spec: *spec,
            space: TensorSpace::Activated,
            data: vec![0.0; spec.tensor_len()],
        }
    }

    pub fn from_data(
        spec: &GridSpec,
        space: TensorSpace,
        data: Vec<f64>,
    ) -> Result<Self, GridError> {
        spec.validate()?;
        if data.len() != spec.tensor_len() {
            return Err(GridError::LengthMismatch {
                expected: spec.tensor_len(),
                got: data.len(),
            });
        }
        Ok(Self {
            spec: *spec,
            space,
            data,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn space(&self) -> TensorSpace {
        self.space
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn slot(&self, slot: usize) -> &[f64] {
        let d = self.spec.channels();
        &self.data[slot * d..(slot + 1) * d]
    }

    pub fn slot_mut(&mut self, slot: usize) -> &mut [f64] {
        let d = self.spec.channels();
        &mut self.data[slot * d..(slot + 1) * d]
    }

    /// Pixel positions of the nine points stored in `slot`.
    pub fn slot_points(&self, slot: usize) -> [Vec2; NUM_CONTROL_POINTS] {
        let (row, col, _) = self.spec.slot_coords(slot);
        let values = self.slot(slot);
        let mut out = [Vec2::zeros(); NUM_CONTROL_POINTS];
        for (i, p) in out.iter_mut().enumerate() {
            let offset = Vec2::new(values[2 * i], values[2 * i + 1]);
            *p = decode_offsets(
                &offset,
                (row, col),
                self.spec.stride,
                i == CENTROID_INDEX,
                self.space,
            );
        }
        out
    }

    /// Same grid with decoding parameters replaced; dimensions must agree.
    pub fn with_spec(mut self, spec: &GridSpec) -> Result<Self, GridError> {
        spec.validate()?;
        if !self.spec.same_shape(spec) {
            return Err(GridError::SpecMismatch);
        }
        self.spec = *spec;
        Ok(self)
    }

    /// Converts to network (pre-activation) space. Probabilities are clamped
    /// to `[ε, 1 − ε]` first, so empty slots map to large negative values.
    pub fn to_network(&self) -> LabelGrid {
        if self.space == TensorSpace::Network {
            return self.clone();
        }
        let clamp = |p: f64| p.clamp(PROBABILITY_EPSILON, 1.0 - PROBABILITY_EPSILON);
        let mut out = self.clone();
        out.space = TensorSpace::Network;
        let d = self.spec.channels();
        for slot in out.data.chunks_exact_mut(d) {
            for v in &mut slot[2 * CENTROID_INDEX..=CONFIDENCE_CHANNEL] {
                *v = logit(clamp(*v));
            }
            for p in &mut slot[CLASS_CHANNEL..] {
                *p = clamp(*p).ln();
            }
        }
        out
    }

    /// Converts to activated space: sigmoid on centroid offsets and
    /// confidence, `exp` on class log-probabilities.
    pub fn to_activated(&self) -> LabelGrid {
        if self.space == TensorSpace::Activated {
            return self.clone();
        }
        let mut out = self.clone();
        out.space = TensorSpace::Activated;
        let d = self.spec.channels();
        for slot in out.data.chunks_exact_mut(d) {
            for v in &mut slot[2 * CENTROID_INDEX..=CONFIDENCE_CHANNEL] {
                *v = sigmoid(*v);
            }
            for p in &mut slot[CLASS_CHANNEL..] {
                *p = p.exp();
            }
        }
        out
    }
}

/// One annotated object in a frame, with its projected control points cached.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObject {
    pub model_id: String,
    pub class_index: usize,
    pub pose: Pose,
    pub points2d: [Vec2; NUM_CONTROL_POINTS],
}

impl FrameObject {
    pub fn centroid(&self) -> Vec2 {
        self.points2d[CENTROID_INDEX]
    }

    /// Width and height of the projected box corners.
    pub fn box_size(&self) -> Anchor {
        let b = corner_bounds(&self.points2d);
        Anchor {
            width: b.2 - b.0,
            height: b.3 - b.1,
        }
    }
}

/// `(x_min, y_min, x_max, y_max)` of the 8 projected corners.
pub fn corner_bounds(points: &[Vec2; NUM_CONTROL_POINTS]) -> (f64, f64, f64, f64) {
    let mut b = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for p in &points[..8] {
        b.0 = b.0.min(p.x);
        b.1 = b.1.min(p.y);
        b.2 = b.2.max(p.x);
        b.3 = b.3.max(p.y);
    }
    b
}

/// Looks a model up by id.
pub fn find_model<'a>(models: &'a [ObjectModel], model_id: &str) -> Option<&'a ObjectModel> {
    models.iter().find(|m| m.model_id == model_id)
}

/// Camera plus the annotated objects of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    pub camera: CameraIntrinsics,
    pub objects: Vec<FrameObject>,
}

impl GroundTruthFrame {
    /// Projects each object's control points and checks that every centroid
    /// lands inside the image.
    pub fn new(
        camera: CameraIntrinsics,
        objects: impl IntoIterator<Item = (String, usize, Pose)>,
        models: &[ObjectModel],
    ) -> Result<Self, GridError> {
        camera.validate()?;
        let mut out = Vec::new();
        for (i, (model_id, class_index, pose)) in objects.into_iter().enumerate() {
            let model = find_model(models, &model_id)
                .ok_or_else(|| GridError::UnknownModel(model_id.clone()))?;
            let points2d = project_control_points(&model.control_points, &pose, &camera)?;
            if !camera.contains(&points2d[CENTROID_INDEX]) {
                return Err(GridError::CentroidOutsideImage { object: i });
            }
            out.push(FrameObject {
                model_id,
                class_index,
                pose,
                points2d,
            });
        }
        Ok(Self {
            camera,
            objects: out,
        })
    }

    pub fn empty(camera: CameraIntrinsics) -> Self {
        Self {
            camera,
            objects: Vec::new(),
        }
    }
}

/// Writes one object's offsets, confidence and one-hot class into `slot`.
fn write_target(
    values: &mut [f64],
    points: &[Vec2; NUM_CONTROL_POINTS],
    cell: (usize, usize),
    spec: &GridSpec,
    class_index: usize,
) -> Result<(), GridError> {
    for (i, p) in points.iter().enumerate() {
        let o = encode_offsets(
            p,
            cell,
            spec.stride,
            i == CENTROID_INDEX,
            TensorSpace::Activated,
        )?;
        values[2 * i] = o.x;
        values[2 * i + 1] = o.y;
    }
    values[CONFIDENCE_CHANNEL] = 1.0;
    for v in &mut values[CLASS_CHANNEL..] {
        *v = 0.0;
    }
    values[CLASS_CHANNEL + class_index] = 1.0;
    Ok(())
}

/// Builds the target grid and responsibility mask for a frame.
///
/// The responsible cell contains the projected centroid; the anchor slot is
/// the one whose size best matches the projected corner box.
pub fn encode_targets(
    frame: &GroundTruthFrame,
    spec: &GridSpec,
    anchors: &[Anchor],
) -> Result<(LabelGrid, SlotMask), GridError> {
    spec.validate()?;
    if anchors.len() != spec.num_anchors {
        return Err(GridError::AnchorCountMismatch {
            expected: spec.num_anchors,
            got: anchors.len(),
        });
    }
    let mut grid = LabelGrid::zeros(spec);
    let mut mask = SlotMask::empty(spec);
    let mut owner = vec![usize::MAX; spec.num_slots()];
    for (i, obj) in frame.objects.iter().enumerate() {
        if obj.class_index >= spec.num_classes {
            return Err(GridError::ClassOutOfRange {
                class: obj.class_index,
                classes: spec.num_classes,
            });
        }
        let (row, col) = spec
            .cell_of(&obj.centroid())
            .ok_or(GridError::OutsideGrid { object: i })?;
        let anchor = assign_anchor(&obj.box_size(), anchors)?;
        let slot = spec.slot_index(row, col, anchor);
        if owner[slot] != usize::MAX {
            return Err(GridError::SlotCollision {
                row,
                col,
                anchor,
                first: owner[slot],
                second: i,
            });
        }
        owner[slot] = i;
        mask.set(slot, true);
        write_target(
            grid.slot_mut(slot),
            &obj.points2d,
            (row, col),
            spec,
            obj.class_index,
        )?;
    }
    Ok((grid, mask))
}

/// A decoded object hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub class_index: usize,
    /// Class probability × confidence.
    pub score: f64,
    pub points2d: [Vec2; NUM_CONTROL_POINTS],
    /// `(row, col)` of the source cell.
    pub cell: (usize, usize),
    pub anchor_index: usize,
    pub confidence: f64,
}

/// Emits one detection per slot whose confidence reaches the threshold.
///
/// Network-space grids are activated first. `spec` supplies the stride and
/// threshold and must have the grid's dimensions.
pub fn decode(pred: &LabelGrid, spec: &GridSpec) -> Result<Vec<Detection>, GridError> {
    if !pred.spec().same_shape(spec) {
        return Err(GridError::SpecMismatch);
    }
    let grid = match pred.space() {
        TensorSpace::Network => pred.to_activated(),
        TensorSpace::Activated => pred.clone(),
    }
    .with_spec(spec)?;
    let mut out = Vec::new();
    for slot in 0..spec.num_slots() {
        let values = grid.slot(slot);
        let conf = values[CONFIDENCE_CHANNEL];
        if conf.is_nan() || conf < spec.conf_threshold {
            continue;
        }
        let mut class_index = 0;
        let mut best = f64::NEG_INFINITY;
        for (c, &p) in values[CLASS_CHANNEL..].iter().enumerate() {
            if p > best {
                best = p;
                class_index = c;
            }
        }
        let (row, col, anchor) = spec.slot_coords(slot);
        out.push(Detection {
            class_index,
            score: best * conf,
            points2d: grid.slot_points(slot),
            cell: (row, col),
            anchor_index: anchor,
            confidence: conf,
        });
    }
    Ok(out)
}

fn neighbours(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0.abs_diff(b.0) <= 1 && a.1.abs_diff(b.1) <= 1
}

fn seed_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.class_index.cmp(&b.class_index))
        .then(a.cell.cmp(&b.cell))
        .then(a.anchor_index.cmp(&b.anchor_index))
}

/// Confidence-weighted fusion over 3×3 cell neighbourhoods.
///
/// Detections below the threshold are dropped. The most confident remaining
/// detection seeds a group; the best anchor of each same-class cell in its
/// 3×3 neighbourhood joins the group, and every same-class detection in that
/// neighbourhood is consumed. The seed's points are replaced by the
/// confidence-weighted mean of the members' 18-D point vectors; class, score,
/// cell, anchor and confidence stay those of the seed. Repeats until nothing
/// above threshold remains. Output is in seed order.
pub fn fuse_detections(dets: &[Detection], spec: &GridSpec) -> Vec<Detection> {
    let mut pool: Vec<&Detection> = dets
        .iter()
        .filter(|d| d.confidence >= spec.conf_threshold)
        .collect();
    pool.sort_by(|a, b| seed_order(a, b));
    let mut consumed = vec![false; pool.len()];
    let mut out = Vec::new();
    for s in 0..pool.len() {
        if consumed[s] {
            continue;
        }
        let seed = pool[s];
        let mut members: Vec<&Detection> = Vec::new();
        for j in s..pool.len() {
            let d = pool[j];
            if consumed[j] || d.class_index != seed.class_index || !neighbours(seed.cell, d.cell) {
                continue;
            }
            consumed[j] = true;
            // Pool order is by confidence, so the first hit per cell is its best anchor.
            if !members.iter().any(|m| m.cell == d.cell) {
                members.push(d);
            }
        }
        let mut fused = *seed;
        if members.len() > 1 {
            let total: f64 = members.iter().map(|m| m.confidence).sum();
            for (i, p) in fused.points2d.iter_mut().enumerate() {
                let sum = members
                    .iter()
                    .fold(Vec2::zeros(), |acc, m| acc + m.points2d[i] * m.confidence);
                *p = sum / total;
            }
        }
        out.push(fused);
    }
    out
}
