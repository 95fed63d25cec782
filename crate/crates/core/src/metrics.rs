//! Pose and detection evaluation measures.

use alloc::vec;
use alloc::vec::Vec;

// Unused when feature unification links std and inherent float methods win.
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, GeometryError, ObjectModel, Pose};
use crate::{Vec2, Vec3};

/// Mean vertex reprojection distance below which a pose counts as correct.
pub const REPROJECTION_THRESHOLD_PX: f64 = 5.0;
/// ADD / ADD-S threshold as a fraction of the object diameter.
pub const ADD_DIAMETER_FRACTION: f64 = 0.1;
/// Silhouette IoU above which a pose counts as correct.
pub const MASK_IOU_THRESHOLD: f64 = 0.5;
/// Box IoU for a detection to match a ground truth.
pub const DETECTION_IOU_THRESHOLD: f64 = 0.5;
/// Minimum sample count for the Monte-Carlo cuboid IoU.
pub const MIN_MC_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("vertex set is empty")]
    EmptyVertexSet,
    #[error("both silhouettes are empty")]
    EmptyUnion,
    #[error("need at least {MIN_MC_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("no sample fell inside either box")]
    NoHits,
    #[error("error list is empty")]
    EmptyErrors,
    #[error("supersampling factor must be at least 1")]
    InvalidSupersampling,
}

/// Mean pixel distance between vertices projected under both poses.
pub fn reprojection_error(
    gt: &Pose,
    est: &Pose,
    vertices: &[Vec3],
    k: &CameraIntrinsics,
) -> Result<f64, MetricError> {
    if vertices.is_empty() {
        return Err(MetricError::EmptyVertexSet);
    }
    let mut sum = 0.0;
    for v in vertices {
        let a = k.project(&gt.transform_point(v))?;
        let b = k.project(&est.transform_point(v))?;
        sum += (a - b).norm();
    }
    Ok(sum / vertices.len() as f64)
}

fn transformed(pose: &Pose, vertices: &[Vec3]) -> Vec<Vec3> {
    vertices.iter().map(|v| pose.transform_point(v)).collect()
}

/// Mean distance between corresponding transformed vertices (ADD).
pub fn add_error(gt: &Pose, est: &Pose, vertices: &[Vec3]) -> Result<f64, MetricError> {
    if vertices.is_empty() {
        return Err(MetricError::EmptyVertexSet);
    }
    let a = transformed(gt, vertices);
    let b = transformed(est, vertices);
    let sum: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).norm()).sum();
    Ok(sum / vertices.len() as f64)
}

/// Mean distance from each ground-truth vertex to the closest estimated
/// vertex (ADD-S). Brute force, `O(N²)`.
pub fn adds_error(gt: &Pose, est: &Pose, vertices: &[Vec3]) -> Result<f64, MetricError> {
    if vertices.is_empty() {
        return Err(MetricError::EmptyVertexSet);
    }
    let a = transformed(gt, vertices);
    let b = transformed(est, vertices);
    let sum: f64 = a
        .iter()
        .map(|p| {
            b.iter()
                .map(|q| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    Ok(sum / vertices.len() as f64)
}

/// Binary silhouette sampled at pixel centres, optionally supersampled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Silhouette {
    pub width: usize,
    pub height: usize,
    /// Samples per pixel side.
    pub supersample: usize,
    bits: Vec<bool>,
}

impl Silhouette {
    fn new(width: usize, height: usize, supersample: usize) -> Self {
        Self {
            width,
            height,
            supersample,
            bits: vec![false; width * height * supersample * supersample],
        }
    }

    fn cols(&self) -> usize {
        self.width * self.supersample
    }

    fn rows(&self) -> usize {
        self.height * self.supersample
    }

    /// Image coordinate of sample column / row `i` (pixel centres are integers).
    fn coord(&self, i: usize) -> f64 {
        let s = self.supersample as f64;
        (i as f64 + 0.5) / s - 0.5
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    fn fill_triangle(&mut self, a: Vec2, b: Vec2, c: Vec2) {
        let area = cross(b - a, c - a);
        if area == 0.0 {
            return;
        }
        let (b, c) = if area > 0.0 { (b, c) } else { (c, b) };
        self.fill_convex(&[a, b, c]);
    }

    /// Fills a counter-clockwise (in image coordinates, y down) convex polygon.
    fn fill_convex(&mut self, poly: &[Vec2]) {
        if poly.len() < 3 {
            return;
        }
        let s = self.supersample as f64;
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for p in poly {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        // Sample index range whose coordinates can fall inside the bounds.
        let lo = |v: f64, n: usize| (((v + 0.5) * s - 0.5).ceil().max(0.0) as usize).min(n);
        let hi =
            |v: f64, n: usize| ((((v + 0.5) * s - 0.5).floor() + 1.0).max(0.0) as usize).min(n);
        let (cols, rows) = (self.cols(), self.rows());
        for row in lo(y0, rows)..hi(y1, rows) {
            let y = self.coord(row);
            for col in lo(x0, cols)..hi(x1, cols) {
                let q = Vec2::new(self.coord(col), y);
                let inside = (0..poly.len()).all(|i| {
                    let a = poly[i];
                    let b = poly[(i + 1) % poly.len()];
                    cross(b - a, q - a) >= 0.0
                });
                if inside {
                    self.bits[row * cols + col] = true;
                }
            }
        }
    }
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Convex hull by monotone chain; counter-clockwise for `cross > 0`.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vec2> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: &mut dyn Iterator<Item = &Vec2> = if pass == 0 {
            &mut pts.iter()
        } else {
            &mut pts.iter().rev()
        };
        for &p in iter {
            while hull.len() >= start + 2 {
                let n = hull.len();
                if cross(hull[n - 1] - hull[n - 2], p - hull[n - 2]) <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Rasterizes the projected model: triangle fill when faces exist, otherwise
/// the convex hull of the projected surface points.
pub fn rasterize(
    model: &ObjectModel,
    pose: &Pose,
    k: &CameraIntrinsics,
    supersample: usize,
) -> Result<Silhouette, MetricError> {
    if supersample == 0 {
        return Err(MetricError::InvalidSupersampling);
    }
    let mut sil = Silhouette::new(k.width as usize, k.height as usize, supersample);
    let points = model.surface_points();
    let projected = points
        .iter()
        .map(|p| k.project(&pose.transform_point(p)))
        .collect::<Result<Vec<_>, _>>()?;
    match (&model.faces, &model.vertices) {
        (Some(faces), Some(_)) if !faces.is_empty() => {
            for f in faces {
                sil.fill_triangle(
                    projected[f[0] as usize],
                    projected[f[1] as usize],
                    projected[f[2] as usize],
                );
            }
        }
        _ => sil.fill_convex(&convex_hull(&projected)),
    }
    Ok(sil)
}

/// IoU of the projected silhouettes under `gt` and `est`.
pub fn mask_iou_2d(
    gt: &Pose,
    est: &Pose,
    model: &ObjectModel,
    k: &CameraIntrinsics,
    supersample: usize,
) -> Result<f64, MetricError> {
    let a = rasterize(model, gt, k, supersample)?;
    let b = rasterize(model, est, k, supersample)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.bits.iter().zip(&b.bits) {
        inter += usize::from(*x && *y);
        union += usize::from(*x || *y);
    }
    if union == 0 {
        return Err(MetricError::EmptyUnion);
    }
    Ok(inter as f64 / union as f64)
}

/// Axis-aligned rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// Bounding box of a point set.
    pub fn around(points: &[Vec2]) -> Self {
        let mut r = Rect::new(
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        );
        for p in points {
            r.x_min = r.x_min.min(p.x);
            r.y_min = r.y_min.min(p.y);
            r.x_max = r.x_max.max(p.x);
            r.y_max = r.y_max.max(p.y);
        }
        r
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }
}

/// Rectangle IoU; a zero-area rectangle gives 0.
pub fn bbox_iou_2d(a: &Rect, b: &Rect) -> f64 {
    let (area_a, area_b) = (a.area(), b.area());
    if !(area_a > 0.0 && area_b > 0.0) {
        return 0.0;
    }
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    inter / (area_a + area_b - inter)
}

/// A scored 2D detection box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub frame: usize,
    pub class_index: usize,
    pub score: f64,
    pub bbox: Rect,
}

/// A ground-truth 2D box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthBox {
    pub frame: usize,
    pub class_index: usize,
    pub bbox: Rect,
}

/// Precision-recall points after each ranked detection, and the area under
/// the monotone precision envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct PRCurve {
    /// `(recall, precision)` pairs.
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
}

/// Average precision with all-points interpolation.
///
/// Detections are ranked by descending score (input order breaks ties) and
/// greedily matched one-to-one to the unmatched ground truth of the same frame
/// and class with the highest IoU, if that IoU reaches `iou_thresh`.
pub fn average_precision(dets: &[ScoredBox], gts: &[GroundTruthBox], iou_thresh: f64) -> PRCurve {
    if gts.is_empty() {
        return PRCurve {
            points: Vec::new(),
            ap: 0.0,
        };
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut matched = vec![false; gts.len()];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::with_capacity(dets.len());
    for i in order {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if matched[j] || g.frame != d.frame || g.class_index != d.class_index {
                continue;
            }
            let iou = bbox_iou_2d(&d.bbox, &g.bbox);
            if iou >= iou_thresh && best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        match best {
            Some((j, _)) => {
                matched[j] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        points.push((tp as f64 / gts.len() as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut ap = 0.0;
    let mut envelope = 0.0f64;
    let mut prev_recall_tail = vec![0.0; points.len()];
    for i in (0..points.len()).rev() {
        envelope = envelope.max(points[i].1);
        prev_recall_tail[i] = envelope;
    }
    let mut prev_recall = 0.0;
    for (i, &(r, _)) in points.iter().enumerate() {
        ap += (r - prev_recall) * prev_recall_tail[i];
        prev_recall = r;
    }
    PRCurve { points, ap }
}

/// Per-class AP and their mean over classes with at least one ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub map: f64,
    pub per_class: Vec<(usize, PRCurve)>,
}

pub fn mean_average_precision(
    dets: &[ScoredBox],
    gts: &[GroundTruthBox],
    iou_thresh: f64,
) -> MapReport {
    let mut classes: Vec<usize> = gts.iter().map(|g| g.class_index).collect();
    classes.sort_unstable();
    classes.dedup();
    let per_class: Vec<(usize, PRCurve)> = classes
        .iter()
        .map(|&c| {
            let d: Vec<ScoredBox> = dets
                .iter()
                .filter(|d| d.class_index == c)
                .copied()
                .collect();
            let g: Vec<GroundTruthBox> =
                gts.iter().filter(|g| g.class_index == c).copied().collect();
            (c, average_precision(&d, &g, iou_thresh))
        })
        .collect();
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|(_, c)| c.ap).sum::<f64>() / per_class.len() as f64
    };
    MapReport { map, per_class }
}

/// Monte-Carlo estimate of a 3D box IoU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McIou {
    pub iou: f64,
    /// Binomial standard error `sqrt(p(1 − p)/n_union)`.
    pub std_error: f64,
    pub samples: usize,
    pub hits_union: usize,
}

/// IoU of the box spanned by `corners` placed at two poses, estimated from
/// `n_samples` uniform samples in the bounding box of both.
pub fn cuboid_iou_3d_mc(
    pose_a: &Pose,
    pose_b: &Pose,
    corners: &[Vec3; 8],
    n_samples: usize,
    seed: u64,
) -> Result<McIou, MetricError> {
    if n_samples < MIN_MC_SAMPLES {
        return Err(MetricError::TooFewSamples(n_samples));
    }
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for c in corners {
        lo = lo.inf(c);
        hi = hi.sup(c);
    }
    let mut bound_lo = Vec3::repeat(f64::INFINITY);
    let mut bound_hi = Vec3::repeat(f64::NEG_INFINITY);
    for pose in [pose_a, pose_b] {
        for c in corners {
            let w = pose.transform_point(c);
            bound_lo = bound_lo.inf(&w);
            bound_hi = bound_hi.sup(&w);
        }
    }
    let inv_a = pose_a.inverse();
    let inv_b = pose_b.inverse();
    let inside = |inv: &Pose, p: &Vec3| {
        let m = inv.transform_point(p);
        (0..3).all(|i| m[i] >= lo[i] && m[i] <= hi[i])
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut both, mut either) = (0usize, 0usize);
    for _ in 0..n_samples {
        let p = Vec3::from_fn(|i, _| rng.random_range(bound_lo[i]..=bound_hi[i]));
        let in_a = inside(&inv_a, &p);
        let in_b = inside(&inv_b, &p);
        both += usize::from(in_a && in_b);
        either += usize::from(in_a || in_b);
    }
    if either == 0 {
        return Err(MetricError::NoHits);
    }
    let iou = both as f64 / either as f64;
    Ok(McIou {
        iou,
        std_error: (iou * (1.0 - iou) / either as f64).sqrt(),
        samples: n_samples,
        hits_union: either,
    })
}

/// Fraction of errors `≤ t` for each threshold `t`.
pub fn accuracy_curve(errors: &[f64], thresholds: &[f64]) -> Result<Vec<(f64, f64)>, MetricError> {
    if errors.is_empty() {
        return Err(MetricError::EmptyErrors);
    }
    let n = errors.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| (t, errors.iter().filter(|&&e| e <= t).count() as f64 / n))
        .collect())
}

/// All pose measures for one estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseErrorReport {
    pub reproj_mean_px: f64,
    pub add_m: f64,
    pub adds_m: f64,
    pub mask_iou: f64,
    /// Whether the model is symmetric, so ADD-S is the pose measure.
    pub used_symmetric: bool,
}

impl PoseErrorReport {
    /// ADD-S for symmetric models, ADD otherwise.
    pub fn pose_distance(&self) -> f64 {
        if self.used_symmetric {
            self.adds_m
        } else {
            self.add_m
        }
    }

    pub fn reprojection_correct(&self) -> bool {
        self.reproj_mean_px < REPROJECTION_THRESHOLD_PX
    }

    /// Pose distance below `fraction` of the diameter.
    pub fn add_correct(&self, diameter: f64, fraction: f64) -> bool {
        self.pose_distance() < fraction * diameter
    }

    pub fn mask_correct(&self) -> bool {
        self.mask_iou > MASK_IOU_THRESHOLD
    }
}

/// Evaluates every measure on the model's surface points.
pub fn evaluate_pose(
    gt: &Pose,
    est: &Pose,
    model: &ObjectModel,
    k: &CameraIntrinsics,
    supersample: usize,
) -> Result<PoseErrorReport, MetricError> {
    let vertices = model.surface_points();
    Ok(PoseErrorReport {
        reproj_mean_px: reprojection_error(gt, est, vertices, k)?,
        add_m: add_error(gt, est, vertices)?,
        adds_m: adds_error(gt, est, vertices)?,
        mask_iou: mask_iou_2d(gt, est, model, k, supersample)?,
        used_symmetric: model.symmetric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_about;
    use alloc::vec;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn cube(symmetric: bool) -> ObjectModel {
        ObjectModel::cuboid("c", 0, Vec3::new(0.1, 0.1, 0.1), Vec3::zeros(), symmetric).unwrap()
    }

    #[test]
    fn identical_poses_are_perfect() {
        let pose = Pose::from_axis_angle(Vec3::new(0.2, -0.4, 0.1), Vec3::new(0.05, 0.0, 1.0));
        let r = evaluate_pose(&pose, &pose, &cube(false), &k(), 1).unwrap();
        assert_eq!(r.reproj_mean_px, 0.0);
        assert_eq!(r.add_m, 0.0);
        assert_eq!(r.adds_m, 0.0);
        assert_eq!(r.mask_iou, 1.0);
    }

    #[test]
    fn lateral_shift_reprojects_to_two_pixels() {
        let z = 2.0;
        let gt = Pose::translation_only(Vec3::new(0.0, 0.0, z));
        // A flat point set at constant depth moves exactly 2 px under the shift.
        let vertices: Vec<Vec3> = (0..16)
            .map(|i| Vec3::new((i % 4) as f64 * 0.03, (i / 4) as f64 * 0.03, 0.0))
            .collect();
        let est = Pose::translation_only(Vec3::new(2.0 * z / 500.0, 0.0, z));
        let e = reprojection_error(&gt, &est, &vertices, &k()).unwrap();
        assert!((e - 2.0).abs() < 1e-12);
        let behind = Pose::translation_only(Vec3::new(0.0, 0.0, -1.0));
        assert!(matches!(
            reprojection_error(&gt, &behind, &vertices, &k()),
            Err(MetricError::Geometry(GeometryError::BehindCamera { .. }))
        ));
    }

    #[test]
    fn add_examples() {
        let gt = Pose::translation_only(Vec3::new(0.0, 0.0, 1.0));
        let est = Pose::translation_only(Vec3::new(0.01, 0.0, 1.0));
        let v = cube(false).surface_points().to_vec();
        assert!((add_error(&gt, &est, &v).unwrap() - 0.01).abs() < 1e-15);
        let rot = Pose::from_axis_angle(Vec3::new(0.01, 0.02, -0.01), Vec3::new(0.0, 0.0, 1.0));
        let mut sum = 0.0;
        for x in &v {
            let a = gt.rotation() * x + gt.translation();
            let b = rot.rotation() * x + rot.translation();
            sum += ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt();
        }
        assert!((add_error(&gt, &rot, &v).unwrap() - sum / v.len() as f64).abs() < 1e-15);
        assert_eq!(add_error(&gt, &rot, &[]), Err(MetricError::EmptyVertexSet));
    }

    #[test]
    fn adds_vanishes_for_symmetric_rotation() {
        // Square in the xy-plane plus an axial point: invariant under 90° about z.
        let v = vec![
            Vec3::new(0.05, 0.05, 0.0),
            Vec3::new(-0.05, 0.05, 0.0),
            Vec3::new(-0.05, -0.05, 0.0),
            Vec3::new(0.05, -0.05, 0.0),
            Vec3::new(0.0, 0.0, 0.08),
        ];
        let gt = Pose::translation_only(Vec3::new(0.0, 0.0, 1.0));
        let est = Pose::new(
            rotation_about(&Vec3::z(), core::f64::consts::FRAC_PI_2),
            *gt.translation(),
        )
        .unwrap();
        assert!(adds_error(&gt, &est, &v).unwrap() < 1e-15);
        assert!(add_error(&gt, &est, &v).unwrap() > 0.05);
    }

    #[test]
    fn convex_hull_of_square_with_interior_point() {
        let pts = [
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(0.5, 0.5),
        ];
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert!(!hull.contains(&Vec2::new(0.5, 0.5)));
    }

    #[test]
    fn rasterized_square_has_expected_pixel_count() {
        let mut sil = Silhouette::new(20, 20, 1);
        // Pixel centres 3..=12 fall inside [2.5, 12.5].
        sil.fill_convex(&convex_hull(&[
            Vec2::new(2.5, 2.5),
            Vec2::new(12.5, 2.5),
            Vec2::new(12.5, 12.5),
            Vec2::new(2.5, 12.5),
        ]));
        assert_eq!(sil.count(), 100);
        let mut tri = Silhouette::new(20, 20, 2);
        tri.fill_triangle(
            Vec2::new(2.5, 2.5),
            Vec2::new(2.5, 12.5),
            Vec2::new(12.5, 2.5),
        );
        let mut tri2 = Silhouette::new(20, 20, 2);
        tri2.fill_triangle(
            Vec2::new(12.5, 12.5),
            Vec2::new(2.5, 12.5),
            Vec2::new(12.5, 2.5),
        );
        // The two halves cover the square; the diagonal is shared.
        let total = tri.count() + tri2.count();
        assert!((400..=420).contains(&total));
    }

    #[test]
    fn disjoint_silhouettes() {
        let a = Pose::translation_only(Vec3::new(-0.3, 0.0, 2.0));
        let b = Pose::translation_only(Vec3::new(0.3, 0.0, 2.0));
        assert_eq!(mask_iou_2d(&a, &b, &cube(false), &k(), 1).unwrap(), 0.0);
        let off = Pose::translation_only(Vec3::new(50.0, 0.0, 2.0));
        assert_eq!(
            mask_iou_2d(&off, &off, &cube(false), &k(), 1),
            Err(MetricError::EmptyUnion)
        );
    }

    #[test]
    fn bbox_iou_examples() {
        let a = Rect::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(bbox_iou_2d(&a, &a), 1.0);
        assert_eq!(bbox_iou_2d(&a, &Rect::new(2.0, 0.0, 3.0, 1.0)), 0.0);
        let b = Rect::new(0.5, 0.0, 1.5, 1.0);
        assert!((bbox_iou_2d(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(bbox_iou_2d(&a, &Rect::new(0.0, 0.0, 0.0, 1.0)), 0.0);
    }

    fn boxes(scores_tp: &[(f64, bool)]) -> (Vec<ScoredBox>, Vec<GroundTruthBox>) {
        let gts: Vec<GroundTruthBox> = (0..2)
            .map(|i| GroundTruthBox {
                frame: 0,
                class_index: 0,
                bbox: Rect::new(i as f64 * 100.0, 0.0, i as f64 * 100.0 + 50.0, 50.0),
            })
            .collect();
        let mut next_gt = 0;
        let dets = scores_tp
            .iter()
            .map(|&(score, tp)| {
                let bbox = if tp {
                    next_gt += 1;
                    gts[next_gt - 1].bbox
                } else {
                    Rect::new(500.0, 500.0, 520.0, 520.0)
                };
                ScoredBox {
                    frame: 0,
                    class_index: 0,
                    score,
                    bbox,
                }
            })
            .collect();
        (dets, gts)
    }

    #[test]
    fn ap_perfect_and_empty() {
        let (dets, gts) = boxes(&[(0.9, true), (0.8, true)]);
        assert_eq!(average_precision(&dets, &gts, 0.5).ap, 1.0);
        assert_eq!(average_precision(&[], &gts, 0.5).ap, 0.0);
    }

    #[test]
    fn ap_interleaved_fixture_matches_enumeration() {
        let (dets, gts) = boxes(&[(0.9, true), (0.7, true), (0.8, false)]);
        let curve = average_precision(&dets, &gts, 0.5);
        // Ranked: TP, FP, TP. Enumerate cut-offs by hand.
        let cutoffs = [(1.0, 1.0, 0.5), (2.0, 1.0, 0.5), (3.0, 2.0, 1.0)];
        let mut oracle = 0.0;
        for step in 1..=2 {
            let level = step as f64 / 2.0;
            let best = cutoffs
                .iter()
                .filter(|c| c.2 >= level)
                .map(|c| c.1 / c.0)
                .fold(0.0, f64::max);
            oracle += best / 2.0;
        }
        assert_eq!(curve.ap, oracle);
        assert!((curve.ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(curve.points, vec![(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)]);
    }

    #[test]
    fn map_skips_classes_without_ground_truth() {
        let (mut dets, gts) = boxes(&[(0.9, true), (0.8, true)]);
        dets.push(ScoredBox {
            frame: 0,
            class_index: 7,
            score: 0.99,
            bbox: Rect::new(0.0, 0.0, 10.0, 10.0),
        });
        let report = mean_average_precision(&dets, &gts, 0.5);
        assert_eq!(report.per_class.len(), 1);
        assert_eq!(report.map, 1.0);
        assert_eq!(mean_average_precision(&[], &[], 0.5).map, 0.0);
    }

    #[test]
    fn mc_iou_cases() {
        let corners = cube(false).box_corners();
        let p = Pose::translation_only(Vec3::new(0.0, 0.0, 1.0));
        let same = cuboid_iou_3d_mc(&p, &p, &corners, 10_000, 1).unwrap();
        assert_eq!(same.iou, 1.0);
        let far = Pose::translation_only(Vec3::new(1.0, 0.0, 1.0));
        assert_eq!(
            cuboid_iou_3d_mc(&p, &far, &corners, 10_000, 1).unwrap().iou,
            0.0
        );
        assert_eq!(
            cuboid_iou_3d_mc(&p, &far, &corners, 999, 1),
            Err(MetricError::TooFewSamples(999))
        );
        let a = cuboid_iou_3d_mc(&p, &far, &corners, 5000, 42).unwrap();
        let b = cuboid_iou_3d_mc(&p, &far, &corners, 5000, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn accuracy_curve_examples() {
        let zeros = [0.0; 5];
        let c = accuracy_curve(&zeros, &[1.0, 5.0]).unwrap();
        assert!(c.iter().all(|&(_, f)| f == 1.0));
        assert_eq!(accuracy_curve(&[5.1], &[5.0]).unwrap(), vec![(5.0, 0.0)]);
        let errs = [0.5, 2.0, 3.0, 7.5, 12.0, 4.99];
        let thresholds = [1.0, 3.0, 5.0, 10.0];
        let curve = accuracy_curve(&errs, &thresholds).unwrap();
        for (t, f) in curve {
            let mut count = 0;
            for e in errs {
                if e <= t {
                    count += 1;
                }
            }
            assert_eq!(f, count as f64 / errs.len() as f64);
        }
        assert_eq!(accuracy_curve(&[], &[1.0]), Err(MetricError::EmptyErrors));
    }
}
