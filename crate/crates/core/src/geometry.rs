//! Rigid transforms, pinhole projection and control-point extraction.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{Rotation3, Unit};
// Unused when feature unification links std and inherent float methods win.
#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::{Mat3, Vec2, Vec3, NUM_CONTROL_POINTS};

/// Tolerance on `‖RᵀR − I‖_max` and `|det R − 1|` accepted by [`Pose::new`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("rotation is not orthonormal (max deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },
    #[error("rotation has determinant {det}, expected 1")]
    NotProperRotation { det: f64 },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("need at least 4 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("vertices are collinear")]
    CollinearVertices,
    #[error("vertex extent has zero volume")]
    DegenerateExtent,
    #[error("invalid object model: {0}")]
    InvalidModel(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Rigid transform placing a model in the camera frame: `x_cam = R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
}

impl Pose {
    /// Builds a pose after checking that `rotation` is a proper rotation.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        if rotation
            .iter()
            .chain(translation.iter())
            .any(|v| !v.is_finite())
        {
            return Err(GeometryError::NonFinite("pose"));
        }
        let deviation = (rotation.transpose() * rotation - Mat3::identity()).amax();
        if deviation >= ROTATION_TOLERANCE {
            return Err(GeometryError::NotOrthonormal { deviation });
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::NotProperRotation { det });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        Self {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    /// Pose from a rotation vector (axis × angle, radians) and a translation.
    pub fn from_axis_angle(axis_angle: Vec3, translation: Vec3) -> Self {
        Self::from_rotation(Rotation3::from_scaled_axis(axis_angle), translation)
    }

    pub fn translation_only(translation: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Maps a model-frame point into the camera frame.
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation entries in row-major order.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    pub fn from_row_major(r: &[f64; 9], t: &[f64; 3]) -> Result<Self, GeometryError> {
        Self::new(Mat3::from_row_slice(r), Vec3::new(t[0], t[1], t[2]))
    }
}

/// `self ∘ other`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn invert(p: &Pose) -> Pose {
    p.inverse()
}

/// Ideal pinhole camera (no distortion).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if ![self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(GeometryError::NonFinite("intrinsics"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(
                "focal lengths must be positive",
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics(
                "image size must be positive",
            ));
        }
        if !(0.0..f64::from(self.width)).contains(&self.cx)
            || !(0.0..f64::from(self.height)).contains(&self.cy)
        {
            return Err(GeometryError::InvalidIntrinsics(
                "principal point must lie inside the image",
            ));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a camera-frame point.
    pub fn project(&self, p: &Vec3) -> Result<Vec2, GeometryError> {
        if p.z <= 0.0 {
            return Err(GeometryError::BehindCamera { depth: p.z });
        }
        Ok(Vec2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Normalized image coordinates `K⁻¹·(u, v, 1)` without the trailing 1.
    pub fn normalize(&self, pixel: &Vec2) -> Vec2 {
        Vec2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy)
    }

    /// Camera-frame point at `depth` along the ray through `pixel`.
    pub fn backproject(&self, pixel: &Vec2, depth: f64) -> Vec3 {
        let n = self.normalize(pixel);
        Vec3::new(n.x * depth, n.y * depth, depth)
    }

    pub fn contains(&self, pixel: &Vec2) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < f64::from(self.width)
            && pixel.y < f64::from(self.height)
    }
}

/// Projects a model-frame point through `pose` and `k`.
pub fn project_point(p: &Vec3, pose: &Pose, k: &CameraIntrinsics) -> Result<Vec2, GeometryError> {
    k.project(&pose.transform_point(p))
}

/// Projects all nine control points of a model.
pub fn project_control_points(
    control_points: &[Vec3; NUM_CONTROL_POINTS],
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<[Vec2; NUM_CONTROL_POINTS], GeometryError> {
    let mut out = [Vec2::zeros(); NUM_CONTROL_POINTS];
    for (dst, p) in out.iter_mut().zip(control_points) {
        *dst = project_point(p, pose, k)?;
    }
    Ok(out)
}

/// Corner `i` of the box `[lo, hi]`: bit 0 selects x, bit 1 y, bit 2 z
/// (0 = min, 1 = max).
pub fn box_corner(lo: &Vec3, hi: &Vec3, i: usize) -> Vec3 {
    Vec3::new(
        if i & 1 == 0 { lo.x } else { hi.x },
        if i & 2 == 0 { lo.y } else { hi.y },
        if i & 4 == 0 { lo.z } else { hi.z },
    )
}

fn extent(vertices: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for v in vertices {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    (lo, hi)
}

/// The 8 corners of the tight axis-aligned box around `vertices` in
/// binary-counting order, followed by the vertex mean.
pub fn control_points_of(vertices: &[Vec3]) -> Result<[Vec3; NUM_CONTROL_POINTS], GeometryError> {
    if vertices.len() < 4 {
        return Err(GeometryError::TooFewVertices(vertices.len()));
    }
    if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
        return Err(GeometryError::NonFinite("vertices"));
    }
    if collinear(vertices) {
        return Err(GeometryError::CollinearVertices);
    }
    let (lo, hi) = extent(vertices);
    let size = hi - lo;
    let scale = size.amax();
    if size.iter().any(|&s| s <= scale * 1e-12) {
        return Err(GeometryError::DegenerateExtent);
    }
    let centroid = vertices.iter().fold(Vec3::zeros(), |acc, v| acc + v) / vertices.len() as f64;
    let mut out = [Vec3::zeros(); NUM_CONTROL_POINTS];
    for (i, c) in out.iter_mut().take(8).enumerate() {
        *c = box_corner(&lo, &hi, i);
    }
    // The mean can land a rounding error outside a flat-sided box.
    out[8] = centroid.sup(&lo).inf(&hi);
    Ok(out)
}

fn collinear(vertices: &[Vec3]) -> bool {
    let base = vertices[0];
    let Some(far) = vertices
        .iter()
        .map(|v| v - base)
        .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))
    else {
        return true;
    };
    let len = far.norm();
    if len == 0.0 {
        return true;
    }
    let dir = far / len;
    vertices
        .iter()
        .all(|v| (v - base).cross(&dir).norm() <= 1e-12 * len)
}

/// Maximum pairwise distance, `O(N²)`.
pub fn max_pairwise_distance(points: &[Vec3]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    best.sqrt()
}

/// Geodesic angle between two rotations, in `[0, π]`.
///
/// Evaluated as `atan2(sin θ, cos θ)` from the relative rotation, which equals
/// `arccos((tr(R1ᵀR2) − 1)/2)` but stays accurate for tiny angles.
pub fn rotation_distance(r1: &Mat3, r2: &Mat3) -> f64 {
    let rel = r1.transpose() * r2;
    let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let vee = Vec3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    );
    let sin = (vee.norm() / 2.0).min(1.0);
    sin.atan2(cos).clamp(0.0, core::f64::consts::PI)
}

/// Rotation about a (not necessarily unit) axis.
pub fn rotation_about(axis: &Vec3, angle: f64) -> Mat3 {
    *Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).matrix()
}

/// Triangle faces of an axis-aligned box built from the binary-ordered corners.
pub const BOX_FACES: [[u32; 3]; 12] = [
    [0, 2, 3],
    [0, 3, 1],
    [4, 5, 7],
    [4, 7, 6],
    [0, 1, 5],
    [0, 5, 4],
    [2, 6, 7],
    [2, 7, 3],
    [0, 4, 6],
    [0, 6, 2],
    [1, 3, 7],
    [1, 7, 5],
];

/// A rigid object: class, control points, diameter, optional mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    pub model_id: String,
    pub class_index: usize,
    pub control_points: [Vec3; NUM_CONTROL_POINTS],
    pub diameter: f64,
    pub symmetric: bool,
    pub vertices: Option<Vec<Vec3>>,
    pub faces: Option<Vec<[u32; 3]>>,
}

impl ObjectModel {
    /// Builds a model from a mesh, deriving control points and diameter.
    pub fn from_mesh(
        model_id: impl Into<String>,
        class_index: usize,
        vertices: Vec<Vec3>,
        faces: Option<Vec<[u32; 3]>>,
        symmetric: bool,
    ) -> Result<Self, GeometryError> {
        let control_points = control_points_of(&vertices)?;
        let diameter = max_pairwise_distance(&vertices);
        let model = Self {
            model_id: model_id.into(),
            class_index,
            control_points,
            diameter,
            symmetric,
            vertices: Some(vertices),
            faces,
        };
        model.check_faces()?;
        Ok(model)
    }

    /// Box of the given edge lengths centred at `center`, meshed with 12 triangles.
    pub fn cuboid(
        model_id: impl Into<String>,
        class_index: usize,
        size: Vec3,
        center: Vec3,
        symmetric: bool,
    ) -> Result<Self, GeometryError> {
        let lo = center - size / 2.0;
        let hi = center + size / 2.0;
        let vertices = (0..8).map(|i| box_corner(&lo, &hi, i)).collect();
        Self::from_mesh(
            model_id,
            class_index,
            vertices,
            Some(BOX_FACES.to_vec()),
            symmetric,
        )
    }

    /// Reassembles a model from stored fields, checking every invariant.
    pub fn from_parts(
        model_id: impl Into<String>,
        class_index: usize,
        control_points: [Vec3; NUM_CONTROL_POINTS],
        diameter: f64,
        symmetric: bool,
        vertices: Option<Vec<Vec3>>,
        faces: Option<Vec<[u32; 3]>>,
    ) -> Result<Self, GeometryError> {
        let model = Self {
            model_id: model_id.into(),
            class_index,
            control_points,
            diameter,
            symmetric,
            vertices,
            faces,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.diameter.is_finite() && self.diameter > 0.0) {
            return Err(GeometryError::InvalidModel("diameter must be positive"));
        }
        let (lo, hi) = extent(&self.control_points[..8]);
        for (i, c) in self.control_points[..8].iter().enumerate() {
            if *c != box_corner(&lo, &hi, i) {
                return Err(GeometryError::InvalidModel(
                    "control points 0..8 must be box corners in binary order",
                ));
            }
        }
        let centroid = &self.control_points[8];
        if (0..3).any(|a| centroid[a] < lo[a] || centroid[a] > hi[a]) {
            return Err(GeometryError::InvalidModel("centroid lies outside the box"));
        }
        if let Some(vertices) = &self.vertices {
            let (vlo, vhi) = extent(vertices);
            if vertices.is_empty() || vlo != lo || vhi != hi {
                return Err(GeometryError::InvalidModel(
                    "box corners do not span the vertex extents",
                ));
            }
            let d = max_pairwise_distance(vertices);
            if (d - self.diameter).abs() > 1e-9 * d.max(1.0) {
                return Err(GeometryError::InvalidModel(
                    "diameter differs from the maximum vertex distance",
                ));
            }
        }
        self.check_faces()
    }

    fn check_faces(&self) -> Result<(), GeometryError> {
        if let Some(faces) = &self.faces {
            let n = self.vertices.as_ref().map_or(0, Vec::len);
            if faces.iter().flatten().any(|&i| i as usize >= n) {
                return Err(GeometryError::InvalidModel("face index out of range"));
            }
        }
        Ok(())
    }

    /// Points used for surface metrics: mesh vertices when present, else the
    /// 8 box corners.
    pub fn surface_points(&self) -> &[Vec3] {
        match &self.vertices {
            Some(v) if !v.is_empty() => v,
            _ => &self.control_points[..8],
        }
    }

    pub fn box_corners(&self) -> [Vec3; 8] {
        let mut out = [Vec3::zeros(); 8];
        out.copy_from_slice(&self.control_points[..8]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn k500() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn projects_on_optical_axis() {
        let pose = Pose::translation_only(Vec3::new(0.0, 0.0, 2.0));
        let p = project_point(&Vec3::zeros(), &pose, &k500()).unwrap();
        assert_eq!(p, Vec2::new(320.0, 240.0));
    }

    #[test]
    fn projects_off_axis_point() {
        let pose = Pose::translation_only(Vec3::new(0.0, 0.0, 2.0));
        let p = project_point(&Vec3::new(0.1, 0.0, 0.0), &pose, &k500()).unwrap();
        assert!(close(p.x, 345.0, 1e-12) && close(p.y, 240.0, 1e-12));
    }

    #[test]
    fn behind_camera_is_rejected() {
        let pose = Pose::translation_only(Vec3::new(0.0, 0.0, -1.0));
        let err = project_point(&Vec3::zeros(), &pose, &k500()).unwrap_err();
        assert!(matches!(err, GeometryError::BehindCamera { .. }));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 3.5, 4, 4).is_ok());
    }

    #[test]
    fn unit_cube_control_points() {
        let vertices: Vec<Vec3> = (0..8)
            .map(|i| box_corner(&Vec3::repeat(-0.5), &Vec3::repeat(0.5), i))
            .collect();
        let cp = control_points_of(&vertices).unwrap();
        for (i, c) in cp.iter().take(8).enumerate() {
            for axis in 0..3 {
                let expected = if i >> axis & 1 == 1 { 0.5 } else { -0.5 };
                assert_eq!(c[axis], expected);
            }
        }
        assert_eq!(cp[8], Vec3::zeros());
    }

    #[test]
    fn offset_box_control_points_match_min_max_scan() {
        let size = Vec3::new(0.2, 0.1, 0.3);
        let center = Vec3::new(1.0, 0.0, 0.0);
        // Box corners plus face centres; the mean is still the box centre.
        let mut vertices: Vec<Vec3> = (0..8)
            .map(|i| box_corner(&(center - size / 2.0), &(center + size / 2.0), i))
            .collect();
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut v = center;
                v[axis] += sign * size[axis] / 2.0;
                vertices.push(v);
            }
        }
        let cp = control_points_of(&vertices).unwrap();
        // Independent scan.
        let mut lo = [f64::MAX; 3];
        let mut hi = [f64::MIN; 3];
        for v in &vertices {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        for (i, c) in cp.iter().take(8).enumerate() {
            for a in 0..3 {
                let want = if i >> a & 1 == 1 { hi[a] } else { lo[a] };
                assert_eq!(c[a], want);
            }
        }
        assert!((cp[8] - center).norm() < 1e-15);
    }

    #[test]
    fn degenerate_vertex_sets_fail() {
        let line = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        assert_eq!(
            control_points_of(&line),
            Err(GeometryError::TooFewVertices(3))
        );
        let line4 = vec![
            Vec3::zeros(),
            Vec3::repeat(1.0),
            Vec3::repeat(2.0),
            Vec3::repeat(3.0),
        ];
        assert_eq!(
            control_points_of(&line4),
            Err(GeometryError::CollinearVertices)
        );
        let flat = vec![
            Vec3::zeros(),
            Vec3::x(),
            Vec3::y(),
            Vec3::new(1.0, 1.0, 0.0),
        ];
        assert_eq!(
            control_points_of(&flat),
            Err(GeometryError::DegenerateExtent)
        );
    }

    #[test]
    fn rotation_distance_examples() {
        let r = rotation_about(&Vec3::new(0.3, -1.0, 0.2), 1.1);
        assert_eq!(rotation_distance(&r, &r), 0.0);
        let rz = rotation_about(&Vec3::z(), core::f64::consts::FRAC_PI_2);
        assert!(close(
            rotation_distance(&Mat3::identity(), &rz),
            core::f64::consts::FRAC_PI_2,
            1e-15
        ));
        let small = r * rotation_about(&Vec3::new(1.0, 2.0, 3.0), 0.01);
        assert!(close(rotation_distance(&r, &small), 0.01, 1e-9));
        let half_turn = rotation_about(&Vec3::x(), core::f64::consts::PI);
        assert!(close(
            rotation_distance(&Mat3::identity(), &half_turn),
            core::f64::consts::PI,
            1e-12
        ));
    }

    #[test]
    fn compose_and_invert() {
        let id = Pose::identity();
        assert_eq!(invert(&id), id);
        let p = Pose::from_axis_angle(Vec3::new(0.2, 0.4, -0.1), Vec3::new(0.5, -1.0, 3.0));
        let e = compose(&p, &invert(&p));
        assert!((e.rotation() - Mat3::identity()).amax() < 1e-12);
        assert!(e.translation().amax() < 1e-12);
        let a = Pose::translation_only(Vec3::new(0.0, 0.0, 1.0));
        let b = Pose::translation_only(Vec3::new(0.0, 0.0, 2.0));
        assert_eq!(*compose(&a, &b).translation(), Vec3::new(0.0, 0.0, 3.0));
    }

    #[test]
    fn pose_rejects_non_rotations() {
        let scaled = Mat3::identity() * 1.01;
        assert!(matches!(
            Pose::new(scaled, Vec3::zeros()),
            Err(GeometryError::NotOrthonormal { .. })
        ));
        let reflect = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            Pose::new(reflect, Vec3::zeros()),
            Err(GeometryError::NotProperRotation { .. })
        ));
    }

    #[test]
    fn cuboid_model_invariants() {
        let m =
            ObjectModel::cuboid("box", 0, Vec3::new(0.1, 0.2, 0.3), Vec3::zeros(), false).unwrap();
        assert!(close(m.diameter, (0.01f64 + 0.04 + 0.09).sqrt(), 1e-15));
        assert!(m.validate().is_ok());
        let mut bad = m.clone();
        bad.control_points.swap(0, 1);
        assert!(bad.validate().is_err());
    }
}
