//! Single-shot 6D object pose pipeline downstream of a grid-based network.
//!
//! The crate covers everything after the convolutional backbone:
//!
//! 1. [`geometry`]: rigid transforms, pinhole projection, control points.
//! 2. [`gridcodec`]: encoding ground truth into the `S×S×A×(19+C)` label grid,
//!    decoding predictions, confidence-weighted fusion over neighbouring cells.
//! 3. [`pnp`]: pose recovery from the nine control-point correspondences.
//! 4. [`loss`]: the composite coordinate / confidence / class loss and its
//!    analytic gradient.
//! 5. [`metrics`]: 2D reprojection, ADD, ADD-S, mask IoU, detection AP and a
//!    Monte-Carlo cuboid IoU.
//! 6. [`synth`]: deterministic synthetic scenes and simulated network outputs.
//! 7. [`pipeline`]: decode + fuse + PnP glue shared by the CLI and tests.
//!
//! The crate is `no_std` and needs only `alloc`. File formats and the command
//! line front end live in the `pose6d` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod geometry;
pub mod gridcodec;
pub mod loss;
pub mod metrics;
pub mod pipeline;
pub mod pnp;
pub mod synth;

pub use geometry::{CameraIntrinsics, GeometryError, ObjectModel, Pose};
pub use gridcodec::{
    Anchor, Detection, FrameObject, GridError, GridSpec, GroundTruthFrame, LabelGrid, SlotMask,
    TensorSpace,
};
pub use loss::{LossBreakdown, LossError, LossWeights};
pub use metrics::{MetricError, PRCurve, PoseErrorReport};
pub use pnp::{Correspondences, PnPResult, PnpError};
pub use synth::{ConfidenceMode, NoiseModel, SceneConfig, SynthError};

/// Column vector of 2 doubles, used for pixel coordinates.
pub type Vec2 = nalgebra::Vector2<f64>;
/// Column vector of 3 doubles, used for metric coordinates.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3×3 double matrix.
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Number of control points per object: 8 box corners plus the centroid.
pub const NUM_CONTROL_POINTS: usize = 9;
/// Index of the centroid among the control points.
pub const CENTROID_INDEX: usize = 8;
