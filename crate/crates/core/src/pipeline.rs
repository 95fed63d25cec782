//! Decode, fuse and solve: grid tensor to object poses.

use alloc::vec::Vec;

use crate::geometry::{CameraIntrinsics, ObjectModel, Pose};
use crate::gridcodec::{
    decode, fuse_detections, Detection, GridError, GridSpec, GroundTruthFrame, LabelGrid,
};
use crate::pnp::{solve_pnp, Correspondences, PnPResult};

/// A detection and, when PnP succeeded, its pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub detection: Detection,
    /// Index into the model list of the first model with the detected class.
    pub model_index: Option<usize>,
    pub pnp: Option<PnPResult>,
}

impl PoseEstimate {
    pub fn pose(&self) -> Option<&Pose> {
        self.pnp.as_ref().map(|r| &r.pose)
    }
}

/// Solves PnP for one detection against the model of its class.
pub fn solve_detection(
    detection: Detection,
    models: &[ObjectModel],
    camera: &CameraIntrinsics,
) -> PoseEstimate {
    let model_index = models
        .iter()
        .position(|m| m.class_index == detection.class_index);
    let pnp = model_index.and_then(|i| {
        let corr = Correspondences::new(
            detection.points2d.to_vec(),
            models[i].control_points.to_vec(),
        )
        .ok()?;
        solve_pnp(&corr, camera).ok()
    });
    PoseEstimate {
        detection,
        model_index,
        pnp,
    }
}

/// Decodes `pred`, optionally fuses neighbouring cells, and solves a pose per
/// detection. Output follows decode order, or seed order when fused.
pub fn estimate_poses(
    pred: &LabelGrid,
    spec: &GridSpec,
    models: &[ObjectModel],
    camera: &CameraIntrinsics,
    fuse: bool,
) -> Result<Vec<PoseEstimate>, GridError> {
    let mut dets = decode(pred, spec)?;
    if fuse {
        dets = fuse_detections(&dets, spec);
    }
    Ok(dets
        .into_iter()
        .map(|d| solve_detection(d, models, camera))
        .collect())
}

/// Assigns detections to ground-truth objects one-to-one.
///
/// Detections are visited by descending score (input order breaks ties); each
/// takes the unmatched object of its class whose projected centroid is
/// nearest. Returns, per object, the index of its detection.
pub fn match_detections(frame: &GroundTruthFrame, dets: &[Detection]) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut assigned = alloc::vec![None; frame.objects.len()];
    for i in order {
        let d = &dets[i];
        let c = d.points2d[crate::CENTROID_INDEX];
        let best = frame
            .objects
            .iter()
            .enumerate()
            .filter(|(j, o)| assigned[*j].is_none() && o.class_index == d.class_index)
            .min_by(|(_, a), (_, b)| {
                (a.centroid() - c)
                    .norm_squared()
                    .total_cmp(&(b.centroid() - c).norm_squared())
            })
            .map(|(j, _)| j);
        if let Some(j) = best {
            assigned[j] = Some(i);
        }
    }
    assigned
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_distance;
    use crate::gridcodec::{encode_targets, Anchor};
    use crate::synth::{generate_dataset, SceneConfig};

    #[test]
    fn noiseless_grid_recovers_ground_truth() {
        let cfg = SceneConfig::demo(21, 20);
        let spec = GridSpec::paper_default(3).unwrap();
        let anchors = [Anchor::new(60.0, 60.0).unwrap(); 5];
        for f in generate_dataset(&cfg).unwrap() {
            let (grid, _) = encode_targets(&f, &spec, &anchors).unwrap();
            for fuse in [false, true] {
                let est = estimate_poses(&grid, &spec, &cfg.models, &f.camera, fuse).unwrap();
                let dets: Vec<Detection> = est.iter().map(|e| e.detection).collect();
                let m = match_detections(&f, &dets);
                for (obj, j) in f.objects.iter().zip(m) {
                    let pose = est[j.unwrap()].pose().unwrap();
                    assert!(rotation_distance(pose.rotation(), obj.pose.rotation()) < 1e-6);
                    assert!((pose.translation() - obj.pose.translation()).norm() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn unknown_class_has_no_pose() {
        let cfg = SceneConfig::demo(1, 1);
        let f = &generate_dataset(&cfg).unwrap()[0];
        let mut d = Detection {
            class_index: 99,
            score: 1.0,
            points2d: f.objects[0].points2d,
            cell: (0, 0),
            anchor_index: 0,
            confidence: 1.0,
        };
        let e = solve_detection(d, &cfg.models, &f.camera);
        assert_eq!(e.model_index, None);
        assert!(e.pose().is_none());
        d.class_index = f.objects[0].class_index;
        assert!(solve_detection(d, &cfg.models, &f.camera).pose().is_some());
    }
}
