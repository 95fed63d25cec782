//! Composite training loss `λ_pt·L_pt + L_conf + λ_id·L_id` and its gradient
//! with respect to the activated prediction tensor.
//!
//! * `L_pt`: mean squared error over the 18 coordinate channels of
//!   responsible slots.
//! * `L_conf`: `Σ λ_slot·(ĉ − c)² / (S·S·A)`, where the target `c` of a
//!   responsible slot is the mean point confidence between the decoded
//!   predicted and target points, recomputed on every evaluation, and 0
//!   elsewhere.
//! * `L_id`: mean cross-entropy over responsible slots, with predicted
//!   probabilities clamped to `[1e-12, 1]`.

use alloc::vec;
use alloc::vec::Vec;

// Unused when feature unification links std and inherent float methods win.
#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::gridcodec::{
    point_confidence_mean, GridSpec, LabelGrid, SlotMask, TensorSpace, CLASS_CHANNEL,
    CONFIDENCE_CHANNEL, POINT_CHANNELS,
};
use crate::NUM_CONTROL_POINTS;

/// Lower clamp applied to predicted class probabilities inside the log.
pub const PROBABILITY_FLOOR: f64 = 1e-12;
/// Allowed deviation of a predicted class vector's sum from 1.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("prediction, target and spec disagree on grid dimensions")]
    SpecMismatch,
    #[error("mask has {got} slots, expected {expected}")]
    MaskMismatch { expected: usize, got: usize },
    #[error("slot {slot}: class probabilities are not on the simplex (sum {sum})")]
    NotSimplex { slot: usize, sum: f64 },
    #[error("loss expects activated tensors")]
    NotActivated,
    #[error("loss weights must be finite and non-negative")]
    InvalidWeights,
}

/// Term weights. The confidence weight differs between responsible slots
/// (`lambda_conf_obj`) and all others (`lambda_conf_noobj`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_pt: f64,
    pub lambda_conf_obj: f64,
    pub lambda_conf_noobj: f64,
    pub lambda_id: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_pt: 1.0,
            lambda_conf_obj: 5.0,
            lambda_conf_noobj: 0.1,
            lambda_id: 1.0,
        }
    }
}

impl LossWeights {
    /// Warm-up weights with the confidence term switched off.
    pub fn pretraining() -> Self {
        Self {
            lambda_conf_obj: 0.0,
            lambda_conf_noobj: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let all = [
            self.lambda_pt,
            self.lambda_conf_obj,
            self.lambda_conf_noobj,
            self.lambda_id,
        ];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(LossError::InvalidWeights)
        }
    }
}

/// How gradients treat the on-the-fly confidence target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConfidenceGradient {
    /// The target confidence is a constant; coordinate gradients come from
    /// `L_pt` only.
    #[default]
    Detached,
    /// Differentiate through the target confidence into the coordinates.
    Full,
}

/// Loss value, its terms, and the weighted gradient of each term.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Unweighted coordinate loss.
    pub pt: f64,
    /// Confidence loss with the per-slot weights already applied.
    pub conf: f64,
    /// Unweighted classification loss.
    pub id: f64,
    /// Gradient of `λ_pt·L_pt`.
    pub pt_gradient: Vec<f64>,
    /// Gradient of `L_conf`.
    pub conf_gradient: Vec<f64>,
    /// Gradient of `λ_id·L_id`.
    pub id_gradient: Vec<f64>,
}

impl LossBreakdown {
    /// Gradient of `total`.
    pub fn gradient(&self) -> Vec<f64> {
        self.pt_gradient
            .iter()
            .zip(&self.conf_gradient)
            .zip(&self.id_gradient)
            .map(|((a, b), c)| a + b + c)
            .collect()
    }
}

fn check_inputs(
    pred: &LabelGrid,
    target: &LabelGrid,
    mask: &SlotMask,
    weights: &LossWeights,
    spec: &GridSpec,
) -> Result<(), LossError> {
    weights.validate()?;
    if !pred.spec().same_shape(spec) || !target.spec().same_shape(spec) {
        return Err(LossError::SpecMismatch);
    }
    if pred.space() != TensorSpace::Activated || target.space() != TensorSpace::Activated {
        return Err(LossError::NotActivated);
    }
    if mask.len() != spec.num_slots() {
        return Err(LossError::MaskMismatch {
            expected: spec.num_slots(),
            got: mask.len(),
        });
    }
    for slot in 0..spec.num_slots() {
        let probs = &pred.slot(slot)[CLASS_CHANNEL..];
        let sum: f64 = probs.iter().sum();
        let all_zero = probs.iter().all(|&p| p == 0.0);
        let simplex = probs.iter().all(|&p| p >= 0.0) && (sum - 1.0).abs() <= SIMPLEX_TOLERANCE;
        if !(all_zero || simplex) {
            return Err(LossError::NotSimplex { slot, sum });
        }
    }
    Ok(())
}

/// Loss with the detached confidence target.
pub fn compute_loss(
    pred: &LabelGrid,
    target: &LabelGrid,
    mask: &SlotMask,
    weights: &LossWeights,
    spec: &GridSpec,
) -> Result<LossBreakdown, LossError> {
    compute_loss_with(
        pred,
        target,
        mask,
        weights,
        spec,
        ConfidenceGradient::Detached,
    )
}

/// Gradient of the total loss with respect to every activated prediction entry.
pub fn loss_gradient(
    pred: &LabelGrid,
    target: &LabelGrid,
    mask: &SlotMask,
    weights: &LossWeights,
    spec: &GridSpec,
) -> Result<Vec<f64>, LossError> {
    compute_loss(pred, target, mask, weights, spec).map(|b| b.gradient())
}

/// Loss and gradients under the chosen confidence-gradient convention.
///
/// Masked-out slots (mask = 0) never contribute to `L_pt` or `L_id`, an
/// all-zero predicted class vector is accepted and scores `−log(1e-12)`.
pub fn compute_loss_with(
    pred: &LabelGrid,
    target: &LabelGrid,
    mask: &SlotMask,
    weights: &LossWeights,
    spec: &GridSpec,
    mode: ConfidenceGradient,
) -> Result<LossBreakdown, LossError> {
    check_inputs(pred, target, mask, weights, spec)?;
    let d = spec.channels();
    let n_slots = spec.num_slots() as f64;
    let n_resp = mask.count();
    let len = spec.tensor_len();
    let mut pt_gradient = vec![0.0; len];
    let mut conf_gradient = vec![0.0; len];
    let mut id_gradient = vec![0.0; len];
    let mut pt = 0.0;
    let mut conf = 0.0;
    let mut id = 0.0;

    // Decoding uses `spec`'s stride and confidence parameters.
    let grid_pred = pred
        .clone()
        .with_spec(spec)
        .map_err(|_| LossError::SpecMismatch)?;
    let grid_target = target
        .clone()
        .with_spec(spec)
        .map_err(|_| LossError::SpecMismatch)?;

    let pt_scale = if n_resp > 0 {
        1.0 / (n_resp * POINT_CHANNELS) as f64
    } else {
        0.0
    };
    let id_scale = if n_resp > 0 { 1.0 / n_resp as f64 } else { 0.0 };

    for slot in 0..spec.num_slots() {
        let base = slot * d;
        let p = pred.slot(slot);
        let t = target.slot(slot);
        let responsible = mask.get(slot);

        let (lambda, conf_target) = if responsible {
            let pred_pts = grid_pred.slot_points(slot);
            let target_pts = grid_target.slot_points(slot);
            (
                weights.lambda_conf_obj,
                point_confidence_mean(&pred_pts, &target_pts, spec),
            )
        } else {
            (weights.lambda_conf_noobj, 0.0)
        };
        let conf_err = p[CONFIDENCE_CHANNEL] - conf_target;
        conf += lambda * conf_err * conf_err / n_slots;
        conf_gradient[base + CONFIDENCE_CHANNEL] = 2.0 * lambda * conf_err / n_slots;

        if !responsible {
            continue;
        }
        for c in 0..POINT_CHANNELS {
            let e = p[c] - t[c];
            pt += e * e * pt_scale;
            pt_gradient[base + c] = weights.lambda_pt * 2.0 * e * pt_scale;
        }
        for c in CLASS_CHANNEL..d {
            let q = p[c];
            if t[c] != 0.0 {
                id -= t[c] * q.max(PROBABILITY_FLOOR).ln() * id_scale;
                if q > PROBABILITY_FLOOR {
                    id_gradient[base + c] = -weights.lambda_id * t[c] / q * id_scale;
                }
            }
        }
        if mode == ConfidenceGradient::Full {
            // d(conf_target)/d(offset) through each point distance.
            let pred_pts = grid_pred.slot_points(slot);
            let target_pts = grid_target.slot_points(slot);
            let outer = -2.0 * lambda * conf_err / n_slots / NUM_CONTROL_POINTS as f64;
            for i in 0..NUM_CONTROL_POINTS {
                let delta = pred_pts[i] - target_pts[i];
                let dist = delta.norm();
                if dist == 0.0 {
                    continue;
                }
                let dc = spec
                    .confidence_form
                    .derivative(dist, spec.alpha, spec.distance_threshold);
                for axis in 0..2 {
                    conf_gradient[base + 2 * i + axis] +=
                        outer * dc * delta[axis] / dist * spec.stride;
                }
            }
        }
    }

    Ok(LossBreakdown {
        total: weights.lambda_pt * pt + conf + weights.lambda_id * id,
        pt,
        conf,
        id,
        pt_gradient,
        conf_gradient,
        id_gradient,
    })
}

/// Maps class-channel gradients from probabilities to softmax logits,
/// `∂L/∂z = p ⊙ (g − ⟨p, g⟩)`. Other channels pass through unchanged.
///
/// Cross-entropy has a boundary minimum in probability space, so the
/// class gradient of a perfect prediction vanishes only in logit space.
pub fn class_gradient_to_logits(pred: &LabelGrid, gradient: &[f64]) -> Vec<f64> {
    let d = pred.spec().channels();
    let mut out = gradient.to_vec();
    for (slot, g) in out.chunks_exact_mut(d).enumerate() {
        let p = &pred.slot(slot)[CLASS_CHANNEL..];
        let g = &mut g[CLASS_CHANNEL..];
        let dot: f64 = p.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        for (gi, pi) in g.iter_mut().zip(p) {
            *gi = pi * (*gi - dot);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, ObjectModel, Pose};
    use crate::gridcodec::{encode_targets, Anchor, GroundTruthFrame};
    use crate::Vec3;
    use alloc::string::String;

    fn fixture() -> (GridSpec, LabelGrid, SlotMask) {
        let spec = GridSpec::new(4, 32.0, 1, 3).unwrap();
        let k = CameraIntrinsics::new(300.0, 300.0, 64.0, 64.0, 128, 128).unwrap();
        let model =
            ObjectModel::cuboid("m", 2, Vec3::new(0.1, 0.1, 0.1), Vec3::zeros(), false).unwrap();
        let pose = Pose::from_axis_angle(Vec3::new(0.1, 0.2, 0.0), Vec3::new(0.02, 0.01, 0.9));
        let frame = GroundTruthFrame::new(k, [(String::from("m"), 2, pose)], &[model]).unwrap();
        let (grid, mask) =
            encode_targets(&frame, &spec, &[Anchor::new(40.0, 40.0).unwrap()]).unwrap();
        (spec, grid, mask)
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let (spec, target, mask) = fixture();
        let b = compute_loss(&target, &target, &mask, &LossWeights::default(), &spec).unwrap();
        assert_eq!(b.total, 0.0);
        assert!(b.pt_gradient.iter().all(|&g| g == 0.0));
        assert!(b.conf_gradient.iter().all(|&g| g == 0.0));
        let logits = class_gradient_to_logits(&target, &b.id_gradient);
        assert!(logits.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn half_confidence_at_responsible_slot() {
        let (spec, target, mask) = fixture();
        let slot = (0..mask.len()).find(|&s| mask.get(s)).unwrap();
        let mut pred = target.clone();
        pred.slot_mut(slot)[CONFIDENCE_CHANNEL] = 0.5;
        let w = LossWeights::default();
        let b = compute_loss(&pred, &target, &mask, &w, &spec).unwrap();
        assert_eq!(b.pt, 0.0);
        assert_eq!(b.id, 0.0);
        let want = w.lambda_conf_obj * 0.25 / (4.0 * 4.0 * 1.0);
        assert!((b.conf - want).abs() < 1e-15);
        assert!((b.total - want).abs() < 1e-15);
    }

    #[test]
    fn all_zero_prediction() {
        let (spec, target, mask) = fixture();
        let pred = LabelGrid::zeros(&spec);
        let b = compute_loss(&pred, &target, &mask, &LossWeights::default(), &spec).unwrap();
        let slot = (0..mask.len()).find(|&s| mask.get(s)).unwrap();
        let t = target.slot(slot);
        let pt_oracle: f64 = t[..POINT_CHANNELS].iter().map(|v| v * v).sum::<f64>() / 18.0;
        assert!((b.pt - pt_oracle).abs() < 1e-12);
        assert!(b.conf > 0.0);
        assert!((b.id - (-(1e-12f64).ln())).abs() < 1e-9);
        assert!(b.total.is_finite());
    }

    #[test]
    fn rejects_off_simplex_classes_and_mismatched_spec() {
        let (spec, target, mask) = fixture();
        let mut pred = target.clone();
        pred.slot_mut(3)[CLASS_CHANNEL] = 0.7;
        assert!(matches!(
            compute_loss(&pred, &target, &mask, &LossWeights::default(), &spec),
            Err(LossError::NotSimplex { slot: 3, .. })
        ));
        let other = GridSpec::new(5, 32.0, 1, 3).unwrap();
        assert_eq!(
            compute_loss(&target, &target, &mask, &LossWeights::default(), &other),
            Err(LossError::SpecMismatch)
        );
        assert_eq!(
            compute_loss(
                &target.to_network(),
                &target,
                &mask,
                &LossWeights::default(),
                &spec
            ),
            Err(LossError::NotActivated)
        );
    }

    #[test]
    fn single_coordinate_perturbation_is_sparse() {
        let (spec, target, mask) = fixture();
        let slot = (0..mask.len()).find(|&s| mask.get(s)).unwrap();
        let base = compute_loss(&target, &target, &mask, &LossWeights::default(), &spec)
            .unwrap()
            .gradient();
        let mut pred = target.clone();
        pred.slot_mut(slot)[5] += 0.1;
        let b = compute_loss(&pred, &target, &mask, &LossWeights::default(), &spec).unwrap();
        let g: Vec<f64> = b.gradient().iter().zip(&base).map(|(a, b)| a - b).collect();
        let d = spec.channels();
        for (i, &v) in g.iter().enumerate() {
            if i == slot * d + 5 || i == slot * d + CONFIDENCE_CHANNEL {
                assert!(v != 0.0, "entry {i}");
            } else {
                assert_eq!(v, 0.0, "entry {i}");
            }
        }
        // Detached: the confidence entry depends only on ĉ − c.
        assert!(g[slot * d + CONFIDENCE_CHANNEL] > 0.0);
        assert!(b.pt_gradient[slot * d + 5] > 0.0);
    }

    #[test]
    fn weights_scale_terms_linearly() {
        let (spec, target, mask) = fixture();
        let pred = LabelGrid::zeros(&spec);
        let w = LossWeights::default();
        let w2 = LossWeights {
            lambda_pt: 2.0 * w.lambda_pt,
            ..w
        };
        let a = compute_loss(&pred, &target, &mask, &w, &spec).unwrap();
        let b = compute_loss(&pred, &target, &mask, &w2, &spec).unwrap();
        assert!((b.total - a.total - w.lambda_pt * a.pt).abs() < 1e-12);
        assert!(
            compute_loss(&pred, &target, &mask, &LossWeights::pretraining(), &spec)
                .unwrap()
                .conf
                == 0.0
        );
    }
}
