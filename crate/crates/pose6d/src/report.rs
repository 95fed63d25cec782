//! Evaluation of decoded poses against ground truth, and the run report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use pose6d_core::geometry::ObjectModel;
use pose6d_core::gridcodec::{corner_bounds, find_model, GroundTruthFrame};
use pose6d_core::metrics::{
    accuracy_curve, evaluate_pose, mean_average_precision, GroundTruthBox, Rect, ScoredBox,
    DETECTION_IOU_THRESHOLD,
};
use pose6d_core::pipeline::match_detections;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::formats::{DetectionRecord, FrameDetections};

/// ADD thresholds reported, as fractions of the diameter.
pub const ADD_FRACTIONS: [f64; 3] = [0.1, 0.3, 0.5];
/// Pixel thresholds of the accuracy-vs-projection-error curve.
pub const CURVE_THRESHOLDS: std::ops::RangeInclusive<u32> = 1..=50;

/// Fractions of ground-truth objects whose pose passes each test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub objects: usize,
    pub reproj_5px: f64,
    pub add_10: f64,
    pub add_30: f64,
    pub add_50: f64,
    pub mask_iou_50: f64,
}

/// Milliseconds per frame and per object; only filled by timed runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub ms_per_frame: f64,
    pub ms_per_object: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub frames: usize,
    pub detections: usize,
    /// Detections without a pose (unknown class or PnP failure).
    pub pose_failures: usize,
    pub aggregate: Accuracies,
    pub per_object: BTreeMap<String, Accuracies>,
    pub map: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

/// Outcome for one ground-truth object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectOutcome {
    pub model_id: String,
    /// Mean vertex reprojection error; infinite when missed or unsolvable.
    pub reproj_px: f64,
    pub add_pass: [bool; 3],
    pub mask_pass: bool,
}

#[derive(Default)]
struct Tally {
    n: usize,
    reproj: usize,
    add: [usize; 3],
    mask: usize,
}

impl Tally {
    fn add(&mut self, o: &ObjectOutcome) {
        self.n += 1;
        self.reproj += usize::from(o.reproj_px < pose6d_core::metrics::REPROJECTION_THRESHOLD_PX);
        for (k, &p) in o.add_pass.iter().enumerate() {
            self.add[k] += usize::from(p);
        }
        self.mask += usize::from(o.mask_pass);
    }

    fn accuracies(&self) -> Accuracies {
        let f = |k: usize| {
            if self.n == 0 {
                0.0
            } else {
                k as f64 / self.n as f64
            }
        };
        Accuracies {
            objects: self.n,
            reproj_5px: f(self.reproj),
            add_10: f(self.add[0]),
            add_30: f(self.add[1]),
            add_50: f(self.add[2]),
            mask_iou_50: f(self.mask),
        }
    }
}

/// Scores every ground-truth object of one frame. Symmetric models are
/// scored with ADD-S.
pub fn evaluate_frame(
    frame: &GroundTruthFrame,
    dets: &[DetectionRecord],
    models: &[ObjectModel],
) -> Vec<ObjectOutcome> {
    let plain: Vec<_> = dets.iter().map(DetectionRecord::detection).collect();
    let matches = match_detections(frame, &plain);
    frame
        .objects
        .iter()
        .zip(matches)
        .map(|(obj, m)| {
            let model =
                find_model(models, &obj.model_id).expect("frames are built from these models");
            let miss = ObjectOutcome {
                model_id: obj.model_id.clone(),
                reproj_px: f64::INFINITY,
                add_pass: [false; 3],
                mask_pass: false,
            };
            let Some(pose) = m
                .and_then(|i| dets[i].pose.as_ref())
                .and_then(|p| p.to_pose().ok())
            else {
                return miss;
            };
            match evaluate_pose(&obj.pose, &pose, model, &frame.camera, 1) {
                Ok(r) => ObjectOutcome {
                    model_id: obj.model_id.clone(),
                    reproj_px: r.reproj_mean_px,
                    add_pass: ADD_FRACTIONS.map(|f| r.add_correct(model.diameter, f)),
                    mask_pass: r.mask_correct(),
                },
                // An estimate behind the camera fails every test.
                Err(_) => miss,
            }
        })
        .collect()
}

fn corner_rect(points: &[pose6d_core::Vec2; 9]) -> Rect {
    let (x0, y0, x1, y1) = corner_bounds(points);
    Rect::new(x0, y0, x1, y1)
}

/// Report plus the per-object outcomes behind it.
pub struct Evaluation {
    pub report: RunReport,
    pub outcomes: Vec<ObjectOutcome>,
}

/// Evaluates decoded frames. `detections[i]` belongs to `frames[i]`.
pub fn evaluate_run(
    frames: &[GroundTruthFrame],
    detections: &[FrameDetections],
    models: &[ObjectModel],
) -> Evaluation {
    assert_eq!(frames.len(), detections.len());
    let outcomes: Vec<ObjectOutcome> = frames
        .par_iter()
        .zip(detections)
        .map(|(f, d)| evaluate_frame(f, &d.detections, models))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    let mut aggregate = Tally::default();
    let mut per: BTreeMap<String, Tally> = BTreeMap::new();
    for o in &outcomes {
        aggregate.add(o);
        per.entry(o.model_id.clone()).or_default().add(o);
    }

    let mut scored = Vec::new();
    let mut truth = Vec::new();
    for (i, (f, d)) in frames.iter().zip(detections).enumerate() {
        for det in &d.detections {
            scored.push(ScoredBox {
                frame: i,
                class_index: det.class_index,
                score: det.score,
                bbox: corner_rect(&det.points2d.map(pose6d_core::Vec2::from)),
            });
        }
        for o in &f.objects {
            truth.push(GroundTruthBox {
                frame: i,
                class_index: o.class_index,
                bbox: corner_rect(&o.points2d),
            });
        }
    }
    let map = mean_average_precision(&scored, &truth, DETECTION_IOU_THRESHOLD).map;

    let all: Vec<&DetectionRecord> = detections.iter().flat_map(|d| &d.detections).collect();
    let report = RunReport {
        frames: frames.len(),
        detections: all.len(),
        pose_failures: all.iter().filter(|d| d.pose.is_none()).count(),
        aggregate: aggregate.accuracies(),
        per_object: per.into_iter().map(|(k, t)| (k, t.accuracies())).collect(),
        map,
        timing: None,
    };
    Evaluation { report, outcomes }
}

/// Pretty JSON with a trailing newline, as written by `eval`.
pub fn report_json(report: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// `(threshold_px, accuracy)` over [`CURVE_THRESHOLDS`]. Empty when there are
/// no ground-truth objects.
pub fn projection_curve(outcomes: &[ObjectOutcome]) -> Vec<(f64, f64)> {
    let errors: Vec<f64> = outcomes.iter().map(|o| o.reproj_px).collect();
    let thresholds: Vec<f64> = CURVE_THRESHOLDS.map(f64::from).collect();
    accuracy_curve(&errors, &thresholds).unwrap_or_default()
}

pub fn curve_csv(curve: &[(f64, f64)]) -> String {
    let mut out = String::from("threshold_px,accuracy\n");
    for (t, a) in curve {
        writeln!(out, "{t},{a}").unwrap();
    }
    out
}

/// Static SVG line chart of accuracy against pixel threshold.
pub fn curve_svg(curve: &[(f64, f64)]) -> String {
    let (w, h, m) = (480.0, 320.0, 40.0);
    let x = |t: f64| m + (t - 1.0) / 49.0 * (w - 2.0 * m);
    let y = |a: f64| h - m - a * (h - 2.0 * m);
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<path d="M{m} {m} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = h - m,
        r = w - m
    )
    .unwrap();
    for (t, label) in [
        (1.0, "1"),
        (10.0, "10"),
        (20.0, "20"),
        (30.0, "30"),
        (40.0, "40"),
        (50.0, "50"),
    ] {
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{label}</text>"#,
            x(t),
            h - m + 16.0
        )
        .unwrap();
    }
    for a in [0.0, 0.5, 1.0] {
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{a}</text>"#,
            m - 6.0,
            y(a) + 4.0
        )
        .unwrap();
    }
    writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">projection error threshold (px)</text>"#,
        w / 2.0,
        h - 6.0
    )
    .unwrap();
    let points: Vec<String> = curve
        .iter()
        .map(|&(t, a)| format!("{:.2},{:.2}", x(t), y(a)))
        .collect();
    writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        points.join(" ")
    )
    .unwrap();
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(reproj_px: f64) -> ObjectOutcome {
        ObjectOutcome {
            model_id: "m".into(),
            reproj_px,
            add_pass: [true; 3],
            mask_pass: true,
        }
    }

    #[test]
    fn curve_counts_misses_as_never_correct() {
        let curve = projection_curve(&[outcome(0.5), outcome(7.0), outcome(f64::INFINITY)]);
        assert_eq!(curve.len(), 50);
        assert_eq!(curve[0], (1.0, 1.0 / 3.0));
        assert_eq!(curve[49], (50.0, 2.0 / 3.0));
        assert!(projection_curve(&[]).is_empty());
        let csv = curve_csv(&curve);
        assert_eq!(csv.lines().count(), 51);
        assert!(curve_svg(&curve).contains("<polyline"));
    }

    #[test]
    fn empty_run_is_all_zero() {
        let e = evaluate_run(&[], &[], &[]);
        assert_eq!(e.report.aggregate, Accuracies::default());
        assert_eq!(e.report.map, 0.0);
    }
}
