//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls the library's numeric code; the formulas are
//! re-derived from their definitions so a shared mistake cannot cancel out.

#![allow(dead_code)]

use pose6d_core::gridcodec::{LabelGrid, SlotMask, TensorSpace};
use pose6d_core::{GridSpec, LossWeights};
use rand::Rng;

/// Normalized exponential confidence, written with `exp` rather than `expm1`.
pub fn confidence(d: f64, alpha: f64, d_th: f64) -> f64 {
    if d >= d_th {
        0.0
    } else {
        ((alpha * (1.0 - d / d_th)).exp() - 1.0) / (alpha.exp() - 1.0)
    }
}

/// Pixel coordinates of point `i` stored at `values` in cell `(row, col)`.
fn pixel(values: &[f64], i: usize, row: usize, col: usize, stride: f64) -> (f64, f64) {
    (
        (values[2 * i] + col as f64) * stride,
        (values[2 * i + 1] + row as f64) * stride,
    )
}

/// Target confidence of every responsible slot, from activated data.
pub fn confidence_targets(
    pred: &[f64],
    target: &[f64],
    mask: &[bool],
    spec: &GridSpec,
) -> Vec<f64> {
    let d = 19 + spec.num_classes;
    let mut out = vec![0.0; mask.len()];
    for (slot, &resp) in mask.iter().enumerate() {
        if !resp {
            continue;
        }
        let cell = slot / spec.num_anchors;
        let (row, col) = (cell / spec.grid_size, cell % spec.grid_size);
        let p = &pred[slot * d..(slot + 1) * d];
        let t = &target[slot * d..(slot + 1) * d];
        let mut sum = 0.0;
        for i in 0..9 {
            let (px, py) = pixel(p, i, row, col, spec.stride);
            let (tx, ty) = pixel(t, i, row, col, spec.stride);
            let dist = ((px - tx).powi(2) + (py - ty).powi(2)).sqrt();
            sum += confidence(dist, spec.alpha, spec.distance_threshold);
        }
        out[slot] = sum / 9.0;
    }
    out
}

/// Total loss straight from its definition. `frozen` supplies the
/// per-slot confidence targets; `None` recomputes them from `pred`.
pub fn loss(
    pred: &[f64],
    target: &[f64],
    mask: &[bool],
    spec: &GridSpec,
    w: &LossWeights,
    frozen: Option<&[f64]>,
) -> f64 {
    let d = 19 + spec.num_classes;
    let computed;
    let conf_t = match frozen {
        Some(c) => c,
        None => {
            computed = confidence_targets(pred, target, mask, spec);
            &computed
        }
    };
    let n_resp = mask.iter().filter(|&&m| m).count() as f64;
    let (mut pt, mut conf, mut id) = (0.0, 0.0, 0.0);
    for (slot, &resp) in mask.iter().enumerate() {
        let p = &pred[slot * d..(slot + 1) * d];
        let t = &target[slot * d..(slot + 1) * d];
        let lambda = if resp {
            w.lambda_conf_obj
        } else {
            w.lambda_conf_noobj
        };
        conf += lambda * (p[18] - conf_t[slot]).powi(2);
        if resp {
            for c in 0..18 {
                pt += (p[c] - t[c]).powi(2);
            }
            for c in 19..d {
                id -= t[c] * p[c].max(1e-12).ln();
            }
        }
    }
    let pt = if n_resp > 0.0 {
        pt / (n_resp * 18.0)
    } else {
        0.0
    };
    let id = if n_resp > 0.0 { id / n_resp } else { 0.0 };
    w.lambda_pt * pt + conf / mask.len() as f64 + w.lambda_id * id
}

/// Random activated (prediction, target, mask) triple. Predicted points stay
/// within ~16 px of the targets and class probabilities stay above 0.05, away
/// from the kinks of the confidence cutoff and the probability floor.
pub fn random_pair<R: Rng>(rng: &mut R, spec: &GridSpec) -> (LabelGrid, LabelGrid, SlotMask) {
    let d = spec.channels();
    let n = spec.num_slots();
    let mut pred = vec![0.0; n * d];
    let mut target = vec![0.0; n * d];
    let mut bits = vec![false; n];
    for slot in 0..n {
        let resp = rng.random_bool(0.5);
        bits[slot] = resp;
        let t = &mut target[slot * d..(slot + 1) * d];
        let p = &mut pred[slot * d..(slot + 1) * d];
        for c in 0..18 {
            t[c] = if c >= 16 {
                rng.random_range(0.05..0.95)
            } else {
                rng.random_range(-1.0..2.0)
            };
            p[c] = t[c] + rng.random_range(-0.35..0.35);
        }
        if resp {
            t[18] = 1.0;
            t[19 + rng.random_range(0..spec.num_classes)] = 1.0;
        }
        p[18] = rng.random_range(0.0..1.0);
        let raw: Vec<f64> = (0..spec.num_classes)
            .map(|_| rng.random_range(1.0..3.0))
            .collect();
        let sum: f64 = raw.iter().sum();
        for (c, r) in raw.iter().enumerate() {
            p[19 + c] = r / sum;
        }
    }
    (
        LabelGrid::from_data(spec, TensorSpace::Activated, pred).unwrap(),
        LabelGrid::from_data(spec, TensorSpace::Activated, target).unwrap(),
        SlotMask::from_bits(bits),
    )
}

/// `|a − b| / max(1, |a|, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Average ranks, ties sharing the mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va * vb).sqrt()
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
