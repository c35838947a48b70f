use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou_3d, nms_3d, Box3D};

pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.25, 0.5];

/// Detection order: descending score, ties by input position.
fn ranked(dets: &[Box3D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| match dets[j].score.total_cmp(&dets[i].score) {
        Ordering::Equal => i.cmp(&j),
        o => o,
    });
    order
}

/// Greedy matching in score order. Each detection takes the unmatched
/// same-class ground truth of highest IoU (lowest index on ties) when that
/// IoU reaches the threshold. Flags are aligned with `dets`.
pub fn match_detections(dets: &[Box3D], gts: &[Box3D], iou_threshold: f64) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    for i in ranked(dets) {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.class_id != d.class_id {
                continue;
            }
            let iou = box_iou_3d(d, gt);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            tp[i] = true;
        }
    }
    tp
}

/// All-point interpolated average precision. Detections with equal scores
/// enter the curve together. `None` when there is no ground truth.
pub fn average_precision(flags: &[bool], scores: &[f64], gt_count: usize) -> Option<f64> {
    if gt_count == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..flags.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]].total_cmp(&s) == Ordering::Equal {
            tp += flags[order[k]] as usize;
            seen += 1;
            k += 1;
        }
        recall.push(tp as f64 / gt_count as f64);
        precision.push(tp as f64 / seen as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    Some(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub class_id: usize,
    pub gt: usize,
    pub detections: usize,
    /// Per threshold; `None` for classes without ground truth.
    pub ap: Vec<Option<f64>>,
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub thresholds: Vec<f64>,
    pub classes: Vec<ClassResult>,
    /// Mean AP over classes with ground truth, per threshold.
    pub map: Vec<f64>,
}

impl EvalResult {
    pub fn map_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds.iter().position(|t| *t == threshold).map(|i| self.map[i])
    }

    pub fn map25(&self) -> f64 {
        self.map_at(0.25).unwrap_or(0.0)
    }

    pub fn map50(&self) -> f64 {
        self.map_at(0.5).unwrap_or(0.0)
    }
}

/// Per-scene matching, per-class pooled PR curves, unweighted class mean.
pub fn evaluate(
    predictions: &BTreeMap<String, Vec<Box3D>>,
    gts: &BTreeMap<String, Vec<Box3D>>,
    thresholds: &[f64],
    num_classes: usize,
) -> Result<EvalResult> {
    if let Some(id) = predictions.keys().find(|k| !gts.contains_key(*k)) {
        return Err(Error::Lookup(format!("predictions for unknown scene '{id}'")));
    }
    let empty = Vec::new();
    let mut classes: Vec<ClassResult> = (0..num_classes)
        .map(|c| ClassResult {
            class_id: c,
            gt: 0,
            detections: 0,
            ap: vec![None; thresholds.len()],
            tp: vec![0; thresholds.len()],
            fp: vec![0; thresholds.len()],
        })
        .collect();
    for g in gts.values().flatten() {
        if g.class_id >= num_classes {
            return Err(Error::Validation(format!("ground-truth class {} out of range", g.class_id)));
        }
        classes[g.class_id].gt += 1;
    }
    // per class, per threshold: (flag, score) pooled over scenes
    let mut pooled: Vec<Vec<(Vec<bool>, Vec<f64>)>> = vec![vec![(Vec::new(), Vec::new()); thresholds.len()]; num_classes];
    for (id, gt) in gts {
        let dets = predictions.get(id).unwrap_or(&empty);
        for (t, &thr) in thresholds.iter().enumerate() {
            let flags = match_detections(dets, gt, thr);
            for (d, f) in dets.iter().zip(flags) {
                if d.class_id >= num_classes {
                    return Err(Error::Validation(format!("predicted class {} out of range", d.class_id)));
                }
                let entry = &mut pooled[d.class_id][t];
                entry.0.push(f);
                entry.1.push(d.score);
            }
        }
    }
    let mut map = vec![0.0; thresholds.len()];
    let scored = classes.iter().filter(|c| c.gt > 0).count();
    for (c, res) in classes.iter_mut().enumerate() {
        for t in 0..thresholds.len() {
            let (flags, scores) = &pooled[c][t];
            res.detections = flags.len();
            res.tp[t] = flags.iter().filter(|f| **f).count();
            res.fp[t] = flags.len() - res.tp[t];
            res.ap[t] = average_precision(flags, scores, res.gt);
            if let Some(ap) = res.ap[t] {
                map[t] += ap / scored as f64;
            }
        }
    }
    Ok(EvalResult { thresholds: thresholds.to_vec(), classes, map })
}

/// Concatenates per-view world-frame boxes and suppresses duplicates.
pub fn fuse_per_view_predictions(per_view: &[Vec<Box3D>], iou_threshold: f64) -> Vec<Box3D> {
    let all: Vec<Box3D> = per_view.iter().flatten().cloned().collect();
    nms_3d(&all, iou_threshold).into_iter().map(|i| all[i]).collect()
}
