//! Reference implementations written independently of the production code
//! paths, plus the randomized instance generators used to compare them.

use std::collections::BTreeMap;

use rand::Rng;

use crate::geometry::Box3D;
use crate::numerics::Tensor;

/// Box overlap from explicit interval intersections.
pub fn iou_reference(a: &Box3D, b: &Box3D) -> f64 {
    let mut inter = 1.0;
    for k in 0..3 {
        let lo = (a.center[k] - a.size[k] / 2.0).max(b.center[k] - b.size[k] / 2.0);
        let hi = (a.center[k] + a.size[k] / 2.0).min(b.center[k] + b.size[k] / 2.0);
        if hi <= lo {
            return 0.0;
        }
        inter *= hi - lo;
    }
    let vol = |x: &Box3D| {
        (0..3).map(|k| (x.center[k] + x.size[k] / 2.0) - (x.center[k] - x.size[k] / 2.0)).product::<f64>()
    };
    inter / (vol(a) + vol(b) - inter)
}

/// Best remaining box by score, lowest index on ties.
fn best_remaining(boxes: &[Box3D], alive: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in 0..boxes.len() {
        if !alive[i] {
            continue;
        }
        best = match best {
            Some(b) if boxes[b].score >= boxes[i].score => Some(b),
            _ => Some(i),
        };
    }
    best
}

/// Repeatedly keeps the best remaining box and deletes its same-class
/// overlaps above the threshold.
pub fn nms_reference(boxes: &[Box3D], iou_threshold: f64) -> Vec<usize> {
    let mut alive = vec![true; boxes.len()];
    let mut kept = Vec::new();
    while let Some(i) = best_remaining(boxes, &alive) {
        alive[i] = false;
        kept.push(i);
        for j in 0..boxes.len() {
            if alive[j] && boxes[j].class_id == boxes[i].class_id && iou_reference(&boxes[i], &boxes[j]) > iou_threshold {
                alive[j] = false;
            }
        }
    }
    kept
}

/// Minimum total cost over every injective map from columns to rows.
pub fn assignment_reference(cost: &Tensor) -> Option<f64> {
    fn search(cost: &Tensor, g: usize, used: &mut Vec<bool>, acc: f64, best: &mut Option<f64>) {
        if g == cost.cols() {
            if best.is_none_or(|b| acc < b) {
                *best = Some(acc);
            }
            return;
        }
        for q in 0..cost.rows() {
            if !used[q] {
                used[q] = true;
                search(cost, g + 1, used, acc + cost.at(q, g), best);
                used[q] = false;
            }
        }
    }
    if cost.cols() > cost.rows() {
        return None;
    }
    let mut best = None;
    search(cost, 0, &mut vec![false; cost.rows()], 0.0, &mut best);
    best
}

/// Greedy matching in score order against the full candidate list.
pub fn match_reference(dets: &[Box3D], gts: &[Box3D], iou_threshold: f64) -> Vec<bool> {
    let mut alive = vec![true; dets.len()];
    let mut taken = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    while let Some(i) = best_remaining(dets, &alive) {
        alive[i] = false;
        let candidates: Vec<(usize, f64)> = gts
            .iter()
            .enumerate()
            .filter(|(g, gt)| !taken[*g] && gt.class_id == dets[i].class_id)
            .map(|(g, gt)| (g, iou_reference(&dets[i], gt)))
            .filter(|(_, iou)| *iou >= iou_threshold)
            .collect();
        let top = candidates.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        if let Some(&(g, _)) = candidates.iter().find(|c| c.1 == top) {
            taken[g] = true;
            tp[i] = true;
        }
    }
    tp
}

/// Precision envelope over the recall points at the end of each score level.
fn ap_reference(mut scored: Vec<(f64, bool)>, gt_count: usize) -> f64 {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut rec = vec![0.0];
    let mut prec = vec![1.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, (s, hit)) in scored.iter().enumerate() {
        if *hit {
            tp += 1;
        } else {
            fp += 1;
        }
        let level_ends = scored.get(k + 1).is_none_or(|n| n.0 != *s);
        if level_ends {
            rec.push(tp as f64 / gt_count as f64);
            prec.push(tp as f64 / (tp + fp) as f64);
        }
    }
    for i in (1..prec.len() - 1).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    (1..rec.len()).map(|i| (rec[i] - rec[i - 1]) * prec[i]).sum()
}

/// Per-threshold mAP over classes with ground truth.
pub fn map_reference(
    predictions: &BTreeMap<String, Vec<Box3D>>,
    gts: &BTreeMap<String, Vec<Box3D>>,
    thresholds: &[f64],
    num_classes: usize,
) -> Vec<f64> {
    thresholds
        .iter()
        .map(|&t| {
            let mut aps = Vec::new();
            for c in 0..num_classes {
                let gt_count = gts.values().flatten().filter(|g| g.class_id == c).count();
                if gt_count == 0 {
                    continue;
                }
                let mut scored = Vec::new();
                for (id, gt) in gts {
                    let dets = predictions.get(id).cloned().unwrap_or_default();
                    let flags = match_reference(&dets, gt, t);
                    scored.extend(dets.iter().zip(flags).filter(|(d, _)| d.class_id == c).map(|(d, f)| (d.score, f)));
                }
                aps.push(ap_reference(scored, gt_count));
            }
            if aps.is_empty() {
                0.0
            } else {
                aps.iter().map(|a| a / aps.len() as f64).sum()
            }
        })
        .collect()
}

/// Box on a coarse grid so that exact overlaps and score ties occur.
pub fn grid_box(rng: &mut impl Rng, classes: usize) -> Box3D {
    Box3D::new(
        std::array::from_fn(|_| rng.random_range(0..8) as f64 * 0.25),
        std::array::from_fn(|_| rng.random_range(1..6) as f64 * 0.25),
        rng.random_range(0..classes),
        rng.random_range(1..=8) as f64 / 8.0,
    )
}

/// Ground truth plus noisy detections around it and some clutter.
pub fn detection_instance(rng: &mut impl Rng, classes: usize) -> (Vec<Box3D>, Vec<Box3D>) {
    let gts: Vec<Box3D> = (0..rng.random_range(0..6)).map(|_| grid_box(rng, classes)).collect();
    let mut dets = Vec::new();
    for g in &gts {
        for _ in 0..rng.random_range(0..3) {
            let mut d = *g;
            for k in 0..3 {
                d.center[k] += rng.random_range(-0.3..0.3);
                d.size[k] *= rng.random_range(0.7..1.3);
            }
            if rng.random_bool(0.2) {
                d.class_id = rng.random_range(0..classes);
            }
            d.score = rng.random_range(1..=8) as f64 / 8.0;
            dets.push(d);
        }
    }
    dets.extend((0..rng.random_range(0..4)).map(|_| grid_box(rng, classes)));
    (dets, gts)
}
