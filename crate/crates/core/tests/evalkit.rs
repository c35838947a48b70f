use std::collections::BTreeMap;

use anyview::data::{synth_scene, Sampling, SynthParams};
use anyview::evalkit::{
    average_precision, evaluate, fuse_per_view_predictions, match_detections, run_token_sweep, run_view_sweep,
    SweepRow, DEFAULT_THRESHOLDS,
};
use anyview::geometry::{box_iou_3d, Box3D};
use anyview::transformer::{DetectConfig, ModelConfig};
use anyview::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bx(c: [f64; 3], s: [f64; 3], class_id: usize, score: f64) -> Box3D {
    Box3D::new(c, s, class_id, score)
}

fn random_box(rng: &mut ChaCha8Rng, classes: usize) -> Box3D {
    bx(
        std::array::from_fn(|_| rng.random_range(0..6) as f64 * 0.5),
        std::array::from_fn(|_| rng.random_range(1..5) as f64 * 0.5),
        rng.random_range(0..classes),
        rng.random_range(1..=5) as f64 / 5.0,
    )
}

fn jitter(rng: &mut ChaCha8Rng, g: &Box3D) -> Box3D {
    let mut d = *g;
    for k in 0..3 {
        d.center[k] += rng.random_range(-0.4..0.4);
        d.size[k] *= rng.random_range(0.6..1.4);
    }
    d.score = rng.random_range(1..=5) as f64 / 5.0;
    d
}

fn instance(rng: &mut ChaCha8Rng, classes: usize) -> (Vec<Box3D>, Vec<Box3D>) {
    let gts: Vec<Box3D> = (0..rng.random_range(0..5)).map(|_| random_box(rng, classes)).collect();
    let mut dets = Vec::new();
    for g in &gts {
        for _ in 0..rng.random_range(0..3) {
            dets.push(jitter(rng, g));
        }
    }
    dets.extend((0..rng.random_range(0..3)).map(|_| random_box(rng, classes)));
    (dets, gts)
}

/// Exhaustive greedy matcher: detections visited by (score desc, index asc),
/// each taking the best untaken same-class ground truth.
fn matcher_oracle(dets: &[Box3D], gts: &[Box3D], thr: f64) -> Vec<bool> {
    let mut visit: Vec<(f64, usize)> = dets.iter().enumerate().map(|(i, d)| (-d.score, i)).collect();
    visit.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut free = vec![true; gts.len()];
    let mut out = vec![false; dets.len()];
    for (_, i) in visit {
        let mut best = None;
        let mut best_iou = thr;
        for (g, gt) in gts.iter().enumerate() {
            let iou = box_iou_3d(&dets[i], gt);
            if free[g] && gt.class_id == dets[i].class_id && iou >= best_iou && (best.is_none() || iou > best_iou) {
                best = Some(g);
                best_iou = iou;
            }
        }
        if let Some(g) = best {
            free[g] = false;
            out[i] = true;
        }
    }
    out
}

/// Area under the interpolated precision curve by integrating over recall
/// levels: precision at recall r is the best precision at any cut reaching r.
fn ap_oracle(flags: &[bool], scores: &[f64], gt: usize) -> f64 {
    let mut levels: Vec<f64> = scores.to_vec();
    levels.sort_by(|a, b| b.partial_cmp(a).unwrap());
    levels.dedup();
    let cuts: Vec<(f64, f64)> = levels
        .iter()
        .map(|&s| {
            let tp = flags.iter().zip(scores).filter(|(f, x)| **f && **x >= s).count();
            let n = scores.iter().filter(|x| **x >= s).count();
            (tp as f64 / gt as f64, tp as f64 / n as f64)
        })
        .collect();
    let mut recalls: Vec<f64> = cuts.iter().map(|c| c.0).collect();
    recalls.dedup();
    let mut area = 0.0;
    let mut prev = 0.0;
    for r in recalls {
        let p = cuts.iter().filter(|c| c.0 >= r).map(|c| c.1).fold(0.0, f64::max);
        area += (r - prev) * p;
        prev = r;
    }
    area
}

fn map_oracle(preds: &BTreeMap<String, Vec<Box3D>>, gts: &BTreeMap<String, Vec<Box3D>>, thr: f64, classes: usize) -> f64 {
    let mut aps = Vec::new();
    for c in 0..classes {
        let gt = gts.values().flatten().filter(|g| g.class_id == c).count();
        if gt == 0 {
            continue;
        }
        let (mut flags, mut scores) = (Vec::new(), Vec::new());
        for (id, g) in gts {
            let d = preds.get(id).cloned().unwrap_or_default();
            for (det, f) in d.iter().zip(matcher_oracle(&d, g, thr)) {
                if det.class_id == c {
                    flags.push(f);
                    scores.push(det.score);
                }
            }
        }
        aps.push(ap_oracle(&flags, &scores, gt));
    }
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

#[test]
fn ap_hand_case() {
    assert_eq!(average_precision(&[true, false], &[0.9, 0.8], 2), Some(0.5));
    assert_eq!(average_precision(&[], &[], 3), Some(0.0));
    assert_eq!(average_precision(&[true], &[0.3], 0), None);
    assert_eq!(average_precision(&[false, true], &[0.9, 0.8], 1), Some(0.5));
    // a tie is one curve point: recall 1/2 at precision 1/2
    assert_eq!(average_precision(&[true, false], &[0.5, 0.5], 2), Some(0.25));
}

#[test]
fn matcher_agrees_with_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut positives = 0;
    for i in 0..300 {
        let (dets, gts) = instance(&mut rng, 3);
        let thr = [0.25, 0.5][i % 2];
        let flags = match_detections(&dets, &gts, thr);
        assert_eq!(flags, matcher_oracle(&dets, &gts, thr), "instance {i}");
        positives += flags.iter().filter(|f| **f).count();
    }
    assert!(positives > 100);
}

#[test]
fn ap_agrees_with_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..300 {
        let n = rng.random_range(0..12);
        let flags: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(1..=4) as f64 / 4.0).collect();
        let gt = flags.iter().filter(|f| **f).count() + rng.random_range(0..3);
        if gt == 0 {
            continue;
        }
        let got = average_precision(&flags, &scores, gt).unwrap();
        assert!((got - ap_oracle(&flags, &scores, gt)).abs() <= 1e-12);
    }
}

#[test]
fn evaluator_agrees_with_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..250 {
        let mut preds = BTreeMap::new();
        let mut gts = BTreeMap::new();
        for s in 0..rng.random_range(1..4) {
            let (d, g) = instance(&mut rng, 4);
            preds.insert(format!("s{s}"), d);
            gts.insert(format!("s{s}"), g);
        }
        let r = evaluate(&preds, &gts, &DEFAULT_THRESHOLDS, 4).unwrap();
        for (t, thr) in DEFAULT_THRESHOLDS.iter().enumerate() {
            assert!((r.map[t] - map_oracle(&preds, &gts, *thr, 4)).abs() <= 1e-12, "instance {i}");
        }
        for c in &r.classes {
            for t in 0..2 {
                assert_eq!(c.tp[t] + c.fp[t], c.detections);
                assert_eq!(c.ap[t].is_some(), c.gt > 0);
            }
        }
    }
}

#[test]
fn perfect_and_empty_predictions() {
    let gt = vec![bx([1.0; 3], [1.0; 3], 0, 1.0), bx([3.0; 3], [0.5; 3], 2, 1.0)];
    let gts = BTreeMap::from([("a".to_string(), gt.clone())]);
    let r = evaluate(&gts, &gts, &DEFAULT_THRESHOLDS, 3).unwrap();
    assert_eq!(r.map, vec![1.0, 1.0]);
    assert_eq!(r.classes[1].ap, vec![None, None]);
    let r = evaluate(&BTreeMap::new(), &gts, &DEFAULT_THRESHOLDS, 3).unwrap();
    assert_eq!(r.map, vec![0.0, 0.0]);
    let stray = BTreeMap::from([("b".to_string(), gt.clone())]);
    assert!(matches!(evaluate(&stray, &gts, &DEFAULT_THRESHOLDS, 3), Err(Error::Lookup(_))));
    let bad = BTreeMap::from([("a".to_string(), vec![bx([1.0; 3], [1.0; 3], 5, 1.0)])]);
    assert!(matches!(evaluate(&bad, &gts, &DEFAULT_THRESHOLDS, 3), Err(Error::Validation(_))));
}

#[test]
fn ranking_uses_scores_not_input_order() {
    let gt = vec![bx([0.0; 3], [1.0; 3], 0, 1.0), bx([5.0; 3], [1.0; 3], 0, 1.0)];
    let dets = vec![bx([0.1; 3], [1.0; 3], 0, 0.9), bx([9.0; 3], [1.0; 3], 0, 0.7), bx([5.0; 3], [1.0; 3], 0, 0.4)];
    let mut rev = dets.clone();
    rev.reverse();
    let g = BTreeMap::from([("s".to_string(), gt)]);
    let a = evaluate(&BTreeMap::from([("s".to_string(), dets)]), &g, &DEFAULT_THRESHOLDS, 1).unwrap();
    let b = evaluate(&BTreeMap::from([("s".to_string(), rev)]), &g, &DEFAULT_THRESHOLDS, 1).unwrap();
    assert_eq!(a.map, b.map);
    // recall 1/2 at precision 1, then recall 1 at precision 2/3
    assert!((a.map[0] - (0.5 + 0.5 * 2.0 / 3.0)).abs() <= 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lowest_score_false_positive_never_raises_ap(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dets, gts) = instance(&mut rng, 2);
        prop_assume!(!gts.is_empty());
        let g = BTreeMap::from([("s".to_string(), gts)]);
        let before = evaluate(&BTreeMap::from([("s".to_string(), dets.clone())]), &g, &DEFAULT_THRESHOLDS, 2).unwrap();
        let mut more = dets;
        more.push(bx([50.0; 3], [1.0; 3], rng.random_range(0..2), 0.01));
        let after = evaluate(&BTreeMap::from([("s".to_string(), more)]), &g, &DEFAULT_THRESHOLDS, 2).unwrap();
        for t in 0..2 {
            prop_assert!(after.map[t] <= before.map[t]);
        }
    }

    #[test]
    fn scene_renaming_and_splitting_keep_map(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d1, g1) = instance(&mut rng, 3);
        let (d2, g2) = instance(&mut rng, 3);
        let preds = BTreeMap::from([("a".to_string(), d1.clone()), ("b".to_string(), d2.clone())]);
        let gts = BTreeMap::from([("a".to_string(), g1.clone()), ("b".to_string(), g2.clone())]);
        let renamed_p = BTreeMap::from([("z".to_string(), d1), ("y".to_string(), d2)]);
        let renamed_g = BTreeMap::from([("z".to_string(), g1), ("y".to_string(), g2)]);
        let a = evaluate(&preds, &gts, &DEFAULT_THRESHOLDS, 3).unwrap();
        let b = evaluate(&renamed_p, &renamed_g, &DEFAULT_THRESHOLDS, 3).unwrap();
        for t in 0..2 {
            prop_assert!((a.map[t] - b.map[t]).abs() <= 1e-12);
        }
    }
}

/// Keeps a box unless a kept, higher-ranked box of its class overlaps it.
fn fusion_oracle(per_view: &[Vec<Box3D>], thr: f64) -> Vec<Box3D> {
    let all: Vec<Box3D> = per_view.concat();
    let mut idx: Vec<usize> = (0..all.len()).collect();
    idx.sort_by(|&a, &b| all[b].score.partial_cmp(&all[a].score).unwrap().then(a.cmp(&b)));
    let mut kept: Vec<Box3D> = Vec::new();
    for i in idx {
        if kept.iter().all(|k| k.class_id != all[i].class_id || box_iou_3d(k, &all[i]) <= thr) {
            kept.push(all[i]);
        }
    }
    kept
}

#[test]
fn fusion_agrees_with_nms_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let views: Vec<Vec<Box3D>> =
            (0..rng.random_range(1..5)).map(|_| (0..rng.random_range(0..5)).map(|_| random_box(&mut rng, 2)).collect()).collect();
        assert_eq!(fuse_per_view_predictions(&views, 0.25), fusion_oracle(&views, 0.25));
    }
    let a = bx([0.0; 3], [1.0; 3], 0, 0.9);
    let dup = bx([0.05, 0.0, 0.0], [1.0; 3], 0, 0.8);
    let other = bx([0.05, 0.0, 0.0], [1.0; 3], 1, 0.7);
    assert_eq!(fuse_per_view_predictions(&[vec![a], vec![dup, other]], 0.25), vec![a, other]);
}

fn sweep_scenes() -> Vec<anyview::data::Scene> {
    let p = SynthParams { frame_count: 6, object_count: 2, ..SynthParams::default() };
    (0..2).map(|s| synth_scene(&p, 50 + s).unwrap()).collect()
}

#[test]
fn sweep_row_counts_and_saturation() {
    let cfg = ModelConfig::toy();
    let w = cfg.init(0).unwrap();
    let scenes = sweep_scenes();
    let det = DetectConfig { score_threshold: 0.0, ..DetectConfig::default() };
    let modes = [Sampling::Uniform, Sampling::Continuous];
    let rows = run_view_sweep(&scenes, &w, &cfg, &[1, 2, 3, 4, 5, 6], &modes, &det, 0, 1).unwrap();
    assert_eq!(rows.len(), 12);
    // all six frames requested: both modes select the whole scene
    let full: Vec<&SweepRow> = rows.iter().filter(|r| r.value == "6").collect();
    assert_eq!((full[0].map25, full[0].map50), (full[1].map25, full[1].map50));
    assert!(rows.iter().all(|r| r.failures == 0));

    let budgets = [4000, 8000, 16_000, 32_000];
    let rows = run_token_sweep(&scenes, &w, &cfg, &budgets, &det, 1).unwrap();
    assert_eq!(rows.len(), 4);
    // every budget saturates the per-view cap of 64 tokens
    assert!(rows.windows(2).all(|r| r[0].map25 == r[1].map25 && r[0].map50 == r[1].map50));
    assert!(rows[0].csv().starts_with("budget,4000,"));
    assert_eq!(SweepRow::CSV_HEADER.split(',').count(), rows[0].csv().split(',').count());
}
