use anyview::augment::{AugmentConfig, TrainingSample};
use anyview::data::{synth_scene, SynthParams};
use anyview::docsbench::gradient_registry;
use anyview::geometry::Box3D;
use anyview::numerics::{Eager, Ops, Tensor};
use anyview::supervision::{
    assignment_cost, curve_endpoints, detection_loss, hungarian, match_cost, match_stages, sample_loss, train_toy,
    write_loss_csv, CostMatrixSpec, LossConfig, TrainConfig,
};
use anyview::transformer::{BoxPrediction, HeadOutput, ModelConfig};
use anyview::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimum total over every injective map from columns to rows.
fn brute_force_min(cost: &Tensor) -> f64 {
    fn go(cost: &Tensor, g: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if g == cost.cols() {
            *best = best.min(acc);
            return;
        }
        for q in 0..cost.rows() {
            if !used[q] {
                used[q] = true;
                go(cost, g + 1, used, acc + cost.at(q, g), best);
                used[q] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost.rows()], 0.0, &mut best);
    if cost.cols() == 0 {
        0.0
    } else {
        best
    }
}

#[test]
fn hungarian_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let g = rng.random_range(0..=7);
        let q = rng.random_range(g.max(1)..=8);
        // integer grid keeps every total exact
        let data = (0..q * g).map(|_| rng.random_range(0..25) as f64 - 8.0).collect();
        let cost = Tensor::matrix(q, g, data).unwrap();
        let pairs = hungarian(&cost).unwrap();
        assert_eq!(pairs.len(), g);
        let mut rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        rows.sort_unstable();
        rows.dedup();
        assert_eq!(rows.len(), g);
        assert!(pairs.iter().enumerate().all(|(i, p)| p.1 == i));
        assert_eq!(assignment_cost(&cost, &pairs), brute_force_min(&cost));
    }
}

#[test]
fn hungarian_rejects_bad_input() {
    let wide = Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap();
    assert!(matches!(hungarian(&wide), Err(Error::Infeasible { queries: 1, ground_truths: 2 })));
    let nan = Tensor::matrix(2, 1, vec![0.0, f64::NAN]).unwrap();
    assert!(matches!(hungarian(&nan), Err(Error::Numerical(_))));
    let empty = Tensor::matrix(3, 0, vec![]).unwrap();
    assert!(hungarian(&empty).unwrap().is_empty());
}

#[test]
fn hungarian_two_by_two_by_hand() {
    let cost = Tensor::matrix(2, 2, vec![1.0, 2.0, 0.5, 4.0]).unwrap();
    // query 1 → gt 0 (0.5) plus query 0 → gt 1 (2.0) beats 1.0 + 4.0
    assert_eq!(hungarian(&cost).unwrap(), vec![(1, 0), (0, 1)]);
}

#[test]
fn match_cost_by_hand() {
    let pred = BoxPrediction { center: [0.0, 0.0, 0.0], size: [1.0, 1.0, 1.0], logits: vec![0.0, 0.0, 0.0] };
    let gt = Box3D::new([1.0, -1.0, 0.5], [2.0, 1.0, 1.0], 1, 1.0);
    let spec = CostMatrixSpec { center: 2.0, size: 0.5, class: 3.0 };
    let c = match_cost(&[pred], &[gt], &spec);
    assert_eq!(c.shape(), &[1, 1]);
    let expect = 2.0 * 2.5 + 0.5 * 1.0 - 3.0 / 3.0;
    assert!((c.at(0, 0) - expect).abs() < 1e-15);
    assert!(CostMatrixSpec { center: 0.0, size: 0.0, class: 0.0 }.validate().is_err());
    assert!(CostMatrixSpec { center: -1.0, size: 1.0, class: 1.0 }.validate().is_err());
}

fn stage(ops: &mut Eager, center: Tensor, size: Tensor, logits: Tensor) -> HeadOutput<<Eager<'static> as Ops>::V> {
    HeadOutput { center: ops.constant(center), size: ops.constant(size), logits: ops.constant(logits) }
}

fn random_rows(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn random_boxes(rng: &mut impl Rng, n: usize, classes: usize) -> Vec<Box3D> {
    (0..n)
        .map(|_| {
            Box3D::new(
                std::array::from_fn(|_| rng.random_range(-2.0..2.0)),
                std::array::from_fn(|_| rng.random_range(0.2..2.0)),
                rng.random_range(0..classes),
                1.0,
            )
        })
        .collect()
}

fn loss_of(stages: &[HeadOutput<std::sync::Arc<Tensor>>], gts: &[Box3D], cfg: &LossConfig, bg: usize) -> f64 {
    let weights = anyview::numerics::ParamStore::new();
    let mut ops = Eager::new(&weights);
    let assignments = match_stages(&ops, stages, gts, &cfg.matching).unwrap();
    detection_loss(&mut ops, stages, gts, &assignments, cfg, bg).unwrap().1.total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_is_non_negative_and_gt_order_free(seed in any::<u64>(), q in 1usize..7, g in 0usize..5, layers in 1usize..4) {
        prop_assume!(g <= q);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = anyview::numerics::ParamStore::new();
        let mut ops = Eager::new(&weights);
        let stages: Vec<_> = (0..layers)
            .map(|_| {
                let c = random_rows(&mut rng, q, 3, -2.0, 2.0);
                let s = random_rows(&mut rng, q, 3, 0.1, 2.0);
                let k = random_rows(&mut rng, q, 5, -3.0, 3.0);
                stage(&mut ops, c, s, k)
            })
            .collect();
        let gts = random_boxes(&mut rng, g, 4);
        let cfg = LossConfig { no_object_weight: rng.random_range(0.05..1.0), ..LossConfig::default() };
        let base = loss_of(&stages, &gts, &cfg, 4);
        prop_assert!(base >= 0.0);
        let mut shuffled = gts.clone();
        shuffled.reverse();
        if g > 1 {
            shuffled.swap(0, g - 1);
            shuffled.rotate_left(1);
        }
        let permuted = loss_of(&stages, &shuffled, &cfg, 4);
        prop_assert!((base - permuted).abs() <= 1e-10, "{base} vs {permuted}");
    }
}

#[test]
fn perfect_predictions_leave_only_background_entropy() {
    let gts = vec![Box3D::new([1.0, 0.0, 0.5], [1.0, 2.0, 0.5], 0, 1.0), Box3D::new([-1.0, 1.0, 0.5], [0.4, 0.4, 0.9], 2, 1.0)];
    let q = 4;
    let bg = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut centers = random_rows(&mut rng, q, 3, 5.0, 6.0);
    let mut sizes = random_rows(&mut rng, q, 3, 3.0, 4.0);
    let mut logits = random_rows(&mut rng, q, 4, -1.0, 1.0);
    for (row, g) in [(2usize, &gts[0]), (0, &gts[1])] {
        centers.row_mut(row).copy_from_slice(&g.center);
        sizes.row_mut(row).copy_from_slice(&g.size);
        let l = logits.row_mut(row);
        l.iter_mut().for_each(|v| *v = 0.0);
        l[g.class_id] = 60.0;
    }
    let cfg = LossConfig { no_object_weight: 0.4, ..LossConfig::default() };
    let ce_bg = |r: usize| {
        let l = logits.row(r);
        let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + l.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        lse - l[bg]
    };
    let floor = cfg.no_object_weight * (ce_bg(1) + ce_bg(3)) / (2.0 + 2.0 * cfg.no_object_weight);
    let weights = anyview::numerics::ParamStore::new();
    let mut ops = Eager::new(&weights);
    let stages = vec![stage(&mut ops, centers, sizes, logits.clone())];
    let assignments = match_stages(&ops, &stages, &gts, &cfg.matching).unwrap();
    assert_eq!(assignments[0], vec![(2, 0), (0, 1)]);
    let (_, report) = detection_loss(&mut ops, &stages, &gts, &assignments, &cfg, bg).unwrap();
    assert!((report.total - floor).abs() < 1e-6, "{} vs {floor}", report.total);
    assert_eq!(report.components["center"], 0.0);
    assert_eq!(report.components["size"], 0.0);
    assert!(report.components.contains_key("layer0"));
}

#[test]
fn empty_ground_truth_is_pure_background() {
    let weights = anyview::numerics::ParamStore::new();
    let mut ops = Eager::new(&weights);
    let logits = Tensor::matrix(2, 3, vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0]).unwrap();
    let stages = vec![stage(&mut ops, Tensor::zeros(&[2, 3]), Tensor::filled(&[2, 3], 1.0), logits)];
    let cfg = LossConfig::default();
    let total = loss_of(&stages, &[], &cfg, 2);
    let expect = (3f64.ln() + (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0) / 2.0;
    assert!((total - expect).abs() < 1e-12);
}

#[test]
fn mismatched_assignment_is_rejected() {
    let weights = anyview::numerics::ParamStore::new();
    let mut ops = Eager::new(&weights);
    let stages = vec![stage(&mut ops, Tensor::zeros(&[2, 3]), Tensor::filled(&[2, 3], 1.0), Tensor::zeros(&[2, 3]))];
    let gts = random_boxes(&mut ChaCha8Rng::seed_from_u64(1), 1, 2);
    let r = detection_loss(&mut ops, &stages, &gts, &[vec![]], &LossConfig::default(), 2);
    assert!(r.is_err());
}

fn small_scene(seed: u64, frames: usize) -> anyview::data::Scene {
    synth_scene(&SynthParams { frame_count: frames, object_count: 3, ..SynthParams::default() }, seed).unwrap()
}

#[test]
fn sample_loss_ignores_view_order() {
    let cfg = ModelConfig::toy();
    let w = cfg.init(4).unwrap();
    let scene = small_scene(12, 5);
    let frames: Vec<_> = scene.frames.iter().collect();
    let mut rev = frames.clone();
    rev.reverse();
    rev.swap(0, 2);
    let a = TrainingSample::from_frames(&frames, &scene.gt, 256, 3).unwrap();
    let b = TrainingSample::from_frames(&rev, &scene.gt, 256, 3).unwrap();
    let mut gt_rev = scene.gt.clone();
    gt_rev.reverse();
    let c = TrainingSample { gt: gt_rev, ..b.clone() };
    let loss = LossConfig::default();
    let run = |s: &TrainingSample| sample_loss(&mut Eager::new(&w), &cfg, s, 12, &loss).unwrap().1.total;
    let (la, lb, lc) = (run(&a), run(&b), run(&c));
    assert!((la - lb).abs() <= 1e-10, "{la} vs {lb}");
    assert!((la - lc).abs() <= 1e-10, "{la} vs {lc}");
}

fn quick_config(steps: usize) -> TrainConfig {
    TrainConfig { steps, batch_size: 2, views_per_sample: 3, decay_steps: vec![2], ..TrainConfig::default() }
}

#[test]
fn zero_learning_rate_is_flat() {
    let scenes = vec![small_scene(30, 3)];
    let mut model = ModelConfig::toy();
    model.points_per_view = 192;
    let cfg = TrainConfig {
        learning_rate: 0.0,
        augment: AugmentConfig { probability: 0.0, ..AugmentConfig::default() },
        ..quick_config(3)
    };
    let out = train_toy(&scenes, &model, &cfg).unwrap();
    assert_eq!(out.weights, model.init(cfg.init_seed).unwrap());
    let first = out.curve[0].total;
    assert!(out.curve.iter().all(|r| r.total == first));
    assert!(out.curve.iter().all(|r| r.learning_rate == 0.0));
}

#[test]
fn training_is_bitwise_reproducible() {
    let scenes = vec![small_scene(31, 4), small_scene(32, 4)];
    let mut model = ModelConfig::toy();
    model.points_per_view = 192;
    let cfg = quick_config(3);
    let a = train_toy(&scenes, &model, &cfg).unwrap();
    let b = train_toy(&scenes, &model, &cfg).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.weights, b.weights);
    assert_ne!(a.weights, model.init(cfg.init_seed).unwrap());
    assert_eq!(a.curve[2].learning_rate, cfg.learning_rate * cfg.decay_factor);

    let mut csv = Vec::new();
    write_loss_csv(&a.curve, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,learning_rate,total,center,size,class,grad_norm");
    assert_eq!(lines.len(), 4);
    let total: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(total, a.curve[0].total);
    let (first, last) = curve_endpoints(&a.curve, 1).unwrap();
    assert_eq!((first, last), (a.curve[0].total, a.curve[2].total));
}

#[test]
fn training_config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { momentum: 1.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { learning_rate: f64::NAN, ..TrainConfig::default() }.validate().is_err());
    assert!(train_toy(&[], &ModelConfig::toy(), &TrainConfig::default()).is_err());
    let lr = TrainConfig { decay_steps: vec![10, 20], decay_factor: 0.5, ..TrainConfig::default() };
    assert_eq!(lr.learning_rate_at(9), lr.learning_rate);
    assert_eq!(lr.learning_rate_at(10), lr.learning_rate * 0.5);
    assert_eq!(lr.learning_rate_at(25), lr.learning_rate * 0.25);
}

#[test]
fn loss_gradients_pass_finite_differences() {
    let reg = gradient_registry();
    for case in ["box_head", "detection_loss", "full_pipeline"] {
        for seed in 0..20 {
            let r = reg.run(case, seed).unwrap();
            assert!(r.max_rel_error <= 1e-4, "{case} seed {seed}: {r:?}");
        }
    }
}
