use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::matching::{hungarian, match_cost, CostMatrixSpec};
use crate::augment::TrainingSample;
use crate::error::{Error, Result};
use crate::geometry::{Box3D, SENTINEL};
use crate::numerics::{Ops, Tensor};
use crate::proxies::{geometry_learner_forward, CoordMode};
use crate::transformer::{head_predictions, scene_forward, BoxPrediction, HeadOutput, ModelConfig, SceneOutput};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub matching: CostMatrixSpec,
    pub center_weight: f64,
    pub size_weight: f64,
    pub class_weight: f64,
    /// Cross-entropy weight of queries matched to nothing.
    pub no_object_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            matching: CostMatrixSpec::default(),
            center_weight: 1.0,
            size_weight: 1.0,
            class_weight: 1.0,
            no_object_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        self.matching.validate()?;
        let w = [self.center_weight, self.size_weight, self.class_weight, self.no_object_weight];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Scalar loss with its unweighted parts.
///
/// `center`, `size` and `class` are summed over decoder stages and
/// `total = w_c·center + w_s·size + w_k·class`. Entries `layer{l}` hold each
/// stage's weighted total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub components: BTreeMap<String, f64>,
}

/// Decoded predictions of one head stage.
pub fn stage_predictions<O: Ops>(ops: &O, stage: &HeadOutput<O::V>) -> Vec<BoxPrediction> {
    head_predictions(ops.value(&stage.center), ops.value(&stage.size), ops.value(&stage.logits))
}

/// Matches every stage independently against the ground truth.
pub fn match_stages<O: Ops>(
    ops: &O,
    stages: &[HeadOutput<O::V>],
    gts: &[Box3D],
    spec: &CostMatrixSpec,
) -> Result<Vec<Vec<(usize, usize)>>> {
    stages.iter().map(|s| hungarian(&match_cost(&stage_predictions(ops, s), gts, spec))).collect()
}

fn l1_term<O: Ops>(ops: &mut O, pred: &O::V, rows: &[usize], target: Tensor) -> Result<O::V> {
    let picked = ops.gather_rows(pred, rows)?;
    let t = ops.constant(target);
    let d = ops.sub(&picked, &t)?;
    let a = ops.abs(&d);
    Ok(ops.sum(&a))
}

/// Matched center and size L1 plus cross-entropy against the matched class
/// or background, summed over stages.
pub fn detection_loss<O: Ops>(
    ops: &mut O,
    stages: &[HeadOutput<O::V>],
    gts: &[Box3D],
    assignments: &[Vec<(usize, usize)>],
    cfg: &LossConfig,
    background: usize,
) -> Result<(O::V, LossReport)> {
    if stages.len() != assignments.len() || stages.is_empty() {
        return Err(Error::dim("detection_loss", "one assignment per stage required"));
    }
    let g = gts.len();
    let mut parts = Vec::new();
    let mut components: BTreeMap<String, f64> = ["center", "size", "class"].iter().map(|k| (k.to_string(), 0.0)).collect();
    for (l, (stage, pairs)) in stages.iter().zip(assignments).enumerate() {
        let q = ops.value(&stage.logits).rows();
        if pairs.len() != g || pairs.iter().any(|&(qi, gi)| qi >= q || gi >= g) {
            return Err(Error::State(format!("stage {l}: assignment does not cover the ground truth")));
        }
        let mut terms = Vec::new();
        let mut stage_total = 0.0;
        if g > 0 {
            let rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let centers = Tensor::from_rows(&pairs.iter().map(|p| gts[p.1].center).collect::<Vec<_>>())?;
            let sizes = Tensor::from_rows(&pairs.iter().map(|p| gts[p.1].size).collect::<Vec<_>>())?;
            let c = l1_term(ops, &stage.center, &rows, centers)?;
            let c = ops.scale(&c, 1.0 / g as f64);
            let s = l1_term(ops, &stage.size, &rows, sizes)?;
            let s = ops.scale(&s, 1.0 / g as f64);
            let (cv, sv) = (ops.value(&c).scalar_value(), ops.value(&s).scalar_value());
            *components.get_mut("center").unwrap() += cv;
            *components.get_mut("size").unwrap() += sv;
            stage_total += cfg.center_weight * cv + cfg.size_weight * sv;
            terms.push(ops.scale(&c, cfg.center_weight));
            terms.push(ops.scale(&s, cfg.size_weight));
        }
        let mut targets = vec![background; q];
        let mut weights = vec![cfg.no_object_weight; q];
        for &(qi, gi) in pairs {
            targets[qi] = gts[gi].class_id;
            weights[qi] = 1.0;
        }
        let norm: f64 = weights.iter().sum();
        let ce = ops.cross_entropy(&stage.logits, &targets, &weights)?;
        let ce = ops.scale(&ce, if norm > 0.0 { 1.0 / norm } else { 0.0 });
        let kv = ops.value(&ce).scalar_value();
        *components.get_mut("class").unwrap() += kv;
        stage_total += cfg.class_weight * kv;
        terms.push(ops.scale(&ce, cfg.class_weight));
        components.insert(format!("layer{l}"), stage_total);
        let mut acc = terms[0].clone();
        for t in &terms[1..] {
            acc = ops.add(&acc, t)?;
        }
        parts.push(acc);
    }
    let mut total = parts[0].clone();
    for p in &parts[1..] {
        total = ops.add(&total, p)?;
    }
    let value = ops.value(&total).scalar_value();
    if !value.is_finite() {
        return Err(Error::Numerical(format!("detection loss is {value}")));
    }
    Ok((total, LossReport { total: value, components }))
}

/// Full forward pass of a training sample: per-view learner, world mixing
/// and the scene tail, with every decoder stage.
pub fn sample_forward<O: Ops>(
    ops: &mut O,
    cfg: &ModelConfig,
    sample: &TrainingSample,
    tokens: usize,
) -> Result<SceneOutput<O::V>> {
    let d = cfg.model_dim();
    let mut parts = Vec::with_capacity(sample.views());
    let mut coords = Vec::new();
    let mut valid = Vec::new();
    for (v, (cloud, pose)) in sample.clouds.iter().zip(&sample.poses).enumerate() {
        if !sample.view_valid[v] || cloud.valid_count() == 0 {
            parts.push(ops.constant(Tensor::zeros(&[tokens, d])));
            coords.extend(std::iter::repeat_n(SENTINEL, tokens));
            valid.extend(std::iter::repeat_n(false, tokens));
            continue;
        }
        let pts: Vec<[f64; 3]> = match cfg.learner.coord_mode {
            CoordMode::Camera => cloud.coords().to_vec(),
            CoordMode::World => cloud
                .coords()
                .iter()
                .zip(cloud.valid())
                .map(|(p, &ok)| if ok { pose.apply(*p) } else { SENTINEL })
                .collect(),
        };
        let out = geometry_learner_forward(ops, &cfg.learner, &pts, cloud.valid(), tokens)?;
        let n = out.centers.len();
        match cfg.learner.coord_mode {
            CoordMode::Camera => coords.extend(out.centers.iter().map(|c| pose.apply(*c))),
            CoordMode::World => coords.extend(out.centers.iter().copied()),
        }
        valid.extend(std::iter::repeat_n(true, n));
        parts.push(out.feats);
    }
    let feats = if parts.len() == 1 { parts.pop().unwrap() } else { ops.concat_rows(&parts)? };
    scene_forward(ops, cfg, &feats, &coords, &valid, &sample.world_points(), true)
}

/// Forward, matching and loss for one sample.
pub fn sample_loss<O: Ops>(
    ops: &mut O,
    cfg: &ModelConfig,
    sample: &TrainingSample,
    tokens: usize,
    loss: &LossConfig,
) -> Result<(O::V, LossReport)> {
    let out = sample_forward(ops, cfg, sample, tokens)?;
    let assignments = match_stages(ops, &out.stages, &sample.gt, &loss.matching)?;
    detection_loss(ops, &out.stages, &sample.gt, &assignments, loss, cfg.background())
}
