use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{sample_loss, LossConfig};
use crate::augment::{apply_augmentations, AugmentConfig, TrainingSample};
use crate::data::Scene;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tape, Tensor};
use crate::transformer::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Views drawn from a scene for each sample.
    pub views_per_sample: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Global gradient norm limit.
    pub clip_norm: f64,
    /// Steps at which the learning rate is multiplied by `decay_factor`.
    pub decay_steps: Vec<usize>,
    pub decay_factor: f64,
    pub augment: AugmentConfig,
    pub loss: LossConfig,
    pub seed: u64,
    pub init_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 4,
            views_per_sample: 8,
            learning_rate: 0.02,
            momentum: 0.9,
            clip_norm: 5.0,
            decay_steps: vec![150],
            decay_factor: 0.1,
            augment: AugmentConfig::default(),
            loss: LossConfig::default(),
            seed: 0,
            init_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.views_per_sample == 0 {
            return Err(Error::Config("batch_size and views_per_sample must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("need learning_rate ≥ 0, momentum in [0, 1), clip_norm > 0".into()));
        }
        if !(self.decay_factor > 0.0) {
            return Err(Error::Config("decay_factor must be positive".into()));
        }
        self.augment.validate()?;
        self.loss.validate()
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let decays = self.decay_steps.iter().filter(|s| **s <= step).count();
        self.learning_rate * self.decay_factor.powi(decays as i32)
    }
}

/// One row of the loss curve: batch means before the update of `step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub learning_rate: f64,
    pub total: f64,
    pub center: f64,
    pub size: f64,
    pub class: f64,
    pub grad_norm: f64,
}

pub struct TrainOutput {
    pub weights: ParamStore,
    pub curve: Vec<LossRow>,
}

/// Draws a sample: a random scene, a random sorted subset of its views,
/// then the augmentations.
pub fn draw_sample(scenes: &[Scene], model: &ModelConfig, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<TrainingSample> {
    let scene = &scenes[rng.random_range(0..scenes.len())];
    let n = cfg.views_per_sample.min(scene.frames.len());
    let mut picks: Vec<usize> = index::sample(rng, scene.frames.len(), n).into_iter().collect();
    picks.sort_unstable();
    let frames: Vec<_> = picks.iter().map(|&i| &scene.frames[i]).collect();
    let sample = TrainingSample::from_frames(&frames, &scene.gt, model.points_per_view, cfg.seed)?;
    Ok(apply_augmentations(sample, &cfg.augment, rng))
}

/// Momentum descent on synthetic scenes. Deterministic for a fixed config.
pub fn train_toy(scenes: &[Scene], model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutput> {
    train_from(scenes, model, cfg, model.init(cfg.init_seed)?)
}

pub fn train_from(scenes: &[Scene], model: &ModelConfig, cfg: &TrainConfig, weights: ParamStore) -> Result<TrainOutput> {
    let run = train_checkpointed(scenes, model, cfg, weights)?;
    match run.divergence {
        Some(e) => Err(e),
        None => Ok(run.output),
    }
}

/// Training that stopped early keeps the last finite weights.
pub struct CheckpointedRun {
    pub output: TrainOutput,
    /// Set when a step diverged; `output` then holds the weights before it.
    pub divergence: Option<Error>,
}

/// Like [`train_from`], but a divergence ends the run instead of failing it.
pub fn train_checkpointed(
    scenes: &[Scene],
    model: &ModelConfig,
    cfg: &TrainConfig,
    mut weights: ParamStore,
) -> Result<CheckpointedRun> {
    if scenes.is_empty() {
        return Err(Error::Validation("training needs at least one scene".into()));
    }
    cfg.validate()?;
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut sums = [0.0; 4];
        let mut used = 0usize;
        for _ in 0..cfg.batch_size {
            let sample = draw_sample(scenes, model, cfg, &mut rng)?;
            let mut tape = Tape::new(&weights);
            let (loss, report) = match sample_loss(&mut tape, model, &sample, model.train_tokens, &cfg.loss) {
                Err(Error::EmptyScene) => continue,
                Err(Error::Numerical(_)) => return Ok(stopped(weights, curve, Error::Divergence { step, loss: f64::NAN })),
                other => other?,
            };
            if !report.total.is_finite() {
                return Ok(stopped(weights, curve, Error::Divergence { step, loss: report.total }));
            }
            for (name, g) in tape.backward(loss).params() {
                match grads.get_mut(&name) {
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                    None => {
                        grads.insert(name, g);
                    }
                }
            }
            sums[0] += report.total;
            sums[1] += report.components["center"];
            sums[2] += report.components["size"];
            sums[3] += report.components["class"];
            used += 1;
        }
        if used == 0 {
            return Err(Error::EmptyScene);
        }
        let inv = 1.0 / used as f64;
        let mut norm2 = 0.0;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= inv);
            norm2 += g.data().iter().map(|v| v * v).sum::<f64>();
        }
        let norm = norm2.sqrt();
        if !norm.is_finite() {
            return Ok(stopped(weights, curve, Error::Divergence { step, loss: sums[0] * inv }));
        }
        let clip = if norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 };
        let lr = cfg.learning_rate_at(step);
        for (name, g) in &grads {
            let vel = velocity.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let w = weights.get_mut(name)?;
            for ((v, gv), wv) in vel.data_mut().iter_mut().zip(g.data()).zip(w.data_mut()) {
                *v = cfg.momentum * *v + clip * gv;
                *wv -= lr * *v;
            }
        }
        let row = LossRow {
            step,
            learning_rate: lr,
            total: sums[0] * inv,
            center: sums[1] * inv,
            size: sums[2] * inv,
            class: sums[3] * inv,
            grad_norm: norm,
        };
        log::debug!("step {step}: loss {:.5} (grad norm {:.3})", row.total, norm);
        curve.push(row);
    }
    Ok(CheckpointedRun { output: TrainOutput { weights, curve }, divergence: None })
}

fn stopped(weights: ParamStore, curve: Vec<LossRow>, e: Error) -> CheckpointedRun {
    CheckpointedRun { output: TrainOutput { weights, curve }, divergence: Some(e) }
}

/// Mean total loss over the first and last `window` steps.
pub fn curve_endpoints(curve: &[LossRow], window: usize) -> Option<(f64, f64)> {
    if curve.is_empty() || window == 0 {
        return None;
    }
    let w = window.min(curve.len());
    let mean = |rows: &[LossRow]| rows.iter().map(|r| r.total).sum::<f64>() / rows.len() as f64;
    Some((mean(&curve[..w]), mean(&curve[curve.len() - w..])))
}

pub fn write_loss_csv(curve: &[LossRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "step,learning_rate,total,center,size,class,grad_norm")?;
    for r in curve {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.step, r.learning_rate, r.total, r.center, r.size, r.class, r.grad_norm
        )?;
    }
    Ok(())
}
