use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use anyview::augment::AugmentConfig;
use anyview::data::{Sampling, SynthParams};
use anyview::geometry::DEFAULT_NMS_IOU;
use anyview::supervision::{LossConfig, TrainConfig};
use anyview::evalkit::ViewSelection;
use anyview::transformer::{DetectConfig, ModelConfig, TokenSchedule, DEFAULT_STREAM_LENGTH};

/// Optimization settings; augmentation lives in its own section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub views_per_sample: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub decay_steps: Vec<usize>,
    pub decay_factor: f64,
    pub loss: LossConfig,
    pub init_seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: t.steps,
            batch_size: t.batch_size,
            views_per_sample: t.views_per_sample,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            clip_norm: t.clip_norm,
            decay_steps: t.decay_steps,
            decay_factor: t.decay_factor,
            loss: t.loss,
            init_seed: t.init_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Scene token budget Z.
    pub budget: usize,
    pub score_threshold: f64,
    pub nms_iou: f64,
    /// Declared stream length for online token counts.
    pub stream_length: usize,
    /// Views per scene for batch detection; `None` uses every frame.
    pub views: Option<usize>,
    pub sampling: Sampling,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = DetectConfig::default();
        Self { budget: 2000, score_threshold: d.score_threshold, nms_iou: DEFAULT_NMS_IOU, stream_length: DEFAULT_STREAM_LENGTH, views: None, sampling: Sampling::Uniform }
    }
}

/// Every tunable default, addressed by dotted keys such as `eval.budget`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub augment: AugmentConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub data: SynthParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::toy(),
            augment: AugmentConfig::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            data: SynthParams::default(),
        }
    }
}

fn merge(base: &mut Value, patch: Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &key)?,
                    None => bail!("unknown configuration key '{key}'"),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Parses `key=value`; the value is read as JSON when possible, else as a string.
fn parse_override(spec: &str) -> Result<(Vec<&str>, Value)> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| anyhow!("override '{spec}' is not key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.split('.').collect(), value))
}

fn set_path(doc: &mut Value, parts: &[&str], value: Value, key: &str) -> Result<()> {
    let mut slot = doc;
    for p in parts {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(*p))
            .ok_or_else(|| anyhow!("unknown configuration key '{key}'"))?;
    }
    *slot = value;
    Ok(())
}

impl RunConfig {
    /// Defaults, then the optional JSON document, then each override in order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = serde_json::to_value(Self::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let patch: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            merge(&mut doc, patch, "")?;
        }
        for spec in overrides {
            let (parts, value) = parse_override(spec)?;
            set_path(&mut doc, &parts, value, spec.split('=').next().unwrap_or(spec))?;
        }
        let cfg: Self = serde_json::from_value(doc).context("invalid configuration")?;
        cfg.model.validate()?;
        cfg.augment.validate()?;
        cfg.data.validate()?;
        cfg.train_config().validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            steps: t.steps,
            batch_size: t.batch_size,
            views_per_sample: t.views_per_sample,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            clip_norm: t.clip_norm,
            decay_steps: t.decay_steps.clone(),
            decay_factor: t.decay_factor,
            augment: self.augment,
            loss: t.loss,
            seed: self.seed,
            init_seed: t.init_seed,
        }
    }

    pub fn detect_config(&self) -> DetectConfig {
        DetectConfig {
            schedule: TokenSchedule::Dynamic { budget: self.eval.budget },
            score_threshold: self.eval.score_threshold,
            nms_iou: self.eval.nms_iou,
            seed: self.seed,
        }
    }

    pub fn view_selection(&self) -> ViewSelection {
        match self.eval.views {
            None => ViewSelection::All,
            Some(n) => ViewSelection::Sample { n, sampling: self.eval.sampling, seed: self.seed },
        }
    }

    /// Writes `config.resolved.json` into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("config.resolved.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}
