use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{attention_init, ffn_spec, head_specs};
use super::pe::{pe_mlp_spec, FourierConfig};
use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::numerics::{init_layer_norm, MlpSpec, ParamStore};
use crate::proxies::{CoordMode, LearnerConfig, SaLayerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PeMode {
    None,
    Fourier,
    #[default]
    MlpFourier,
}

impl std::str::FromStr for PeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "fourier" => Ok(Self::Fourier),
            "mlp_fourier" => Ok(Self::MlpFourier),
            other => Err(Error::Config(format!("unknown pe mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    /// FPS over every valid scene point.
    #[default]
    Global,
    /// FPS over valid proxy coordinates.
    Proxy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub radii: Vec<f64>,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub pe_mode: PeMode,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { num_layers: 3, radii: vec![0.8, 0.8, 1.2], model_dim: 256, heads: 4, ffn_dim: 128, pe_mode: PeMode::MlpFourier }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub num_layers: usize,
    pub num_queries: usize,
    pub query_mode: QueryMode,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { num_layers: 8, num_queries: 256, query_mode: QueryMode::Global, model_dim: 256, heads: 4, ffn_dim: 128 }
    }
}

/// Full architecture description. Stored in every weight file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub points_per_view: usize,
    pub learner: LearnerConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub fourier: FourierConfig,
    pub num_classes: usize,
    /// Proxies per view during training.
    pub train_tokens: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            points_per_view: 5000,
            learner: LearnerConfig {
                sa1: SaLayerConfig {
                    radius: 0.2,
                    centroid_count: 256,
                    max_group_size: 64,
                    mlp: MlpSpec::new(vec![3, 64, 128, 256]),
                },
                sa2: SaLayerConfig {
                    radius: 0.8,
                    centroid_count: 0,
                    max_group_size: 32,
                    mlp: MlpSpec::new(vec![259, 256, 256, 256]),
                },
                coord_mode: CoordMode::Camera,
            },
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            fourier: FourierConfig::default(),
            num_classes: NUM_CLASSES,
            train_tokens: 40,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for desk-scale training and the test suites.
    pub fn toy() -> Self {
        let d = 32;
        Self {
            points_per_view: 512,
            learner: LearnerConfig {
                sa1: SaLayerConfig { radius: 0.3, centroid_count: 64, max_group_size: 16, mlp: MlpSpec::new(vec![3, 16, 32]) },
                sa2: SaLayerConfig { radius: 0.8, centroid_count: 0, max_group_size: 16, mlp: MlpSpec::new(vec![35, 32, d]) },
                coord_mode: CoordMode::Camera,
            },
            encoder: EncoderConfig { num_layers: 3, radii: vec![0.8, 0.8, 1.2], model_dim: d, heads: 2, ffn_dim: 64, pe_mode: PeMode::MlpFourier },
            decoder: DecoderConfig { num_layers: 3, num_queries: 32, query_mode: QueryMode::Global, model_dim: d, heads: 2, ffn_dim: 64 },
            fourier: FourierConfig { bands: 4, max_freq: 8.0 },
            num_classes: NUM_CLASSES,
            train_tokens: 16,
        }
    }

    pub fn model_dim(&self) -> usize {
        self.encoder.model_dim
    }

    /// Number of class logits including the trailing background class.
    pub fn logits(&self) -> usize {
        self.num_classes + 1
    }

    pub fn background(&self) -> usize {
        self.num_classes
    }

    pub fn validate(&self) -> Result<()> {
        self.learner.validate()?;
        let e = &self.encoder;
        let d = &self.decoder;
        if e.radii.len() != e.num_layers {
            return Err(Error::Config(format!("{} encoder radii for {} layers", e.radii.len(), e.num_layers)));
        }
        if e.model_dim == 0 || e.heads == 0 || !e.model_dim.is_multiple_of(e.heads) {
            return Err(Error::Config(format!("model_dim {} not divisible by {} heads", e.model_dim, e.heads)));
        }
        if d.model_dim != e.model_dim || d.heads == 0 || !d.model_dim.is_multiple_of(d.heads) {
            return Err(Error::Config("decoder width must match encoder width and divide into heads".into()));
        }
        if d.num_queries == 0 || d.num_layers == 0 {
            return Err(Error::Config("decoder needs at least one layer and one query".into()));
        }
        if self.learner.feature_dim() != e.model_dim {
            return Err(Error::Config(format!(
                "proxy feature width {} must equal model_dim {}",
                self.learner.feature_dim(),
                e.model_dim
            )));
        }
        if e.pe_mode == PeMode::Fourier && self.fourier.dim() > e.model_dim {
            return Err(Error::Config(format!(
                "fourier width {} exceeds model_dim {}",
                self.fourier.dim(),
                e.model_dim
            )));
        }
        if self.fourier.bands == 0 || !(self.fourier.max_freq >= 1.0) {
            return Err(Error::Config("fourier needs ≥ 1 band and max_freq ≥ 1".into()));
        }
        if self.points_per_view == 0 || self.train_tokens == 0 {
            return Err(Error::Config("points_per_view and train_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Freshly initialized registry for this architecture.
    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let dm = self.model_dim();
        self.learner.init(&mut store, &mut rng);
        if self.encoder.pe_mode == PeMode::MlpFourier {
            pe_mlp_spec(self).init(&mut store, "encoder.pos_mlp", &mut rng);
        }
        for l in 0..self.encoder.num_layers {
            let p = format!("encoder.layer{l}");
            attention_init(&mut store, &format!("{p}.attn"), dm, &mut rng);
            init_layer_norm(&mut store, &format!("{p}.norm1"), dm);
            init_layer_norm(&mut store, &format!("{p}.norm2"), dm);
            ffn_spec(dm, self.encoder.ffn_dim).init(&mut store, &format!("{p}.ffn"), &mut rng);
        }
        init_layer_norm(&mut store, "encoder.norm", dm);
        MlpSpec::head(vec![self.fourier.dim(), dm, dm]).init(&mut store, "query_mlp", &mut rng);
        for l in 0..self.decoder.num_layers {
            let p = format!("decoder.layer{l}");
            attention_init(&mut store, &format!("{p}.self_attn"), dm, &mut rng);
            attention_init(&mut store, &format!("{p}.cross_attn"), dm, &mut rng);
            for n in 1..=3 {
                init_layer_norm(&mut store, &format!("{p}.norm{n}"), dm);
            }
            ffn_spec(dm, self.decoder.ffn_dim).init(&mut store, &format!("{p}.ffn"), &mut rng);
        }
        init_layer_norm(&mut store, "decoder.norm", dm);
        for (name, spec) in head_specs(self) {
            let prefix = format!("box_head.{name}");
            spec.init(&mut store, &prefix, &mut rng);
            if name != "class" {
                // start with boxes at the query positions and unit-scale sizes
                let last = format!("{prefix}.{}.weight", spec.layers() - 1);
                store.get_mut(&last)?.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        store.metadata = serde_json::to_string(self)?;
        Ok(store)
    }

    /// Architecture recorded in a weight file.
    pub fn from_weights(store: &ParamStore) -> Result<Self> {
        if store.metadata.is_empty() {
            return Err(Error::WeightFormat("weight file carries no model configuration".into()));
        }
        let cfg: Self = serde_json::from_str(&store.metadata)
            .map_err(|e| Error::WeightFormat(format!("bad model configuration: {e}")))?;
        cfg.validate()?;
        let reference = cfg.init(0)?;
        store.validate_against(&reference)?;
        Ok(cfg)
    }

    /// Same architecture with a different encoder embedding or query mode.
    /// Only changes that keep the weight registry intact are allowed.
    pub fn with_arm(&self, pe: Option<PeMode>, query: Option<QueryMode>, coords: Option<CoordMode>) -> Self {
        let mut c = self.clone();
        if let Some(p) = pe {
            c.encoder.pe_mode = p;
        }
        if let Some(q) = query {
            c.decoder.query_mode = q;
        }
        if let Some(m) = coords {
            c.learner.coord_mode = m;
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_and_toy_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::toy().validate().unwrap();
        let mut bad = ModelConfig::default();
        bad.encoder.radii.pop();
        assert!(bad.validate().is_err());
        let mut bad = ModelConfig::default();
        bad.encoder.heads = 3;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_weights() {
        let cfg = ModelConfig::toy();
        let store = cfg.init(3).unwrap();
        assert_eq!(ModelConfig::from_weights(&store).unwrap(), cfg);
    }
}
