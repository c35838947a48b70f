//! The per-view geometry learner, the dynamic token schedule and the online
//! proxy cache.

mod cache;
mod learner;

pub use cache::{CacheEntry, ProxyCache};
pub use learner::{
    dynamic_token_count, extract_proxies, extract_proxies_batch, geometry_learner_forward, mix_to_world, sa_layer_apply, sa_layer_forward,
    CoordMode, FrameTag, LearnerConfig, LearnerOutput, SaLayerConfig, SceneProxySet,
};
