//! Positional embeddings, the masked encoder, the query decoder, box heads
//! and the batch and online detection entry points.

mod config;
mod detect;
mod layers;
mod pe;

pub use config::{DecoderConfig, EncoderConfig, ModelConfig, PeMode, QueryMode};
pub use detect::{
    detect, detect_online_step, frame_cloud, frame_seed, generate_queries, postprocess, predict_views, prepare_view,
    scene_bounds, scene_forward, DetectConfig, OnlineSession, QuerySet, SceneOutput, TokenSchedule, ViewProxies,
    DEFAULT_STREAM_LENGTH,
};
pub use layers::{
    box_head, box_head_apply, build_attention_mask, cross_attention_mask, decoder_apply, decoder_layer,
    encoder_apply, encoder_forward, encoder_layer, head_predictions, multi_head_attention, query_embedding,
    self_attention, self_attention_apply, BoxPrediction, EncoderOutput, HeadOutput,
};
pub use pe::{fourier_pe, positional_embedding, FourierConfig, SceneBounds};
