//! Prediction service: the audio-to-verdict pipeline and its HTTP front end.

pub mod http;
pub mod pipeline;

pub use http::{embed_router, router, serve, serve_embed, AppState, ServeError, ServiceConfig};
pub use pipeline::{
    aggregate_verdict, AggregationRule, ChunkResult, LoadError, LoadedModel, PredictError, PredictResponse, Verdict,
    DEFAULT_MAX_UPLOAD_BYTES,
};
