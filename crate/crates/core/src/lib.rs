//! Prefix/continuation dual encoder trained with in-document and generated negatives,
//! reranked beam-search decoding over any generator, an interpolated n-gram baseline LM
//! and the evaluation metrics around them.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix the
//! precision.

pub mod bridge;
pub mod corpus;
pub mod decode;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod lm;
pub mod ngram;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod scorers;
pub mod synth;
pub mod trainer;
pub mod vocab;

pub use corpus::{Document, Span, TrainingTriple};
pub use decode::{rankgen_search, rerank_full, Beam, DecodeConfig};
pub use encoder::{EmbeddingVector, EncoderParams, Role};
pub use error::{Error, Result};
pub use lm::{Generator, LanguageModel};
pub use ngram::{train_ngram, NGramConfig, NGramModel};
pub use sampling::SamplingStrategy;
pub use scalar::Scalar;
pub use scorers::Scorer;
pub use vocab::{TokenId, Vocab};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type EncoderParamsF32 = EncoderParams<f32>;
pub type EncoderParamsF64 = EncoderParams<f64>;
pub type EmbeddingF32 = EmbeddingVector<f32>;
pub type EmbeddingF64 = EmbeddingVector<f64>;
pub type RankGenScorerF32 = scorers::RankGenScorer<f32>;
pub type RankGenScorerF64 = scorers::RankGenScorer<f64>;
pub type EncoderGradientF32 = trainer::EncoderGradient<f32>;
pub type EncoderGradientF64 = trainer::EncoderGradient<f64>;
