pub mod attacks;
pub mod detector;
pub mod embedders;
pub mod error;
pub mod eval;
pub mod generator;
mod http;
pub mod keycore;
pub mod text;

pub use error::{Error, Result};

pub use attacks::{AttackKind, AttackSpec, Lexicon};
pub use detector::{DetectionConfig, DetectionResult, DetectionScore, Detector};
pub use embedders::{Embedder, EmbedderConfig, EmbedderKind, HashEmbedder, UnitEmbedding};
pub use eval::{Condition, ExperimentConfig, ExperimentReport, Histogram, ScoreSample};
pub use generator::{
    CandidateSampler, FallbackEvent, FlagAssignment, GenerationConfig, MockSampler, SamplerConfig,
    SamplerKind, WatermarkedDocument, Watermarker,
};
pub use keycore::{FlagPattern, PivotSet, PrivateKey};
