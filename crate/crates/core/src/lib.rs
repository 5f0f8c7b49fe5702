//! RAMM: a retrieval-augmented training pipeline for multimodal
//! fake-news detection at desk scale.
//!
//! The pipeline classifies news items (pre-extracted text/image feature
//! vectors) with a demonstration-conditioned encoder, while a narrative
//! side channel shapes the representation during training: a one-sentence
//! narrative per item is embedded, narratively similar train items are
//! retrieved in- and out-of-domain, attention fuses their encodings into
//! a synthesized positive, and an information-bottleneck objective aligns
//! a latent code with that positive while reconstructing the item's own
//! representation and compressing toward a standard-normal prior.
//!
//! Modules follow the pipeline stages: [`corpus`] (data model, ingestion,
//! synthetic cluster generator), [`narrative`] (extraction + embedding),
//! [`retrieval`] (domain-aware ranking and demonstration selection),
//! [`encoder`]/[`fusion`]/[`cibl`] (the trainable pieces, all with
//! hand-written backward passes), and [`training`] (optimizer, loop,
//! metrics, gradient checker, ablations).

pub mod cibl;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod model;
pub mod narrative;
pub mod nn;
pub mod retrieval;
pub mod seeding;
pub mod training;

pub use corpus::{Corpus, NewsItem, Split, SynthConfig};
pub use error::{CorpusError, ModelError, NarrativeError, RetrievalError, TrainError};
pub use model::{Model, ModelConfig};
pub use narrative::{NarrativeClient, NarrativeRecord, NarrativeStore};
pub use retrieval::{DemonstrationChoice, RetrievalResult};
pub use training::{EvalReport, LossBreakdown, TrainConfig, TrainOutcome, Variant};
