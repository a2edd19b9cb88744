//! Column type annotation with chat models: corpus handling, prompt
//! construction, label definitions, self-correction, scoring, cost
//! accounting and fine-tuning set export.

pub mod corpus;
pub mod definitions;
pub mod error;
pub mod ftexport;
pub mod gateway;
pub mod ledger;
pub mod metrics;
pub mod prompts;
pub mod reviewer;
pub mod runner;
pub mod selector;
pub mod serializer;
pub mod workflow;

pub use corpus::{ColumnRole, Corpus, Split, TableDoc, Vocabulary};
pub use definitions::{Definition, DefinitionKind, ErrorDigest};
pub use error::{CorpusError, Error, ParseError, Result};
pub use gateway::{BackendConfig, ChatBackend, ChatMessage, Completion, GatewayError, Role, TokenUsage};
pub use ledger::{Dollars, Phase, PriceSheet, UsageEntry};
pub use metrics::MetricsReport;
pub use prompts::{ColumnPrediction, PromptVariant, Strategy};
pub use runner::{Run, RunContext};
pub use selector::{Embedder, EmbeddingVector, HashEmbedder};
pub use serializer::SerializationOptions;
