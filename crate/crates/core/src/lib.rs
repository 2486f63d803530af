//! Data-level pipeline for reasoning-trace inversion.
//!
//! The crate covers everything around model training: deterministic corpus
//! splits, a chat-completion gateway with a mock backend, the fixed prompt
//! templates, dataset construction for inversion and student fine-tuning,
//! trace-similarity metrics and token cost accounting. Model optimisation is
//! left to an external trainer that consumes the emitted SFT files.

pub mod corpus;
pub mod economics;
pub mod exec;
pub mod gateway;
pub mod metrics;
pub mod prompts;
pub mod stages;

pub use corpus::{Corpus, ReasoningRecord, RecordSource, SplitManifest};
pub use economics::{BudgetPlan, PricingModel, UsdAmount};
pub use exec::Execution;
pub use gateway::{ChatExchange, ChatMessage, EndpointConfig, Gateway, Role, UsageStats};
pub use metrics::{MetricReport, TokenSequence, TraceScore};
pub use prompts::{PromptTemplate, TemplateName};
pub use stages::{InversionSetting, SftExample, SftSetting, StudentVariant};

/// Opening think-delimiter used by reasoning models and in every emitted target.
pub const THINK_OPEN: &str = "<think>";
/// Closing think-delimiter.
pub const THINK_CLOSE: &str = "</think>";

/// Lowercase hex SHA-256, the digest used for corpora, prompts and run artifacts.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
