//! Template-based question generation from annotated survey questions,
//! with the count-regression and rank-sum statistics used to analyze the
//! survey itself.

pub mod annotation;
pub mod corpus;
mod fsio;
pub mod generator;
pub mod paraphrase;
pub mod stats;
pub mod templates;

pub use annotation::{AnnotatedSentence, SlotLabel, Token, Upos};
pub use corpus::{CarCode, OpenCode, SurveyCorpus};
pub use fsio::write_atomic;
pub use generator::{GeneratedQuestion, GenerationFilters, GenerationReport, SlotBinding, Stage};
pub use paraphrase::{ParaphraseClient, ParaphraseConfig};
pub use templates::{Element, RankedTemplates, SlotConfig, Template, TemplateCorpus};
pub use stats::{CountObservation, RankSumResult, RegressionResult};
