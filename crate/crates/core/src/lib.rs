//! Evidence-based prediction of how a country's population distributes its
//! answers to a survey question.
//!
//! Respondent microdata is aggregated into an [`EvidenceBank`] of per-group
//! answer distributions and per-option value signatures. For a new
//! question, similar bank items are retrieved, a model assigns a value
//! signature to each answer option, and then predicts the distribution.
//! The [`rewards`] module scores such rollouts for policy training and
//! [`eval`] compares predictors against gold distributions.

pub mod error;
pub mod eval;
pub mod evidence;
pub mod inference;
pub mod llm;
pub mod metrics;
pub mod retrieval;
pub mod rewards;
pub mod synth;
pub mod transport;
pub mod values;

pub use error::{Error, ErrorClass, Result};
pub use evidence::{
    AnswerDistribution, EvidenceBank, GroupKey, ItemCatalog, ItemEvidence, RespondentRecord,
    SurveyItem, SurveyOption,
};
pub use inference::{Ablation, InferenceConfig, PredictionResult, Question};
pub use llm::{DecodingParams, LlmClient};
pub use metrics::jsd;
pub use retrieval::{Encoder, RetrievalQuery, RetrievedEvidence, Retriever};
pub use rewards::{RewardBreakdown, RewardWeights};
pub use values::{LmhLabel, LmhSignature, SubIndex, Thresholds, WelzelProfile};
