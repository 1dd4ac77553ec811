//! Model-backed operators over reasoning text: thought grouping,
//! structuring, clarification flagging with duplicate suppression, subtree
//! summarization and answer linking. Every operator has a deterministic
//! fallback, so the only hard errors are prompt-catalog and fixture errors.

mod clarify;
mod dedup;
mod group;
mod link;
mod segment;
mod structure;
mod summarize;

pub use clarify::{clarify, Clarified};
pub use dedup::{is_duplicate_question, ClarifyConfig, FlaggedQuestionRegistry};
pub use group::{fallback_split, group_thoughts, paragraphs, GroupConfig, SegmentationResult};
pub use link::{link, parse_link_completion, LinkConfig, LinkEdge, LinkMap, LinkOutcome};
pub use segment::{first_sentence, segment_answer, AnswerUnit};
pub use structure::{structure_segment, StructuredSegment};
pub use summarize::{summarize_subtree, truncate_words, Summary, SummaryConfig};

use crate::prompts::{PromptCatalog, PromptError};
use crate::providers::{FixtureError, OperatorProvider, ProviderError, RetryPolicy};
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum OperatorError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
}

/// What every operator call needs: templates, the operator model and the
/// retry policy for it.
#[derive(Clone)]
pub struct OperatorContext {
    pub catalog: Arc<PromptCatalog>,
    pub provider: Arc<dyn OperatorProvider>,
    pub retry: RetryPolicy,
}

impl OperatorContext {
    pub fn new(catalog: Arc<PromptCatalog>, provider: Arc<dyn OperatorProvider>) -> Self {
        OperatorContext {
            catalog,
            provider,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Renders `template` and runs it with retries. The outer error is a
    /// hard failure; the inner one is a provider failure the caller is
    /// expected to absorb with its fallback.
    pub async fn call(
        &self,
        template: &str,
        bindings: &[(&str, &str)],
    ) -> Result<Result<String, ProviderError>, OperatorError> {
        let prompt = self.catalog.render(template, bindings)?;
        self.run(template, &prompt).await
    }

    pub async fn run(
        &self,
        template: &str,
        prompt: &str,
    ) -> Result<Result<String, ProviderError>, OperatorError> {
        let res = self
            .retry
            .run(|| self.provider.complete(template, prompt))
            .await;
        lift(res)
    }
}

/// Splits fixture drift out of a provider result.
pub(crate) fn lift<T>(res: Result<T, ProviderError>) -> Result<Result<T, ProviderError>, OperatorError> {
    match res {
        Err(ProviderError::Fixture(f)) => Err(OperatorError::Fixture(f)),
        other => Ok(other),
    }
}
