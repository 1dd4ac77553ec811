use crate::providers::{cosine, EmbeddingProvider};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClarifyConfig {
    /// A question duplicates a flagged one when cosine similarity is
    /// strictly greater than this.
    pub dedup_threshold: f64,
    pub embedding_model_id: String,
}

impl Default for ClarifyConfig {
    fn default() -> Self {
        ClarifyConfig {
            dedup_threshold: 0.8,
            embedding_model_id: "sentence-transformers/all-MiniLM-L6-v2".into(),
        }
    }
}

impl ClarifyConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.dedup_threshold > 0.0 && self.dedup_threshold <= 1.0 {
            Ok(())
        } else {
            Err("clarify.dedup_threshold must be in (0, 1]".into())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub question: String,
    pub vector: Vec<f32>,
}

/// Questions already surfaced to the user in this session. Append-only.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlaggedQuestionRegistry {
    entries: Vec<RegistryEntry>,
}

impl FlaggedQuestionRegistry {
    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends an entry; degenerate vectors are refused.
    pub fn push(&mut self, question: String, vector: Vec<f32>) -> bool {
        let norm: f32 = vector.iter().map(|x| x * x).sum();
        if !norm.is_finite() || norm == 0.0 {
            return false;
        }
        self.entries.push(RegistryEntry { question, vector });
        true
    }

    pub fn max_similarity(&self, v: &[f32]) -> Option<f64> {
        self.entries
            .iter()
            .map(|e| cosine(&e.vector, v))
            .max_by(|a, b| a.total_cmp(b))
    }
}

/// Whether `question` repeats one already flagged. When it does not, it is
/// added to the registry. Embedding failures count as "not a duplicate".
pub async fn is_duplicate_question(
    question: &str,
    registry: &mut FlaggedQuestionRegistry,
    embedder: &dyn EmbeddingProvider,
    cfg: &ClarifyConfig,
) -> bool {
    let vector = match embedder.embed(&[question.to_string()]).await {
        Ok(mut v) if v.len() == 1 => v.remove(0),
        Ok(_) => {
            tracing::warn!("embedder returned the wrong number of vectors; treating as new");
            return false;
        }
        Err(e) => {
            tracing::warn!(error = %e, "embedding failed; treating question as new");
            return false;
        }
    };
    if registry
        .max_similarity(&vector)
        .is_some_and(|s| s > cfg.dedup_threshold)
    {
        return true;
    }
    if !registry.push(question.to_string(), vector) {
        tracing::warn!("degenerate question embedding not registered");
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{HashEmbedder, ProviderError};
    use async_trait::async_trait;

    struct Broken;

    #[async_trait]
    impl EmbeddingProvider for Broken {
        fn model_id(&self) -> &str {
            "broken"
        }
        async fn embed(&self, _: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
            Err(ProviderError::Embedding("offline".into()))
        }
    }

    /// Returns a fixed vector per call, in order.
    struct Fixed(std::sync::Mutex<Vec<Vec<f32>>>);

    #[async_trait]
    impl EmbeddingProvider for Fixed {
        fn model_id(&self) -> &str {
            "fixed"
        }
        async fn embed(&self, _: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
            Ok(vec![self.0.lock().unwrap().remove(0)])
        }
    }

    #[tokio::test]
    async fn identical_question_is_duplicate() {
        let e = HashEmbedder::default();
        let cfg = ClarifyConfig::default();
        let mut reg = FlaggedQuestionRegistry::default();
        let q = "What is the user's budget?";
        assert!(!is_duplicate_question(q, &mut reg, &e, &cfg).await);
        assert!(is_duplicate_question(q, &mut reg, &e, &cfg).await);
        assert_eq!(reg.len(), 1);
    }

    #[tokio::test]
    async fn orthogonal_is_not_duplicate() {
        let e = HashEmbedder::default();
        let cfg = ClarifyConfig::default();
        let mut reg = FlaggedQuestionRegistry::default();
        assert!(!is_duplicate_question("budget hotel prices", &mut reg, &e, &cfg).await);
        assert!(!is_duplicate_question("volcano hiking trails", &mut reg, &e, &cfg).await);
        assert_eq!(reg.len(), 2);
    }

    #[tokio::test]
    async fn threshold_is_strict() {
        // cos([5,0],[4,3]) is exactly 0.8, which is not above the threshold.
        let e = Fixed(std::sync::Mutex::new(vec![vec![4.0, 3.0], vec![4.0, 2.9]]));
        let cfg = ClarifyConfig::default();
        let mut reg = FlaggedQuestionRegistry::default();
        reg.push("a".into(), vec![5.0, 0.0]);
        assert!(!is_duplicate_question("b", &mut reg, &e, &cfg).await);
        let mut reg = FlaggedQuestionRegistry::default();
        reg.push("a".into(), vec![5.0, 0.0]);
        assert!(is_duplicate_question("c", &mut reg, &e, &cfg).await);
    }

    #[tokio::test]
    async fn embedding_failure_fails_open() {
        let cfg = ClarifyConfig::default();
        let mut reg = FlaggedQuestionRegistry::default();
        reg.push("q".into(), vec![1.0]);
        assert!(!is_duplicate_question("q", &mut reg, &Broken, &cfg).await);
        assert_eq!(reg.len(), 1);
    }

    #[test]
    fn threshold_bounds() {
        let mut c = ClarifyConfig::default();
        c.validate().unwrap();
        c.dedup_threshold = 0.0;
        assert!(c.validate().is_err());
    }
}
