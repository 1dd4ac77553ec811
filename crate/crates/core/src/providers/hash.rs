use super::{EmbeddingProvider, ProviderError};
use async_trait::async_trait;

/// Deterministic embedder for tests and offline runs: each lowercase
/// alphanumeric token is hashed (FNV-1a) into one of `dim` buckets, the
/// bucket counts are L2-normalized.
#[derive(Clone, Debug)]
pub struct HashEmbedder {
    dim: usize,
    model_id: String,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(256)
    }
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder {
            dim,
            model_id: format!("hashed-bag-of-tokens-{dim}"),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
    }

    pub fn bucket(&self, token: &str) -> usize {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in token.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        (h % self.dim as u64) as usize
    }

    pub fn embed_one(&self, text: &str) -> Result<Vec<f32>, ProviderError> {
        let mut v = vec![0f32; self.dim];
        let mut any = false;
        for t in Self::tokens(text) {
            v[self.bucket(&t)] += 1.0;
            any = true;
        }
        if !any {
            return Err(ProviderError::Embedding(format!("no tokens in {text:?}")));
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

#[async_trait]
impl EmbeddingProvider for HashEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::cosine;

    #[tokio::test]
    async fn deterministic_and_normalized() {
        let e = HashEmbedder::default();
        let v = e.embed(&["Hello world".into(), "Hello world".into()]).await.unwrap();
        assert_eq!(v[0], v[1]);
        assert_eq!(v[0].len(), 256);
        assert!((cosine(&v[0], &v[1]) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_vocabulary_is_orthogonal() {
        let e = HashEmbedder::default();
        let a = "budget hotel prices";
        let b = "volcano hiking trails";
        let ba: Vec<_> = HashEmbedder::tokens(a).map(|t| e.bucket(&t)).collect();
        let bb: Vec<_> = HashEmbedder::tokens(b).map(|t| e.bucket(&t)).collect();
        assert!(ba.iter().all(|x| !bb.contains(x)), "bucket collision; pick other words");
        let s = cosine(&e.embed_one(a).unwrap(), &e.embed_one(b).unwrap());
        assert_eq!(s, 0.0);
    }

    #[test]
    fn empty_text_fails() {
        assert!(matches!(
            HashEmbedder::default().embed_one(" ?! "),
            Err(ProviderError::Embedding(_))
        ));
    }
}
