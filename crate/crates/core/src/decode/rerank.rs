use super::{sample, score_continuation, DecodeError, DecodeSettings, LanguageModel};
use crate::vocab::TokenId;

/// Scores a sampled continuation; higher is better.
pub trait Reranker {
    fn score(&self, prompt: &[TokenId], continuation: &[TokenId]) -> Result<f64, DecodeError>;
}

/// The default reranker: the continuation's log-probability under a model.
pub struct LogProbReranker<M> {
    pub model: M,
}

impl<M: LanguageModel> Reranker for LogProbReranker<M> {
    fn score(&self, prompt: &[TokenId], continuation: &[TokenId]) -> Result<f64, DecodeError> {
        if continuation.is_empty() {
            return Ok(0.0);
        }
        score_continuation(&self.model, prompt, continuation)
    }
}

/// Draws `n` samples (sample `i` seeded with `settings.seed + i`) and returns them
/// best first by `reranker`, ties in draw order.
pub fn sample_and_rerank(
    model: &impl LanguageModel,
    prompt: &[TokenId],
    n: usize,
    settings: &DecodeSettings,
    reranker: &impl Reranker,
) -> Result<Vec<(Vec<TokenId>, f64)>, DecodeError> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let s = DecodeSettings { seed: settings.seed.wrapping_add(i as u64), ..settings.clone() };
        let tokens = sample(model, prompt, &s)?;
        let score = reranker.score(prompt, &tokens)?;
        out.push((tokens, score));
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(out)
}
