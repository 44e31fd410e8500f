//! Generation and scoring over any [`LanguageModel`]: temperature sampling,
//! greedy and beam search, trie-constrained decoding, size-hint control, and
//! exact sequence scoring.

mod beam;
mod rerank;
mod size_hint;
pub mod toy;
mod trie;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::linalg::log_softmax;
use crate::model::{ModelError, Transformer};
use crate::vocab::{TokenId, Vocab};

pub use beam::{beam, select_min_perplexity, BeamResult};
pub use rerank::{sample_and_rerank, LogProbReranker, Reranker};
pub use size_hint::{size_hint_decode, SizeHinted};
pub use trie::{constrained, constrained_by, constrained_greedy, CandidateTrie, Constrained, TrieScoring};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid decode settings: {0}")]
    Settings(String),
    #[error("prompt of {len} tokens leaves no room within {limit}")]
    PromptTooLong { len: usize, limit: usize },
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("candidate trie is empty")]
    EmptyTrie,
    #[error("prompt has no body <mask:0>")]
    MissingSentinel,
    #[error("no legal continuation")]
    NoLegalToken,
}

/// Anything that yields next-token logits for a context.
pub trait LanguageModel: Sync {
    fn vocab_size(&self) -> usize;

    fn max_positions(&self) -> usize;

    /// Logits for the token following `context` (non-empty).
    fn next_logits(&self, context: &[TokenId]) -> Result<Vec<f64>, DecodeError>;

    /// Logits `[T, V]` for every prefix of `tokens`; row `t` predicts token `t + 1`.
    fn logits(&self, tokens: &[TokenId]) -> Result<Vec<f64>, DecodeError> {
        let mut out = Vec::with_capacity(tokens.len() * self.vocab_size());
        for t in 1..=tokens.len() {
            out.extend(self.next_logits(&tokens[..t])?);
        }
        Ok(out)
    }
}

impl LanguageModel for Transformer {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn max_positions(&self) -> usize {
        self.config.max_positions
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<Vec<f64>, DecodeError> {
        Ok(Transformer::next_logits(self, context)?)
    }

    fn logits(&self, tokens: &[TokenId]) -> Result<Vec<f64>, DecodeError> {
        Ok(self.forward(tokens)?)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn max_positions(&self) -> usize {
        (**self).max_positions()
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<Vec<f64>, DecodeError> {
        (**self).next_logits(context)
    }

    fn logits(&self, tokens: &[TokenId]) -> Result<Vec<f64>, DecodeError> {
        (**self).logits(tokens)
    }
}

/// Decoding knobs. `max_len` bounds the whole sequence, prompt included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeSettings {
    pub temperature: f64,
    /// Argmax instead of sampling (the temperature → 0 limit).
    pub greedy: bool,
    pub beam_size: usize,
    pub max_len: usize,
    pub stop_tokens: Vec<TokenId>,
    pub seed: u64,
}

impl DecodeSettings {
    /// Temperature 1, beam 1, stopping at `<eod>`.
    pub fn new(vocab: &Vocab, max_len: usize) -> Self {
        Self { temperature: 1.0, greedy: false, beam_size: 1, max_len, stop_tokens: vec![vocab.eod()], seed: 0 }
    }

    pub fn greedy(vocab: &Vocab, max_len: usize) -> Self {
        Self { greedy: true, ..Self::new(vocab, max_len) }
    }

    pub fn validate(&self, model: &impl LanguageModel) -> Result<(), DecodeError> {
        if !(self.temperature > 0.0) {
            return Err(DecodeError::Settings("temperature must be positive".into()));
        }
        if self.beam_size == 0 {
            return Err(DecodeError::Settings("beam_size must be at least 1".into()));
        }
        if self.max_len > model.max_positions() {
            return Err(DecodeError::Settings(format!(
                "max_len {} exceeds the model's {} positions",
                self.max_len,
                model.max_positions()
            )));
        }
        Ok(())
    }

    fn is_stop(&self, t: TokenId) -> bool {
        self.stop_tokens.contains(&t)
    }
}

fn check_prompt(prompt: &[TokenId], settings: &DecodeSettings) -> Result<(), DecodeError> {
    if prompt.is_empty() {
        return Err(DecodeError::EmptyPrompt);
    }
    if prompt.len() >= settings.max_len {
        return Err(DecodeError::PromptTooLong { len: prompt.len(), limit: settings.max_len });
    }
    Ok(())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Log-probabilities of `logits / temperature`.
pub fn log_probs(logits: &[f64], temperature: f64) -> Vec<f64> {
    let mut lp: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    log_softmax(&mut lp);
    lp
}

/// Draws an index from `softmax(logits / temperature)` by inverting the CDF.
pub fn sample_index(logits: &[f64], temperature: f64, rng: &mut impl Rng) -> usize {
    let lp = log_probs(logits, temperature);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, l) in lp.iter().enumerate() {
        let p = l.exp();
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

/// Argmax continuation until a stop token (kept) or `max_len`.
pub fn greedy(model: &impl LanguageModel, prompt: &[TokenId], settings: &DecodeSettings) -> Result<Vec<TokenId>, DecodeError> {
    settings.validate(model)?;
    check_prompt(prompt, settings)?;
    let mut seq = prompt.to_vec();
    while seq.len() < settings.max_len {
        let next = argmax(&model.next_logits(&seq)?) as TokenId;
        seq.push(next);
        if settings.is_stop(next) {
            break;
        }
    }
    Ok(seq.split_off(prompt.len()))
}

/// Samples a continuation from `softmax(logits / temperature)`, seeded by
/// `settings.seed`; falls back to [`greedy`] when `settings.greedy` is set.
pub fn sample(model: &impl LanguageModel, prompt: &[TokenId], settings: &DecodeSettings) -> Result<Vec<TokenId>, DecodeError> {
    if settings.greedy {
        return greedy(model, prompt, settings);
    }
    settings.validate(model)?;
    check_prompt(prompt, settings)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut seq = prompt.to_vec();
    while seq.len() < settings.max_len {
        let next = sample_index(&model.next_logits(&seq)?, settings.temperature, &mut rng) as TokenId;
        seq.push(next);
        if settings.is_stop(next) {
            break;
        }
    }
    Ok(seq.split_off(prompt.len()))
}

/// Per-token log-probabilities of a sequence and their (weighted) total.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    /// `per_token[i]` is `log p(tokens[i + 1] | tokens[..=i])`.
    pub per_token: Vec<f64>,
    pub total: f64,
}

/// Scores every token after the first. With `weights`, `weights[i]` multiplies the
/// log-probability of `tokens[i]` (so `weights[0]` is unused).
pub fn score(model: &impl LanguageModel, tokens: &[TokenId], weights: Option<&[f64]>) -> Result<Scored, DecodeError> {
    if tokens.is_empty() {
        return Err(DecodeError::EmptyPrompt);
    }
    if let Some(w) = weights {
        if w.len() != tokens.len() {
            return Err(DecodeError::Settings(format!("{} weights for {} tokens", w.len(), tokens.len())));
        }
    }
    let v = model.vocab_size();
    let logits = model.logits(&tokens[..tokens.len() - 1])?;
    let mut per_token = Vec::with_capacity(tokens.len() - 1);
    let mut total = 0.0;
    for i in 1..tokens.len() {
        let mut row = logits[(i - 1) * v..i * v].to_vec();
        log_softmax(&mut row);
        let lp = row[tokens[i] as usize];
        per_token.push(lp);
        total += weights.map_or(1.0, |w| w[i]) * lp;
    }
    Ok(Scored { per_token, total })
}

/// Log-probability of `continuation` given `prompt`.
pub fn score_continuation(model: &impl LanguageModel, prompt: &[TokenId], continuation: &[TokenId]) -> Result<f64, DecodeError> {
    let mut tokens = prompt.to_vec();
    tokens.extend_from_slice(continuation);
    let mut weights = vec![0.0; prompt.len()];
    weights.extend(std::iter::repeat_n(1.0, continuation.len()));
    Ok(score(model, &tokens, Some(&weights))?.total)
}

/// Candidates sorted by descending score (stable on ties), with 1-based ranks.
pub fn rank_candidates(model: &impl LanguageModel, prompt: &[TokenId], candidates: &[Vec<TokenId>]) -> Result<Vec<(usize, f64)>, DecodeError> {
    let mut scored = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| score_continuation(model, prompt, c).map(|s| (i, s)))
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::toy::{FnModel, UnigramModel};
    use super::*;

    fn vocab() -> Vocab {
        Vocab::new(4)
    }

    #[test]
    fn uniform_model_scores_ln_one_over_v() {
        let m = UnigramModel::new(vec![0.0; 7], 64);
        let s = score(&m, &[1, 2, 3, 4], None).unwrap();
        assert!((s.total - 3.0 * (1.0f64 / 7.0).ln()).abs() < 1e-12);
        assert!((s.per_token.iter().sum::<f64>() - s.total).abs() < 1e-12);
    }

    #[test]
    fn weighted_score_masks_positions() {
        let m = UnigramModel::new(vec![0.0, 1.0, 2.0], 16);
        let s = score(&m, &[0, 1, 2], Some(&[1.0, 0.0, 1.0])).unwrap();
        assert!((s.total - s.per_token[1]).abs() < 1e-15);
    }

    #[test]
    fn seeded_sampling_is_reproducible_and_greedy_is_argmax() {
        let v = vocab();
        let m = UnigramModel::new((0..v.total_size()).map(|i| (i as f64 * 0.1).sin()).collect(), 64);
        let mut s = DecodeSettings::new(&v, 20);
        s.seed = 11;
        assert_eq!(sample(&m, &[1], &s).unwrap(), sample(&m, &[1], &s).unwrap());
        s.greedy = true;
        let g = sample(&m, &[1], &s).unwrap();
        let best = argmax(&m.next_logits(&[1]).unwrap()) as TokenId;
        assert!(g.iter().all(|&t| t == best));
        assert_eq!(g.len(), 19);
    }

    #[test]
    fn low_temperature_sampling_approaches_greedy() {
        let v = vocab();
        let m = FnModel::hashed(v.total_size() as usize, 64, 8);
        let mut s = DecodeSettings::new(&v, 16);
        s.temperature = 1e-6;
        let greedy_out = greedy(&m, &[5], &DecodeSettings::greedy(&v, 16)).unwrap();
        for seed in 0..5 {
            s.seed = seed;
            assert_eq!(sample(&m, &[5], &s).unwrap(), greedy_out);
        }
    }

    #[test]
    fn sampling_frequencies_match_softmax() {
        let logits = vec![0.5, -1.0, 2.0, 0.0];
        let probs: Vec<f64> = log_probs(&logits, 0.85).iter().map(|l| l.exp()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[sample_index(&logits, 0.85, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn prompt_bounds() {
        let v = vocab();
        let m = UnigramModel::new(vec![0.0; v.total_size() as usize], 8);
        assert!(matches!(greedy(&m, &[1; 8], &DecodeSettings::greedy(&v, 8)), Err(DecodeError::PromptTooLong { .. })));
        assert!(greedy(&m, &[1], &DecodeSettings::greedy(&v, 9)).is_err());
        assert!(matches!(greedy(&m, &[], &DecodeSettings::greedy(&v, 8)), Err(DecodeError::EmptyPrompt)));
    }
}
