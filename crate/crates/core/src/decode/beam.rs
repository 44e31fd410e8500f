use super::{check_prompt, log_probs, DecodeError, DecodeSettings, LanguageModel};
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub struct BeamResult {
    /// Continuation after the prompt, stop token included when produced.
    pub tokens: Vec<TokenId>,
    /// Total log-probability of `tokens`.
    pub score: f64,
    /// `score / tokens.len()`: the negative log-perplexity.
    pub normalized: f64,
}

impl BeamResult {
    pub fn perplexity(&self) -> f64 {
        (-self.normalized).exp()
    }
}

#[derive(Clone)]
struct Hyp {
    tokens: Vec<TokenId>,
    score: f64,
}

/// Orders by descending `key`, then ascending token sequence.
fn better(a_key: f64, a: &[TokenId], b_key: f64, b: &[TokenId]) -> std::cmp::Ordering {
    b_key.total_cmp(&a_key).then_with(|| a.cmp(b))
}

/// Beam search. Each step expands every live hypothesis by every token and keeps
/// the `beam_size` best by cumulative log-probability; hypotheses that emit a stop
/// token or reach `max_len` are retired. The answer is the retired hypothesis with
/// the best length-normalized score. Ties prefer the lexicographically smaller
/// token sequence, so `beam_size = 1` reproduces greedy decoding.
pub fn beam(model: &impl LanguageModel, prompt: &[TokenId], settings: &DecodeSettings) -> Result<BeamResult, DecodeError> {
    settings.validate(model)?;
    check_prompt(prompt, settings)?;
    let budget = settings.max_len - prompt.len();
    let mut live = vec![Hyp { tokens: Vec::new(), score: 0.0 }];
    let mut done: Vec<Hyp> = Vec::new();
    while !live.is_empty() {
        let mut expansions: Vec<Hyp> = Vec::new();
        for h in &live {
            let mut ctx = prompt.to_vec();
            ctx.extend_from_slice(&h.tokens);
            let lp = log_probs(&model.next_logits(&ctx)?, 1.0);
            for (t, l) in lp.into_iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(t as TokenId);
                expansions.push(Hyp { tokens, score: h.score + l });
            }
        }
        expansions.sort_by(|a, b| better(a.score, &a.tokens, b.score, &b.tokens));
        expansions.truncate(settings.beam_size);
        live.clear();
        for h in expansions {
            let finished = settings.is_stop(*h.tokens.last().unwrap()) || h.tokens.len() >= budget;
            if finished {
                done.push(h);
            } else {
                live.push(h);
            }
        }
    }
    let norm = |h: &Hyp| h.score / h.tokens.len() as f64;
    let best = done
        .into_iter()
        .min_by(|a, b| better(norm(a), &a.tokens, norm(b), &b.tokens))
        .ok_or(DecodeError::NoLegalToken)?;
    Ok(BeamResult { normalized: norm(&best), score: best.score, tokens: best.tokens })
}

/// Runs [`beam`] on every prompt and returns the index (and result) of the one
/// whose best continuation has the lowest perplexity. Ties go to the earlier prompt.
pub fn select_min_perplexity(model: &impl LanguageModel, prompts: &[Vec<TokenId>], settings: &DecodeSettings) -> Result<(usize, BeamResult), DecodeError> {
    let mut best: Option<(usize, BeamResult)> = None;
    for (i, p) in prompts.iter().enumerate() {
        let r = beam(model, p, settings)?;
        if best.as_ref().is_none_or(|(_, b)| r.normalized > b.normalized) {
            best = Some((i, r));
        }
    }
    best.ok_or(DecodeError::EmptyPrompt)
}
