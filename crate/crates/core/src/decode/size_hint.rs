use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{argmax, sample_index, DecodeError, DecodeSettings, LanguageModel};
use crate::vocab::{TokenId, Vocab};

#[derive(Debug, Clone, PartialEq)]
pub struct SizeHinted {
    /// Prompt, generated body, forced `<mask:0>`, and tail.
    pub tokens: Vec<TokenId>,
    /// Where `<mask:0>` was forced: always `max_len - size_hint`.
    pub sentinel_index: usize,
    /// Tail tokens after the forced sentinel, `<eod>` excluded.
    pub infill: Vec<TokenId>,
}

/// Implicit size-hint decoding.
///
/// Decodes the body up to index `max_len - size_hint` with sentinels and `<eod>`
/// forbidden, forces `<mask:0>` there, then decodes the infill until `<eod>` or
/// `max_len`. `max_len` counts the prompt, so the infill is shorter than
/// `size_hint`.
pub fn size_hint_decode(model: &impl LanguageModel, prompt: &[TokenId], size_hint: usize, settings: &DecodeSettings, vocab: &Vocab) -> Result<SizeHinted, DecodeError> {
    settings.validate(model)?;
    if size_hint == 0 || size_hint >= settings.max_len {
        return Err(DecodeError::Settings(format!("size_hint {size_hint} must lie in 1..{}", settings.max_len)));
    }
    if !prompt.contains(&vocab.sentinel(0)) {
        return Err(DecodeError::MissingSentinel);
    }
    let at = settings.max_len - size_hint;
    if prompt.len() > at {
        return Err(DecodeError::PromptTooLong { len: prompt.len(), limit: at });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut pick = |logits: &[f64]| {
        if settings.greedy {
            argmax(logits)
        } else {
            sample_index(logits, settings.temperature, &mut rng)
        }
    };
    let mut seq = prompt.to_vec();
    while seq.len() < at {
        let mut logits = model.next_logits(&seq)?;
        for (id, l) in logits.iter_mut().enumerate() {
            if vocab.is_special(id as TokenId) {
                *l = f64::NEG_INFINITY;
            }
        }
        seq.push(pick(&logits) as TokenId);
    }
    seq.push(vocab.sentinel(0));
    let mut infill = Vec::new();
    while seq.len() < settings.max_len {
        let next = pick(&model.next_logits(&seq)?) as TokenId;
        seq.push(next);
        if settings.stop_tokens.contains(&next) {
            break;
        }
        infill.push(next);
    }
    Ok(SizeHinted { tokens: seq, sentinel_index: at, infill })
}

#[cfg(test)]
mod tests {
    use super::super::toy::FnModel;
    use super::*;

    #[test]
    fn sentinel_lands_at_max_len_minus_hint() {
        let v = Vocab::new(4);
        let n = v.total_size() as usize;
        let m = FnModel::hashed(n, 64, 1);
        let prompt = v.encode_str("<p><mask:0></p><mask:0>").unwrap();
        let mut s = DecodeSettings::new(&v, 32);
        s.seed = 4;
        let r = size_hint_decode(&m, &prompt[..4], 8, &s, &v).unwrap();
        assert_eq!(r.sentinel_index, 24);
        assert_eq!(r.tokens[24], v.sentinel(0));
        assert!(r.tokens[4..24].iter().all(|&t| !v.is_special(t)));
        assert!(r.infill.len() < 8);

        let boundary = size_hint_decode(&m, &prompt[..4], 28, &s, &v).unwrap();
        assert_eq!(boundary.sentinel_index, 4);
        assert_eq!(boundary.tokens[4], v.sentinel(0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let v = Vocab::new(4);
        let m = FnModel::hashed(v.total_size() as usize, 64, 1);
        let s = DecodeSettings::new(&v, 32);
        let with = v.encode_str("ab<mask:0>").unwrap();
        assert!(matches!(size_hint_decode(&m, &v.encode_str("ab").unwrap(), 8, &s, &v), Err(DecodeError::MissingSentinel)));
        assert!(matches!(size_hint_decode(&m, &with, 30, &s, &v), Err(DecodeError::PromptTooLong { .. })));
        assert!(size_hint_decode(&m, &with, 32, &s, &v).is_err());
    }
}
