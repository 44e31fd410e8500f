//! Hand-specified models for tests, oracles and examples.

use super::{DecodeError, LanguageModel};
use crate::vocab::TokenId;

/// Context-free logits.
#[derive(Debug, Clone)]
pub struct UnigramModel {
    pub logits: Vec<f64>,
    pub max_positions: usize,
}

impl UnigramModel {
    pub fn new(logits: Vec<f64>, max_positions: usize) -> Self {
        Self { logits, max_positions }
    }
}

impl LanguageModel for UnigramModel {
    fn vocab_size(&self) -> usize {
        self.logits.len()
    }

    fn max_positions(&self) -> usize {
        self.max_positions
    }

    fn next_logits(&self, _context: &[TokenId]) -> Result<Vec<f64>, DecodeError> {
        Ok(self.logits.clone())
    }
}

type LogitFn = dyn Fn(&[TokenId]) -> Vec<f64> + Send + Sync;

/// Logits computed by a closure of the full context.
pub struct FnModel {
    vocab_size: usize,
    max_positions: usize,
    f: Box<LogitFn>,
}

impl FnModel {
    pub fn new(vocab_size: usize, max_positions: usize, f: impl Fn(&[TokenId]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self { vocab_size, max_positions, f: Box::new(f) }
    }

    /// Deterministic pseudo-random logits, a function of the whole context.
    pub fn hashed(vocab_size: usize, max_positions: usize, salt: u64) -> Self {
        Self::new(vocab_size, max_positions, move |ctx| {
            let mut h = salt ^ 0x9e37_79b9_7f4a_7c15;
            for &t in ctx {
                h = (h ^ t as u64).wrapping_mul(0x1000_0000_01b3).rotate_left(17);
            }
            (0..vocab_size)
                .map(|i| {
                    let x = (h ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
                    ((x >> 11) as f64 / (1u64 << 53) as f64) * 6.0 - 3.0
                })
                .collect()
        })
    }
}

impl LanguageModel for FnModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn max_positions(&self) -> usize {
        self.max_positions
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<Vec<f64>, DecodeError> {
        let out = (self.f)(context);
        assert_eq!(out.len(), self.vocab_size, "logit function returned the wrong width");
        Ok(out)
    }
}
