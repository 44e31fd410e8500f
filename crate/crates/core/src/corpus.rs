//! Corpus assembly: de-duplicated train/test splits and token-usage histograms.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::html::{parse_dom, visible_text};
use crate::record::Record;
use crate::vocab::{Token, TokenClass, TokenId, Vocab, VocabError};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("test size {want} cannot be filled from {unique} unique documents")]
    InsufficientUnique { want: usize, unique: usize },
    #[error("no {0:?} tokens in the selection")]
    EmptySelection(TokenClass),
    #[error("record {doc_id}: {source}")]
    Vocab { doc_id: String, source: VocabError },
}

/// Dedup key: SHA-256 of the visible text with whitespace runs collapsed to one
/// space and the ends trimmed.
pub fn dedup_key(minimal_html: &str) -> [u8; 32] {
    let text = visible_text(&parse_dom(minimal_html.as_bytes()));
    let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ");
    Sha256::digest(normalized.as_bytes()).into()
}

/// Splits `records` so that the test side holds exactly `test_size` documents
/// and no dedup key occurs on both sides. Records sharing a key move together;
/// nothing is dropped. Groups are visited in a seeded shuffle and added to the
/// test side whenever they still fit.
pub fn make_split(records: Vec<Record>, test_size: usize, seed: u64) -> Result<(Vec<Record>, Vec<Record>), CorpusError> {
    let mut groups: BTreeMap<[u8; 32], Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(dedup_key(&r.minimal_html)).or_default().push(i);
    }
    let unique = groups.len();
    if test_size > unique {
        return Err(CorpusError::InsufficientUnique { want: test_size, unique });
    }
    let mut order: Vec<Vec<usize>> = groups.into_values().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_test = vec![false; records.len()];
    let mut filled = 0;
    for g in &order {
        if filled + g.len() <= test_size {
            filled += g.len();
            g.iter().for_each(|&i| in_test[i] = true);
        }
        if filled == test_size {
            break;
        }
    }
    if filled != test_size {
        return Err(CorpusError::InsufficientUnique { want: test_size, unique });
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, t) in records.into_iter().zip(in_test) {
        if t {
            test.push(r);
        } else {
            train.push(r);
        }
    }
    Ok((train, test))
}

/// Usage counts over one token class: the 256 bytes for text, the codebook for images.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub class: TokenClass,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(class: TokenClass, vocab: &Vocab) -> Self {
        let v = match class {
            TokenClass::Image => vocab.image_vocab_size(),
            _ => vocab.text_base_size(),
        };
        Self { class, counts: vec![0; v as usize] }
    }

    /// Counts the tokens of this histogram's class; others are ignored.
    pub fn add(&mut self, tokens: &[TokenId], vocab: &Vocab) {
        for &t in tokens {
            match (self.class, vocab.token(t)) {
                (TokenClass::Text, Some(Token::Byte(b))) => self.counts[b as usize] += 1,
                (TokenClass::Image, Some(Token::Image(k))) => self.counts[k as usize] += 1,
                _ => {}
            }
        }
    }

    /// Counts are additive, so shards merge in any order.
    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Shannon entropy divided by `log2(V)`, in `[0, 1]`.
    pub fn normalized_entropy(&self) -> Result<f64, CorpusError> {
        let total = self.total();
        if total == 0 {
            return Err(CorpusError::EmptySelection(self.class));
        }
        let h: f64 = self
            .counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total as f64;
                -p * p.log2()
            })
            .sum();
        Ok((h / (self.counts.len() as f64).log2()).clamp(0.0, 1.0))
    }

    /// `token,count` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("token,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{i},{c}\n"));
        }
        out
    }
}

pub fn token_histogram(records: &[Record], class: TokenClass, vocab: &Vocab) -> Result<Histogram, CorpusError> {
    let mut h = Histogram::new(class, vocab);
    for r in records {
        let ids = r.token_ids(vocab).map_err(|source| CorpusError::Vocab { doc_id: r.doc_id.clone(), source })?;
        h.add(&ids, vocab);
    }
    h.normalized_entropy()?;
    Ok(h)
}
