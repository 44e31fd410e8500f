//! Line-delimited JSON records and the in-memory [`Document`].

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::{Token, TokenId, Vocab, VocabError};

/// Image-token count of one encoded image.
pub const IMAGE_TOKENS_PER_IMAGE: usize = 256;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("document {0:?} contains a sentinel or end-of-document token")]
    ReservedToken(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    CcNewsLike,
    WikiLike,
    Synthetic,
}

/// One corpus document in canonical on-disk form.
///
/// Field order is the serialization order; `serde_json::to_string` emits no
/// insignificant whitespace, so a record written by [`write_jsonl`] reads back
/// and re-serializes to identical bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub doc_id: String,
    pub source: Source,
    pub minimal_html: String,
    pub tokens: Vec<String>,
}

impl Record {
    /// Builds a record whose `tokens` are the rendered encoding of `minimal_html`.
    pub fn from_html(
        vocab: &Vocab,
        doc_id: impl Into<String>,
        source: Source,
        minimal_html: impl Into<String>,
    ) -> Result<Self, VocabError> {
        let minimal_html = minimal_html.into();
        let tokens = vocab.render_all(&vocab.encode_str(&minimal_html)?)?;
        Ok(Self { doc_id: doc_id.into(), source, minimal_html, tokens })
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }

    pub fn token_ids(&self, vocab: &Vocab) -> Result<Vec<TokenId>, VocabError> {
        vocab.parse_rendered_all(&self.tokens)
    }

    pub fn document(&self, vocab: &Vocab) -> Result<Document, RecordError> {
        Document::new(self.doc_id.clone(), self.token_ids(vocab)?, vocab)
    }
}

/// Token sequence of one document before the objective transform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<TokenId>,
    /// Half-open token ranges covering exactly one inlined image: 256 image tokens
    /// (with the single-space byte tokens between them).
    pub image_regions: Vec<(usize, usize)>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, tokens: Vec<TokenId>, vocab: &Vocab) -> Result<Self, RecordError> {
        let doc_id = doc_id.into();
        if tokens.iter().any(|&t| vocab.token(t).is_none()) {
            let bad = *tokens.iter().find(|&&t| vocab.token(t).is_none()).unwrap();
            return Err(VocabError::UnknownId(bad).into());
        }
        if tokens.iter().any(|&t| vocab.is_special(t)) {
            return Err(RecordError::ReservedToken(doc_id));
        }
        let image_regions = image_regions(&tokens, vocab);
        Ok(Self { doc_id, tokens, image_regions })
    }

    /// Document length `s`.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Finds runs of image tokens joined by single spaces that hold exactly one image.
pub fn image_regions(tokens: &[TokenId], vocab: &Vocab) -> Vec<(usize, usize)> {
    let is_image = |t: TokenId| matches!(vocab.token(t), Some(Token::Image(_)));
    let space = vocab.byte(b' ');
    let mut regions = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if !is_image(tokens[i]) {
            i += 1;
            continue;
        }
        let start = i;
        let mut count = 1;
        let mut end = i + 1;
        while end + 1 < tokens.len() && tokens[end] == space && is_image(tokens[end + 1]) {
            end += 2;
            count += 1;
        }
        if count == IMAGE_TOKENS_PER_IMAGE {
            regions.push((start, end));
        }
        i = end;
    }
    regions
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<Record>, RecordError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| RecordError::Json { line: n + 1, source })?);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write, T: Serialize>(mut writer: W, items: &[T]) -> Result<(), RecordError> {
    for item in items {
        serde_json::to_writer(&mut writer, item).map_err(|source| RecordError::Json { line: 0, source })?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
