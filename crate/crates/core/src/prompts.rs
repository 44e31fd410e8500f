//! Byte-exact prompt templates with named `{hole}`s, and builders for each task.
//!
//! The built-in set lives in `templates/prompts.toml`; [`TemplateSet::load`]
//! reads additional files of the same shape.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::decode::{rank_candidates, DecodeError, LanguageModel};
use crate::image::render_codes;
use crate::record::IMAGE_TOKENS_PER_IMAGE;
use crate::vocab::{TokenId, Vocab, VocabError};

const BUILTIN: &str = include_str!("../templates/prompts.toml");

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template {name:?}: {reason}")]
    BadTemplate { name: String, reason: String },
    #[error("missing value for hole {0:?}")]
    MissingHole(String),
    #[error("no hole named {0:?}")]
    UnknownHole(String),
    #[error("expected {expected} image tokens, got {got}")]
    ImageTokenCount { expected: usize, got: usize },
    #[error("prefix and postfix hold {0} image tokens; at most 255 fit around the mask")]
    Oversized(usize),
    #[error("entity mention is empty")]
    EmptyMention,
    #[error("template file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, serde::Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Temperature sampling after the prompt.
    Sample,
    /// Prompt ends in a tail `<mask:0>`; generate the infill up to `<eod>`.
    Infill,
    /// Beam search; pick among prompts by perplexity.
    Beam,
    /// Score fixed continuations rather than generate.
    Score,
    /// Infill with the implicit size-hint controller.
    SizeHint,
}

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Literal(String),
    Hole(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub name: String,
    pub text: String,
    pub decode: DecodeMode,
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    /// Parses `{hole}` markers. Holes must be distinct, non-empty identifiers and
    /// no two may be adjacent (extraction would be ambiguous).
    pub fn new(name: impl Into<String>, text: impl Into<String>, decode: DecodeMode) -> Result<Self, PromptError> {
        let (name, text) = (name.into(), text.into());
        let bad = |reason: &str| PromptError::BadTemplate { name: name.clone(), reason: reason.to_string() };
        let mut pieces = Vec::new();
        let mut rest = text.as_str();
        while let Some(open) = rest.find('{') {
            if rest[..open].contains('}') {
                return Err(bad("unmatched '}'"));
            }
            let close = rest[open..].find('}').ok_or_else(|| bad("unclosed '{'"))? + open;
            let hole = &rest[open + 1..close];
            if hole.is_empty() || !hole.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(bad("hole names must be non-empty identifiers"));
            }
            if open > 0 {
                pieces.push(Piece::Literal(rest[..open].to_string()));
            } else if matches!(pieces.last(), Some(Piece::Hole(_))) {
                return Err(bad("adjacent holes"));
            }
            if pieces.iter().any(|p| p == &Piece::Hole(hole.to_string())) {
                return Err(bad("duplicate hole"));
            }
            pieces.push(Piece::Hole(hole.to_string()));
            rest = &rest[close + 1..];
        }
        if rest.contains('}') {
            return Err(bad("unmatched '}'"));
        }
        if !rest.is_empty() {
            pieces.push(Piece::Literal(rest.to_string()));
        }
        Ok(Self { name, text, decode, pieces })
    }

    pub fn holes(&self) -> Vec<&str> {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Hole(h) => Some(h.as_str()),
                Piece::Literal(_) => None,
            })
            .collect()
    }

    /// Fills every hole; extra values are an error.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, PromptError> {
        let holes = self.holes();
        if let Some((k, _)) = values.iter().find(|(k, _)| !holes.contains(k)) {
            return Err(PromptError::UnknownHole(k.to_string()));
        }
        let mut out = String::new();
        for p in &self.pieces {
            match p {
                Piece::Literal(s) => out.push_str(s),
                Piece::Hole(h) => {
                    let v = values.iter().find(|(k, _)| k == h).ok_or_else(|| PromptError::MissingHole(h.clone()))?;
                    out.push_str(v.1);
                }
            }
        }
        Ok(out)
    }

    /// Recovers hole values from a rendered prompt. Each hole takes the shortest
    /// text that lets the following literal match; the last literal must end the
    /// string. Exact inverse of [`render`](Self::render) whenever no hole value
    /// contains the literal that follows it.
    pub fn extract(&self, rendered: &str) -> Option<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        let mut rest = rendered;
        let mut pending: Option<&str> = None;
        for (i, p) in self.pieces.iter().enumerate() {
            match p {
                Piece::Hole(h) => pending = Some(h),
                Piece::Literal(lit) => {
                    let last = i + 1 == self.pieces.len();
                    match pending.take() {
                        None => rest = rest.strip_prefix(lit.as_str())?,
                        Some(h) => {
                            let at = if last { rest.strip_suffix(lit.as_str()).map(str::len)? } else { rest.find(lit.as_str())? };
                            out.insert(h.to_string(), rest[..at].to_string());
                            rest = &rest[at + lit.len()..];
                        }
                    }
                }
            }
        }
        match pending {
            Some(h) => {
                out.insert(h.to_string(), rest.to_string());
            }
            None if !rest.is_empty() => return None,
            None => {}
        }
        Some(out)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTemplate {
    name: String,
    text: String,
    decode: DecodeMode,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    template: Vec<RawTemplate>,
}

/// Named templates; later definitions replace earlier ones with the same name.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: Vec<PromptTemplate>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let mut set = Self { templates: Vec::new() };
        set.merge_str(BUILTIN).expect("built-in templates are valid");
        set
    }

    pub fn merge_str(&mut self, toml_text: &str) -> Result<(), PromptError> {
        let raw: RawFile = toml::from_str(toml_text).map_err(|e| PromptError::Parse(e.to_string()))?;
        for t in raw.template {
            let t = PromptTemplate::new(t.name, t.text, t.decode)?;
            self.templates.retain(|old| old.name != t.name);
            self.templates.push(t);
        }
        Ok(())
    }

    /// Built-ins plus the templates in `path`.
    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        set.merge_str(&std::fs::read_to_string(path)?)?;
        Ok(set)
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates.iter().find(|t| t.name == name).ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.templates.iter().map(|t| t.name.as_str()).collect()
    }
}

fn builtin(name: &str) -> PromptTemplate {
    TemplateSet::builtin().get(name).expect("built-in template").clone()
}

/// The two unconditional image prompts: free (`<img`, the model may write an
/// `alt` first) and forced straight into image tokens (`<img src="`).
pub fn unconditional_image() -> (String, String) {
    (builtin("image_unconditional").text, builtin("image_unconditional_src").text)
}

/// Image infilling around a masked middle, optionally conditioned on a caption.
/// A non-empty prefix is followed by a space and a non-empty postfix preceded by
/// one, so the infill is a whole space-separated run of image tokens.
pub fn infill_image(prefix: &[u32], postfix: &[u32], caption: Option<&str>) -> Result<String, PromptError> {
    let n = prefix.len() + postfix.len();
    if n >= IMAGE_TOKENS_PER_IMAGE {
        return Err(PromptError::Oversized(n));
    }
    let pre = if prefix.is_empty() { String::new() } else { render_codes(prefix) + " " };
    let post = if postfix.is_empty() { String::new() } else { format!(" {}", render_codes(postfix)) };
    match caption {
        None => builtin("image_infill").render(&[("prefix", &pre), ("postfix", &post)]),
        Some(text) => builtin("image_infill_conditional").render(&[("text", text), ("prefix", &pre), ("postfix", &post)]),
    }
}

pub fn conditional_image(text: &str) -> String {
    builtin("image_conditional").render(&[("prompt", text)]).expect("single hole")
}

/// `(masked, causal)` captioning prompts for one image.
pub fn caption_prompts(codes: &[u32]) -> Result<(String, String), PromptError> {
    if codes.len() != IMAGE_TOKENS_PER_IMAGE {
        return Err(PromptError::ImageTokenCount { expected: IMAGE_TOKENS_PER_IMAGE, got: codes.len() });
    }
    let image = render_codes(codes);
    Ok((builtin("caption_masked").render(&[("image", &image)])?, builtin("caption_causal").render(&[("image", &image)])?))
}

/// Masks the link target of `mention`; `left`/`right` are the surrounding text.
pub fn entity_prompt(left: &str, mention: &str, right: &str) -> Result<String, PromptError> {
    if mention.is_empty() {
        return Err(PromptError::EmptyMention);
    }
    builtin("entity").render(&[("left", left), ("mention", mention), ("right", right)])
}

/// The continuation scored for `candidate`: a space and the candidate (nothing
/// for the empty candidate).
pub fn entity_continuation(candidate: &str) -> String {
    if candidate.is_empty() {
        String::new()
    } else {
        format!(" {candidate}")
    }
}

/// Prompt followed by the candidate continuation.
pub fn entity_target(prompt: &str, candidate: &str) -> String {
    format!("{prompt}{}", entity_continuation(candidate))
}

/// Candidates best first by log-probability of continuation plus `<eod>`.
/// Ties keep input order.
pub fn rank_entities<'a>(model: &impl LanguageModel, vocab: &Vocab, prompt: &str, candidates: &[&'a str]) -> Result<Vec<(&'a str, f64)>, PromptError> {
    let p = vocab.encode_str(prompt)?;
    let conts = candidates
        .iter()
        .map(|c| {
            let mut t = vocab.encode_str(&entity_continuation(c))?;
            t.push(vocab.eod());
            Ok(t)
        })
        .collect::<Result<Vec<Vec<TokenId>>, VocabError>>()?;
    Ok(rank_candidates(model, &p, &conts)?.into_iter().map(|(i, s)| (candidates[i], s)).collect())
}

/// Headline-infill prompt for summarization: the article in the body and a
/// masked `<title>`, meant for size-hint decoding.
pub fn summarize_prompt(article: &str) -> String {
    builtin("summarize").render(&[("article", article)]).expect("single hole")
}
