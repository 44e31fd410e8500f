//! Desk-scale experiments on a synthetic templated-HTML corpus: single-span
//! infilling under both objectives, and validation loss across model sizes.
//!
//! Corpus documents are small entity cards whose `title` names the entity that
//! the rest of the card repeats, e.g.
//! `<div title="fox"><h1>fox</h1><p>fox</p></div>`.
//! A probe masks the `title` value. A causally-masked model can recover it
//! from the right context; a left-to-right model only sees what precedes it.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::decode::{greedy, DecodeError, DecodeSettings, LanguageModel};
use crate::model::{ModelConfig, Preset, Transformer};
use crate::objective::{transform_tokens, MaskPlan, MaskSpan, Objective};
use crate::record::{Document, Record, Source};
use crate::train::{evaluate_loss, train, TrainConfig, TrainError};
use crate::vocab::{TokenId, Vocab};

pub const ANCHOR_WORDS: &[&str] = &[
    "ant", "bee", "cat", "dog", "eel", "fox", "gnu", "hen", "ibis", "jay", "kiwi", "lark", "mole", "newt", "owl",
    "pig", "quail", "rat", "seal", "toad", "urchin", "vole", "wasp", "yak", "zebu", "ash", "birch", "cedar", "elm",
    "fir", "hazel", "larch", "maple", "oak", "pine", "rowan", "teak", "willow", "yew", "alder",
];

/// One synthetic document and the entity names it contains, in order.
#[derive(Debug, Clone)]
pub struct AnchorDoc {
    pub record: Record,
    pub links: Vec<String>,
}

/// `n` single-entity cards.
pub fn anchor_corpus(n: usize, seed: u64, vocab: &Vocab) -> Vec<AnchorDoc> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let links = vec![ANCHOR_WORDS.choose(&mut rng).expect("non-empty").to_string()];
            let w = &links[0];
            let html = format!(r#"<div title="{w}"><h1>{w}</h1><p>{w}</p></div>"#);
            let record = Record::from_html(vocab, format!("anchor-{seed}-{i}"), Source::Synthetic, html).expect("plain ASCII");
            AnchorDoc { record, links }
        })
        .collect()
}

/// One held-out infill question.
#[derive(Debug, Clone)]
pub struct InfillProbe {
    pub doc_id: String,
    /// Body with the `title` value replaced by `<mask:0>`, then the tail cue `<mask:0>`.
    pub masked_prompt: Vec<TokenId>,
    /// Everything before the `title` value.
    pub left_prompt: Vec<TokenId>,
    pub answer: Vec<TokenId>,
}

/// Masks the `title` of one (seeded) link per document.
pub fn infill_probes(docs: &[AnchorDoc], vocab: &Vocab, seed: u64) -> Vec<InfillProbe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    docs.iter()
        .map(|d| {
            let html = &d.record.minimal_html;
            let pick = rng.random_range(0..d.links.len());
            let needle = format!(r#"title="{}""#, d.links[pick]);
            let start = html.find(&needle).expect("generated link") + r#"title=""#.len();
            let end = start + d.links[pick].len();
            // Byte-level vocabulary: character offsets are token offsets.
            let tokens = vocab.encode_str(html).expect("plain ASCII");
            let plan = MaskPlan::new(vec![MaskSpan::new(start, end)]);
            let t = transform_tokens(&tokens, &plan, vocab).expect("valid span");
            let body_len = tokens.len() - (end - start) + 1;
            InfillProbe {
                doc_id: d.record.doc_id.clone(),
                masked_prompt: t.tokens[..body_len + 1].to_vec(),
                left_prompt: tokens[..start].to_vec(),
                answer: tokens[start..end].to_vec(),
            }
        })
        .collect()
}

/// How a probe is posed to a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    /// Masked prompt; a hit is exactly the answer followed by `<eod>`.
    Masked,
    /// Left context only; a hit is exactly the answer followed by the closing quote.
    LeftOnly,
}

/// Greedy exact-match accuracy over `probes`.
pub fn infill_accuracy(model: &impl LanguageModel, probes: &[InfillProbe], mode: ProbeMode, vocab: &Vocab) -> Result<f64, DecodeError> {
    let mut hits = 0;
    for p in probes {
        let (prompt, terminator) = match mode {
            ProbeMode::Masked => (&p.masked_prompt, vocab.eod()),
            ProbeMode::LeftOnly => (&p.left_prompt, vocab.byte(b'"')),
        };
        let mut settings = DecodeSettings::greedy(vocab, (prompt.len() + p.answer.len() + 1).min(model.max_positions()));
        settings.stop_tokens = vec![terminator];
        let out = greedy(model, prompt, &settings)?;
        if out.len() == p.answer.len() + 1 && out[..p.answer.len()] == p.answer[..] && out[p.answer.len()] == terminator {
            hits += 1;
        }
    }
    Ok(hits as f64 / probes.len().max(1) as f64)
}

/// Both objectives trained under one budget, each scored in its natural prompt format.
#[derive(Debug, Clone, Serialize)]
pub struct ObjectiveComparison {
    pub seed: u64,
    pub masked_accuracy: f64,
    pub causal_accuracy: f64,
}

pub fn documents(docs: &[AnchorDoc], vocab: &Vocab) -> Vec<Document> {
    docs.iter().map(|d| d.record.document(vocab).expect("generated records are valid")).collect()
}

/// Trains one model per objective on `train_docs` with identical configs and
/// seeds, then probes `test_docs`.
pub fn compare_objectives(model: &ModelConfig, recipe: &TrainConfig, train_docs: &[AnchorDoc], test_docs: &[AnchorDoc], vocab: &Vocab) -> Result<ObjectiveComparison, ExperimentError> {
    let docs = documents(train_docs, vocab);
    let probes = infill_probes(test_docs, vocab, recipe.seed);
    let masked = train(model, &TrainConfig { objective: Objective::CausallyMasked, ..recipe.clone() }, &docs, vocab)?;
    let causal = train(model, &TrainConfig { objective: Objective::Causal, ..recipe.clone() }, &docs, vocab)?;
    Ok(ObjectiveComparison {
        seed: recipe.seed,
        masked_accuracy: infill_accuracy(&masked.model, &probes, ProbeMode::Masked, vocab)?,
        causal_accuracy: infill_accuracy(&causal.model, &probes, ProbeMode::LeftOnly, vocab)?,
    })
}

/// Validation loss of two model sizes trained with the same recipe.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingComparison {
    pub seed: u64,
    pub smaller_loss: f64,
    pub larger_loss: f64,
}

pub fn compare_sizes(smaller: &ModelConfig, larger: &ModelConfig, recipe: &TrainConfig, train_docs: &[Document], valid_docs: &[Document], vocab: &Vocab) -> Result<ScalingComparison, ExperimentError> {
    let eval = |m: &Transformer| evaluate_loss(m, valid_docs, vocab, recipe.objective, recipe.seed ^ 0x5eed, recipe.max_seq_len);
    let a = train(smaller, recipe, train_docs, vocab)?;
    let b = train(larger, recipe, train_docs, vocab)?;
    Ok(ScalingComparison { seed: recipe.seed, smaller_loss: eval(&a.model)?, larger_loss: eval(&b.model)? })
}

/// The infilling comparison at desk scale: a fresh card corpus per seed, both
/// objectives trained on it with one recipe, probed on held-out cards.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveExperiment {
    pub train_docs: usize,
    pub test_docs: usize,
    pub steps: usize,
    pub peak_lr: f64,
    pub batch_size: usize,
    pub max_seq_len: usize,
}

impl Default for ObjectiveExperiment {
    fn default() -> Self {
        Self { train_docs: 1100, test_docs: 100, steps: 2500, peak_lr: 3e-3, batch_size: 8, max_seq_len: 96 }
    }
}

impl ObjectiveExperiment {
    pub fn recipe(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            peak_lr: self.peak_lr,
            warmup_updates: self.steps / 10,
            total_updates: self.steps,
            end_lr: self.peak_lr / 10.0,
            batch_size: self.batch_size,
            max_seq_len: self.max_seq_len,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn model(&self, vocab: &Vocab) -> ModelConfig {
        let mut m = ModelConfig::preset(Preset::Tiny, vocab.total_size() as usize);
        m.max_positions = self.max_seq_len;
        m
    }

    pub fn run(&self, seed: u64) -> Result<ObjectiveComparison, ExperimentError> {
        let vocab = Vocab::new(16);
        let docs = anchor_corpus(self.train_docs + self.test_docs, seed, &vocab);
        let (train_docs, test_docs) = holdout(docs, self.test_docs, seed);
        compare_objectives(&self.model(&vocab), &self.recipe(seed), &train_docs, &test_docs, &vocab)
    }
}

/// Tiny against small on the same card corpus, steps and recipe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingExperiment {
    pub train_docs: usize,
    pub valid_docs: usize,
    pub steps: usize,
    pub peak_lr: f64,
    pub batch_size: usize,
    pub max_seq_len: usize,
}

impl Default for ScalingExperiment {
    fn default() -> Self {
        Self { train_docs: 600, valid_docs: 100, steps: 300, peak_lr: 1e-3, batch_size: 4, max_seq_len: 96 }
    }
}

impl ScalingExperiment {
    pub fn run(&self, seed: u64) -> Result<ScalingComparison, ExperimentError> {
        let vocab = Vocab::new(16);
        let docs = anchor_corpus(self.train_docs + self.valid_docs, seed, &vocab);
        let (train_docs, valid_docs) = holdout(docs, self.valid_docs, seed);
        let recipe = TrainConfig {
            peak_lr: self.peak_lr,
            warmup_updates: self.steps / 10,
            total_updates: self.steps,
            batch_size: self.batch_size,
            max_seq_len: self.max_seq_len,
            seed,
            ..TrainConfig::default()
        };
        let preset = |p| {
            let mut m = ModelConfig::preset(p, vocab.total_size() as usize);
            m.max_positions = self.max_seq_len;
            m
        };
        compare_sizes(&preset(Preset::Tiny), &preset(Preset::Small), &recipe, &documents(&train_docs, &vocab), &documents(&valid_docs, &vocab), &vocab)
    }
}

/// Shuffles and splits generated docs for quick experiments (no dedup needed:
/// ids are unique and contents random).
pub fn holdout(mut docs: Vec<AnchorDoc>, test: usize, seed: u64) -> (Vec<AnchorDoc>, Vec<AnchorDoc>) {
    docs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = docs.split_off(test.min(docs.len()));
    (train, docs)
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::toy::FnModel;

    #[test]
    fn probes_are_consistent() {
        let v = Vocab::new(16);
        let docs = anchor_corpus(20, 1, &v);
        for (d, p) in docs.iter().zip(infill_probes(&docs, &v, 2)) {
            let text = v.decode_lossy(&p.masked_prompt).unwrap();
            assert!(text.contains(r#"title="<mask:0>">"#), "{text}");
            assert!(text.ends_with("<mask:0>"));
            assert_eq!(text.matches("<mask:0>").count(), 2);
            let left = v.decode_lossy(&p.left_prompt).unwrap();
            assert!(left.ends_with(r#"<div title=""#));
            let answer = String::from_utf8(v.decode(&p.answer).unwrap()).unwrap();
            assert!(d.links.contains(&answer));
        }
    }

    #[test]
    fn oracle_model_scores_perfectly() {
        // A model that always emits the answer then the terminator must score 1.0.
        let v = Vocab::new(16);
        let docs = anchor_corpus(5, 3, &v);
        let probes = infill_probes(&docs, &v, 0);
        for (mode, term) in [(ProbeMode::Masked, v.eod()), (ProbeMode::LeftOnly, v.byte(b'"'))] {
            for p in &probes {
                let (prompt, answer) = match mode {
                    ProbeMode::Masked => (p.masked_prompt.clone(), p.answer.clone()),
                    ProbeMode::LeftOnly => (p.left_prompt.clone(), p.answer.clone()),
                };
                let n = v.total_size() as usize;
                let m = FnModel::new(n, 512, move |ctx: &[TokenId]| {
                    let k = ctx.len() - prompt.len();
                    let want = if k < answer.len() { answer[k] } else { term };
                    (0..n).map(|i| if i as TokenId == want { 1.0 } else { 0.0 }).collect()
                });
                assert_eq!(infill_accuracy(&m, std::slice::from_ref(p), mode, &v).unwrap(), 1.0);
            }
        }
    }
}
