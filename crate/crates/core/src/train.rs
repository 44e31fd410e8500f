//! The optimization loop: Adam, warmup plus polynomial decay, global-norm
//! clipping, and greedy packing of rewritten documents into rows.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{ModelConfig, ModelError, Transformer, WeightedSequence};
use crate::objective::{Objective, ObjectiveError, MAX_MASKS};
use crate::record::Document;
use crate::vocab::Vocab;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("step {step} is outside 0..={total}")]
    StepOutOfRange { step: usize, total: usize },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("diverged at step {step}: {source}")]
    Divergence { step: usize, source: ModelError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// Recipe fields. Defaults are the desk-scale recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_updates: usize,
    pub total_updates: usize,
    pub end_lr: f64,
    pub power: f64,
    pub batch_size: usize,
    pub max_seq_len: usize,
    pub clip_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub objective: Objective,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 3e-4,
            warmup_updates: 100,
            total_updates: 1000,
            end_lr: 0.0,
            power: 1.0,
            batch_size: 8,
            max_seq_len: 256,
            clip_norm: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            objective: Objective::CausallyMasked,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.warmup_updates > self.total_updates {
            return bad("warmup_updates exceeds total_updates");
        }
        if self.clip_norm <= 0.0 || !self.clip_norm.is_finite() {
            return bad("clip_norm must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_seq_len <= 2 * MAX_MASKS + 1 {
            return bad("max_seq_len must exceed the 33 tokens reserved for sentinels and <eod>");
        }
        if !(self.peak_lr >= 0.0 && self.end_lr >= 0.0 && self.power > 0.0) {
            return bad("learning rates must be non-negative and power positive");
        }
        Ok(())
    }

    /// Longest document prefix that still fits a row after the rewrite.
    pub fn doc_budget(&self) -> usize {
        self.max_seq_len - (2 * MAX_MASKS + 1)
    }
}

/// Linear warmup from 0 to `peak_lr`, then polynomial decay to `end_lr` at `total_updates`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> Result<f64, TrainError> {
    if step > cfg.total_updates {
        return Err(TrainError::StepOutOfRange { step, total: cfg.total_updates });
    }
    if step < cfg.warmup_updates {
        return Ok(cfg.peak_lr * step as f64 / cfg.warmup_updates as f64);
    }
    let span = cfg.total_updates - cfg.warmup_updates;
    if span == 0 {
        return Ok(cfg.end_lr);
    }
    let remaining = 1.0 - (step - cfg.warmup_updates) as f64 / span as f64;
    Ok((cfg.peak_lr - cfg.end_lr) * remaining.powf(cfg.power) + cfg.end_lr)
}

/// Rescales `grads` to global L2 norm `clip_norm` when it is larger. Returns the
/// norm before clipping.
pub fn clip(grads: &mut [f64], clip_norm: f64) -> Result<f64, TrainError> {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(TrainError::NonFiniteGradient);
    }
    if norm > clip_norm {
        let s = clip_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    Ok(norm)
}

/// Adam with bias correction; `weight_decay` is plain L2 added to the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i] + self.weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// A 64-bit digest of a document id.
pub fn doc_hash(doc_id: &str) -> u64 {
    let digest = Sha256::digest(doc_id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// The per-document rng: seeded by `seed ⊕ hash(doc_id)`, one stream per epoch.
pub fn doc_rng(seed: u64, doc_id: &str, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ doc_hash(doc_id));
    rng.set_stream(epoch);
    rng
}

/// Rewrites one (cropped) document for `epoch`.
pub fn prepare_document(doc: &Document, vocab: &Vocab, objective: Objective, seed: u64, epoch: u64, budget: usize) -> Result<WeightedSequence, TrainError> {
    let mut cropped = doc.clone();
    cropped.tokens.truncate(budget);
    let mut rng = doc_rng(seed, &doc.doc_id, epoch);
    let t = objective.apply(&cropped, vocab, &mut rng)?;
    Ok(WeightedSequence::new(t.tokens, t.loss_weights.iter().map(|&w| f64::from(w)).collect()))
}

/// Greedily concatenates whole sequences into rows of at most `max_len` tokens.
pub fn pack(seqs: Vec<WeightedSequence>, max_len: usize) -> Vec<WeightedSequence> {
    let mut rows = Vec::new();
    let mut cur = WeightedSequence::new(Vec::new(), Vec::new());
    for s in seqs {
        if !cur.tokens.is_empty() && cur.tokens.len() + s.tokens.len() > max_len {
            rows.push(std::mem::replace(&mut cur, WeightedSequence::new(Vec::new(), Vec::new())));
        }
        cur.tokens.extend(s.tokens);
        cur.weights.extend(s.weights);
    }
    if !cur.tokens.is_empty() {
        rows.push(cur);
    }
    rows
}

/// Rows of one epoch: documents shuffled by `(seed, epoch)`, rewritten with fresh
/// masks (dynamic masking), and packed.
pub fn epoch_rows(docs: &[Document], vocab: &Vocab, cfg: &TrainConfig, epoch: u64) -> Result<Vec<WeightedSequence>, TrainError> {
    let mut order: Vec<usize> = (0..docs.len()).filter(|&i| !docs[i].tokens.is_empty()).collect();
    if order.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    let seqs = order
        .iter()
        .map(|&i| prepare_document(&docs[i], vocab, cfg.objective, cfg.seed, epoch, cfg.doc_budget()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(pack(seqs, cfg.max_seq_len))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

pub struct TrainOutcome {
    pub model: Transformer,
    pub trace: Vec<TraceRow>,
}

/// Trains a freshly initialized model (initialization seeded by `cfg.seed`).
pub fn train(model_cfg: &ModelConfig, cfg: &TrainConfig, docs: &[Document], vocab: &Vocab) -> Result<TrainOutcome, TrainError> {
    let model = Transformer::new(model_cfg.clone(), cfg.seed)?;
    train_model(model, cfg, docs, vocab)
}

/// Runs `cfg.total_updates` updates; update `k` (1-based) uses `lr_at(k)`.
pub fn train_model(mut model: Transformer, cfg: &TrainConfig, docs: &[Document], vocab: &Vocab) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if cfg.max_seq_len > model.config.max_positions {
        return Err(TrainError::Config(format!(
            "max_seq_len {} exceeds the model's max_positions {}",
            cfg.max_seq_len, model.config.max_positions
        )));
    }
    if vocab.total_size() as usize != model.config.vocab_size {
        return Err(TrainError::Config("vocab size does not match the model".into()));
    }
    let mut adam = Adam::new(model.layout.total, cfg);
    let mut trace = Vec::with_capacity(cfg.total_updates);
    let mut epoch = 0;
    let mut pending = epoch_rows(docs, vocab, cfg, epoch)?.into_iter();
    for step in 1..=cfg.total_updates {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            match pending.next() {
                Some(row) => batch.push(row),
                None => {
                    epoch += 1;
                    pending = epoch_rows(docs, vocab, cfg, epoch)?.into_iter();
                }
            }
        }
        let (loss, mut grad) = match model.loss_and_gradient(&batch) {
            Ok(r) => r,
            Err(ModelError::ZeroWeights) => continue,
            Err(source) => return Err(TrainError::Divergence { step, source }),
        };
        let grad_norm = clip(&mut grad.data, cfg.clip_norm).map_err(|_| TrainError::Divergence {
            step,
            source: ModelError::NonFinite("gradient".into()),
        })?;
        let lr = lr_at(step, cfg)?;
        adam.step(&mut model.params.data, &grad.data, lr);
        trace.push(TraceRow { step, lr, loss, grad_norm });
    }
    Ok(TrainOutcome { model, trace })
}

/// Mean weighted loss over `docs` under a fixed rewrite (epoch 0 of `seed`).
pub fn evaluate_loss(model: &Transformer, docs: &[Document], vocab: &Vocab, objective: Objective, seed: u64, max_seq_len: usize) -> Result<f64, TrainError> {
    let cfg = TrainConfig { objective, seed, max_seq_len, ..TrainConfig::default() };
    let seqs = docs
        .iter()
        .filter(|d| !d.tokens.is_empty())
        .map(|d| prepare_document(d, vocab, objective, seed, 0, cfg.doc_budget()))
        .collect::<Result<Vec<_>, _>>()?;
    if seqs.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    Ok(model.loss(&seqs)?)
}

pub fn write_trace_csv(trace: &[TraceRow], out: &mut impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "step,lr,loss")?;
    for r in trace {
        writeln!(out, "{},{:e},{:.17e}", r.step, r.lr, r.loss)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cfg() -> TrainConfig {
        TrainConfig { peak_lr: 1e-3, warmup_updates: 10, total_updates: 30, end_lr: 1e-4, ..TrainConfig::default() }
    }

    #[test]
    fn schedule_boundaries() {
        let c = cfg();
        assert_eq!(lr_at(0, &c).unwrap(), 0.0);
        assert!((lr_at(5, &c).unwrap() - 5e-4).abs() < 1e-18);
        assert_eq!(lr_at(10, &c).unwrap(), 1e-3);
        assert!((lr_at(20, &c).unwrap() - 5.5e-4).abs() < 1e-15);
        assert!((lr_at(30, &c).unwrap() - 1e-4).abs() < 1e-18);
        assert!(lr_at(31, &c).is_err());
    }

    #[test]
    fn clipping() {
        let mut g = vec![0.3, 0.4];
        assert_eq!(clip(&mut g, 1.0).unwrap(), 0.5);
        assert_eq!(g, vec![0.3, 0.4]);
        let mut g = vec![1.2, 1.6];
        clip(&mut g, 1.0).unwrap();
        assert!((g.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
        assert!((g[0] - 0.6).abs() < 1e-15);
        assert!(clip(&mut [f64::NAN], 1.0).is_err());
    }

    #[test]
    fn clipped_norm_never_exceeds_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let n = rng.random_range(1..20);
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let mut g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
            clip(&mut g, 1.0).unwrap();
            assert!(g.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let c = TrainConfig::default();
        let mut adam = Adam::new(2, &c);
        let mut p = vec![1.0, -1.0];
        adam.step(&mut p, &[0.5, -2.0], 0.1);
        // With bias correction the first update is lr * g/|g| (up to eps).
        assert!((p[0] - 0.9).abs() < 1e-7 && (p[1] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn packing_is_greedy_and_keeps_sequences_whole() {
        let seq = |n: usize| WeightedSequence::unweighted(vec![1; n]);
        let rows = pack(vec![seq(5), seq(4), seq(3), seq(8), seq(1)], 10);
        let lens: Vec<usize> = rows.iter().map(|r| r.tokens.len()).collect();
        assert_eq!(lens, vec![9, 3, 9]);
    }

    #[test]
    fn validation() {
        let mut c = cfg();
        c.warmup_updates = 40;
        assert!(c.validate().is_err());
        let c = TrainConfig { clip_norm: 0.0, ..cfg() };
        assert!(c.validate().is_err());
        let c = TrainConfig { max_seq_len: 33, ..cfg() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn doc_rng_depends_on_id_seed_and_epoch() {
        let draw = |seed, id: &str, epoch| doc_rng(seed, id, epoch).random::<u64>();
        assert_eq!(draw(1, "a", 0), draw(1, "a", 0));
        assert_ne!(draw(1, "a", 0), draw(1, "b", 0));
        assert_ne!(draw(1, "a", 0), draw(2, "a", 0));
        assert_ne!(draw(1, "a", 0), draw(1, "a", 1));
    }
}
