use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use super::{argmax, log_probs, DecodeError, DecodeSettings, LanguageModel};
use crate::model::linalg::log_sum_exp;
use crate::vocab::TokenId;

#[derive(Debug, Clone, Default)]
struct Node {
    children: BTreeMap<TokenId, usize>,
}

/// Prefix tree over candidate token sequences. Every candidate is stored with a
/// trailing terminator token (normally `<eod>`), so candidates that are prefixes
/// of other candidates stay distinguishable and every leaf ends a candidate.
#[derive(Debug, Clone)]
pub struct CandidateTrie {
    nodes: Vec<Node>,
    terminator: TokenId,
    count: usize,
    depth: usize,
}

impl CandidateTrie {
    pub fn new(terminator: TokenId) -> Self {
        Self { nodes: vec![Node::default()], terminator, count: 0, depth: 0 }
    }

    pub fn from_candidates<I, C>(terminator: TokenId, candidates: I) -> Result<Self, DecodeError>
    where
        I: IntoIterator<Item = C>,
        C: AsRef<[TokenId]>,
    {
        let mut trie = Self::new(terminator);
        for c in candidates {
            trie.insert(c.as_ref())?;
        }
        Ok(trie)
    }

    /// Adds a candidate; returns `false` if it was already present.
    pub fn insert(&mut self, candidate: &[TokenId]) -> Result<bool, DecodeError> {
        if candidate.contains(&self.terminator) {
            return Err(DecodeError::Settings("candidate contains the terminator token".into()));
        }
        let mut node = 0;
        let mut fresh = false;
        for &t in candidate.iter().chain(std::iter::once(&self.terminator)) {
            node = match self.nodes[node].children.get(&t) {
                Some(&n) => n,
                None => {
                    fresh = true;
                    self.nodes.push(Node::default());
                    let n = self.nodes.len() - 1;
                    self.nodes[node].children.insert(t, n);
                    n
                }
            };
        }
        if fresh {
            self.count += 1;
            self.depth = self.depth.max(candidate.len() + 1);
        }
        Ok(fresh)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn terminator(&self) -> TokenId {
        self.terminator
    }

    /// Longest path, terminator included.
    pub fn depth(&self) -> usize {
        self.depth
    }

    fn node(&self, prefix: &[TokenId]) -> Option<usize> {
        prefix.iter().try_fold(0, |n, t| self.nodes[n].children.get(t).copied())
    }

    /// Tokens that may follow `prefix`, ascending; `None` if `prefix` is off the trie.
    pub fn allowed(&self, prefix: &[TokenId]) -> Option<Vec<TokenId>> {
        self.node(prefix).map(|n| self.nodes[n].children.keys().copied().collect())
    }

    pub fn contains(&self, candidate: &[TokenId]) -> bool {
        let mut path = candidate.to_vec();
        path.push(self.terminator);
        self.node(&path).is_some()
    }

    /// All candidates in lexicographic order, without the terminator.
    pub fn candidates(&self) -> Vec<Vec<TokenId>> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((n, path)) = stack.pop() {
            for (&t, &child) in self.nodes[n].children.iter().rev() {
                if t == self.terminator {
                    out.push(path.clone());
                } else {
                    let mut p = path.clone();
                    p.push(t);
                    stack.push((child, p));
                }
            }
        }
        out.sort();
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constrained {
    /// The chosen candidate, without the terminator.
    pub candidate: Vec<TokenId>,
    /// Search score, terminator included: the renormalized log-probability, or the
    /// raw one under [`TrieScoring::Raw`].
    pub logprob: f64,
    /// Log-probability under the unrestricted model, terminator included.
    pub raw_logprob: f64,
}

/// Legal log-probabilities after masking illegal tokens and renormalizing, plus raw ones.
fn legal_step(model: &impl LanguageModel, ctx: &[TokenId], legal: &[TokenId]) -> Result<Vec<(TokenId, f64, f64)>, DecodeError> {
    let lp = log_probs(&model.next_logits(ctx)?, 1.0);
    let masked: Vec<f64> = legal.iter().map(|&t| lp[t as usize]).collect();
    let norm = log_sum_exp(&masked);
    Ok(legal.iter().zip(&masked).map(|(&t, &l)| (t, l - norm, l)).collect())
}

fn check(prompt: &[TokenId], trie: &CandidateTrie, settings: &DecodeSettings, model: &impl LanguageModel) -> Result<(), DecodeError> {
    if trie.is_empty() {
        return Err(DecodeError::EmptyTrie);
    }
    if prompt.is_empty() {
        return Err(DecodeError::EmptyPrompt);
    }
    let limit = settings.max_len.min(model.max_positions());
    if prompt.len() + trie.depth() > limit {
        return Err(DecodeError::PromptTooLong { len: prompt.len() + trie.depth(), limit });
    }
    Ok(())
}

struct Entry {
    score: f64,
    raw: f64,
    path: Vec<TokenId>,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    /// Max-heap order: higher score first, then the lexicographically smaller path.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score).then_with(|| other.path.cmp(&self.path))
    }
}

/// How a candidate path is scored during constrained search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrieScoring {
    /// Each step's distribution restricted to trie-legal tokens and renormalized.
    #[default]
    Renormalized,
    /// Unrestricted model log-probabilities; the winner is the candidate that
    /// [`rank_candidates`](super::rank_candidates) puts first.
    Raw,
}

/// The most probable trie candidate given `prompt` under renormalized scoring.
pub fn constrained(model: &impl LanguageModel, prompt: &[TokenId], trie: &CandidateTrie, settings: &DecodeSettings) -> Result<Constrained, DecodeError> {
    constrained_by(model, prompt, trie, settings, TrieScoring::Renormalized)
}

/// The most probable trie candidate given `prompt` under `scoring`.
///
/// Best-first search: step log-probabilities are never positive, so the first
/// complete candidate popped from the frontier is the exact argmax. Ties go to
/// the lexicographically smaller candidate.
pub fn constrained_by(model: &impl LanguageModel, prompt: &[TokenId], trie: &CandidateTrie, settings: &DecodeSettings, scoring: TrieScoring) -> Result<Constrained, DecodeError> {
    check(prompt, trie, settings, model)?;
    let mut heap = BinaryHeap::new();
    heap.push(Entry { score: 0.0, raw: 0.0, path: Vec::new() });
    while let Some(Entry { score, raw, path }) = heap.pop() {
        if path.last() == Some(&trie.terminator()) {
            let mut candidate = path;
            candidate.pop();
            debug_assert!(trie.contains(&candidate));
            return Ok(Constrained { candidate, logprob: score, raw_logprob: raw });
        }
        let legal = trie.allowed(&path).expect("frontier paths stay on the trie");
        let mut ctx = prompt.to_vec();
        ctx.extend_from_slice(&path);
        for (t, l, r) in legal_step(model, &ctx, &legal)? {
            let mut p = path.clone();
            p.push(t);
            let step = match scoring {
                TrieScoring::Renormalized => l,
                TrieScoring::Raw => r,
            };
            heap.push(Entry { score: score + step, raw: raw + r, path: p });
        }
    }
    Err(DecodeError::NoLegalToken)
}

/// Stepwise argmax over trie-legal tokens. Always returns a trie member, but is
/// not guaranteed to find the most probable one; see [`constrained`].
pub fn constrained_greedy(model: &impl LanguageModel, prompt: &[TokenId], trie: &CandidateTrie, settings: &DecodeSettings) -> Result<Constrained, DecodeError> {
    check(prompt, trie, settings, model)?;
    let (mut path, mut score, mut raw) = (Vec::new(), 0.0, 0.0);
    loop {
        let legal = trie.allowed(&path).expect("greedy path stays on the trie");
        let mut ctx = prompt.to_vec();
        ctx.extend_from_slice(&path);
        let step = legal_step(model, &ctx, &legal)?;
        let scores: Vec<f64> = step.iter().map(|s| s.1).collect();
        let (t, l, r) = step[argmax(&scores)];
        score += l;
        raw += r;
        if t == trie.terminator() {
            return Ok(Constrained { candidate: path, logprob: score, raw_logprob: raw });
        }
        path.push(t);
    }
}
