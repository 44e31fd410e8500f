//! The causally-masked rewrite of a document.
//!
//! A plan of `n` non-overlapping spans is sampled; span `k` (in source order) is
//! replaced in the body by `<mask:k>`, and the spans are appended after the body,
//! each introduced by its sentinel, followed by `<eod>`:
//!
//! ```text
//! T0 T1 T2 T3 T4 T5, span [2, 5)  =>  T0 T1 <mask:0> T5 <mask:0> T2 T3 T4 <eod>
//! ```
//!
//! Sentinel positions carry loss weight 0; every other position, `<eod>`
//! included, carries weight 1.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::Document;
use crate::vocab::{TokenId, Vocab, NUM_SENTINELS};

/// Upper clamp on the mask count.
pub const MAX_MASKS: usize = NUM_SENTINELS as usize;
/// Rejection-sampling budget per span.
pub const ATTEMPTS_PER_SPAN: usize = 100;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ObjectiveError {
    #[error("cannot mask an empty document")]
    EmptyDocument,
    #[error("plan does not fit a document of length {len}: {reason}")]
    PlanMismatch { len: usize, reason: String },
    #[error("document already contains special tokens")]
    ReservedToken,
    #[error("dangling sentinel <mask:{0}>")]
    DanglingSentinel(u32),
    #[error("missing <eod>")]
    MissingEod,
    #[error("malformed transformed sequence: {0}")]
    Malformed(String),
}

/// Half-open token span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MaskSpan {
    pub start: usize,
    pub end: usize,
}

impl MaskSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn intersects(&self, other: &MaskSpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Spans sorted by start. An empty plan is the plain causal rewrite.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub spans: Vec<MaskSpan>,
}

impl MaskPlan {
    pub fn new(mut spans: Vec<MaskSpan>) -> Self {
        spans.sort();
        Self { spans }
    }

    /// Effective mask count.
    pub fn n(&self) -> usize {
        self.spans.len()
    }

    pub fn validate(&self, len: usize) -> Result<(), ObjectiveError> {
        let mismatch = |reason: String| ObjectiveError::PlanMismatch { len, reason };
        if self.spans.len() > MAX_MASKS {
            return Err(mismatch(format!("{} spans exceed {MAX_MASKS}", self.spans.len())));
        }
        for (i, s) in self.spans.iter().enumerate() {
            if s.is_empty() || s.end > len {
                return Err(mismatch(format!("span [{}, {}) is empty or out of range", s.start, s.end)));
            }
            if let Some(prev) = i.checked_sub(1).map(|j| self.spans[j]) {
                if prev.start > s.start || prev.intersects(s) {
                    return Err(mismatch(format!("spans [{}, {}) and [{}, {}) overlap or are unsorted", prev.start, prev.end, s.start, s.end)));
                }
            }
        }
        Ok(())
    }
}

/// `Clamp(Poisson(1), 1, 16)`.
pub fn sample_mask_count<R: Rng + ?Sized>(rng: &mut R) -> usize {
    let poisson = Poisson::new(1.0).expect("rate 1 is valid");
    let draw: f64 = poisson.sample(rng);
    (draw as usize).clamp(1, MAX_MASKS)
}

/// Places up to `n` spans by rejection sampling.
///
/// Each candidate is two uniform draws from `0..=s`, sorted into `[a, b)`; empty or
/// intersecting candidates are rejected. After [`ATTEMPTS_PER_SPAN`] failures no
/// further spans are placed. The first span always succeeds: if its attempts run
/// out, a uniformly placed single-token span is used.
pub fn sample_spans<R: Rng + ?Sized>(s: usize, n: usize, rng: &mut R) -> Result<MaskPlan, ObjectiveError> {
    if s == 0 {
        return Err(ObjectiveError::EmptyDocument);
    }
    let n = n.clamp(1, MAX_MASKS);
    let mut spans: Vec<MaskSpan> = Vec::with_capacity(n);
    'spans: for _ in 0..n {
        for _ in 0..ATTEMPTS_PER_SPAN {
            let a = rng.random_range(0..=s);
            let b = rng.random_range(0..=s);
            let span = MaskSpan::new(a.min(b), a.max(b));
            if span.is_empty() || spans.iter().any(|o| o.intersects(&span)) {
                continue;
            }
            spans.push(span);
            continue 'spans;
        }
        if spans.is_empty() {
            let a = rng.random_range(0..s);
            spans.push(MaskSpan::new(a, a + 1));
            continue;
        }
        break;
    }
    Ok(MaskPlan::new(spans))
}

/// A document after the rewrite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformedSequence {
    pub tokens: Vec<TokenId>,
    pub loss_weights: Vec<u8>,
    pub plan: MaskPlan,
    pub original_length: usize,
}

impl TransformedSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Applies `plan` to `doc`.
pub fn transform(doc: &Document, plan: &MaskPlan, vocab: &Vocab) -> Result<TransformedSequence, ObjectiveError> {
    transform_tokens(&doc.tokens, plan, vocab)
}

pub fn transform_tokens(tokens: &[TokenId], plan: &MaskPlan, vocab: &Vocab) -> Result<TransformedSequence, ObjectiveError> {
    plan.validate(tokens.len())?;
    if tokens.iter().any(|&t| vocab.is_special(t)) {
        return Err(ObjectiveError::ReservedToken);
    }
    let n = plan.n();
    let mut out = Vec::with_capacity(tokens.len() + 2 * n + 1);
    let mut cursor = 0;
    for (k, span) in plan.spans.iter().enumerate() {
        out.extend_from_slice(&tokens[cursor..span.start]);
        out.push(vocab.sentinel(k as u32));
        cursor = span.end;
    }
    out.extend_from_slice(&tokens[cursor..]);
    for (k, span) in plan.spans.iter().enumerate() {
        out.push(vocab.sentinel(k as u32));
        out.extend_from_slice(&tokens[span.start..span.end]);
    }
    out.push(vocab.eod());
    let loss_weights = loss_weights(&out, vocab);
    Ok(TransformedSequence { tokens: out, loss_weights, plan: plan.clone(), original_length: tokens.len() })
}

/// The plain causal rewrite: the document followed by `<eod>`, all weights 1.
pub fn causal(doc: &Document, vocab: &Vocab) -> Result<TransformedSequence, ObjectiveError> {
    transform(doc, &MaskPlan::default(), vocab)
}

/// 0 at every sentinel position, 1 elsewhere.
pub fn loss_weights(tokens: &[TokenId], vocab: &Vocab) -> Vec<u8> {
    tokens.iter().map(|&t| u8::from(vocab.sentinel_index(t).is_none())).collect()
}

/// Splices the tail spans back over their body sentinels.
pub fn invert(t: &TransformedSequence, vocab: &Vocab) -> Result<Vec<TokenId>, ObjectiveError> {
    invert_tokens(&t.tokens, vocab)
}

pub fn invert_tokens(tokens: &[TokenId], vocab: &Vocab) -> Result<Vec<TokenId>, ObjectiveError> {
    let eod_at = tokens.iter().position(|&t| t == vocab.eod()).ok_or(ObjectiveError::MissingEod)?;
    if eod_at + 1 != tokens.len() {
        return Err(ObjectiveError::Malformed("tokens after <eod>".into()));
    }
    let seq = &tokens[..eod_at];
    // The body ends where the first sentinel repeats.
    let mut body_sentinels: Vec<(u32, usize)> = Vec::new();
    let mut tail_start = seq.len();
    for (i, &t) in seq.iter().enumerate() {
        if let Some(k) = vocab.sentinel_index(t) {
            if body_sentinels.iter().any(|&(seen, _)| seen == k) {
                tail_start = i;
                break;
            }
            if k != body_sentinels.len() as u32 {
                return Err(ObjectiveError::Malformed(format!("body sentinel <mask:{k}> out of order")));
            }
            body_sentinels.push((k, i));
        }
    }
    let mut contents: Vec<&[TokenId]> = Vec::new();
    let tail = &seq[tail_start..];
    let mut i = 0;
    while i < tail.len() {
        let k = vocab.sentinel_index(tail[i]).expect("tail starts at a sentinel");
        if k as usize > contents.len() {
            return Err(ObjectiveError::DanglingSentinel(contents.len() as u32));
        }
        if (k as usize) < contents.len() {
            return Err(ObjectiveError::Malformed(format!("<mask:{k}> repeated in the tail")));
        }
        let end = tail[i + 1..].iter().position(|&t| vocab.sentinel_index(t).is_some()).map_or(tail.len(), |p| i + 1 + p);
        contents.push(&tail[i + 1..end]);
        i = end;
    }
    match contents.len().cmp(&body_sentinels.len()) {
        std::cmp::Ordering::Less => return Err(ObjectiveError::DanglingSentinel(contents.len() as u32)),
        std::cmp::Ordering::Greater => return Err(ObjectiveError::DanglingSentinel(body_sentinels.len() as u32)),
        std::cmp::Ordering::Equal => {}
    }
    let mut out = Vec::with_capacity(seq.len());
    let mut cursor = 0;
    for (k, &(_, pos)) in body_sentinels.iter().enumerate() {
        out.extend_from_slice(&seq[cursor..pos]);
        out.extend_from_slice(contents[k]);
        cursor = pos + 1;
    }
    out.extend_from_slice(&seq[cursor..tail_start]);
    Ok(out)
}

/// Which rewrite the trainer applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Sampled spans moved to the tail.
    #[default]
    CausallyMasked,
    /// Left-to-right only (reference baseline).
    Causal,
}

impl Objective {
    pub fn apply<R: Rng + ?Sized>(self, doc: &Document, vocab: &Vocab, rng: &mut R) -> Result<TransformedSequence, ObjectiveError> {
        match self {
            Objective::Causal => causal(doc, vocab),
            Objective::CausallyMasked => {
                let n = sample_mask_count(rng);
                let plan = sample_spans(doc.len(), n, rng)?;
                transform(doc, &plan, vocab)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocab {
        Vocab::new(16)
    }

    fn ts(n: u32) -> Vec<TokenId> {
        (0..n).map(|i| b'A' as u32 + i).collect()
    }

    #[test]
    fn single_span_example() {
        let v = vocab();
        let t = ts(6);
        let out = transform_tokens(&t, &MaskPlan::new(vec![MaskSpan::new(2, 5)]), &v).unwrap();
        let m0 = v.sentinel(0);
        assert_eq!(out.tokens, vec![t[0], t[1], m0, t[5], m0, t[2], t[3], t[4], v.eod()]);
        assert_eq!(out.loss_weights, vec![1, 1, 0, 1, 0, 1, 1, 1, 1]);
        assert_eq!(invert(&out, &v).unwrap(), t);
    }

    #[test]
    fn two_span_example() {
        let v = vocab();
        let t = ts(8);
        let plan = MaskPlan::new(vec![MaskSpan::new(5, 6), MaskSpan::new(1, 3)]);
        let out = transform_tokens(&t, &plan, &v).unwrap();
        let (m0, m1) = (v.sentinel(0), v.sentinel(1));
        assert_eq!(
            out.tokens,
            vec![t[0], m0, t[3], t[4], m1, t[6], t[7], m0, t[1], t[2], m1, t[5], v.eod()]
        );
        assert_eq!(out.len(), 8 + 4 + 1);
        assert_eq!(out.loss_weights.iter().filter(|&&w| w == 0).count(), 4);
    }

    #[test]
    fn memphis_link_infill() {
        let v = Vocab::default();
        let html = r#"Manetho writes that these kings ruled from <a title="Memphis, Egypt">Memphis</a>"#;
        let tokens = v.encode_str(html).unwrap();
        let start = html.find("Memphis, Egypt").unwrap();
        let plan = MaskPlan::new(vec![MaskSpan::new(start, start + "Memphis, Egypt".len())]);
        let out = transform_tokens(&tokens, &plan, &v).unwrap();
        let text = v.decode_lossy(&out.tokens).unwrap();
        assert!(text.contains(r#"<a title="<mask:0>">Memphis</a>"#));
        assert!(text.ends_with("<mask:0>Memphis, Egypt<eod>"));
    }

    #[test]
    fn invert_names_missing_tail_sentinel() {
        let v = vocab();
        let t = ts(8);
        let plan = MaskPlan::new(vec![MaskSpan::new(1, 3), MaskSpan::new(5, 6)]);
        let mut out = transform_tokens(&t, &plan, &v).unwrap().tokens;
        let tail_m1 = out.iter().rposition(|&x| x == v.sentinel(1)).unwrap();
        out.remove(tail_m1);
        assert_eq!(invert_tokens(&out, &v), Err(ObjectiveError::DanglingSentinel(1)));
        let mut no_eod = transform_tokens(&t, &plan, &v).unwrap().tokens;
        no_eod.pop();
        assert_eq!(invert_tokens(&no_eod, &v), Err(ObjectiveError::MissingEod));
    }

    #[test]
    fn invert_rejects_tail_without_body() {
        let v = vocab();
        let t = ts(3);
        let mut toks = t.clone();
        toks.extend([v.sentinel(0), t[0], v.sentinel(0), t[1], v.sentinel(1), t[2], v.eod()]);
        assert_eq!(invert_tokens(&toks, &v), Err(ObjectiveError::DanglingSentinel(1)));
    }

    #[test]
    fn causal_rewrite_appends_eod() {
        let v = vocab();
        let doc = Document::new("d", ts(4), &v).unwrap();
        let out = causal(&doc, &v).unwrap();
        assert_eq!(out.tokens.len(), 5);
        assert!(out.loss_weights.iter().all(|&w| w == 1));
        assert_eq!(invert(&out, &v).unwrap(), doc.tokens);
    }

    #[test]
    fn plan_validation() {
        let v = vocab();
        let t = ts(4);
        assert!(transform_tokens(&t, &MaskPlan::new(vec![MaskSpan::new(2, 5)]), &v).is_err());
        assert!(transform_tokens(&t, &MaskPlan::new(vec![MaskSpan::new(0, 2), MaskSpan::new(1, 3)]), &v).is_err());
        assert!(transform_tokens(&t, &MaskPlan::new(vec![MaskSpan::new(2, 2)]), &v).is_err());
        assert!(transform_tokens(&[v.eod()], &MaskPlan::default(), &v).is_err());
    }

    #[test]
    fn spans_for_length_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_spans(1, 1, &mut rng).unwrap().spans, vec![MaskSpan::new(0, 1)]);
        }
        assert_eq!(sample_spans(0, 1, &mut rng), Err(ObjectiveError::EmptyDocument));
    }

    #[test]
    fn seeded_spans_replay() {
        // Oracle: replay the rejection sampler by hand from the same seed.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let plan = sample_spans(10, 2, &mut rng).unwrap();
        let mut oracle = ChaCha8Rng::seed_from_u64(2024);
        let mut want: Vec<(usize, usize)> = Vec::new();
        while want.len() < 2 {
            let a: usize = oracle.random_range(0..=10);
            let b: usize = oracle.random_range(0..=10);
            let (lo, hi) = (a.min(b), a.max(b));
            if lo < hi && want.iter().all(|&(s, e)| !(lo < e && s < hi)) {
                want.push((lo, hi));
            }
        }
        want.sort();
        let got: Vec<(usize, usize)> = plan.spans.iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn mask_count_stays_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let n = sample_mask_count(&mut rng);
            assert!((1..=16).contains(&n));
        }
    }

    proptest::proptest! {
        #[test]
        fn sampled_plans_obey_the_laws(seed in 0u64..u64::MAX, len in 1usize..200) {
            let v = vocab();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tokens: Vec<TokenId> = (0..len).map(|_| rng.random_range(0..256)).collect();
            let n = sample_mask_count(&mut rng);
            let plan = sample_spans(len, n, &mut rng).unwrap();
            proptest::prop_assert!(plan.n() >= 1 && plan.n() <= n);
            let out = transform_tokens(&tokens, &plan, &v).unwrap();
            proptest::prop_assert_eq!(out.len(), len + 2 * plan.n() + 1);
            let zeros: Vec<usize> = (0..out.len()).filter(|&i| out.loss_weights[i] == 0).collect();
            let sentinels: Vec<usize> = (0..out.len()).filter(|&i| v.sentinel_index(out.tokens[i]).is_some()).collect();
            proptest::prop_assert_eq!(zeros.len(), 2 * plan.n());
            proptest::prop_assert_eq!(zeros, sentinels);
            let mut kept: Vec<TokenId> = out.tokens.iter().copied().filter(|&t| !v.is_special(t)).collect();
            let mut orig = tokens.clone();
            kept.sort_unstable();
            orig.sort_unstable();
            proptest::prop_assert_eq!(kept, orig);
            proptest::prop_assert_eq!(invert(&out, &v).unwrap(), tokens);
        }
    }
}
