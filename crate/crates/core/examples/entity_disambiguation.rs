// Entity disambiguation: mask a link target, then either rank candidate
// targets by log-probability or decode constrained to the candidate set.

use cmlm::decode::{constrained, constrained_by, constrained_greedy, CandidateTrie, DecodeSettings, TrieScoring};
use cmlm::model::{ModelConfig, Preset, Transformer};
use cmlm::prompts::{entity_continuation, entity_prompt, rank_entities};
use cmlm::Vocab;

pub fn run_example() -> anyhow::Result<()> {
    let vocab = Vocab::new(16);
    // An untrained model: the mechanics are the point here, not the answer.
    let model = Transformer::new(ModelConfig::preset(Preset::Tiny, vocab.total_size() as usize), 11)?;
    let prompt = entity_prompt("Manetho writes that these kings ruled from ", "Memphis", "...")?;
    let candidates = ["Memphis, Egypt", "Memphis, Tennessee", "Memphis (band)"];
    for (c, lp) in rank_entities(&model, &vocab, &prompt, &candidates)? {
        println!("{lp:>10.4}  {c}");
    }

    let p = vocab.encode_str(&prompt)?;
    let conts = candidates.iter().map(|c| vocab.encode_str(&entity_continuation(c))).collect::<Result<Vec<_>, _>>()?;
    let trie = CandidateTrie::from_candidates(vocab.eod(), &conts)?;
    let settings = DecodeSettings::greedy(&vocab, 256);
    for (name, r) in [
        ("exact, renormalized", constrained(&model, &p, &trie, &settings)?),
        ("exact, raw", constrained_by(&model, &p, &trie, &settings, TrieScoring::Raw)?),
        ("stepwise greedy", constrained_greedy(&model, &p, &trie, &settings)?),
    ] {
        println!("{name:<20} {:?} ({:.4})", vocab.decode_lossy(&r.candidate)?, r.logprob);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
