// Greedy, sampled, beam and size-hinted decoding, plus sample-and-rerank.
// The model is briefly trained on the synthetic entity cards.

use cmlm::decode::{beam, greedy, sample, sample_and_rerank, size_hint_decode, DecodeSettings, LogProbReranker};
use cmlm::experiments::{anchor_corpus, documents};
use cmlm::model::{ModelConfig, Preset};
use cmlm::train::{train, TrainConfig};
use cmlm::Vocab;

pub fn run_example() -> anyhow::Result<()> {
    decode_after(30)
}

fn decode_after(steps: usize) -> anyhow::Result<()> {
    let vocab = Vocab::new(16);
    let docs = documents(&anchor_corpus(200, 2, &vocab), &vocab);
    let mut model_cfg = ModelConfig::preset(Preset::Tiny, vocab.total_size() as usize);
    model_cfg.max_positions = 96;
    let cfg = TrainConfig { peak_lr: 3e-3, warmup_updates: steps / 10, total_updates: steps, batch_size: 4, max_seq_len: 96, ..TrainConfig::default() };
    let model = train(&model_cfg, &cfg, &docs, &vocab)?.model;

    let prompt = vocab.encode_str(r#"<div title="<mask:0>"><h1>owl</h1><p>owl</p></div><mask:0>"#)?;
    let show = |name: &str, toks: &[u32]| -> anyhow::Result<()> {
        println!("{name:<10} {}", vocab.decode_lossy(toks)?);
        Ok(())
    };
    let max_len = prompt.len() + 12;
    show("greedy", &greedy(&model, &prompt, &DecodeSettings::greedy(&vocab, max_len))?)?;
    let mut s = DecodeSettings::new(&vocab, max_len);
    s.temperature = 0.85;
    s.seed = 3;
    show("sample", &sample(&model, &prompt, &s)?)?;
    s.beam_size = 5;
    let b = beam(&model, &prompt, &s)?;
    show("beam-5", &b.tokens)?;
    println!("           perplexity {:.3}", b.perplexity());

    let ranked = sample_and_rerank(&model, &prompt, 8, &s, &LogProbReranker { model: &model })?;
    show("reranked", &ranked[0].0)?;

    // Force `<mask:0>` at max_len - size_hint and let the model infill after it.
    let open = vocab.encode_str(r#"<div title="<mask:0>"><h1>"#)?;
    let h = size_hint_decode(&model, &open, 8, &DecodeSettings::greedy(&vocab, 32), &vocab)?;
    println!("size-hint  sentinel at {}: {}", h.sentinel_index, vocab.decode_lossy(&h.tokens)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(400);
    decode_after(steps)
}
