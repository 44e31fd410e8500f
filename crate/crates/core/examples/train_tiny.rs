// Train the tiny preset on a synthetic corpus, checkpoint it, and reload it.
//
// `cargo run --release --example train_tiny -- 500` trains for 500 updates.

use cmlm::experiments::{anchor_corpus, documents};
use cmlm::model::{load_checkpoint, save_checkpoint, ModelConfig, Preset};
use cmlm::train::{evaluate_loss, train, write_trace_csv, TrainConfig};
use cmlm::Vocab;

pub fn run_example() -> anyhow::Result<()> {
    train_for(40)
}

fn train_for(steps: usize) -> anyhow::Result<()> {
    let vocab = Vocab::new(16);
    let docs = documents(&anchor_corpus(300, 1, &vocab), &vocab);
    let (valid, train_docs) = docs.split_at(30);
    let mut model_cfg = ModelConfig::preset(Preset::Tiny, vocab.total_size() as usize);
    model_cfg.max_positions = 96;
    let cfg = TrainConfig {
        peak_lr: 3e-3,
        warmup_updates: steps / 10,
        total_updates: steps,
        batch_size: 4,
        max_seq_len: 96,
        seed: 5,
        ..TrainConfig::default()
    };
    println!("{} parameters", model_cfg.param_count());
    let out = train(&model_cfg, &cfg, train_docs, &vocab)?;
    let mut csv = Vec::new();
    write_trace_csv(&out.trace, &mut csv)?;
    let csv = String::from_utf8(csv)?;
    for line in csv.lines().step_by((steps / 8).max(1)) {
        println!("{line}");
    }
    let loss = evaluate_loss(&out.model, valid, &vocab, cfg.objective, 0, cfg.max_seq_len)?;
    println!("validation loss {loss:.4}");

    let path = std::env::temp_dir().join(format!("cmlm-tiny-{}.ckpt", std::process::id()));
    save_checkpoint(&out.model, &path)?;
    let back = load_checkpoint(&path)?;
    std::fs::remove_file(&path)?;
    assert_eq!(back.params.data, out.model.params.data);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(300);
    train_for(steps)
}
