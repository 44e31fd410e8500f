// De-duplicated test split and token-usage statistics.

use cmlm::corpus::{dedup_key, make_split, token_histogram};
use cmlm::vocab::TokenClass;
use cmlm::{Record, Source, Vocab};
use std::collections::HashSet;

pub fn run_example() -> anyhow::Result<()> {
    let vocab = Vocab::new(16);
    let mut records = Vec::new();
    for i in 0..40 {
        // Documents i and i + 30 share their visible text, so they must land together.
        let html = format!(r#"<p>Story {}</p><img src="IMG{} IMG{}">"#, i % 30, i % 16, (i * 7) % 16);
        records.push(Record::from_html(&vocab, format!("doc{i}"), Source::Synthetic, html)?);
    }
    let (train, test) = make_split(records.clone(), 10, 3)?;
    let keys = |rs: &[Record]| rs.iter().map(|r| dedup_key(&r.minimal_html)).collect::<HashSet<_>>();
    println!("train {} / test {}; shared keys: {}", train.len(), test.len(), keys(&train).intersection(&keys(&test)).count());

    let h = token_histogram(&records, TokenClass::Image, &vocab)?;
    println!("{} image tokens, normalized entropy {:.4}", h.total(), h.normalized_entropy()?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
