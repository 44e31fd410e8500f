// The causally-masked rewrite: sampled spans move to the end of the document
// behind sentinels, and the original is recovered by splicing them back.

use cmlm::objective::{invert, sample_mask_count, sample_spans, transform, MaskPlan, MaskSpan, Objective};
use cmlm::{Document, Vocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> anyhow::Result<()> {
    let vocab = Vocab::new(16);
    let text = r#"Manetho writes that these kings ruled from <a title="Memphis, Egypt">Memphis</a>"#;
    let doc = Document::new("manetho", vocab.encode_str(text)?, &vocab)?;

    // A hand-written plan: mask the link target.
    let start = text.find("Memphis, Egypt").unwrap();
    let plan = MaskPlan::new(vec![MaskSpan::new(start, start + "Memphis, Egypt".len())]);
    let t = transform(&doc, &plan, &vocab)?;
    println!("{}", vocab.decode_lossy(&t.tokens)?);
    assert_eq!(invert(&t, &vocab)?, doc.tokens);

    // Sampled plans, as used in training.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..3 {
        let n = sample_mask_count(&mut rng);
        let plan = sample_spans(doc.len(), n, &mut rng)?;
        let t = transform(&doc, &plan, &vocab)?;
        let weighted = t.loss_weights.iter().filter(|&&w| w == 1).count();
        println!("{} spans, {weighted}/{} weighted: {}", plan.n(), t.len(), vocab.decode_lossy(&t.tokens)?);
    }
    let causal = Objective::Causal.apply(&doc, &vocab, &mut rng)?;
    println!("causal: {}", vocab.decode_lossy(&causal.tokens)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
