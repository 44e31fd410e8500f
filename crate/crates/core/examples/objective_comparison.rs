// Does the causally-masked objective help infilling? Trains a tiny model with
// each objective under one budget and compares exact-match accuracy on
// held-out single-span infill prompts (masked prompt vs. left context only).
//
// `cargo run --release --example objective_comparison -- 2500 0 1 2` runs the
// full setting (steps, then seeds); takes minutes per seed.

use cmlm::experiments::ObjectiveExperiment;

pub fn run_example() -> anyhow::Result<()> {
    let e = ObjectiveExperiment { train_docs: 100, test_docs: 10, steps: 10, ..ObjectiveExperiment::default() };
    println!("{}", serde_json::to_string(&e.run(0)?)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut e = ObjectiveExperiment::default();
    if let Some(s) = args.first() {
        e.steps = s.parse()?;
    }
    let seeds: Vec<u64> = if args.len() > 1 { args[1..].iter().map(|s| s.parse()).collect::<Result<_, _>>()? } else { vec![0, 1, 2] };
    println!("{}", serde_json::to_string(&e)?);
    for seed in seeds {
        let r = e.run(seed)?;
        println!("{}", serde_json::to_string(&r)?);
    }
    Ok(())
}
