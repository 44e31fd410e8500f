// Validation loss of the tiny and small presets after equal training steps.
//
// `cargo run --release --example scaling_comparison -- 300 0 1 2`

use cmlm::experiments::ScalingExperiment;

pub fn run_example() -> anyhow::Result<()> {
    let e = ScalingExperiment { train_docs: 60, valid_docs: 10, steps: 4, ..ScalingExperiment::default() };
    println!("{}", serde_json::to_string(&e.run(0)?)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut e = ScalingExperiment::default();
    if let Some(s) = args.first() {
        e.steps = s.parse()?;
    }
    let seeds: Vec<u64> = if args.len() > 1 { args[1..].iter().map(|s| s.parse()).collect::<Result<_, _>>()? } else { vec![0, 1, 2] };
    for seed in seeds {
        println!("{}", serde_json::to_string(&e.run(seed)?)?);
    }
    Ok(())
}
