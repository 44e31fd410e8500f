// Render every built-in prompt, including the captioning pair for one image.

use cmlm::prompts::{caption_prompts, conditional_image, entity_prompt, entity_target, infill_image, summarize_prompt, unconditional_image, TemplateSet};

pub fn run_example() -> anyhow::Result<()> {
    let (free, forced) = unconditional_image();
    println!("{free}\n{forced}");
    println!("{}", infill_image(&[1, 2, 3], &[4, 5], None)?);
    println!("{}", infill_image(&[1, 2, 3], &[4, 5], Some("a cat"))?);
    println!("{}", conditional_image("A red car in the mountains."));
    let (masked, causal) = caption_prompts(&[7; 256])?;
    println!("{}...\n{}...", &masked[..48], &causal[..48]);
    let p = entity_prompt("Manetho writes that these kings ruled from ", "Memphis", "...")?;
    println!("{p}\n{}", entity_target(&p, "Memphis, Egypt"));
    println!("{}", summarize_prompt("<p>Rain is expected all week.</p>"));

    let set = TemplateSet::builtin();
    for name in set.names() {
        let t = set.get(name)?;
        println!("{name:<26} {:?} holes={:?}", t.decode, t.holes());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
