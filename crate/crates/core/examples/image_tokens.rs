// Turn an image into 256 discrete tokens, inline them into an `<img src>`, and
// decode them back to pixels. The image is generated in memory.

use cmlm::html::{parse_dom, serialize};
use cmlm::image::{inline_images, prepare_rgb, ImageCodec, PaletteCodec, PrepareMode};
use cmlm::record::image_regions;
use cmlm::Vocab;
use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> anyhow::Result<()> {
    let img = RgbImage::from_fn(320, 240, |x, y| Rgb([(x * 255 / 319) as u8, (y * 255 / 239) as u8, 128]));
    let codec = PaletteCodec::new();
    let tensor = prepare_rgb(img.clone(), PrepareMode::Eval, &mut ChaCha8Rng::seed_from_u64(0))?;
    let tokens = codec.tokenize(&tensor);
    println!("first tokens: {}", &tokens.render()[..60]);
    let back = codec.detokenize(&tokens)?;
    println!("top-left block after round trip: {:?}", back.pixel(0, 0));

    // Inline into a page: `src` values resolve against a local directory only.
    let dir = std::env::temp_dir().join(format!("cmlm-image-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    img.save(dir.join("gradient.png"))?;
    let mut dom = parse_dom(br#"<p>A gradient <img alt="gradient" src="https://example.com/gradient.png"></p>"#);
    let n = inline_images(&mut dom, &dir, PrepareMode::Eval, &codec, |_| ChaCha8Rng::seed_from_u64(0))?;
    std::fs::remove_dir_all(&dir)?;
    let html = serialize(&dom);
    let vocab = Vocab::default();
    let ids = vocab.encode_str(&html)?;
    println!("{n} image inlined; {} tokens, image regions {:?}", ids.len(), image_regions(&ids, &vocab));
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
