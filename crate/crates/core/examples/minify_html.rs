// Reduce a raw page to minimal HTML and show what was removed.

use cmlm::html::minify;
use cmlm::{Record, Source, Vocab};

const PAGE: &str = r#"<!doctype html>
<html><head><title>Kings of Egypt</title><script>track()</script></head>
<body>
  <header><nav><a href="/">Home</a></nav></header>
  <div><div class="article" onclick="x()">
    <p><i>Manetho</i> writes that these kings ruled from <a title="Memphis, Egypt" href="/wiki/Memphis">Memphis</a>.</p>
    <img src="sphinx.png" alt="The sphinx" width="300">
    <span></span>
  </div></div>
  <footer>Copyright 2022</footer>
</body></html>"#;

pub fn run_example() -> anyhow::Result<()> {
    let m = minify(PAGE.as_bytes());
    println!("{}", m.minimal_html);
    println!("{}", serde_json::to_string_pretty(&m.report)?);
    // Minification is idempotent.
    assert_eq!(minify(m.minimal_html.as_bytes()).minimal_html, m.minimal_html);
    let record = Record::from_html(&Vocab::default(), "kings", Source::WikiLike, m.minimal_html)?;
    println!("{} tokens", record.tokens.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
