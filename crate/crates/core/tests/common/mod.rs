#![allow(dead_code)]

use std::path::{Path, PathBuf};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// `(name, raw, golden)` for every bundled HTML fixture, sorted by name.
pub fn html_fixtures() -> Vec<(String, Vec<u8>, String)> {
    let dir = fixtures().join("html");
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        let Some(stem) = name.strip_suffix(".html") else { continue };
        if stem.ends_with(".golden") {
            continue;
        }
        let golden = std::fs::read_to_string(dir.join(format!("{stem}.golden.html"))).unwrap();
        out.push((stem.to_string(), std::fs::read(&path).unwrap(), golden));
    }
    out.sort();
    out
}

/// Attribute names of every start tag, in order of appearance, per tag.
pub fn attribute_lists(html: &str) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let bytes = html.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_alphabetic() {
            let mut names = Vec::new();
            let mut j = i + 1;
            while j < bytes.len() && bytes[j] != b' ' && bytes[j] != b'>' {
                j += 1;
            }
            // name="value" pairs; values never contain a raw quote.
            while j < bytes.len() && bytes[j] == b' ' {
                let start = j + 1;
                let eq = start + html[start..].find('=').unwrap();
                names.push(html[start..eq].to_string());
                let close = eq + 2 + html[eq + 2..].find('"').unwrap();
                j = close + 1;
            }
            out.push(names);
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

/// Runs the binary with `args` plus the shared flags; returns stdout.
fn cmlm(args: &[&str], common: &[String]) -> Vec<u8> {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_cmlm")).args(args).args(common).output().unwrap();
    assert!(out.status.success(), "cmlm {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

/// Runs every subcommand over the fixture corpus inside `dir` and returns each
/// artifact's bytes keyed by relative path (stdout captures included).
pub fn run_pipeline(dir: &Path, seed: u64, workers: usize) -> std::collections::BTreeMap<String, Vec<u8>> {
    let common = vec!["--seed".to_string(), seed.to_string(), "--workers".to_string(), workers.to_string()];
    let run = |args: &[&str]| cmlm(args, &common);
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let (raw, images) = (p("raw"), fixtures().join("images").to_str().unwrap().to_string());
    let (minified, tokens, split, train, run_dir) =
        (p("minified.jsonl"), p("tokens.jsonl"), p("split"), p("split/train.jsonl"), p("run"));
    let (ckpt, prompt, candidates, context) = (p("run/model.ckpt"), p("prompt.txt"), p("candidates.txt"), p("context.txt"));
    let (hist, infill) = (p("hist.csv"), p("infill.txt"));

    // Goldens share the fixture directory; minify only the raw pages.
    std::fs::create_dir_all(&raw).unwrap();
    for (name, bytes, _) in html_fixtures() {
        std::fs::write(Path::new(&raw).join(format!("{name}.html")), bytes).unwrap();
    }
    run(&["minify", &raw, "--out", &minified, "--report", &p("report.json")]);
    run(&["tokenize-images", "--records", &minified, "--images", &images, "--out", &tokens, "--mode", "train"]);
    run(&["transform", "--records", &tokens, "--out", &p("transformed.jsonl")]);
    run(&["split", "--records", &tokens, "--test-size", "5", "--out", &split]);
    run(&["train", "--records", &train, "--steps", "3", "--batch-size", "2", "--max-seq-len", "64", "--out", &run_dir]);

    std::fs::write(&prompt, "<html><head><title>").unwrap();
    std::fs::write(&infill, "<title><mask:0></title><p>Memphis</p>").unwrap();
    std::fs::write(&candidates, "Memphis\nThebes\nGiza\n").unwrap();
    std::fs::write(&context, "<p>The city of <a title=\"<mask:0>\">Memphis</a></p><mask:0>").unwrap();
    let captures: [(&str, Vec<&str>); 5] = [
        ("generate.txt", vec!["generate", "--ckpt", &ckpt, "--prompt-file", &prompt, "--max-len", "40"]),
        ("size_hint.txt", vec!["generate", "--ckpt", &ckpt, "--prompt-file", &infill, "--max-len", "60", "--size-hint", "8"]),
        ("score.tsv", vec!["score", "--ckpt", &ckpt, "--candidates", &candidates, "--context", &context, "--prefix", " "]),
        ("stats.txt", vec!["stats", "--records", &tokens, "--class", "image", "--out", &hist]),
        ("entity_prompt.txt", vec!["prompt", "--name", "entity", "--set", "left=<p>", "--set", "mention=Memphis", "--set", "right=</p>"]),
    ];
    for (name, args) in &captures {
        std::fs::write(p(name), run(args)).unwrap();
    }

    let mut out = std::collections::BTreeMap::new();
    collect(dir, dir, &mut out);
    out
}

fn collect(root: &Path, dir: &Path, out: &mut std::collections::BTreeMap<String, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect(root, &path, out);
        } else {
            out.insert(path.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&path).unwrap());
        }
    }
}
