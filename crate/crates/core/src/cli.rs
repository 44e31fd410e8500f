//! The `cmlm` command line: every pipeline stage as a seeded, deterministic
//! subcommand. Outputs are machine-readable (JSONL records, CSV/TSV, checkpoints).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{make_split, token_histogram};
use crate::decode::{beam, greedy, rank_candidates, sample, size_hint_decode, DecodeSettings};
use crate::html::{minify, parse_dom, serialize, MinifyReport};
use crate::image::{inline_images, render_codes, PaletteCodec, PrepareMode};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, Preset, Transformer};
use crate::objective::Objective;
use crate::prompts::TemplateSet;
use crate::record::{read_jsonl, write_jsonl, Record, Source};
use crate::train::{doc_rng, train, write_trace_csv, TrainConfig};
use crate::vocab::{TokenClass, Vocab, NUM_SENTINELS, TEXT_BASE_SIZE};

#[derive(Parser)]
#[command(name = "cmlm", version, about = "Causally-masked modeling over minimal HTML", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Seed for every random choice; falls back to $CMLM_SEED, then 0.
    #[arg(long, env = "CMLM_SEED", default_value_t = 0)]
    seed: u64,
    /// Threads for per-document stages; output order never depends on it.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Image codebook size used to read and write token streams.
    #[arg(long, default_value_t = crate::vocab::DEFAULT_IMAGE_VOCAB_SIZE)]
    image_vocab: u32,
}

#[derive(Subcommand)]
enum Command {
    /// Raw HTML (a file or a directory of .html/.htm files) to minimal-HTML records.
    Minify {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-document minification reports as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "cc-news-like")]
        source: SourceArg,
        #[command(flatten)]
        common: Common,
    },
    /// Replace local `img` sources with image tokens.
    TokenizeImages {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "eval")]
        mode: PrepareMode,
        #[command(flatten)]
        common: Common,
    },
    /// Apply the training objective to every record.
    Transform {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "causally-masked")]
        objective: Objective,
        #[command(flatten)]
        common: Common,
    },
    /// De-duplicated train/test split, written as train.jsonl and test.jsonl.
    Split {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        test_size: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; writes model.ckpt, trace.csv and train.toml under --out.
    Train {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_enum, default_value = "tiny")]
        model: Preset,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// TOML file of training settings; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        objective: Option<Objective>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        max_seq_len: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Continue a prompt.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        prompt_file: PathBuf,
        #[arg(long, default_value_t = 0.85)]
        temp: f64,
        /// Total sequence length, prompt included.
        #[arg(long)]
        max_len: usize,
        #[arg(long)]
        greedy: bool,
        #[arg(long, conflicts_with_all = ["greedy", "size_hint"])]
        beam: Option<usize>,
        /// Force `<mask:0>` at index max_len - size_hint and infill after it.
        #[arg(long)]
        size_hint: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Rank candidate continuations (one per line) of a context; TSV out.
    Score {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        context: PathBuf,
        /// Text placed before every candidate, e.g. " " for entity targets.
        #[arg(long, default_value = "")]
        prefix: String,
        #[command(flatten)]
        common: Common,
    },
    /// Render a named prompt template.
    Prompt {
        #[arg(long)]
        name: String,
        /// Image tokens (`IMG12` or `12`, whitespace separated) for the `image` hole.
        #[arg(long)]
        image_file: Option<PathBuf>,
        /// Other holes as name=value.
        #[arg(long = "set", value_parser = parse_kv)]
        holes: Vec<(String, String)>,
        /// Extra template file merged over the built-ins.
        #[arg(long)]
        templates: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Token-usage histogram as CSV; prints `class,tokens,normalized_entropy`.
    Stats {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_enum, default_value = "image")]
        class: ClassArg,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SourceArg {
    CcNewsLike,
    WikiLike,
    Synthetic,
}

impl From<SourceArg> for Source {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::CcNewsLike => Source::CcNewsLike,
            SourceArg::WikiLike => Source::WikiLike,
            SourceArg::Synthetic => Source::Synthetic,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ClassArg {
    Text,
    Image,
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())).ok_or_else(|| format!("expected name=value, got {s:?}"))
}

/// Runs the CLI. Returns 0 on success, 2 on usage errors and 1 on failures, after
/// printing a one-line `error: <module>: <cause>` diagnostic.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Minify { input, out, report, source, common } => cmd_minify(&input, &out, report.as_deref(), source.into(), &common).context("minify"),
        Command::TokenizeImages { records, images, out, mode, common } => cmd_tokenize(&records, &images, &out, mode, &common).context("tokenize-images"),
        Command::Transform { records, out, objective, common } => cmd_transform(&records, &out, objective, &common).context("transform"),
        Command::Split { records, test_size, out, common } => cmd_split(&records, test_size, &out, &common).context("split"),
        Command::Train { records, model, steps, out, config, objective, lr, batch_size, max_seq_len, common } => {
            let overrides = TrainOverrides { steps, objective, lr, batch_size, max_seq_len };
            cmd_train(&records, model, &out, config.as_deref(), overrides, &common).context("train")
        }
        Command::Generate { ckpt, prompt_file, temp, max_len, greedy, beam, size_hint, common } => {
            cmd_generate(&ckpt, &prompt_file, temp, max_len, greedy, beam, size_hint, &common).context("generate")
        }
        Command::Score { ckpt, candidates, context, prefix, .. } => cmd_score(&ckpt, &candidates, &context, &prefix).context("score"),
        Command::Prompt { name, image_file, holes, templates, .. } => cmd_prompt(&name, image_file.as_deref(), &holes, templates.as_deref()).context("prompt"),
        Command::Stats { records, class, out, common } => cmd_stats(&records, class, &out, &common).context("stats"),
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        bail!("--workers must be at least 1");
    }
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

/// Maps `f` over `items` on `workers` threads, keeping input order.
fn par_map<'a, T: Sync, U: Send>(items: &'a [T], workers: usize, f: impl Fn(&'a T) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
    pool(workers)?.install(|| items.par_iter().map(f).collect())
}

fn read_records(path: &Path) -> Result<Vec<Record>> {
    let f = File::open(path).with_context(|| format!("{}", path.display()))?;
    Ok(read_jsonl(BufReader::new(f))?)
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("{}", path.display()))?;
    let mut w = BufWriter::new(f);
    write_jsonl(&mut w, items)?;
    w.flush()?;
    Ok(())
}

fn html_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .with_context(|| format!("{}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("html" | "htm")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .html files in {}", input.display());
    }
    Ok(files)
}

#[derive(Serialize)]
struct ReportLine<'a> {
    doc_id: &'a str,
    #[serde(flatten)]
    report: &'a MinifyReport,
}

fn cmd_minify(input: &Path, out: &Path, report: Option<&Path>, source: Source, common: &Common) -> Result<()> {
    let vocab = Vocab::new(common.image_vocab);
    let files = html_inputs(input)?;
    let done = par_map(&files, common.workers, |p| {
        let bytes = fs::read(p).with_context(|| format!("{}", p.display()))?;
        let m = minify(&bytes);
        let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("doc").to_string();
        let rec = Record::from_html(&vocab, id, source, m.minimal_html).with_context(|| format!("{}", p.display()))?;
        Ok((rec, m.report))
    })?;
    let records: Vec<&Record> = done.iter().map(|d| &d.0).collect();
    write_lines(out, &records)?;
    if let Some(path) = report {
        let lines: Vec<ReportLine> = done.iter().map(|(r, rep)| ReportLine { doc_id: &r.doc_id, report: rep }).collect();
        fs::write(path, serde_json::to_string_pretty(&lines)? + "\n")?;
    }
    Ok(())
}

fn cmd_tokenize(records: &Path, images: &Path, out: &Path, mode: PrepareMode, common: &Common) -> Result<()> {
    let vocab = Vocab::new(common.image_vocab);
    let codec = PaletteCodec::new();
    if vocab.image_vocab_size() < crate::image::PALETTE_SIZE as u32 {
        bail!("--image-vocab {} is smaller than the codec's {} codes", vocab.image_vocab_size(), crate::image::PALETTE_SIZE);
    }
    let recs = read_records(records)?;
    let done = par_map(&recs, common.workers, |r| {
        let mut dom = parse_dom(r.minimal_html.as_bytes());
        inline_images(&mut dom, images, mode, &codec, |n| doc_rng(common.seed, &r.doc_id, n as u64)).with_context(|| r.doc_id.clone())?;
        Ok(Record::from_html(&vocab, r.doc_id.clone(), r.source, serialize(&dom))?)
    })?;
    write_lines(out, &done)
}

#[derive(Serialize)]
struct TransformedRecord<'a> {
    #[serde(flatten)]
    record: &'a Record,
    plan: Vec<(usize, usize)>,
    tokens_transformed: Vec<String>,
    loss_weights: Vec<u8>,
}

fn cmd_transform(records: &Path, out: &Path, objective: Objective, common: &Common) -> Result<()> {
    let vocab = Vocab::new(common.image_vocab);
    let recs = read_records(records)?;
    let done = par_map(&recs, common.workers, |r| {
        let doc = r.document(&vocab)?;
        let t = objective.apply(&doc, &vocab, &mut doc_rng(common.seed, &r.doc_id, 0)).with_context(|| r.doc_id.clone())?;
        Ok(TransformedRecord {
            record: r,
            plan: t.plan.spans.iter().map(|s| (s.start, s.end)).collect(),
            tokens_transformed: vocab.render_all(&t.tokens)?,
            loss_weights: t.loss_weights,
        })
    })?;
    write_lines(out, &done)
}

fn cmd_split(records: &Path, test_size: usize, out: &Path, common: &Common) -> Result<()> {
    let (train, test) = make_split(read_records(records)?, test_size, common.seed)?;
    fs::create_dir_all(out)?;
    write_lines(&out.join("train.jsonl"), &train)?;
    write_lines(&out.join("test.jsonl"), &test)
}

struct TrainOverrides {
    steps: Option<usize>,
    objective: Option<Objective>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    max_seq_len: Option<usize>,
}

fn cmd_train(records: &Path, preset: Preset, out: &Path, config: Option<&Path>, o: TrainOverrides, common: &Common) -> Result<()> {
    let vocab = Vocab::new(common.image_vocab);
    let mut cfg: TrainConfig = match config {
        Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("{}", p.display()))?)?,
        None => TrainConfig::default(),
    };
    cfg.seed = common.seed;
    if let Some(s) = o.steps {
        cfg.total_updates = s;
        cfg.warmup_updates = cfg.warmup_updates.min(s / 10);
    }
    cfg.objective = o.objective.unwrap_or(cfg.objective);
    cfg.peak_lr = o.lr.unwrap_or(cfg.peak_lr);
    cfg.batch_size = o.batch_size.unwrap_or(cfg.batch_size);
    cfg.max_seq_len = o.max_seq_len.unwrap_or(cfg.max_seq_len);
    let mut model_cfg = ModelConfig::preset(preset, vocab.total_size() as usize);
    model_cfg.max_positions = model_cfg.max_positions.max(cfg.max_seq_len);
    let docs = read_records(records)?.iter().map(|r| r.document(&vocab)).collect::<Result<Vec<_>, _>>()?;
    let outcome = train(&model_cfg, &cfg, &docs, &vocab)?;
    fs::create_dir_all(out)?;
    save_checkpoint(&outcome.model, &out.join("model.ckpt"))?;
    let mut trace = BufWriter::new(File::create(out.join("trace.csv"))?);
    write_trace_csv(&outcome.trace, &mut trace)?;
    trace.flush()?;
    fs::write(out.join("train.toml"), toml::to_string(&cfg)?)?;
    Ok(())
}

/// The vocabulary a checkpoint was trained with, recovered from its output size.
fn vocab_of(model: &Transformer) -> Result<Vocab> {
    let fixed = (TEXT_BASE_SIZE + NUM_SENTINELS + 1) as usize;
    match model.vocab_size().checked_sub(fixed) {
        Some(images) => Ok(Vocab::new(images as u32)),
        None => bail!("checkpoint vocabulary of {} is too small", model.vocab_size()),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(ckpt: &Path, prompt_file: &Path, temp: f64, max_len: usize, use_greedy: bool, beam_size: Option<usize>, size_hint: Option<usize>, common: &Common) -> Result<()> {
    let model = load_checkpoint(ckpt)?;
    let vocab = vocab_of(&model)?;
    let prompt = vocab.encode_str(&fs::read_to_string(prompt_file).with_context(|| format!("{}", prompt_file.display()))?)?;
    let mut settings = DecodeSettings::new(&vocab, max_len);
    settings.temperature = temp;
    settings.greedy = use_greedy;
    settings.seed = common.seed;
    let continuation = if let Some(h) = size_hint {
        let r = size_hint_decode(&model, &prompt, h, &settings, &vocab)?;
        r.tokens[prompt.len()..].to_vec()
    } else if let Some(b) = beam_size {
        settings.beam_size = b;
        beam(&model, &prompt, &settings)?.tokens
    } else if use_greedy {
        greedy(&model, &prompt, &settings)?
    } else {
        sample(&model, &prompt, &settings)?
    };
    println!("{}", vocab.decode_lossy(&continuation)?);
    Ok(())
}

fn cmd_score(ckpt: &Path, candidates: &Path, context: &Path, prefix: &str) -> Result<()> {
    let model = load_checkpoint(ckpt)?;
    let vocab = vocab_of(&model)?;
    let ctx = vocab.encode_str(fs::read_to_string(context).with_context(|| format!("{}", context.display()))?.trim_end_matches('\n'))?;
    let lines: Vec<String> = fs::read_to_string(candidates)?.lines().map(str::to_string).filter(|l| !l.is_empty()).collect();
    let conts = lines
        .iter()
        .map(|c| {
            let mut t = vocab.encode_str(&format!("{prefix}{c}"))?;
            t.push(vocab.eod());
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    let ranked = rank_candidates(&model, &ctx, &conts)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "candidate\tlogprob\trank")?;
    let mut rank = vec![0; lines.len()];
    for (r, (i, _)) in ranked.iter().enumerate() {
        rank[*i] = r + 1;
    }
    let score: std::collections::HashMap<usize, f64> = ranked.into_iter().collect();
    for (i, c) in lines.iter().enumerate() {
        writeln!(out, "{c}\t{:.9}\t{}", score[&i], rank[i])?;
    }
    Ok(())
}

fn cmd_prompt(name: &str, image_file: Option<&Path>, holes: &[(String, String)], templates: Option<&Path>) -> Result<()> {
    let set = match templates {
        Some(p) => TemplateSet::load(p)?,
        None => TemplateSet::builtin(),
    };
    let t = set.get(name)?;
    let image = match image_file {
        Some(p) => {
            let codes = fs::read_to_string(p)?
                .split_whitespace()
                .map(|w| w.trim_start_matches("IMG").parse::<u32>().with_context(|| format!("bad image token {w:?}")))
                .collect::<Result<Vec<_>>>()?;
            if codes.len() != crate::record::IMAGE_TOKENS_PER_IMAGE {
                bail!("{} holds {} image tokens, expected {}", p.display(), codes.len(), crate::record::IMAGE_TOKENS_PER_IMAGE);
            }
            Some(render_codes(&codes))
        }
        None => None,
    };
    let mut values: Vec<(&str, &str)> = holes.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    if let Some(img) = &image {
        values.push(("image", img));
    }
    print!("{}", t.render(&values)?);
    Ok(())
}

fn cmd_stats(records: &Path, class: ClassArg, out: &Path, common: &Common) -> Result<()> {
    let vocab = Vocab::new(common.image_vocab);
    let class = match class {
        ClassArg::Text => TokenClass::Text,
        ClassArg::Image => TokenClass::Image,
    };
    let h = token_histogram(&read_records(records)?, class, &vocab)?;
    fs::write(out, h.to_csv())?;
    let name = match class {
        TokenClass::Image => "image",
        _ => "text",
    };
    println!("class,tokens,normalized_entropy\n{name},{},{:.6}", h.total(), h.normalized_entropy()?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["cmlm"]), 2);
        assert_eq!(run(["cmlm", "minify", "x", "--out", "y", "--bogus"]), 2);
        assert_eq!(run(["cmlm", "frobnicate"]), 2);
    }

    #[test]
    fn failures_exit_one() {
        assert_eq!(run(["cmlm", "split", "--records", "/nonexistent.jsonl", "--test-size", "1", "--out", "/tmp/x"]), 1);
    }

    #[test]
    fn prompt_renders_builtin() {
        assert_eq!(run(["cmlm", "prompt", "--name", "image_conditional", "--set", "prompt=a cat"]), 0);
        assert_eq!(run(["cmlm", "prompt", "--name", "nope"]), 1);
    }
}
