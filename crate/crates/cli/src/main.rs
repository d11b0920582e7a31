//! `leftseg` command-line tool: train, predict, eval, time, inspect, synth.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use leftseg::checkpoint::{self, CheckpointMeta};
use leftseg::data::{iob_to_segments, parse_predictions, parse_tokens, read_corpus, segments_to_iob, Vocab};
use leftseg::eval::{bucket_f1, tag_f1, DEFAULT_BUCKETS};
use leftseg::infer::decode_all;
use leftseg::model::{DecoderKind, Model, TrainConfig};
use leftseg::synth::{generate, RuleSet};
use leftseg::train::{timing, train_model};

const CHECKPOINT_FILE: &str = "model.ckpt";
const SEED_ENV: &str = "LEFTSEG_SEED";

#[derive(Parser)]
#[command(name = "leftseg", version, about = "Incremental leftmost-segment sequence segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the best checkpoint, report and resolved config.
    Train(TrainArgs),
    /// Append a predicted tag column to a column file.
    Predict(PredictArgs),
    /// Score a file whose last two columns are gold and predicted tags.
    Eval(EvalArgs),
    /// Time one training epoch and one decoding pass.
    Time(TimeArgs),
    /// Print checkpoint metadata.
    Inspect(InspectArgs),
    /// Write a synthetic train/dev/test corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with configuration keys. Flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pretrained token vectors, one `token v1 v2 ...` per line.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

/// One flag per configuration key.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    token_emb_dim: Option<usize>,
    #[arg(long)]
    char_cnn: Option<bool>,
    #[arg(long)]
    char_emb_dim: Option<usize>,
    #[arg(long)]
    char_filters: Option<usize>,
    #[arg(long)]
    char_window: Option<usize>,
    #[arg(long)]
    label_emb_dim: Option<usize>,
    #[arg(long)]
    encoder_hidden: Option<usize>,
    #[arg(long)]
    decoder_hidden: Option<usize>,
    #[arg(long)]
    encoder_layers: Option<usize>,
    #[arg(long)]
    decoder_layers: Option<usize>,
    #[arg(long)]
    decoder: Option<DecoderKind>,
    #[arg(long)]
    use_phrase: Option<bool>,
    #[arg(long)]
    use_label: Option<bool>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Falls back to the config file, then to $LEFTSEG_SEED.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    token_column: Option<usize>,
    #[arg(long)]
    tag_column: Option<usize>,
}

impl Overrides {
    fn apply(&self, c: &mut TrainConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { c.$field = v; })*
            };
        }
        set!(
            token_emb_dim, char_cnn, char_emb_dim, char_filters, char_window, label_emb_dim, encoder_hidden,
            decoder_hidden, encoder_layers, decoder_layers, decoder, use_phrase, use_label, dropout, lr, beta1,
            beta2, eps, l2, clip_norm, batch_size, max_epochs, patience, seed, min_count, token_column
        );
        if let Some(v) = self.tag_column {
            c.tag_column = Some(v);
        }
    }
}

#[derive(Args)]
struct PredictArgs {
    /// Checkpoint file; `vocab.json` must sit beside it.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    beam: usize,
    /// Also write one JSON line per predicted segment with its log-probabilities.
    #[arg(long)]
    segments: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    predictions: PathBuf,
    /// Comma-separated upper edges of sentence-length buckets.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    buckets: Option<Vec<usize>>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TimeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Tagged column file to train and decode on.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct InspectArgs {
    checkpoint: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 250)]
    sentences: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Leave out the marker tokens whose labels alternate.
    #[arg(long)]
    no_marks: bool,
}

fn resolve_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Ok(seed) = std::env::var(SEED_ENV) {
        config.seed = seed
            .parse()
            .with_context(|| format!("{SEED_ENV}={seed:?} is not an unsigned integer"))?;
    }
    if let Some(path) = &args.config {
        config = config.overlay_file(path)?;
    }
    args.overrides.apply(&mut config);
    config.validate()?;
    Ok(config)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = resolve_config(args)?;
    let train = read_corpus(&args.train, config.token_column, config.tag_column)?;
    let dev = read_corpus(&args.dev, config.token_column, config.tag_column)?;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;

    let vocab = Vocab::build(&train, config.min_count)?;
    let mut model = Model::new(config.clone(), vocab)?;
    if let Some(path) = &args.embeddings {
        let rows = model.load_embeddings(path)?;
        eprintln!("loaded {rows} pretrained rows from {}", path.display());
    }
    let (best, report) = train_model(model, &train, &dev, |e| {
        eprintln!("epoch {:>3}  loss {:>12.4}  dev F1 {:>6.2}  {:.1}s", e.epoch, e.loss, e.dev_f1, e.seconds);
    })?;

    let meta = CheckpointMeta {
        best_epoch: Some(report.best_epoch),
        dev_f1: Some(report.best_dev_f1),
    };
    let ckpt = args.out.join(CHECKPOINT_FILE);
    checkpoint::save(&ckpt, &best, &meta)?;
    write(&args.out.join("report.jsonl"), report.to_jsonl())?;
    write(&args.out.join("timing.jsonl"), report.timing_jsonl())?;
    write(&args.out.join("config.toml"), config.to_toml_string())?;
    println!(
        "best epoch {} with dev F1 {:.2}; checkpoint {}",
        report.best_epoch,
        report.best_dev_f1,
        ckpt.display()
    );
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    if args.beam < 1 {
        bail!("--beam must be at least 1");
    }
    let (model, _) = checkpoint::load(&args.model)?;
    let text = fs::read_to_string(&args.input).with_context(|| format!("cannot read {}", args.input.display()))?;
    let sentences = parse_tokens(&text, model.config().token_column)?;
    let decoded = decode_all(&model, &sentences, args.beam)?;
    let labeled: Vec<_> = decoded.iter().map(|d| d.labeled(&model)).collect();

    let mut tags = labeled.iter().flat_map(segments_to_iob).map(|t| t.to_string());
    let out = leftseg::data::append_column(&text, || tags.next())?;
    match &args.output {
        Some(path) => write(path, out)?,
        None => std::io::stdout().write_all(out.as_bytes())?,
    }
    if let Some(path) = &args.segments {
        let mut lines = String::new();
        for (k, d) in decoded.iter().enumerate() {
            for step in &d.steps {
                let s = &step.segment;
                let record = serde_json::json!({
                    "sentence": k + 1,
                    "i": s.start,
                    "j": s.end,
                    "label": model.vocab().label(s.label),
                    "span_logprob": step.span_logprob,
                    "label_logprob": step.label_logprob,
                });
                lines.push_str(&record.to_string());
                lines.push('\n');
            }
        }
        write(path, lines)?;
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let path = &args.predictions;
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let pairs = parse_predictions(&text).with_context(|| format!("in {}", path.display()))?;
    let report = tag_f1(&pairs)?;
    let buckets = match &args.buckets {
        Some(edges) => {
            let edges = if edges.is_empty() { DEFAULT_BUCKETS.to_vec() } else { edges.clone() };
            let mut gold = Vec::with_capacity(pairs.len());
            let mut pred = Vec::with_capacity(pairs.len());
            for (g, p) in &pairs {
                gold.push(iob_to_segments(g)?);
                pred.push(iob_to_segments(p)?);
            }
            Some(bucket_f1(&gold, &pred, &edges)?)
        }
        None => None,
    };
    if args.json {
        let mut value = serde_json::json!({ "overall": report.record() });
        if let Some(b) = &buckets {
            value["buckets"] = b
                .buckets
                .iter()
                .map(|b| {
                    serde_json::json!({
                        "range": b.range(),
                        "sentences": b.sentences,
                        "report": b.report.as_ref().map(|r| r.record()),
                    })
                })
                .collect();
        }
        println!("{}", serde_json::to_string_pretty(&value)?);
    } else {
        print!("{report}");
        if let Some(b) = &buckets {
            println!();
            print!("{b}");
        }
    }
    Ok(())
}

fn cmd_time(args: &TimeArgs) -> Result<()> {
    let (model, _) = checkpoint::load(&args.model)?;
    let c = model.config();
    let corpus = read_corpus(&args.input, c.token_column, c.tag_column)?;
    let report = timing(&model, &corpus, args.batch_size.unwrap_or(c.batch_size))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    let ckpt = checkpoint::read(&args.checkpoint)?;
    let vocab_path = args.checkpoint.with_file_name(checkpoint::VOCAB_FILE);
    println!("checkpoint: {}", args.checkpoint.display());
    println!("format version: {}", checkpoint::VERSION);
    println!("optimizer steps: {}", ckpt.params.step());
    match (ckpt.meta.best_epoch, ckpt.meta.dev_f1) {
        (Some(e), Some(f1)) => println!("selected epoch: {e} (dev F1 {f1:.2})"),
        _ => println!("selected epoch: unknown"),
    }
    match Vocab::load(&vocab_path) {
        Ok(v) => println!(
            "vocabulary: {} tokens, {} characters, {} labels ({})",
            v.num_tokens(),
            v.num_chars(),
            v.num_labels(),
            v.labels().join(" ")
        ),
        Err(e) => println!("vocabulary: unavailable ({e})"),
    }
    println!("parameters: {} tensors, {} values", ckpt.params.len(), ckpt.params.num_values());
    for (_, p) in ckpt.params.iter() {
        println!("  {:<16} {:?}", p.name, p.value.shape());
    }
    println!();
    print!("{}", ckpt.config.to_toml_string());
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let rules = RuleSet {
        alternating_marks: !args.no_marks,
        ..RuleSet::default()
    };
    let corpus = generate(&rules, args.sentences, args.seed)?;
    corpus.write(&args.out)?;
    println!(
        "wrote {} / {} / {} sentences to {} (mean segment length {:.2})",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        args.out.display(),
        corpus.mean_segment_len()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Time(a) => cmd_time(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
