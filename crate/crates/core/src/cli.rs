//! Command-line surface: corpus generation, vocabulary building,
//! pre-training, fine-tuning, evaluation, prediction and attention export.
//!
//! Every configuration key is also a `--<key>` flag on every subcommand.
//! Values resolve as flag, then `--config` file, then default. Failures are
//! reported on stderr as one JSON object and mapped to exit codes 2 (config),
//! 3 (data) and 4 (numeric divergence).

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Command};
use serde_json::{json, Value};

use crate::config::{FinetuneTask, RunConfig, CONFIG_KEYS};
use crate::docdata::synth::NUM_CLASSES;
use crate::docdata::{generate_synthetic_corpus, load_document, Corpus, Document, Label, Split, SynthConfig};
use crate::encoder::Branches;
use crate::error::{Error, Result};
use crate::features::{DocInput, Vocab};
use crate::tensor::{Rng, Tape, Tensor};
use crate::train::{run_pretrain, Checkpoint, Finetuner, Prediction, PRETRAIN_LOG};

/// Short flags accepted next to the dotted keys.
const ALIASES: &[(&str, &str)] = &[
    ("docs", "data.docs"),
    ("corpus", "data.corpus_dir"),
    ("vocab", "data.vocab_path"),
    ("out", "run.out_dir"),
    ("checkpoint", "run.checkpoint"),
    ("task", "finetune.task"),
    ("head", "finetune.head"),
    ("share-spatial-weights", "model.share_spatial_weights"),
    ("inject-spatial-into-hidden", "model.inject_spatial_into_hidden"),
    ("zero-visual-values", "model.zero_visual_values"),
];

pub const FINETUNE_LOG: &str = "finetune_log.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const FINETUNED_DIR: &str = "finetuned";

fn config_args(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("JSON config file with flat dotted keys; flags override it"),
    );
    CONFIG_KEYS.iter().fold(cmd, |cmd, (key, help)| {
        let mut arg = Arg::new(*key).long(*key).value_name("VALUE").help(*help).help_heading("Configuration keys");
        for (alias, target) in ALIASES {
            if target == key {
                arg = arg.visible_alias(*alias);
            }
        }
        cmd.arg(arg)
    })
}

fn document_args(cmd: Command) -> Command {
    cmd.arg(Arg::new("document").long("document").value_name("OCR_JSON").help("OCR JSON of the input page"))
        .arg(Arg::new("image").long("image").value_name("PGM").help("Page image; defaults to the OCR path with .pgm"))
}

pub fn command() -> Command {
    Command::new("docformer")
        .about("Multi-modal document transformer: synthetic data, pre-training, fine-tuning and analysis")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(config_args(Command::new("generate").about("Write a synthetic labeled form corpus to data.corpus_dir")))
        .subcommand(config_args(
            Command::new("build-vocab").about("Build the word-piece vocabulary from the training split into data.vocab_path"),
        ))
        .subcommand(config_args(
            Command::new("pretrain").about("Pre-train the backbone; writes a per-step log and one checkpoint per epoch"),
        ))
        .subcommand(config_args(Command::new("finetune").about(
            "Fine-tune for sequence labeling (seq) or document classification (cls), starting from run.checkpoint when set",
        )))
        .subcommand(config_args(
            Command::new("evaluate").about("Evaluate the fine-tuned run.checkpoint on the test split"),
        ))
        .subcommand(document_args(config_args(
            Command::new("predict").about("Predict word labels or the document class for one page"),
        )))
        .subcommand(
            document_args(config_args(Command::new("export-attention").about(
                "Export one layer/head text-branch attention map as a raw dump and an 8-bit PGM heatmap",
            )))
            .arg(Arg::new("layer").long("layer").value_name("L").default_value("-1").allow_negative_numbers(true).help("Encoder layer; negative counts from the end"))
            .arg(Arg::new("head-index").long("head-index").value_name("H").default_value("0").help("Attention head")),
        )
        .version(env!("CARGO_PKG_VERSION"))
}

/// Resolve the configuration: defaults, then `--config`, then key flags.
pub fn resolve_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(p) => RunConfig::load(Path::new(p))?,
        None => RunConfig::default(),
    };
    for (key, _) in CONFIG_KEYS {
        if let Some(raw) = m.get_one::<String>(key) {
            cfg.set_from_str(key, raw)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parse, execute, and report. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return 0;
            }
            return report(&Error::Config(e.to_string().trim().to_string()));
        }
    };
    match execute(&matches) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            let _ = writeln!(std::io::stdout(), "{text}");
            0
        }
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> i32 {
    let body = json!({ "error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() });
    eprintln!("{body}");
    e.exit_code()
}

pub fn execute(m: &ArgMatches) -> Result<Value> {
    let (name, sub) = m.subcommand().expect("a subcommand is required");
    let cfg = resolve_config(sub)?;
    match name {
        "generate" => cmd_generate(&cfg),
        "build-vocab" => cmd_build_vocab(&cfg),
        "pretrain" => cmd_pretrain(&cfg),
        "finetune" => cmd_finetune(&cfg),
        "evaluate" => cmd_evaluate(&cfg),
        "predict" => cmd_predict(&cfg, &document_source(sub)?),
        "export-attention" => {
            let layer: i64 = parse_flag(sub, "layer")?;
            let head: usize = parse_flag(sub, "head-index")?;
            cmd_export_attention(&cfg, &document_source(sub)?, layer, head)
        }
        other => Err(Error::Config(format!("unknown subcommand `{other}`"))),
    }
}

fn parse_flag<T: std::str::FromStr>(m: &ArgMatches, id: &str) -> Result<T> {
    let raw = m.get_one::<String>(id).expect("flag has a default");
    raw.parse().map_err(|_| Error::Config(format!("--{id}: cannot parse `{raw}`")))
}

fn document_source(m: &ArgMatches) -> Result<(PathBuf, PathBuf)> {
    let doc = m
        .get_one::<String>("document")
        .map(PathBuf::from)
        .ok_or_else(|| Error::Config("--document is required".into()))?;
    let image = m.get_one::<String>("image").map(PathBuf::from).unwrap_or_else(|| doc.with_extension("pgm"));
    Ok((doc, image))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<Value> {
    let synth = SynthConfig { test_fraction: cfg.test_fraction, ..SynthConfig::default() };
    let corpus = generate_synthetic_corpus(&Rng::new(cfg.seed), cfg.docs, &synth).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    })?;
    let dir = Path::new(&cfg.corpus_dir);
    corpus.write_to_dir(dir)?;
    Ok(json!({
        "corpus_dir": cfg.corpus_dir,
        "docs": corpus.len(),
        "train": corpus.split(Split::Train).len(),
        "test": corpus.split(Split::Test).len(),
    }))
}

pub fn cmd_build_vocab(cfg: &RunConfig) -> Result<Value> {
    let corpus = Corpus::read_from_dir(Path::new(&cfg.corpus_dir))?;
    let vocab = Vocab::build(corpus.split(Split::Train), cfg.model.vocab_size).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    })?;
    let path = Path::new(&cfg.vocab_path);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    vocab.save(path)?;
    Ok(json!({ "vocab_path": cfg.vocab_path, "size": vocab.len() }))
}

/// Corpus split prepared for the model. The vocabulary fixes
/// `model.vocab_size`.
fn load_split(cfg: &mut RunConfig, split: Split) -> Result<(Vec<Document>, Vec<DocInput>)> {
    let vocab = Vocab::load(Path::new(&cfg.vocab_path))?;
    cfg.model.vocab_size = vocab.len();
    let corpus = Corpus::read_from_dir(Path::new(&cfg.corpus_dir))?;
    let docs: Vec<Document> = corpus.split(split).into_iter().cloned().collect();
    if docs.is_empty() {
        return Err(Error::Validation(format!("corpus {} has no {split:?} documents", cfg.corpus_dir)));
    }
    let inputs = docs.iter().map(|d| DocInput::prepare(&vocab, d, &cfg.model)).collect::<Result<_>>()?;
    Ok((docs, inputs))
}

pub fn cmd_pretrain(cfg: &RunConfig) -> Result<Value> {
    let mut cfg = cfg.clone();
    let (_, inputs) = load_split(&mut cfg, Split::Train)?;
    let out = PathBuf::from(&cfg.out_dir);
    let run = run_pretrain(&cfg, &inputs, Some(&out))?;
    let last = run.logs.last();
    Ok(json!({
        "steps": run.trainer.step,
        "final_loss": last.map(|l| l.total),
        "log": out.join(PRETRAIN_LOG),
        "checkpoints": run.checkpoints,
        "backbone_parameters": run.trainer.model.backbone_scalars(),
    }))
}

fn n_classes(cfg: &RunConfig) -> usize {
    match cfg.task {
        FinetuneTask::Seq => Label::COUNT,
        FinetuneTask::Cls => NUM_CLASSES,
    }
}

fn evaluate(f: &Finetuner, docs: &[Document], inputs: &[DocInput]) -> Result<Value> {
    Ok(match f.cfg.task {
        FinetuneTask::Seq => {
            let refs: Vec<&Document> = docs.iter().collect();
            let r = f.evaluate_seq(&refs, inputs)?;
            let mut v = serde_json::to_value(&r.overall).expect("metrics serialize");
            v["vision_dependent"] = serde_json::to_value(&r.vision_dependent).expect("metrics serialize");
            v
        }
        FinetuneTask::Cls => serde_json::to_value(f.evaluate_cls(inputs)?).expect("metrics serialize"),
    })
}

pub fn cmd_finetune(cfg: &RunConfig) -> Result<Value> {
    let mut cfg = cfg.clone();
    let (_, train) = load_split(&mut cfg, Split::Train)?;
    let base = match cfg.checkpoint.as_str() {
        "" => None,
        dir => Some(Checkpoint::load(Path::new(dir))?),
    };
    let mut f = Finetuner::new(&cfg, base.as_ref(), n_classes(&cfg))?;
    let out = PathBuf::from(&cfg.out_dir);
    create_dir(&out)?;
    let log_path = out.join(FINETUNE_LOG);
    let mut log = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let total = f.total_steps(train.len());
    f.run_until(&train, total, |_, step| {
        let line = serde_json::to_string(step).expect("log serializes");
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))
    })?;
    let ck_dir = out.join(FINETUNED_DIR);
    f.checkpoint().save(&ck_dir)?;
    let (test_docs, test) = load_split(&mut cfg, Split::Test)?;
    let metrics = evaluate(&f, &test_docs, &test)?;
    write_json(&out.join(METRICS_FILE), &metrics)?;
    Ok(json!({
        "steps": f.step,
        "checkpoint": ck_dir,
        "log": log_path,
        "backbone_parameters": f.model.backbone_scalars(),
        "metrics": metrics,
    }))
}

fn load_finetuned(cfg: &RunConfig) -> Result<(Finetuner, RunConfig)> {
    if cfg.checkpoint.is_empty() {
        return Err(Error::Config("run.checkpoint (--checkpoint) must name a fine-tuned checkpoint".into()));
    }
    let ck = Checkpoint::load(Path::new(&cfg.checkpoint))?;
    let f = Finetuner::from_checkpoint(&ck)?;
    // Paths come from the command line; model and task from the checkpoint.
    let mut effective = ck.config.clone();
    effective.corpus_dir = cfg.corpus_dir.clone();
    effective.vocab_path = cfg.vocab_path.clone();
    effective.out_dir = cfg.out_dir.clone();
    Ok((f, effective))
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Value> {
    let (f, mut eff) = load_finetuned(cfg)?;
    let (docs, inputs) = load_split(&mut eff, Split::Test)?;
    if eff.model.vocab_size != f.cfg.model.vocab_size {
        return Err(Error::Incompatible(format!(
            "model.vocab_size: checkpoint {} vs vocabulary file {}",
            f.cfg.model.vocab_size, eff.model.vocab_size
        )));
    }
    let metrics = evaluate(&f, &docs, &inputs)?;
    let out = PathBuf::from(&eff.out_dir);
    create_dir(&out)?;
    write_json(&out.join(METRICS_FILE), &metrics)?;
    Ok(metrics)
}

fn load_page(f: &Finetuner, eff: &RunConfig, source: &(PathBuf, PathBuf)) -> Result<(Document, DocInput)> {
    let vocab = Vocab::load(Path::new(&eff.vocab_path))?;
    if vocab.len() != f.cfg.model.vocab_size {
        return Err(Error::Incompatible(format!(
            "model.vocab_size: checkpoint {} vs vocabulary file {}",
            f.cfg.model.vocab_size,
            vocab.len()
        )));
    }
    let doc = load_document(&source.0, &source.1)?;
    let input = DocInput::prepare(&vocab, &doc, &f.cfg.model)?;
    Ok((doc, input))
}

pub fn cmd_predict(cfg: &RunConfig, source: &(PathBuf, PathBuf)) -> Result<Value> {
    let (f, eff) = load_finetuned(cfg)?;
    let (doc, input) = load_page(&f, &eff, source)?;
    Ok(match f.predict(&input)? {
        Prediction::Document(class) => json!({ "document": doc.id, "class": class }),
        Prediction::Tokens(pred) => {
            let mut labels: Vec<Option<usize>> = vec![None; doc.words.len()];
            for (k, w) in input.tokens.alignment.iter().enumerate() {
                if let Some(w) = *w {
                    labels[w].get_or_insert(pred[k]);
                }
            }
            let words: Vec<Value> = doc
                .words
                .iter()
                .zip(&labels)
                .map(|(w, l)| {
                    json!({
                        "text": w.text,
                        "label": l.map(|id| Label::from_id(id).map_or("unknown", Label::name)),
                        "label_id": l,
                    })
                })
                .collect();
            json!({ "document": doc.id, "words": words })
        }
    })
}

/// 8-bit heatmap: `round(255 (1 - p / p_max))`, so 0 is white and the
/// largest probability black.
pub fn heatmap_pixels(probs: &[f64]) -> Vec<u8> {
    let max = probs.iter().cloned().fold(0.0, f64::max);
    probs
        .iter()
        .map(|&p| if max > 0.0 { (255.0 * (1.0 - p / max)).round() as u8 } else { 255 })
        .collect()
}

pub fn cmd_export_attention(cfg: &RunConfig, source: &(PathBuf, PathBuf), layer: i64, head: usize) -> Result<Value> {
    let (f, eff) = load_finetuned(cfg)?;
    let (doc, input) = load_page(&f, &eff, source)?;
    let mc = &f.cfg.model;
    let layers = mc.layers as i64;
    let l = if layer < 0 { layers + layer } else { layer };
    if !(0..layers).contains(&l) {
        return Err(Error::Config(format!("layer {layer} is out of range for {layers} layers")));
    }
    if head >= mc.heads {
        return Err(Error::Config(format!("head {head} is out of range for {} heads", mc.heads)));
    }
    let mut tape = Tape::new();
    let b = f.model.store.bind(&mut tape);
    let enc = f.model.encode(&mut tape, &b, &input, Branches::Both, None)?;
    let n = mc.seq_len;
    let probs = tape.value(enc.output.layers[l as usize].text_probs);
    let grid = probs.data()[head * n * n..(head + 1) * n * n].to_vec();
    let pixels = heatmap_pixels(&grid);
    let out = PathBuf::from(&eff.out_dir);
    create_dir(&out)?;
    let stem = format!("attention_{}_l{l}_h{head}", doc.id);
    let raw = out.join(format!("{stem}.bin"));
    let pgm = out.join(format!("{stem}.pgm"));
    let tensor = Tensor::new(vec![n, n], grid)?;
    fs::write(&raw, tensor.to_dump_bytes()).map_err(|e| Error::io(&raw, e))?;
    let mut bytes = format!("P5\n{n} {n}\n255\n").into_bytes();
    bytes.extend_from_slice(&pixels);
    fs::write(&pgm, bytes).map_err(|e| Error::io(&pgm, e))?;
    Ok(json!({ "layer": l, "head": head, "raw": raw, "pgm": pgm, "size": n }))
}
