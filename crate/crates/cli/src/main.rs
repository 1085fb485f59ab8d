mod bench;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qanet_core::augment::{
    augment_dataset, Direction, HttpTranslator, MockTranslator, ParaphraseOptions,
    ScriptedTranslator, Translator,
};
use qanet_core::config::RunConfig;
use qanet_core::eval::{evaluate, load_predictions, write_predictions};
use qanet_core::model::ModelRng;
use qanet_core::text::{load_gold_answers, parse_qa_json, write_qa_json, LengthLimits, Split};
use qanet_core::train::{load_datasets, model_from_checkpoint, predict_answers, Checkpoint, Trainer};
use rand::SeedableRng;
use serde_json::Value;

#[derive(Parser)]
#[command(name = "qanet", version, about = "Train, run and score a convolution-and-attention reading comprehension model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints plus a JSON-lines metrics log.
    Train(TrainArgs),
    /// Predict answer spans for a SQuAD-format file.
    Predict(PredictArgs),
    /// Score predictions against gold answers with EM and F1.
    Evaluate(EvaluateArgs),
    /// Paraphrase a dataset by round-trip translation.
    Augment(AugmentArgs),
    /// Measure forward and forward+backward throughput.
    Bench(bench::BenchArgs),
}

/// Config sources shared by every subcommand that builds a model.
#[derive(Args)]
pub struct ConfigArgs {
    /// Flat dotted-key JSON config; defaults apply when absent.
    #[arg(long, env = "QANET_CONFIG")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set model.hidden=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(path) => RunConfig::load(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        Ok(base.with_overrides(&overrides)?)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Training file; overrides `data.train`.
    #[arg(long)]
    train: Option<String>,
    /// Dev file; overrides `data.dev`.
    #[arg(long)]
    dev: Option<String>,
    /// Output directory for checkpoints, the log and the resolved config.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Continue from a checkpoint; its stored config wins over every other source.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output JSON of id to answer; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the raw weights instead of their moving average.
    #[arg(long)]
    no_ema: bool,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// JSON object of id to predicted answer.
    #[arg(long)]
    pred: PathBuf,
    /// SQuAD-format gold file.
    #[arg(long)]
    gold: PathBuf,
    /// Include per-example scores.
    #[arg(long)]
    per_example: bool,
}

#[derive(Args)]
struct AugmentArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    data: PathBuf,
    /// Translation service base URL; overrides `augment.translator_url`.
    #[arg(long, conflicts_with = "mock")]
    translator_url: Option<String>,
    /// Offline translator. With a script file (`{"forward": {text: [..]},
    /// "back": {text: [..]}}`) replies are looked up; otherwise a synonym
    /// rewriter is used.
    #[arg(long, num_args = 0..=1, value_name = "SCRIPT")]
    mock: Option<Option<PathBuf>>,
    /// Beam width; each sentence yields at most k² paraphrases.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Pivot language tag used in augmented ids.
    #[arg(long, default_value = "fr")]
    pivot: String,
    /// Paraphrased copies per example.
    #[arg(long, default_value_t = 1)]
    copies: usize,
    /// Drop a document when its answer sentence has no usable paraphrase.
    #[arg(long)]
    require_answer: bool,
    #[arg(long)]
    out: PathBuf,
}

fn echo_config(config: &RunConfig) {
    eprintln!("config {}", config.hash());
    eprintln!("{}", config.to_flat_json());
}

fn train(args: &TrainArgs) -> Result<()> {
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut trainer = if let Some(path) = &args.resume {
        let ckpt = Checkpoint::read(path)?;
        let (train, dev) = load_datasets(&ckpt.config)?;
        Trainer::resume(&ckpt, train, dev)?
    } else {
        let mut config = args.config.resolve()?;
        if let Some(t) = &args.train {
            config.data.train = Some(t.clone());
        }
        if let Some(d) = &args.dev {
            config.data.dev = Some(d.clone());
        }
        let (train, dev) = load_datasets(&config)?;
        Trainer::new(config, train, dev)?
    };
    echo_config(&trainer.config);
    fs::write(args.out.join("config.json"), trainer.config.to_flat_json())
        .with_context(|| format!("writing config to {}", args.out.display()))?;
    let log_path = args.out.join("log.jsonl");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(args.resume.is_some())
        .write(true)
        .truncate(args.resume.is_none())
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let records = trainer.run(&mut log, Some(&args.out))?;
    log.flush()?;
    if let Some(last) = records.last() {
        eprintln!("step {} loss {:.4} lr {:.3e}", last.step, last.loss, last.lr);
        if let (Some(em), Some(f1)) = (last.dev_em, last.dev_f1) {
            eprintln!("dev EM {em:.2} F1 {f1:.2}");
        }
    }
    eprintln!("wrote {}", args.out.join("checkpoint.bin").display());
    Ok(())
}

fn predict(args: &PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::read(&args.checkpoint)?;
    let (model, featurizer) = model_from_checkpoint(&ckpt, !args.no_ema)?;
    let limits = LengthLimits {
        max_context: ckpt.config.data.max_context,
        max_answer: ckpt.config.data.max_answer,
    };
    let examples = parse_qa_json(&args.data, Split::Eval, limits)?;
    let batch = args.batch_size.unwrap_or(ckpt.config.train.eval_batch_size);
    let preds = predict_answers(&model, &featurizer, &examples, batch)?;
    match &args.out {
        Some(path) => write_predictions(path, &preds)?,
        None => println!("{}", serde_json::to_string_pretty(&preds)?),
    }
    Ok(())
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let preds = load_predictions(&args.pred)?;
    let golds = load_gold_answers(&args.gold)?;
    let mut result = evaluate(&preds, &golds)?;
    if !args.per_example {
        result.records.clear();
    }
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn load_script(path: &Path) -> Result<ScriptedTranslator> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let root: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut t = ScriptedTranslator::new();
    for (key, direction) in [("forward", Direction::Forward), ("back", Direction::Back)] {
        let Some(map) = root.get(key) else { continue };
        let map = map
            .as_object()
            .with_context(|| format!("{}: \"{key}\" is not an object", path.display()))?;
        for (src, outs) in map {
            let outs: Vec<String> = serde_json::from_value(outs.clone())
                .with_context(|| format!("{}: replies for {src:?}", path.display()))?;
            t = t.on(direction, src, outs);
        }
    }
    Ok(t)
}

fn augment(args: &AugmentArgs) -> Result<()> {
    let mut config = args.config.resolve()?;
    if let Some(k) = args.k {
        config.augment.beam = k;
    }
    if let Some(th) = args.threshold {
        config.augment.threshold = th;
    }
    if let Some(url) = &args.translator_url {
        config.augment.translator_url = Some(url.clone());
    }
    config.validate()?;
    echo_config(&config);
    let a = &config.augment;
    let translator: Box<dyn Translator> = match (&args.mock, &a.translator_url) {
        (Some(Some(script)), _) => Box::new(load_script(script)?),
        (Some(None), _) => Box::new(MockTranslator::with_default_synonyms()),
        (None, Some(url)) => Box::new(HttpTranslator::new(
            url.clone(),
            Duration::from_secs(a.timeout_secs),
            a.retries,
        )),
        (None, None) => bail!("no translator: pass --translator-url or --mock"),
    };
    let limits = LengthLimits {
        max_context: config.data.max_context,
        max_answer: config.data.max_answer,
    };
    let examples = parse_qa_json(&args.data, Split::Eval, limits)?;
    let opts = ParaphraseOptions {
        beam: a.beam,
        threshold: a.threshold,
        concurrency: a.concurrency,
        require_answer_paraphrase: args.require_answer,
    };
    let mut rng = ModelRng::seed_from_u64(config.seed);
    let out = augment_dataset(&examples, translator.as_ref(), &args.pivot, args.copies, &opts, &mut rng)?;
    write_qa_json(&args.out, &out, &format!("augmented-{}", args.pivot))?;
    eprintln!(
        "{} of {} documents paraphrased, wrote {}",
        out.len(),
        examples.len() * args.copies,
        args.out.display()
    );
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Augment(a) => augment(a),
        Command::Bench(a) => bench::run(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
