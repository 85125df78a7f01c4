//! The `onerestore` command line.
//!
//! Every subcommand takes `--config <file>` (flat `key = value` or JSON) and
//! `--seed`; explicit flags override config keys, which override defaults.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::{load_config, TrainConfig};
use super::data::{load_labelled, load_packs};
use super::eval::evaluate;
use super::models::{Embedder, Mode, Restorer};
use super::train::{embedder_samples, fit_embedder, train_restorer, RunOptions};
use crate::degrade::{synthesize_dataset, write_procedural_scenes, Image, SynthesisOptions};
use crate::descriptor::{evaluate_classifier, EmbedderConfig, WordVectors};
use crate::error::{Error, Result};
use crate::network::NetConfig;
use crate::numerics::Adam;
use crate::pipeline::checkpoint::Checkpoint;
use crate::scene::Scene;

#[derive(Parser, Debug)]
#[command(name = "onerestore", version, about = "Composite-degradation synthesis, training and restoration")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render degraded renditions of a directory of clear images.
    Synthesize(SynthArgs),
    /// Train the text and visual scene embedders.
    TrainEmbedder(EmbedArgs),
    /// Train the restoration network.
    TrainRestorer(RestorerArgs),
    /// Restore one image (manual mode with --text, automatic otherwise).
    Restore(RestoreArgs),
    /// Print the scene label and class probabilities of an image as JSON.
    Classify(ClassifyArgs),
    /// PSNR/SSIM of inputs and restorations on a paired dataset.
    Evaluate(EvalArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Config file with defaults for this subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of clear images.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Generate this many procedural clear scenes into `<out>/source` first.
    #[arg(long)]
    procedural: Option<usize>,
    /// Comma-separated categories, e.g. `low,haze+rain` (default: all eleven).
    #[arg(long)]
    categories: Option<String>,
    /// Renditions per clear image and category.
    #[arg(long)]
    count: Option<usize>,
    /// Working size `HxW`, or `native` to keep input sizes.
    #[arg(long)]
    size: Option<String>,
    #[arg(long)]
    depth_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthConfig {
    seed: u64,
    categories: String,
    count: usize,
    size: String,
    procedural: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            categories: String::new(),
            count: 1,
            size: "256x256".into(),
            procedural: 0,
        }
    }
}

#[derive(Args, Debug)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// `desk` or `paper`.
    #[arg(long)]
    preset: Option<String>,
    /// JSON-lines log path.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    train: TrainFlags,
    /// Dataset root containing `manifest.jsonl`.
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Held-out dataset to report accuracy on.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Word vectors in GloVe text format (default: hashed fallback vectors).
    #[arg(long)]
    words: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RestorerArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Embedder checkpoint supplying the descriptor table (default: untrained stub).
    #[arg(long)]
    embedder: Option<PathBuf>,
    /// Continue from a restorer checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    patch_stride: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct RestoreArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    restorer: Option<PathBuf>,
    /// Required in automatic mode.
    #[arg(long)]
    embedder: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Scene text such as `low+haze`; selects manual mode.
    #[arg(long)]
    text: Option<String>,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    embedder: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    restorer: Option<PathBuf>,
    /// Use automatic mode with this embedder instead of ground-truth labels.
    #[arg(long)]
    embedder: Option<PathBuf>,
    /// JSON report path (default: stdout).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// Checkpoint paths for the inference subcommands.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct InferConfig {
    seed: u64,
    restorer: Option<PathBuf>,
    embedder: Option<PathBuf>,
}

fn with_config<C: Serialize + DeserializeOwned>(base: C, common: &Common) -> Result<C> {
    match &common.config {
        Some(p) => load_config(p, &base),
        None => Ok(base),
    }
}

fn require_dir(p: &Path) -> Result<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "directory not found")))
    }
}

fn parse_size(s: &str) -> Result<Option<(usize, usize)>> {
    if s == "native" {
        return Ok(None);
    }
    let bad = || Error::Config(format!("size '{s}' is not HxW"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok(Some((h, w)))
}

fn parse_categories(s: &str) -> Result<Vec<Scene>> {
    if s.trim().is_empty() {
        return Ok(Scene::degraded().to_vec());
    }
    let mut out: Vec<Scene> = Vec::new();
    for part in s.split(',') {
        let scene: Scene = part.parse()?;
        if !out.contains(&scene) {
            out.push(scene);
        }
    }
    Ok(out)
}

fn synthesize(a: SynthArgs) -> Result<()> {
    let mut c = with_config(SynthConfig::default(), &a.common)?;
    c.seed = a.common.seed.unwrap_or(c.seed);
    c.categories = a.categories.unwrap_or(c.categories);
    c.count = a.count.unwrap_or(c.count);
    c.size = a.size.unwrap_or(c.size);
    c.procedural = a.procedural.unwrap_or(c.procedural);
    let size = parse_size(&c.size)?;
    let input = match (&a.input, c.procedural) {
        (Some(dir), _) => {
            require_dir(dir)?;
            dir.clone()
        }
        (None, n) if n > 0 => {
            let dir = a.out.join("source");
            let (h, w) = size.unwrap_or((256, 256));
            write_procedural_scenes(&dir, n, h, w, c.seed)?;
            dir
        }
        _ => return Err(Error::Config("give --input or --procedural".into())),
    };
    let mut opts = SynthesisOptions::new(input, &a.out);
    opts.categories = parse_categories(&c.categories)?;
    opts.per_image_count = c.count;
    opts.seed = c.seed;
    opts.size = size;
    opts.depth_dir = a.depth_dir;
    let recs = synthesize_dataset(&opts)?;
    println!("{} pairs written to {}", recs.len(), a.out.display());
    Ok(())
}

fn train_config(base: TrainConfig, common: &Common, f: &TrainFlags) -> Result<TrainConfig> {
    let mut c = with_config(base, common)?;
    c.seed = common.seed.unwrap_or(c.seed);
    c.epochs = f.epochs.unwrap_or(c.epochs);
    c.initial_lr = f.lr.unwrap_or(c.initial_lr);
    c.batch_size = f.batch_size.unwrap_or(c.batch_size);
    c.preset = f.preset.clone().unwrap_or(c.preset);
    c.validate()?;
    Ok(c)
}

fn unknown_preset(name: &str) -> Error {
    Error::Config(format!("unknown preset '{name}' (expected desk or paper)"))
}

fn train_embedder_cmd(a: EmbedArgs) -> Result<()> {
    require_dir(&a.data)?;
    let base = TrainConfig::embedder_for(a.train.preset.as_deref().unwrap_or("desk"));
    let c = train_config(base, &a.common, &a.train)?;
    let ecfg = EmbedderConfig::preset(&c.preset).ok_or_else(|| unknown_preset(&c.preset))?;
    let words = match &a.words {
        Some(p) => WordVectors::from_file(p)?,
        None => WordVectors::fallback(),
    };
    let size = ecfg.input_size;
    let items: Vec<(Image, Scene)> = load_labelled(&a.data, c.include_clear)?.into_iter().map(|(i, s, _)| (i, s)).collect();
    let samples = embedder_samples::<f32>(&items, size)?;
    let mut emb = Embedder::<f32>::new(ecfg, &words, c.seed)?;
    let logs = fit_embedder(&mut emb, &samples, &c, a.train.log.as_deref())?;
    if let Some(last) = logs.last() {
        println!("epoch {} loss {:.4} train accuracy {:.3}", last.epoch, last.loss, last.train_accuracy);
    }
    if let Some(test) = &a.test {
        require_dir(test)?;
        let items: Vec<(Image, Scene)> = load_labelled(test, c.include_clear)?.into_iter().map(|(i, s, _)| (i, s)).collect();
        let test = embedder_samples::<f32>(&items, size)?;
        let (acc, _) = evaluate_classifier(&emb.model, &emb.store, &emb.words(), &test)?;
        println!("test accuracy {acc:.4}");
    }
    emb.to_checkpoint(c.seed, serde_json::to_value(&c)?, None).save(&a.out)
}

fn train_restorer_cmd(a: RestorerArgs) -> Result<()> {
    require_dir(&a.data)?;
    let mut c = train_config(TrainConfig::restorer(), &a.common, &a.train)?;
    c.patch_size = a.patch_size.unwrap_or(c.patch_size);
    c.patch_stride = a.patch_stride.unwrap_or(c.patch_stride);
    c.max_steps = a.max_steps.unwrap_or(c.max_steps);
    c.validate()?;
    let (mut restorer, mut adam) = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::<f32>::load(p)?;
            let r = Restorer::from_checkpoint(&ck)?;
            let adam = ck.adam(&r.store)?.unwrap_or_else(|| Adam::new(0.9, 0.999));
            (r, adam)
        }
        None => {
            let net = NetConfig::preset(&c.preset).ok_or_else(|| unknown_preset(&c.preset))?;
            let table = match &a.embedder {
                Some(p) => Embedder::<f32>::load(p)?.text_table()?,
                None => {
                    log::warn!("no --embedder given; descriptors come from an untrained text embedder");
                    Embedder::<f32>::new(EmbedderConfig::desk(), &WordVectors::fallback(), c.seed)?.text_table()?
                }
            };
            (Restorer::new(net, table, c.seed)?, Adam::new(0.9, 0.999))
        }
    };
    let packs = load_packs(&a.data)?;
    let opts = RunOptions {
        log: a.train.log.clone(),
        checkpoint: Some(a.out.clone()),
        threads: a.threads,
        cache_negatives: false,
    };
    let logs = train_restorer(&mut restorer, &mut adam, &packs, &c, &opts)?;
    if let Some(last) = logs.last() {
        println!(
            "step {} loss {:.5} psnr {:.2} dB (input {:.2} dB)",
            last.step, last.loss.total, last.psnr, last.input_psnr
        );
    }
    Ok(())
}

fn infer_config(common: &Common) -> Result<InferConfig> {
    with_config(InferConfig::default(), common)
}

fn need(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::Config(format!("--{what} is required")))
}

fn restore_cmd(a: RestoreArgs) -> Result<()> {
    let c = infer_config(&a.common)?;
    let restorer = Restorer::<f32>::load(need(a.restorer.or(c.restorer), "restorer")?)?;
    let img = Image::load(&a.input)?;
    let embedder;
    let mode = match &a.text {
        Some(t) => Mode::Manual(t.parse()?),
        None => {
            embedder = Embedder::<f32>::load(need(a.embedder.or(c.embedder), "embedder")?)?;
            Mode::Automatic(&embedder)
        }
    };
    let out = restorer.restore(&img, mode)?;
    out.image.save(&a.output)?;
    println!("{} -> {} ({})", a.input.display(), a.output.display(), out.scene);
    Ok(())
}

fn classify_cmd(a: ClassifyArgs) -> Result<()> {
    let c = infer_config(&a.common)?;
    let emb = Embedder::<f32>::load(need(a.embedder.or(c.embedder), "embedder")?)?;
    let img = Image::load(&a.input)?;
    let cls = emb.classify(&img)?;
    let probs: serde_json::Map<String, serde_json::Value> = Scene::ALL
        .iter()
        .zip(cls.probabilities)
        .map(|(s, p)| (s.label().to_string(), p.into()))
        .collect();
    println!("{}", serde_json::json!({ "label": cls.scene.label(), "probabilities": probs }));
    Ok(())
}

fn evaluate_cmd(a: EvalArgs) -> Result<()> {
    require_dir(&a.data)?;
    let c = infer_config(&a.common)?;
    let restorer = Restorer::<f32>::load(need(a.restorer.or(c.restorer), "restorer")?)?;
    let embedder = a.embedder.or(c.embedder).map(Embedder::<f32>::load).transpose()?;
    let report = evaluate(&a.data, &restorer, embedder.as_ref())?;
    let json = serde_json::to_string_pretty(&report)?;
    match &a.report {
        Some(p) => std::fs::write(p, json).map_err(|e| Error::io(p, e))?,
        None => println!("{json}"),
    }
    if let Some(p) = &a.csv {
        std::fs::write(p, report.to_csv()).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

/// Runs the command line and returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.cmd {
        Command::Synthesize(a) => synthesize(a),
        Command::TrainEmbedder(a) => train_embedder_cmd(a),
        Command::TrainRestorer(a) => train_restorer_cmd(a),
        Command::Restore(a) => restore_cmd(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
