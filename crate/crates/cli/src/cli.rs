//! Command-line entry points.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use triage_core::datasets::synthetic::generate_synthetic;
use triage_core::datasets::{
    filter_for_training, load_dataset, load_dataset_with, save_dataset, stratified_indices, stratified_split,
    FeedbackRecord, ImageLabel, ImageMix, LabelTaxonomy, SyntheticConfig,
};
use triage_core::explain::{grad_cam, overlay, DEFAULT_OVERLAY_ALPHA};
use triage_core::image_model::{
    evaluate_cnn, read_ppm, resize_bilinear, train_cnn, write_ppm, ActShape, CnnModel, CnnTrainConfig, Image,
    ImageTask, LabeledImage, Mode,
};
use triage_core::numerics::OptimizerConfig;
use triage_core::text_model::{evaluate_text, train_text, EmbeddingTable, FeaturizerKind, TextModel, TextTrainConfig};
use triage_core::triage::{
    assess, CaseState, CaseStore, Clock, ImageInput, LogicalClock, SystemClock, TriageConfig, TriageModels,
};
use triage_core::Error;

use crate::api::{self, AppState, ServiceConfig};

pub const DATA_DIR_ENV: &str = "TRIAGE_DATA_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "triage",
    version,
    about = "Delivery-issue triage: train models, triage claims, serve the analyst API"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic text corpus and image set.
    GenData(GenDataArgs),
    /// Train the comment classifier.
    TrainText(TrainTextArgs),
    /// Evaluate a comment classifier on a labeled dataset.
    EvalText(EvalTextArgs),
    /// Train a relevance or damage image classifier.
    TrainImage(TrainImageArgs),
    /// Evaluate an image classifier on a labeled image dataset.
    EvalImage(EvalImageArgs),
    /// Grad-CAM heatmap and overlay for one image.
    Explain(ExplainArgs),
    /// Run every record of a dataset through the pipeline into a case store.
    Triage(TriageArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Case counts of a store.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 1000)]
    pub n_text: usize,
    #[arg(long, default_value_t = 200)]
    pub n_images: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Probability that late / not-received comments use a shared lexicon.
    #[arg(long, default_value_t = 0.0)]
    pub overlap: f64,
    #[arg(long, default_value_t = 0.02)]
    pub typo_rate: f64,
    /// Only package photos (half damaged), no irrelevant images.
    #[arg(long)]
    pub damage_only: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FeaturizerArg {
    Counts,
    Tfidf,
    Embedding,
}

#[derive(Debug, Args)]
pub struct TrainTextArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "tfidf")]
    pub featurizer: FeaturizerArg,
    /// Word-vector table for the embedding featurizer.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub min_df: usize,
    /// Held-out share; 0 trains on everything.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Where to write the held-out records.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    /// Merge two classes before training.
    #[arg(long, num_args = 2, value_names = ["CLASS_A", "CLASS_B"])]
    pub merge: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct EvalTextArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Relevance,
    Damage,
}

impl From<TaskArg> for ImageTask {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Relevance => ImageTask::Relevance,
            TaskArg::Damage => ImageTask::Damage,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainImageArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    /// Leave only the last K parameterized layers trainable.
    #[arg(long)]
    pub freeze_k: Option<usize>,
    /// Held-out share evaluated after training; 0 disables.
    #[arg(long, default_value_t = 0.0)]
    pub test_fraction: f64,
}

#[derive(Debug, Args)]
pub struct EvalImageArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskArg,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Overlay output (P6).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional grayscale heatmap output (P5).
    #[arg(long)]
    pub heatmap_out: Option<PathBuf>,
    /// Class to explain; defaults to the predicted class.
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_OVERLAY_ALPHA)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub text_model: PathBuf,
    #[arg(long)]
    pub relevance_model: PathBuf,
    #[arg(long)]
    pub damage_model: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    pub tau_text: f64,
    #[arg(long, default_value_t = 0.7)]
    pub tau_image: f64,
}

impl ModelArgs {
    fn triage_config(&self) -> TriageConfig {
        TriageConfig {
            tau_text: self.tau_text,
            tau_image: self.tau_image,
            ..TriageConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TriageArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long, env = DATA_DIR_ENV)]
    pub data_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long, env = DATA_DIR_ENV)]
    pub data_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long, env = DATA_DIR_ENV)]
    pub data_dir: PathBuf,
}

/// Exit status classes.
#[derive(Debug)]
pub enum CliError {
    /// Bad input: arguments, files, data. Exit code 1.
    User(String),
    /// A bug or numeric failure. Exit code 2.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::User(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_)
            | Error::StaleCache(_)
            | Error::EmptyLogits
            | Error::IndexOutOfRange { .. }
            | Error::LengthMismatch { .. } => CliError::Internal(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn user(msg: impl Into<String>) -> CliError {
    CliError::User(msg.into())
}

/// Parses `args` (program name first), runs the command, and returns the
/// exit code. Progress goes to `err`; the last line written to `out` is a
/// JSON summary.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let _ = write!(err, "{}", e.render());
            let _ = writeln!(
                out,
                "{}",
                json!({ "ok": false, "error": e.kind().to_string(), "exit_code": 1 })
            );
            return 1;
        }
    };
    match run(cli, out, err) {
        Ok(summary) => {
            let _ = writeln!(out, "{summary}");
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            let _ = writeln!(
                out,
                "{}",
                json!({ "ok": false, "error": e.message(), "exit_code": e.exit_code() })
            );
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<Value> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::TrainText(a) => train_text_cmd(a),
        Command::EvalText(a) => eval_text_cmd(a, out),
        Command::TrainImage(a) => train_image_cmd(a, err),
        Command::EvalImage(a) => eval_image_cmd(a),
        Command::Explain(a) => explain_cmd(a),
        Command::Triage(a) => triage_cmd(a),
        Command::Serve(a) => serve_cmd(a, err),
        Command::Stats(a) => stats_cmd(a),
    }
}

fn gen_data(a: GenDataArgs) -> CliResult<Value> {
    let config = SyntheticConfig {
        n_text: a.n_text,
        n_images: a.n_images,
        seed: a.seed,
        typo_rate: a.typo_rate,
        overlap_late_not_received: a.overlap,
        image_mix: if a.damage_only {
            ImageMix::damage_only()
        } else {
            ImageMix::default()
        },
        ..SyntheticConfig::default()
    };
    let corpus = generate_synthetic(&config, &a.out)?;
    let count = |l: ImageLabel| corpus.image_records.iter().filter(|r| r.image_label == Some(l)).count();
    Ok(json!({
        "ok": true,
        "command": "gen-data",
        "out": a.out,
        "text_records": corpus.text_records.len(),
        "image_records": corpus.image_records.len(),
        "images": {
            "irrelevant": count(ImageLabel::Irrelevant),
            "damaged": count(ImageLabel::Damaged),
            "not_damaged": count(ImageLabel::NotDamaged),
        },
    }))
}

fn train_text_cmd(a: TrainTextArgs) -> CliResult<Value> {
    let kind = match a.featurizer {
        FeaturizerArg::Counts => FeaturizerKind::Counts,
        FeaturizerArg::Tfidf => FeaturizerKind::Tfidf,
        FeaturizerArg::Embedding => {
            let path = a
                .embeddings
                .as_ref()
                .ok_or_else(|| user("--featurizer embedding needs --embeddings"))?;
            FeaturizerKind::EmbeddingAverage(EmbeddingTable::load(path)?)
        }
    };
    let mut taxonomy = LabelTaxonomy::default();
    let mut records = filter_for_training(&load_dataset(&a.data)?);
    if let Some(pair) = &a.merge {
        taxonomy = taxonomy.merge(&pair[0], &pair[1])?;
        records = taxonomy.relabel(&records);
    }
    let (train, test) = if a.test_fraction > 0.0 {
        let split = stratified_split(&records, a.test_fraction, a.seed)?;
        (split.train, split.test)
    } else {
        (records, Vec::new())
    };
    let config = TextTrainConfig {
        optimizer: OptimizerConfig {
            l2_penalty: a.l2,
            ..OptimizerConfig::with_learning_rate(a.lr)
        },
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        min_df: a.min_df,
    };
    let model = train_text(&train, &taxonomy, &kind, &config)?;
    model.save(&a.out)?;
    if let Some(path) = &a.test_out {
        save_dataset(&test, path)?;
    }
    let test_accuracy = if test.is_empty() {
        None
    } else {
        Some(evaluate_text(&model, &test)?.accuracy)
    };
    Ok(json!({
        "ok": true,
        "command": "train-text",
        "model": a.out,
        "classes": taxonomy.classes(),
        "train_records": train.len(),
        "test_records": test.len(),
        "test_accuracy": test_accuracy,
        "epoch_losses": model.epoch_losses(),
    }))
}

fn eval_text_cmd(a: EvalTextArgs, out: &mut dyn Write) -> CliResult<Value> {
    let model = TextModel::load(&a.model)?;
    let records = filter_for_training(&load_dataset_with(&a.data, model.taxonomy())?);
    let report = evaluate_text(&model, &records)?;
    let _ = writeln!(
        out,
        "overall accuracy {:.4} on {} records",
        report.accuracy, report.total
    );
    for (class, recall) in report.classes.iter().zip(&report.per_class_recall) {
        let line = match recall {
            Some(r) => format!("  {class}: recall {r:.4}"),
            None => format!("  {class}: no test records"),
        };
        let _ = writeln!(out, "{line}");
    }
    Ok(json!({ "ok": true, "command": "eval-text", "report": report }))
}

/// Loads every image of an image dataset; paths resolve against the
/// dataset file's directory.
pub fn load_image_records(path: &Path) -> CliResult<Vec<(FeedbackRecord, Image)>> {
    let base = path.parent().unwrap_or(Path::new("."));
    load_dataset(path)?
        .into_iter()
        .filter(|r| r.image_path.is_some())
        .map(|r| {
            let img = read_ppm(base.join(r.image_path.as_deref().unwrap_or_default()))?;
            Ok((r, img))
        })
        .collect()
}

fn labeled(records: &[(FeedbackRecord, Image)], task: ImageTask) -> Vec<LabeledImage> {
    triage_core::image_model::labeled_for_task(records, task)
}

fn train_image_cmd(a: TrainImageArgs, err: &mut dyn Write) -> CliResult<Value> {
    let task = ImageTask::from(a.task);
    let examples = labeled(&load_image_records(&a.data)?, task);
    if examples.is_empty() {
        return Err(user(format!(
            "{} has no images labeled for this task",
            a.data.display()
        )));
    }
    let (train, test): (Vec<LabeledImage>, Vec<LabeledImage>) = if a.test_fraction > 0.0 {
        let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
        let (tr, te, _) = stratified_indices(&labels, a.test_fraction, a.seed)?;
        (
            tr.iter().map(|&i| examples[i].clone()).collect(),
            te.iter().map(|&i| examples[i].clone()).collect(),
        )
    } else {
        (examples, Vec::new())
    };
    let config = CnnTrainConfig {
        epochs: a.epochs,
        patience: a.patience,
        batch_size: a.batch_size,
        optimizer: OptimizerConfig::with_learning_rate(a.lr),
        val_fraction: a.val_fraction,
        seed: a.seed,
        freeze_k: a.freeze_k,
        ..CnnTrainConfig::default()
    };
    let _ = writeln!(err, "training {task:?} model on {} images", train.len());
    let (model, run) = train_cnn(&train, &config)?;
    model.save(&a.out)?;
    let test_metrics = if test.is_empty() {
        None
    } else {
        let (loss, accuracy) = evaluate_cnn(&model, &test)?;
        Some(json!({ "loss": loss, "accuracy": accuracy, "n": test.len() }))
    };
    Ok(json!({
        "ok": true,
        "command": "train-image",
        "task": task,
        "model": a.out,
        "train_images": train.len(),
        "run": run,
        "test": test_metrics,
    }))
}

fn eval_image_cmd(a: EvalImageArgs) -> CliResult<Value> {
    let model = CnnModel::load(&a.model)?;
    let examples = labeled(&load_image_records(&a.data)?, a.task.into());
    let (loss, accuracy) = evaluate_cnn(&model, &examples)?;
    Ok(json!({ "ok": true, "command": "eval-image", "loss": loss, "accuracy": accuracy, "n": examples.len() }))
}

fn fit_image(image: &Image, model: &CnnModel) -> CliResult<Image> {
    let ActShape::Spatial {
        channels,
        height,
        width,
    } = model.input_shape()
    else {
        return Err(CliError::Internal("model input is not spatial".into()));
    };
    let img = if channels == 3 { image.to_rgb() } else { image.clone() };
    if img.channels() != channels {
        return Err(user(format!("model expects {channels}-channel images")));
    }
    if (img.width(), img.height()) == (width, height) {
        Ok(img)
    } else {
        Ok(resize_bilinear(&img, width, height)?)
    }
}

fn explain_cmd(a: ExplainArgs) -> CliResult<Value> {
    let model = CnnModel::load(&a.model)?;
    let image = fit_image(&read_ppm(&a.image)?, &model)?;
    let probabilities = model.forward(&[&image], Mode::Eval)?.probabilities().remove(0);
    let predicted = probabilities
        .iter()
        .enumerate()
        .fold(0, |best, (i, p)| if *p > probabilities[best] { i } else { best });
    let class = a.class.unwrap_or(predicted);
    let heatmap = grad_cam(&model, &image, class)?;
    write_ppm(&overlay(&image, &heatmap, a.alpha)?, &a.out)?;
    if let Some(p) = &a.heatmap_out {
        heatmap.write_pgm(p)?;
    }
    let (x, y) = heatmap.argmax();
    Ok(json!({
        "ok": true,
        "command": "explain",
        "class": class,
        "probabilities": probabilities,
        "heatmap_argmax": [x, y],
        "overlay": a.out,
    }))
}

fn load_models(m: &ModelArgs) -> CliResult<TriageModels> {
    Ok(TriageModels {
        text: TextModel::load(&m.text_model)?,
        relevance: CnnModel::load(&m.relevance_model)?,
        damage: CnnModel::load(&m.damage_model)?,
    })
}

fn triage_cmd(a: TriageArgs) -> CliResult<Value> {
    let models = load_models(&a.models)?;
    let config = a.models.triage_config();
    config.validate(models.text.taxonomy())?;
    let records = load_dataset_with(&a.data, models.text.taxonomy())?;
    let base = a.data.parent().unwrap_or(Path::new("."));
    let clock: Arc<dyn Clock> = Arc::new(LogicalClock::default());
    let store = CaseStore::open(&a.data_dir, models.text.taxonomy().clone(), clock)?;
    let mut warnings = 0;
    for record in &records {
        let image = ImageInput::for_record(record, base);
        let case = store.create(assess(record, image, &models, &config)?)?;
        warnings += case.warnings.len();
    }
    let stats = store.stats();
    Ok(json!({
        "ok": true,
        "command": "triage",
        "records": records.len(),
        "warnings": warnings,
        "by_state": stats.by_state,
        "journal": a.data_dir.join(triage_core::triage::JOURNAL_FILE),
    }))
}

fn serve_cmd(a: ServeArgs, err: &mut dyn Write) -> CliResult<Value> {
    let config = ServiceConfig {
        addr: a.addr,
        data_dir: a.data_dir.clone(),
        text_model: a.models.text_model.clone(),
        relevance_model: a.models.relevance_model.clone(),
        damage_model: a.models.damage_model.clone(),
        triage: a.models.triage_config(),
    };
    let state = Arc::new(AppState::load(&config, Arc::new(SystemClock))?);
    let _ = writeln!(err, "serving on http://{}", config.addr);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
    runtime
        .block_on(api::serve(state.clone(), config.addr))
        .map_err(|e| user(format!("cannot serve on {}: {e}", config.addr)))?;
    Ok(json!({ "ok": true, "command": "serve", "cases": state.store.len() }))
}

fn stats_cmd(a: StatsArgs) -> CliResult<Value> {
    if !a.data_dir.join(triage_core::triage::JOURNAL_FILE).exists() {
        return Err(user(format!("{} holds no case journal", a.data_dir.display())));
    }
    let store = CaseStore::open(&a.data_dir, LabelTaxonomy::default(), Arc::new(LogicalClock::default()))?;
    let stats = store.stats();
    let escalated = stats.by_state.get(CaseState::Escalated.as_str()).copied().unwrap_or(0);
    Ok(json!({ "ok": true, "command": "stats", "stats": stats, "escalated": escalated }))
}
