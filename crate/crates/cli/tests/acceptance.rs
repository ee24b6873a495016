//! Acceptance report: one PASS/FAIL line per criterion. Exits non-zero if
//! any criterion fails.

mod common;
#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use triage_cli::run_cli;
use triage_core::datasets::synthetic::{generate_image_set, generate_text_records};
use triage_core::datasets::{
    filter_for_training, load_dataset, stratified_indices, stratified_split, FeedbackRecord, ImageLabel, ImageMix,
    LabelTaxonomy, SyntheticConfig, LATE_DELIVERY, NOT_RECEIVED,
};
use triage_core::explain::{argmax_in_box, grad_cam, localization_score};
use triage_core::image_model::{
    evaluate_cnn, labeled_for_task, train_cnn, train_cnn_model, CnnModel, CnnTrainConfig, EarlyStopping, ImageTask,
    LabeledImage, StopVerdict,
};
use triage_core::text_model::{evaluate_text, train_text, FeaturizerKind, TextModel, TextTrainConfig};
use triage_core::triage::{assess, CaseStore, ImageInput, LogicalClock, TriageConfig, TriageModels};

struct Report {
    failed: usize,
}

impl Report {
    fn check(&mut self, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn gradient_oracle(report: &mut Report) {
    let start = Instant::now();
    let layers = support::cnn_layer_errors(11, 400);
    let explanation = support::explanation_gradient_error(2, 400);
    let logistic = support::logistic_gradient_error(3);
    let elapsed = start.elapsed();
    let worst_cnn = layers.iter().map(|l| l.2).fold(explanation, f64::max);
    let mut kinds: Vec<&str> = layers.iter().map(|l| l.1).collect();
    kinds.dedup();
    report.check(
        "gradient oracle",
        worst_cnn < 1e-4 && logistic < 1e-7 && elapsed < Duration::from_secs(60),
        format!(
            "cnn max rel err {worst_cnn:.2e} over {} ({} layers plus the explanation activation), logistic {logistic:.2e}, {}",
            kinds.join("/"),
            layers.len(),
            secs(elapsed)
        ),
    );
}

fn conv_equivalence(report: &mut Report) {
    let deviation = support::conv_max_deviation(20, 5);
    report.check(
        "conv equivalence",
        deviation <= 1e-12,
        format!("max |vectorized - reference| = {deviation:.2e} over 20 random 8x8x3 cases"),
    );
}

fn text_split(n: usize, seed: u64, overlap: f64) -> (Vec<FeedbackRecord>, Vec<FeedbackRecord>) {
    let records = generate_text_records(&SyntheticConfig {
        n_text: n,
        seed,
        overlap_late_not_received: overlap,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let split = stratified_split(&filter_for_training(&records), 0.2, seed).unwrap();
    (split.train, split.test)
}

fn text_pipeline(report: &mut Report) -> TextModel {
    let start = Instant::now();
    let (train, test) = text_split(10_000, 1, 0.0);
    let model = train_text(
        &train,
        &LabelTaxonomy::default(),
        &FeaturizerKind::Tfidf,
        &TextTrainConfig::default(),
    )
    .unwrap();
    let accuracy = evaluate_text(&model, &test).unwrap().accuracy;
    let elapsed = start.elapsed();
    report.check(
        "text pipeline",
        accuracy >= 0.95 && elapsed < Duration::from_secs(120),
        format!(
            "tf-idf + logistic regression test accuracy {accuracy:.4} on {} held-out comments, 20 epochs, batch 32, {}",
            test.len(),
            secs(elapsed)
        ),
    );
    model
}

fn merge_experiment(report: &mut Report) {
    let taxonomy = LabelTaxonomy::default();
    let merged_tax = taxonomy.merge(LATE_DELIVERY, NOT_RECEIVED).unwrap();
    let config = TextTrainConfig::default();
    let mut details = Vec::new();
    let mut pass = true;
    for seed in [1, 2, 3] {
        let (train, test) = text_split(10_000, seed, 0.5);
        let full = train_text(&train, &taxonomy, &FeaturizerKind::Tfidf, &config).unwrap();
        let full_acc = evaluate_text(&full, &test).unwrap().accuracy;
        let merged = train_text(
            &merged_tax.relabel(&train),
            &merged_tax,
            &FeaturizerKind::Tfidf,
            &config,
        )
        .unwrap();
        let merged_acc = evaluate_text(&merged, &merged_tax.relabel(&test)).unwrap().accuracy;
        pass &= merged_acc > full_acc;
        details.push(format!("seed {seed}: 7-class {merged_acc:.4} vs 8-class {full_acc:.4}"));
    }
    report.check("merge experiment", pass, details.join("; "));
}

fn image_set(seed: u64, mix: ImageMix, task: ImageTask) -> (Vec<LabeledImage>, Vec<LabeledImage>) {
    let set = generate_image_set(&SyntheticConfig {
        n_text: 0,
        n_images: 1000,
        seed,
        image_mix: mix,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let examples = labeled_for_task(&set, task);
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let (train, test, _) = stratified_indices(&labels, 0.2, seed).unwrap();
    (
        train.iter().map(|&i| examples[i].clone()).collect(),
        test.iter().map(|&i| examples[i].clone()).collect(),
    )
}

/// Validation loss of `model` on the split `train_cnn_model` holds out.
fn validation_loss(model: &CnnModel, examples: &[LabeledImage], config: &CnnTrainConfig) -> f64 {
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let (_, val, _) = stratified_indices(&labels, config.val_fraction, config.seed).unwrap();
    let validation: Vec<LabeledImage> = val.iter().map(|&i| examples[i].clone()).collect();
    evaluate_cnn(model, &validation).unwrap().0
}

fn image_pipeline(report: &mut Report) -> (CnnModel, CnnModel) {
    let config = CnnTrainConfig::default();
    let start = Instant::now();
    let (rel_train, rel_test) = image_set(21, ImageMix::default(), ImageTask::Relevance);
    let (relevance, rel_run) = train_cnn(&rel_train, &config).unwrap();
    let rel_acc = evaluate_cnn(&relevance, &rel_test).unwrap().1;
    let (dmg_train, dmg_test) = image_set(22, ImageMix::damage_only(), ImageTask::Damage);
    let (damage, dmg_run) = train_cnn(&dmg_train, &config).unwrap();
    let dmg_acc = evaluate_cnn(&damage, &dmg_test).unwrap().1;
    let elapsed = start.elapsed();

    let trace = [1.0, 0.8, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9];
    let mut stopper = EarlyStopping::new(5);
    let stopped_after = trace
        .iter()
        .position(|&l| stopper.observe(l) == StopVerdict::Stop)
        .map(|i| i + 1);
    let trace_ok = stopped_after == Some(7) && stopper.best_epoch() == 2;
    let checkpoint_ok = [(&relevance, &rel_train, &rel_run), (&damage, &dmg_train, &dmg_run)]
        .iter()
        .all(|(m, ex, run)| {
            validation_loss(m, ex, &config) == run.best_validation_loss
                && run.validation_losses[run.best_epoch - 1] == run.best_validation_loss
                && (!run.stopped_early || run.validation_losses.len() == run.best_epoch + config.patience)
        });

    report.check(
        "image pipeline",
        rel_acc >= 0.90 && dmg_acc >= 0.85 && elapsed < Duration::from_secs(600) && trace_ok && checkpoint_ok,
        format!(
            "relevance {rel_acc:.4} on {} held-out (best epoch {} of {}), damage {dmg_acc:.4} on {} held-out \
             (best epoch {} of {}), {}; stopping trace stops after epoch {} with best epoch {}; \
             returned models reproduce their best validation loss: {checkpoint_ok}",
            rel_test.len(),
            rel_run.best_epoch,
            rel_run.validation_losses.len(),
            dmg_test.len(),
            dmg_run.best_epoch,
            dmg_run.validation_losses.len(),
            secs(elapsed),
            stopped_after.unwrap_or(0),
            stopper.best_epoch(),
        ),
    );
    (relevance, damage)
}

fn freezing(report: &mut Report) {
    let (train, _) = image_set(23, ImageMix::damage_only(), ImageTask::Damage);
    let train = &train[..200];
    let initial = CnnModel::default_architecture(3, 64, 64, 4).unwrap();
    let config = CnnTrainConfig {
        epochs: 3,
        freeze_k: Some(3),
        ..CnnTrainConfig::default()
    };
    let (trained, _) = train_cnn_model(initial.clone(), train, &config).unwrap();
    let trainable = trained.trainable_layers();
    let bits = |m: &CnnModel, i: usize| m.layer_params(i).iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    let frozen: Vec<usize> = initial
        .parameterized_layers()
        .into_iter()
        .filter(|i| !trainable.contains(i))
        .collect();
    let frozen_same = frozen.iter().all(|&i| bits(&initial, i) == bits(&trained, i));
    let trainable_moved = trainable.iter().all(|&i| bits(&initial, i) != bits(&trained, i));
    report.check(
        "freezing",
        frozen.len() == 3 && frozen_same && trainable_moved,
        format!(
            "{} frozen layers bit-identical after 3 epochs: {frozen_same}; {} trainable layers updated: {trainable_moved}",
            frozen.len(),
            trainable.len()
        ),
    );
}

fn localization(report: &mut Report, damage: &CnnModel) {
    let held_out: Vec<_> = generate_image_set(&SyntheticConfig {
        n_text: 0,
        n_images: 100,
        seed: 31,
        image_mix: ImageMix::damage_only(),
        ..SyntheticConfig::default()
    })
    .unwrap()
    .into_iter()
    .filter(|(r, _)| r.image_label == Some(ImageLabel::Damaged))
    .take(50)
    .collect();
    let mut hits = 0;
    let mut total_score = 0.0;
    for (record, image) in &held_out {
        let b = record.damage_box.unwrap();
        let heat = grad_cam(damage, image, 1).unwrap();
        hits += usize::from(argmax_in_box(&heat, &b));
        total_score += localization_score(&heat, &b).unwrap();
    }
    let n = held_out.len();
    let share = hits as f64 / n as f64;
    let mean = total_score / n as f64;
    report.check(
        "grad-cam localization",
        n == 50 && share >= 0.80 && mean >= 0.5,
        format!("argmax inside dilated box {hits}/{n} ({share:.2}), mean localization score {mean:.3}"),
    );
}

fn fusion(report: &mut Report) {
    let r = support::fusion_report();
    report.check(
        "fusion oracle",
        r.inputs == 17_640 && r.mismatches.is_empty() && r.ambiguous == 0 && r.monotonicity_violations.is_empty(),
        format!(
            "{} inputs, {} mismatches against the brute-force table, {} with more than one row, {} monotonicity \
             violations; {} inputs outside rows 1-6 resolved by the not-probative row",
            r.inputs,
            r.mismatches.len(),
            r.ambiguous,
            r.monotonicity_violations.len(),
            r.uncovered
        ),
    );
}

fn cli(args: &[&str]) -> i32 {
    let mut out = Vec::new();
    let mut err = Vec::new();
    run_cli(
        std::iter::once("triage").chain(args.iter().copied()),
        &mut out,
        &mut err,
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn same_tree(a: &Path, b: &Path) -> bool {
    let mut files = Vec::new();
    let mut stack = vec![a.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path.strip_prefix(a).unwrap().to_path_buf());
            }
        }
    }
    !files.is_empty()
        && files
            .iter()
            .all(|f| fs::read(a.join(f)).ok() == fs::read(b.join(f)).ok())
}

fn same_file(a: &Path, b: &Path, name: &str) -> bool {
    matches!((fs::read(a.join(name)), fs::read(b.join(name))), (Ok(x), Ok(y)) if x == y)
}

fn determinism(report: &mut Report) {
    let root = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let d = root.path().join(tag);
        let data = d.join("data");
        let codes = [
            cli(&[
                "gen-data",
                "--n-text",
                "1500",
                "--n-images",
                "80",
                "--seed",
                "17",
                "--out",
                p(&data),
            ]),
            cli(&[
                "train-text",
                "--data",
                p(&data.join("records.jsonl")),
                "--out",
                p(&d.join("text.json")),
            ]),
            cli(&[
                "train-image",
                "--data",
                p(&data.join("images.jsonl")),
                "--task",
                "relevance",
                "--epochs",
                "2",
                "--out",
                p(&d.join("relevance.json")),
            ]),
            cli(&[
                "train-image",
                "--data",
                p(&data.join("images.jsonl")),
                "--task",
                "damage",
                "--epochs",
                "2",
                "--out",
                p(&d.join("damage.json")),
            ]),
            cli(&[
                "triage",
                "--data",
                p(&data.join("images.jsonl")),
                "--text-model",
                p(&d.join("text.json")),
                "--relevance-model",
                p(&d.join("relevance.json")),
                "--damage-model",
                p(&d.join("damage.json")),
                "--data-dir",
                p(&d.join("store")),
            ]),
        ];
        (d, codes)
    };
    let (a, codes_a) = run("a");
    let (b, codes_b) = run("b");
    let ok = codes_a.iter().chain(&codes_b).all(|&c| c == 0);
    let stages = [
        ("gen-data", same_tree(&a.join("data"), &b.join("data"))),
        ("train-text", same_file(&a, &b, "text.json")),
        (
            "train-image",
            same_file(&a, &b, "relevance.json") && same_file(&a, &b, "damage.json"),
        ),
        ("triage", same_tree(&a.join("store"), &b.join("store"))),
    ];
    report.check(
        "determinism",
        ok && stages.iter().all(|s| s.1),
        format!(
            "exit codes all zero: {ok}; {}",
            stages
                .iter()
                .map(|(n, s)| format!("{n} identical: {s}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
}

fn fidelity(report: &mut Report, models: &TriageModels) {
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let api_mismatches = runtime.block_on(common::fidelity_mismatches(models, 20, 404));

    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    assert_eq!(
        cli(&[
            "gen-data",
            "--n-text",
            "10",
            "--n-images",
            "20",
            "--seed",
            "8",
            "--out",
            p(&data)
        ]),
        0
    );
    let paths = ["text.json", "relevance.json", "damage.json"].map(|f| root.path().join(f));
    models.text.save(&paths[0]).unwrap();
    models.relevance.save(&paths[1]).unwrap();
    models.damage.save(&paths[2]).unwrap();
    let images = data.join("images.jsonl");
    let served = root.path().join("cli-store");
    let code = cli(&[
        "triage",
        "--data",
        p(&images),
        "--text-model",
        p(&paths[0]),
        "--relevance-model",
        p(&paths[1]),
        "--damage-model",
        p(&paths[2]),
        "--data-dir",
        p(&served),
    ]);
    let direct = CaseStore::open(
        root.path().join("direct-store"),
        models.text.taxonomy().clone(),
        Arc::new(LogicalClock::default()),
    )
    .unwrap();
    for record in load_dataset(&images).unwrap() {
        let input = ImageInput::for_record(&record, &data);
        direct
            .create(assess(&record, input, models, &TriageConfig::default()).unwrap())
            .unwrap();
    }
    let cli_cases = CaseStore::open(
        &served,
        models.text.taxonomy().clone(),
        Arc::new(LogicalClock::default()),
    )
    .unwrap()
    .cases();
    let cli_ok = code == 0 && cli_cases == direct.cases();
    report.check(
        "api/cli fidelity",
        api_mismatches.is_empty() && cli_ok,
        format!(
            "{} of 20 randomized POST /api/feedback responses differ from the direct pipeline{}; \
             cli triage of 20 records equals the direct pipeline: {cli_ok}",
            api_mismatches.len(),
            api_mismatches
                .first()
                .map(|m| format!(" (first: {m})"))
                .unwrap_or_default()
        ),
    );
}

fn main() {
    let mut report = Report { failed: 0 };
    gradient_oracle(&mut report);
    conv_equivalence(&mut report);
    let text = text_pipeline(&mut report);
    merge_experiment(&mut report);
    let (relevance, damage) = image_pipeline(&mut report);
    freezing(&mut report);
    localization(&mut report, &damage);
    fusion(&mut report);
    determinism(&mut report);
    fidelity(
        &mut report,
        &TriageModels {
            text,
            relevance,
            damage,
        },
    );
    println!("{} of 10 criteria failed", report.failed);
    if report.failed > 0 {
        std::process::exit(1);
    }
}
