use triage_core::datasets::synthetic::generate_text_records;
use triage_core::datasets::{
    filter_for_training, stratified_split, LabelTaxonomy, SyntheticConfig, DAMAGED, LATE_DELIVERY, NOT_RECEIVED,
};
use triage_core::text_model::{evaluate_text, predict_text, train_text, FeaturizerKind, TextModel, TextTrainConfig};

fn split(
    n: usize,
    seed: u64,
    overlap: f64,
) -> (
    Vec<triage_core::datasets::FeedbackRecord>,
    Vec<triage_core::datasets::FeedbackRecord>,
) {
    let records = generate_text_records(&SyntheticConfig {
        n_text: n,
        seed,
        overlap_late_not_received: overlap,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let s = stratified_split(&filter_for_training(&records), 0.2, seed).unwrap();
    (s.train, s.test)
}

#[test]
fn tfidf_model_separates_the_synthetic_classes() {
    let (train, test) = split(4000, 1, 0.0);
    let model = train_text(
        &train,
        &LabelTaxonomy::default(),
        &FeaturizerKind::Tfidf,
        &TextTrainConfig::default(),
    )
    .unwrap();
    let report = evaluate_text(&model, &test).unwrap();
    assert!(report.accuracy >= 0.95, "{}", report.accuracy);
    assert_eq!(predict_text(&model, "box arrived crushed and ripped").class, DAMAGED);
    let losses = model.epoch_losses();
    assert_eq!(losses.len(), 20);
    assert!(losses.last() < losses.first());

    let back = TextModel::from_json(&model.to_json().unwrap()).unwrap();
    assert_eq!(back, model);
}

#[test]
fn training_is_deterministic() {
    let (train, _) = split(800, 2, 0.0);
    let fit = || {
        train_text(
            &train,
            &LabelTaxonomy::default(),
            &FeaturizerKind::Tfidf,
            &TextTrainConfig::default(),
        )
        .unwrap()
        .to_json()
        .unwrap()
    };
    assert_eq!(fit(), fit());
}

#[test]
fn merging_overlapping_classes_helps() {
    let (train, test) = split(3000, 7, 0.5);
    let taxonomy = LabelTaxonomy::default();
    let config = TextTrainConfig::default();
    let full = evaluate_text(
        &train_text(&train, &taxonomy, &FeaturizerKind::Tfidf, &config).unwrap(),
        &test,
    )
    .unwrap();
    let merged_tax = taxonomy.merge(LATE_DELIVERY, NOT_RECEIVED).unwrap();
    let merged_model = train_text(
        &merged_tax.relabel(&train),
        &merged_tax,
        &FeaturizerKind::Tfidf,
        &config,
    )
    .unwrap();
    let merged = evaluate_text(&merged_model, &merged_tax.relabel(&test)).unwrap();
    assert_eq!(merged.classes.len(), 7);
    assert!(
        merged.accuracy > full.accuracy,
        "{} vs {}",
        merged.accuracy,
        full.accuracy
    );
}

#[test]
fn counts_featurizer_also_trains() {
    let (train, test) = split(1500, 3, 0.0);
    let model = train_text(
        &train,
        &LabelTaxonomy::default(),
        &FeaturizerKind::Counts,
        &TextTrainConfig::default(),
    )
    .unwrap();
    assert!(evaluate_text(&model, &test).unwrap().accuracy >= 0.9);
}
