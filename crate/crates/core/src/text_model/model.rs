use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embedding::{embedding_average, EmbeddingTable};
use super::normalize::normalize;
use super::vocab::{fit_vocabulary, tfidf_vector, SparseVector, Vocabulary, DEFAULT_MIN_DF};
use crate::datasets::{FeedbackRecord, LabelTaxonomy};
use crate::numerics::{adam_step, cross_entropy, softmax, AdamState, OptimizerConfig, SeededRng};
use crate::{Error, Result};

const FORMAT: &str = "triage-text";
const VERSION: u32 = 1;

/// How comments become feature vectors. `EmbeddingAverage` carries the table
/// to average over.
#[derive(Debug, Clone, PartialEq)]
pub enum FeaturizerKind {
    Counts,
    Tfidf,
    EmbeddingAverage(EmbeddingTable),
}

/// A fitted featurizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Featurizer {
    Counts { vocabulary: Vocabulary },
    Tfidf { vocabulary: Vocabulary },
    EmbeddingAverage { table: EmbeddingTable },
}

impl Featurizer {
    pub fn fit<S: AsRef<str>>(kind: &FeaturizerKind, documents: &[Vec<S>], min_df: usize) -> Result<Self> {
        Ok(match kind {
            FeaturizerKind::Counts => Featurizer::Counts {
                vocabulary: fit_vocabulary(documents, min_df)?,
            },
            FeaturizerKind::Tfidf => Featurizer::Tfidf {
                vocabulary: fit_vocabulary(documents, min_df)?,
            },
            FeaturizerKind::EmbeddingAverage(table) => Featurizer::EmbeddingAverage { table: table.clone() },
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Featurizer::Counts { vocabulary } | Featurizer::Tfidf { vocabulary } => vocabulary.len(),
            Featurizer::EmbeddingAverage { table } => table.dim(),
        }
    }

    pub fn transform<S: AsRef<str>>(&self, tokens: &[S]) -> SparseVector {
        match self {
            Featurizer::Counts { vocabulary } => vocabulary.count_vector(tokens),
            Featurizer::Tfidf { vocabulary } => tfidf_vector(tokens, vocabulary),
            Featurizer::EmbeddingAverage { table } => SparseVector::from_dense(&embedding_average(tokens, table)),
        }
    }

    pub fn featurize(&self, comment: &str) -> SparseVector {
        self.transform(&normalize(comment))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextTrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub min_df: usize,
}

impl Default for TextTrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig {
                l2_penalty: 1e-4,
                ..OptimizerConfig::with_learning_rate(1e-2)
            },
            epochs: 20,
            batch_size: 32,
            seed: 0,
            min_df: DEFAULT_MIN_DF,
        }
    }
}

/// Multinomial logistic regression over a fitted featurizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextModel {
    taxonomy: LabelTaxonomy,
    featurizer: Featurizer,
    /// Row-major `classes × features`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextPrediction {
    pub class: String,
    pub class_index: usize,
    pub probabilities: Vec<f64>,
}

impl TextPrediction {
    pub fn confidence(&self) -> f64 {
        self.probabilities[self.class_index]
    }
}

/// Mean softmax cross-entropy of a linear model and its gradient, with
/// parameters laid out as `[weights (classes × dim, row-major), bias]`.
pub fn logistic_loss_grad(
    params: &[f64],
    classes: usize,
    dim: usize,
    features: &[&SparseVector],
    labels: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let expected = classes * dim + classes;
    if params.len() != expected {
        return Err(Error::LengthMismatch {
            what: "parameters",
            expected,
            actual: params.len(),
        });
    }
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: features.len(),
            actual: labels.len(),
        });
    }
    let mut grad = vec![0.0; expected];
    if features.is_empty() {
        return Ok((0.0, grad));
    }
    let (w, b) = params.split_at(classes * dim);
    let scale = 1.0 / features.len() as f64;
    let mut loss = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let p = softmax(&linear_scores(w, b, dim, x))?;
        loss += cross_entropy(&p, y)?;
        for c in 0..classes {
            let d = (p[c] - if c == y { 1.0 } else { 0.0 }) * scale;
            for (j, v) in x.iter() {
                grad[c * dim + j] += d * v;
            }
            grad[classes * dim + c] += d;
        }
    }
    Ok((loss * scale, grad))
}

fn linear_scores(w: &[f64], b: &[f64], dim: usize, x: &SparseVector) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(c, &bc)| bc + x.iter().map(|(j, v)| w[c * dim + j] * v).sum::<f64>())
        .collect()
}

/// Resolves each record's label to a class index, failing on unlabeled or
/// out-of-taxonomy records.
fn gold_indices(records: &[FeedbackRecord], taxonomy: &LabelTaxonomy) -> Result<Vec<usize>> {
    records
        .iter()
        .map(|r| {
            let label = r
                .label
                .as_deref()
                .ok_or_else(|| Error::Unlabeled { id: r.id.clone() })?;
            taxonomy
                .index_of(label)
                .ok_or_else(|| Error::UnknownClass(label.to_string()))
        })
        .collect()
}

/// Trains by mini-batch Adam on mean softmax cross-entropy. Labels are
/// resolved through `taxonomy`, so records carrying merged-away class names
/// are accepted.
pub fn train_text(
    records: &[FeedbackRecord],
    taxonomy: &LabelTaxonomy,
    kind: &FeaturizerKind,
    config: &TextTrainConfig,
) -> Result<TextModel> {
    config.optimizer.validate()?;
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
    }
    let labels = gold_indices(records, taxonomy)?;
    let mut seen = vec![false; taxonomy.len()];
    for &y in &labels {
        seen[y] = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::MissingClass(taxonomy.class_name(c).to_string()));
    }
    let docs: Vec<Vec<String>> = records.iter().map(|r| normalize(&r.comment)).collect();
    let featurizer = Featurizer::fit(kind, &docs, config.min_df)?;
    let features: Vec<SparseVector> = docs.iter().map(|d| featurizer.transform(d)).collect();
    let (classes, dim) = (taxonomy.len(), featurizer.dim());

    let mut params = vec![0.0; classes * dim + classes];
    let mut state = AdamState::new(params.len());
    let mut rng = SeededRng::new(config.seed);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let order = rng.permutation(records.len());
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xs: Vec<&SparseVector> = batch.iter().map(|&i| &features[i]).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, grad) = logistic_loss_grad(&params, classes, dim, &xs, &ys)?;
            total += loss * batch.len() as f64;
            adam_step(&mut params, &grad, &mut state, &config.optimizer)?;
        }
        epoch_losses.push(total / records.len() as f64);
    }
    let bias = params.split_off(classes * dim);
    Ok(TextModel {
        taxonomy: taxonomy.clone(),
        featurizer,
        weights: params,
        bias,
        epoch_losses,
    })
}

impl TextModel {
    pub fn from_parts(
        taxonomy: LabelTaxonomy,
        featurizer: Featurizer,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        taxonomy.validate()?;
        let (classes, dim) = (taxonomy.len(), featurizer.dim());
        if weights.len() != classes * dim {
            return Err(Error::LengthMismatch {
                what: "weights",
                expected: classes * dim,
                actual: weights.len(),
            });
        }
        if bias.len() != classes {
            return Err(Error::LengthMismatch {
                what: "bias",
                expected: classes,
                actual: bias.len(),
            });
        }
        Ok(Self {
            taxonomy,
            featurizer,
            weights,
            bias,
            epoch_losses: Vec::new(),
        })
    }

    pub fn taxonomy(&self) -> &LabelTaxonomy {
        &self.taxonomy
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Mean training loss of each epoch.
    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    pub fn logits(&self, features: &SparseVector) -> Vec<f64> {
        linear_scores(&self.weights, &self.bias, self.featurizer.dim(), features)
    }

    pub fn predict_features(&self, features: &SparseVector) -> TextPrediction {
        let probabilities = softmax(&self.logits(features)).expect("finite logits from a validated model");
        let class_index = argmax(&probabilities);
        TextPrediction {
            class: self.taxonomy.class_name(class_index).to_string(),
            class_index,
            probabilities,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Envelope<'a> {
            format: &'static str,
            version: u32,
            model: &'a TextModel,
        }
        Ok(serde_json::to_string(&Envelope {
            format: FORMAT,
            version: VERSION,
            model: self,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Envelope {
            format: String,
            version: u32,
            model: TextModel,
        }
        let e: Envelope = serde_json::from_str(text)?;
        if e.format != FORMAT || e.version != VERSION {
            return Err(Error::ModelFormat(format!(
                "expected {FORMAT} v{VERSION}, found {} v{}",
                e.format, e.version
            )));
        }
        let m = e.model;
        let epoch_losses = m.epoch_losses;
        let mut checked = Self::from_parts(m.taxonomy, m.featurizer, m.weights, m.bias)?;
        checked.epoch_losses = epoch_losses;
        Ok(checked)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// First index of the maximum.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict_text(model: &TextModel, comment: &str) -> TextPrediction {
    model.predict_features(&model.featurizer.featurize(comment))
}

/// Overall accuracy, per-class recall and the gold × predicted confusion
/// matrix. Recall is `None` for classes absent from the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    pub total: usize,
    pub accuracy: f64,
    pub per_class_recall: Vec<Option<f64>>,
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn from_pairs(classes: Vec<String>, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let k = classes.len();
        let mut confusion = vec![vec![0usize; k]; k];
        let mut total = 0;
        for (gold, predicted) in pairs {
            confusion[gold][predicted] += 1;
            total += 1;
        }
        if total == 0 {
            return Err(Error::EmptyTestSet);
        }
        let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
        let per_class_recall = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        Ok(Self {
            classes,
            total,
            accuracy: correct as f64 / total as f64,
            per_class_recall,
            confusion,
        })
    }
}

pub fn evaluate_text(model: &TextModel, records: &[FeedbackRecord]) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let gold = gold_indices(records, &model.taxonomy)?;
    let pairs = records
        .iter()
        .zip(gold)
        .map(|(r, g)| (g, predict_text(model, &r.comment).class_index));
    EvalReport::from_pairs(model.taxonomy.classes().to_vec(), pairs)
}

/// Collapses two classes into `"<a>/<b>"`.
pub fn merge_classes(taxonomy: &LabelTaxonomy, class_a: &str, class_b: &str) -> Result<LabelTaxonomy> {
    taxonomy.merge(class_a, class_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{DAMAGED, LATE_DELIVERY};
    use crate::numerics::grad_check;

    fn two_class() -> LabelTaxonomy {
        LabelTaxonomy::new(vec![DAMAGED.into(), LATE_DELIVERY.into()], Default::default()).unwrap()
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(3);
        let (classes, dim) = (3, 4);
        let xs: Vec<SparseVector> = (0..5)
            .map(|_| SparseVector::from_dense(&(0..dim).map(|_| rng.normal()).collect::<Vec<_>>()))
            .collect();
        let refs: Vec<&SparseVector> = xs.iter().collect();
        let ys = [0, 1, 2, 1, 0];
        let params: Vec<f64> = (0..classes * dim + classes).map(|_| 0.5 * rng.normal()).collect();
        let (_, grad) = logistic_loss_grad(&params, classes, dim, &refs, &ys).unwrap();
        let err = grad_check(
            |p| logistic_loss_grad(p, classes, dim, &refs, &ys).unwrap().0,
            &params,
            &grad,
            params.len(),
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let taxonomy = two_class();
        let docs = vec![vec!["a".to_string()]];
        let featurizer = Featurizer::fit(&FeaturizerKind::Counts, &docs, 1).unwrap();
        let model = TextModel::from_parts(taxonomy, featurizer, vec![1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let p = predict_text(&model, "a");
        assert_eq!(p.class_index, 0);
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn eval_report_arithmetic() {
        let classes = vec!["A".to_string(), "B".to_string()];
        let r = EvalReport::from_pairs(classes.clone(), [(0, 0), (0, 1)]).unwrap();
        assert_eq!(r.per_class_recall, [Some(0.5), None]);
        assert_eq!(r.confusion, [[1, 1], [0, 0]]);
        let always_zero = (0..8).flat_map(|c| std::iter::repeat_n((c, 0), 10));
        let names: Vec<String> = (0..8).map(|c| c.to_string()).collect();
        assert!((EvalReport::from_pairs(names, always_zero).unwrap().accuracy - 0.125).abs() < 1e-12);
        assert!(matches!(EvalReport::from_pairs(classes, []), Err(Error::EmptyTestSet)));
    }

    #[test]
    fn missing_class_is_named() {
        let records = vec![FeedbackRecord::text("1", "torn box", Some(DAMAGED))];
        let err = train_text(
            &records,
            &two_class(),
            &FeaturizerKind::Tfidf,
            &TextTrainConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains(LATE_DELIVERY), "{err}");
    }
}
