//! Comment normalization, featurization and the logistic-regression
//! comment classifier.

mod embedding;
mod model;
mod normalize;
mod vocab;

pub use embedding::{embedding_average, EmbeddingTable};
pub use model::{
    evaluate_text, logistic_loss_grad, merge_classes, predict_text, train_text, EvalReport, Featurizer, FeaturizerKind,
    TextModel, TextPrediction, TextTrainConfig,
};
pub use normalize::{normalize, repair_mojibake};
pub use vocab::{fit_vocabulary, tfidf_vector, SparseVector, Vocabulary, DEFAULT_MIN_DF};
