//! Portable-pixmap IO, augmentation, and a small convolutional network with
//! hand-written backward passes.

mod image;
pub mod layers;
mod network;
mod ppm;
mod train;
pub mod transform;

pub use image::Image;
pub use layers::ActShape;
pub use network::{CnnBuilder, CnnModel, Forward, Gradients, Layer, LayerSlot, Mode, OptimizerStates};
pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};
pub(crate) use train::argmax;
pub use train::{
    evaluate_cnn, labeled_for_task, train_cnn, train_cnn_model, CnnTrainConfig, EarlyStopping, ImageTask, LabeledImage,
    StopVerdict, TrainRun,
};
pub use transform::{augment, resize_bilinear, AugmentRanges, Augmentation};
