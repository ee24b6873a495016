pub mod datasets;
pub mod error;
pub mod explain;
pub mod image_model;
pub mod numerics;
pub mod text_model;
pub mod triage;

pub use error::{Error, Result};
