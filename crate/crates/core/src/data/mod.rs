//! Image ingestion, normalization, splitting, blending and batching.

mod batch;
mod ingest;
mod preprocess;
mod split;
mod store;

use serde::{Deserialize, Serialize};

pub use batch::{batches, stack_records, BatchIterator};
pub use ingest::{load_dataset_root, load_image_dir, LoadedImages, RawImage};
pub use preprocess::{
    center_crop_window, denormalize, normalize, preprocess, resize_bilinear, IMAGE_SIZE,
};
pub use split::{
    blend, split_dataset, train_val_split, BlendSpec, SplitSpec, Splits, TrainVal, BLEND_TOTAL,
};
pub use store::{manifest_hash, manifest_text, read_dataset, write_dataset};

/// Values per preprocessed image: three 64x64 planes.
pub const PIXELS: usize = 3 * IMAGE_SIZE * IMAGE_SIZE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Tumor,
    Healthy,
}

impl Label {
    pub const BOTH: [Label; 2] = [Label::Tumor, Label::Healthy];

    /// 1 for tumor (the positive class), 0 for healthy.
    pub fn target(self) -> f32 {
        match self {
            Label::Tumor => 1.0,
            Label::Healthy => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Tumor => "tumor",
            Label::Healthy => "healthy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tumor" => Some(Label::Tumor),
            "healthy" => Some(Label::Healthy),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Real => "real",
            Source::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "real" => Some(Source::Real),
            "synthetic" => Some(Source::Synthetic),
            _ => None,
        }
    }
}

/// One preprocessed `(3, 64, 64)` image in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub pixels: Vec<f32>,
    pub label: Label,
    pub source: Source,
    /// File path or generator tag the record came from.
    pub origin: String,
}

impl ImageRecord {
    pub fn mean_pixel(&self) -> f64 {
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len() as f64
    }
}
