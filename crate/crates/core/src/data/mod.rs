//! Labeled image datasets: ingestion, splitting, synthetic generation and
//! deterministic batching.

mod batch;
mod image;
mod split;
mod synthetic;

pub use self::batch::{batches, epoch_order, Batch};
pub use self::image::{
    bilinear_resize, decode_image_file, load_dataset, load_image_dataset, DatasetLayout, ImageOptions,
};
pub use self::split::{split_dataset, SplitSpec, Splits};
pub use self::synthetic::{make_synthetic, write_lct1_dataset, SYNTHETIC_CLASSES};

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Sample {
    /// `[C, H, W]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub label: usize,
    pub source_id: String,
}

/// An immutable labeled image collection. `label` indexes `class_names`.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<Sample>,
    class_names: Vec<String>,
    channels: usize,
    resolution: (usize, usize),
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, class_names: Vec<String>, channels: usize, resolution: (usize, usize)) -> Result<Self> {
        let want = [channels, resolution.0, resolution.1];
        for s in &samples {
            if s.label >= class_names.len() {
                return Err(Error::Validation(format!(
                    "{}: label {} outside {} classes",
                    s.source_id,
                    s.label,
                    class_names.len()
                )));
            }
            if s.image.dims() != want {
                return Err(Error::Validation(format!(
                    "{}: image shape {} differs from dataset shape {want:?}",
                    s.source_id,
                    s.image.shape()
                )));
            }
        }
        Ok(Dataset {
            samples,
            class_names,
            channels,
            resolution,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.resolution
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn source_ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.source_id.as_str()).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// New dataset holding the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            class_names: self.class_names.clone(),
            channels: self.channels,
            resolution: self.resolution,
        }
    }

    /// Stacks the samples at `indices` into `[N, C, H, W]`.
    pub fn stack(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let (h, w) = self.resolution;
        let mut data = Vec::with_capacity(indices.len() * self.channels * h * w);
        for &i in indices {
            data.extend_from_slice(self.samples[i].image.data());
        }
        Tensor::from_vec(vec![indices.len(), self.channels, h, w], data)
    }
}

/// Writes `source_id,class_name,label,split` rows for each named split.
pub fn write_manifest(path: impl AsRef<Path>, splits: &[(&str, &Dataset)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(["source_id", "class_name", "label", "split"]).map_err(err)?;
    for (split, ds) in splits {
        for s in ds.samples() {
            let label = s.label.to_string();
            w.write_record([s.source_id.as_str(), ds.class_names()[s.label].as_str(), label.as_str(), split])
                .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
