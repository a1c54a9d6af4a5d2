//! Datasets: a synthetic cabin-scene generator, class-per-directory image
//! and clip loaders, and resizing/cropping helpers.

mod io;
mod preprocess;
mod synthetic;

use distilnas_tensor::Tensor;

use crate::error::{Error, Result};

pub use io::{export_dataset, load_clip_directory, load_image_directory, read_image, write_ppm};
pub use preprocess::{crop_offset, preprocess, resize_bilinear, sample_clip, sample_indices, Image, Mode};
pub use synthetic::{generate_synthetic, CueBox, SyntheticConfig, SyntheticData};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Labelled samples of one fixed shape with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    /// Per-sample shape, `[C, H, W]` or `[C, T, H, W]`.
    pub sample_shape: Vec<usize>,
    pub class_names: Vec<String>,
    pub images: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn validate(&self) -> Result<()> {
        let n: usize = self.sample_shape.iter().product();
        if self.images.len() != self.labels.len() {
            return Err(Error::Data("image and label counts differ".into()));
        }
        if let Some(i) = self.images.iter().position(|img| img.len() != n) {
            return Err(Error::Data(format!("sample {i} does not have shape {:?}", self.sample_shape)));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.num_classes()) {
            return Err(Error::Data(format!("label {l} out of range for {} classes", self.num_classes())));
        }
        Ok(())
    }

    /// Stacks the samples at `indices` into one `[B, ...]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        let per: usize = self.sample_shape.iter().product();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images[i]);
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::from_vec(&shape, data)?, labels))
    }
}

/// Splits `order` into consecutive batches of `batch_size`. A trailing
/// batch of a single sample is folded into the previous one, since batch
/// statistics of one sample carry no information.
pub fn batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").extend(last);
    }
    out
}
