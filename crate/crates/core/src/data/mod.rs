//! Labeled multi-domain image sets: synthetic generation, leave-one-domain-out
//! splits and on-disk storage.

mod split;
mod store;
mod synth;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use split::{split_ldo, Split};
pub use store::{load, save, save_with_layout, DatasetManifest, Layout, SampleEntry, MANIFEST_VERSION};
pub use synth::{generate, render_mask, DomainStyle, SyntheticSpec, SHAPE_NAMES};

/// Images with class labels and domain ids. Domain ids are evaluation
/// metadata; training code does not read them.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    /// `(len, C, H, W)` pixel values.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub domains: Vec<usize>,
    pub class_names: Vec<String>,
    pub domain_names: Vec<String>,
}

/// Borrowed view of one sample.
pub struct DomainSample<'a> {
    pub image: &'a [f32],
    pub class: usize,
    pub domain: usize,
}

impl DomainDataset {
    pub fn new(
        images: Tensor<f32>,
        labels: Vec<usize>,
        domains: Vec<usize>,
        class_names: Vec<String>,
        domain_names: Vec<String>,
    ) -> Result<Self> {
        let n = images.shape()[0];
        if labels.len() != n || domains.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{n} images but {} labels and {} domain ids",
                labels.len(),
                domains.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::InvalidArgument(format!("label {l} has no class name")));
        }
        if let Some(&d) = domains.iter().find(|&&d| d >= domain_names.len()) {
            return Err(Error::InvalidArgument(format!("domain {d} has no name")));
        }
        Ok(DomainDataset {
            images,
            labels,
            domains,
            class_names,
            domain_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_domains(&self) -> usize {
        self.domain_names.len()
    }

    /// `(C, H, W)` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let [_, c, h, w] = self.images.shape();
        [c, h, w]
    }

    pub fn sample(&self, i: usize) -> DomainSample<'_> {
        DomainSample {
            image: self.images.item(i),
            class: self.labels[i],
            domain: self.domains[i],
        }
    }

    /// Images of `indices` as one batch.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        self.images.select(indices)
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}
