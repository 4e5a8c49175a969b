//! Dataset ingestion, augmentation, and batching. Images are rank-3
//! tensors (C,H,W) with values in [0,1]; every stochastic step draws from an
//! explicit seeded generator.

mod augment;
mod batch;
mod fer;
mod synth;

pub use augment::{augment, hflip, resize_bilinear, rotate_bilinear, AugmentConfig};
pub use batch::{batches, stack, Batches};
pub use fer::{load_fer_csv, Split, FER_CLASSES, FER_SIDE};
pub use synth::synth_dataset;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One labeled image.
#[derive(Debug, Clone)]
pub struct Sample<E: Element> {
    pub image: Tensor<E>,
    pub label: usize,
}

impl<E: Element> Sample<E> {
    /// Accepts a (1,H,W) or (3,H,W) image with every value in [0,1].
    pub fn new(image: Tensor<E>, label: usize) -> Result<Sample<E>> {
        let dims = image.shape().dims();
        if dims.len() != 3 || (dims[0] != 1 && dims[0] != 3) {
            return Err(Error::Data(format!(
                "sample image must be (1,H,W) or (3,H,W), got {}",
                image.shape()
            )));
        }
        for v in image.to_vec() {
            let v = v.to_f64();
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Data(format!(
                    "sample pixel {v} outside [0,1]"
                )));
            }
        }
        Ok(Sample { image, label })
    }

    /// (C,H,W) of the image.
    pub fn dims(&self) -> (usize, usize, usize) {
        let d = self.image.shape().dims();
        (d[0], d[1], d[2])
    }
}
