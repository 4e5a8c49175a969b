//! Deterministic batching: a seeded Fisher-Yates shuffle fixes the epoch
//! order, then samples are stacked into (B,C,H,W) tensors.

use rand::Rng;

use super::Sample;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::tensor::Tensor;

/// Iterator over shuffled batches of one epoch.
pub struct Batches<'a, E: Element> {
    samples: &'a [Sample<E>],
    order: Vec<usize>,
    batch_size: usize,
    drop_last: bool,
    pos: usize,
}

/// Shuffles with `shuffle_seed` (callers mix the epoch index into the seed)
/// and yields batches in order. All samples must share one image shape.
pub fn batches<E: Element>(
    samples: &[Sample<E>],
    batch_size: usize,
    shuffle_seed: u64,
    drop_last: bool,
) -> Result<Batches<'_, E>> {
    if samples.is_empty() {
        return Err(Error::Data("cannot batch an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::argument("batch size must be >= 1"));
    }
    let dims = samples[0].dims();
    for (i, s) in samples.iter().enumerate() {
        if s.dims() != dims {
            return Err(Error::Data(format!(
                "sample {i} has image shape {:?}, expected {:?}",
                s.dims(),
                dims
            )));
        }
    }

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = seeded_rng(shuffle_seed);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }

    Ok(Batches {
        samples,
        order,
        batch_size,
        drop_last,
        pos: 0,
    })
}

/// Stacks samples into one (B,C,H,W) tensor plus the matching label list.
/// All images must share one shape.
pub fn stack<E: Element>(samples: &[Sample<E>]) -> Result<(Tensor<E>, Vec<usize>)> {
    if samples.is_empty() {
        return Err(Error::Data("cannot stack an empty sample list".into()));
    }
    let (c, h, w) = samples[0].dims();
    let mut data = Vec::with_capacity(samples.len() * c * h * w);
    let mut labels = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        if s.dims() != (c, h, w) {
            return Err(Error::Data(format!(
                "sample {i} has image shape {:?}, expected {:?}",
                s.dims(),
                (c, h, w)
            )));
        }
        data.extend(s.image.to_vec());
        labels.push(s.label);
    }
    let images = Tensor::from_vec(&[samples.len(), c, h, w], data)?;
    Ok((images, labels))
}

impl<E: Element> Iterator for Batches<'_, E> {
    type Item = (Tensor<E>, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        let remaining = self.order.len() - self.pos;
        if remaining == 0 || (self.drop_last && remaining < self.batch_size) {
            return None;
        }
        let take = remaining.min(self.batch_size);
        let picked = &self.order[self.pos..self.pos + take];
        self.pos += take;

        let chunk: Vec<Sample<E>> = picked.iter().map(|&idx| self.samples[idx].clone()).collect();
        let batch = stack(&chunk).expect("batches() validated sample shapes");
        Some(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;

    fn dataset(n: usize) -> Vec<Sample<f32>> {
        let d = synth_dataset::<f32>(2, n.div_ceil(2), (4, 4), 0.1, 8).unwrap();
        d.into_iter().take(n).collect()
    }

    #[test]
    fn tail_batch_sizes() {
        let d = dataset(10);
        let sizes: Vec<usize> = batches(&d, 4, 0, false)
            .unwrap()
            .map(|(x, _)| x.shape().dims()[0])
            .collect();
        assert_eq!(sizes, vec![4, 4, 2]);

        let dropped: Vec<usize> = batches(&d, 4, 0, true)
            .unwrap()
            .map(|(x, _)| x.shape().dims()[0])
            .collect();
        assert_eq!(dropped, vec![4, 4]);
    }

    #[test]
    fn same_seed_same_batches() {
        let d = dataset(9);
        let a: Vec<Vec<usize>> = batches(&d, 4, 7, false).unwrap().map(|(_, l)| l).collect();
        let b: Vec<Vec<usize>> = batches(&d, 4, 7, false).unwrap().map(|(_, l)| l).collect();
        assert_eq!(a, b);

        let c: Vec<Vec<usize>> = batches(&d, 4, 8, false).unwrap().map(|(_, l)| l).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let d: Vec<Sample<f32>> = Vec::new();
        assert!(matches!(batches(&d, 4, 0, false), Err(Error::Data(_))));
    }

    #[test]
    fn mixed_shapes_are_rejected() {
        let mut d = dataset(4);
        d.push(Sample::new(Tensor::<f32>::zeros(&[1, 5, 4]).unwrap(), 0).unwrap());
        assert!(matches!(batches(&d, 2, 0, false), Err(Error::Data(_))));
    }
}
