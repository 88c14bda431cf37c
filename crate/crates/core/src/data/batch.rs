use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ImageRecord, IMAGE_SIZE, PIXELS};
use crate::autodiff::{Element, Tensor};
use crate::error::{Error, Result};

/// One shuffled pass over a dataset in fixed-size batches; the last batch may be short.
pub struct BatchIterator<'a> {
    records: &'a [ImageRecord],
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl<'a> BatchIterator<'a> {
    pub fn num_batches(&self) -> usize {
        self.records.len().div_ceil(self.batch_size)
    }

    /// The permutation this epoch visits.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl<'a> Iterator for BatchIterator<'a> {
    type Item = Vec<&'a ImageRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end]
            .iter()
            .map(|&i| &self.records[i])
            .collect();
        self.cursor = end;
        Some(batch)
    }
}

pub fn batches(records: &[ImageRecord], batch_size: usize, seed: u64) -> Result<BatchIterator<'_>> {
    if records.is_empty() {
        return Err(Error::Contract("cannot batch an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(BatchIterator {
        records,
        order,
        batch_size,
        cursor: 0,
    })
}

/// Stacks records into a `(n, 3, 64, 64)` tensor plus their 0/1 targets.
pub fn stack_records<T: Element>(records: &[&ImageRecord]) -> Result<(Tensor<T>, Vec<T>)> {
    let mut data = Vec::with_capacity(records.len() * PIXELS);
    for r in records {
        if r.pixels.len() != PIXELS {
            return Err(Error::Shape(format!(
                "record `{}` has {} values, expected {PIXELS}",
                r.origin,
                r.pixels.len()
            )));
        }
        data.extend(r.pixels.iter().map(|&v| T::from_f64(v as f64)));
    }
    let targets = records
        .iter()
        .map(|r| T::from_f64(r.label.target() as f64))
        .collect();
    Ok((
        Tensor::new([records.len(), 3, IMAGE_SIZE, IMAGE_SIZE], data)?,
        targets,
    ))
}
