//! Labeled examples and tasks.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
    /// Which task the example came from. Bookkeeping only; learners never read it.
    pub task_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub task_id: usize,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub classes_present: BTreeSet<usize>,
}

/// Packs examples into a feature matrix and a label vector.
pub fn to_batch<'a, I>(examples: I) -> Result<(Tensor, Vec<usize>)>
where
    I: IntoIterator<Item = &'a Example>,
{
    let mut rows: Vec<&[f64]> = Vec::new();
    let mut labels = Vec::new();
    for ex in examples {
        rows.push(&ex.features);
        labels.push(ex.label);
    }
    if rows.is_empty() {
        return Err(Error::Contract("empty batch"));
    }
    Ok((Tensor::from_rows(&rows)?, labels))
}
