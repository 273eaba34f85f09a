//! Reservoir-sampled replay memory.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Example;
use crate::error::{Error, Result};

/// Fixed-capacity memory where, after `seen` insert attempts, every attempted
/// item is present with probability `capacity / seen`.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Example>,
    seen: u64,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
            seen: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn items(&self) -> &[Example] {
        &self.items
    }

    pub fn insert(&mut self, item: Example) {
        let draw = if self.items.len() < self.capacity {
            0
        } else {
            self.rng.random_range(0..=self.seen)
        };
        self.insert_with_draw(item, draw);
    }

    /// Reservoir step with the random index supplied by the caller.
    ///
    /// `draw` must be uniform on `0..=seen` (the pre-increment count) and is
    /// only consulted once the buffer is full: the item replaces slot `draw`
    /// when `draw < capacity` and is discarded otherwise.
    pub fn insert_with_draw(&mut self, item: Example, draw: u64) {
        self.seen += 1;
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else if let Ok(slot) = usize::try_from(draw) {
            if slot < self.capacity {
                self.items[slot] = item;
            }
        }
    }

    /// `batch_size` items drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Example>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..batch_size)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }

    /// Drops all items and resets the seen counter.
    pub fn clear(&mut self) {
        self.items.clear();
        self.seen = 0;
    }

    /// Rebuilds a buffer from dumped contents.
    pub fn from_parts(capacity: usize, seen: u64, items: Vec<Example>, seed: u64) -> Result<Self> {
        let expected = usize::try_from(seen).map_or(capacity, |s| s.min(capacity));
        if items.len() != expected {
            return Err(Error::Invalid(alloc::format!(
                "buffer with capacity {capacity} and {seen} seen must hold {expected} items, got {}",
                items.len()
            )));
        }
        Ok(Self {
            capacity,
            items,
            seen,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}
