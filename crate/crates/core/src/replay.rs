//! Fixed-capacity FIFO replay storage with uniform sampling.

use rand::Rng;
use thiserror::Error;

use crate::env::OBS_DIM;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("replay buffer holds {have} transitions, {need} required")]
pub struct BufferTooSmall {
    pub have: usize,
    pub need: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: [f64; OBS_DIM],
    /// Raw action in [−1, 1], before decoding.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: [f64; OBS_DIM],
    /// True only for physical failures; time-limit ends bootstrap.
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Next slot to overwrite once full.
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be > 0");
        Self { capacity, items: Vec::new(), cursor: 0 }
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

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Stored transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.cursor);
        older.iter().chain(newer)
    }

    /// Uniform storage indices, drawn with replacement; resolve them with
    /// [`ReplayBuffer::slot`].
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>, BufferTooSmall> {
        if self.items.len() < n || self.items.is_empty() {
            return Err(BufferTooSmall { have: self.items.len(), need: n.max(1) });
        }
        Ok((0..n).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn slot(&self, index: usize) -> &Transition {
        &self.items[index]
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>, BufferTooSmall> {
        Ok(self.sample_indices(n, rng)?.into_iter().map(|i| &self.items[i]).collect())
    }
}
