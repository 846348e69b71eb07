use rand::Rng;

use crate::codec::{CodecError, Decoder, Encoder};
use crate::env::{Observation, OBS_DIM};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: Observation,
    pub a: f64,
    pub r: f64,
    pub s_next: Observation,
    /// True only when the episode terminated at the goal; step-cap
    /// truncation keeps bootstrapping.
    pub done: bool,
}

/// Fixed-capacity ring of transitions; once full the oldest entry is overwritten.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

const REPLAY_MAGIC: &[u8; 8] = b"TRAYRPLB";
const REPLAY_VERSION: u32 = 1;

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
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

    /// Slot that the next [`store`](Self::store) writes to.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn store(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.items.get(slot)
    }

    /// Transitions from oldest to newest.
    pub fn iter_chronological(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity {
            0
        } else {
            self.cursor
        };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// Uniform slot indices, with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        assert!(!self.items.is_empty(), "sampling an empty buffer");
        (0..batch)
            .map(|_| rng.random_range(0..self.items.len()))
            .collect()
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.magic(REPLAY_MAGIC, REPLAY_VERSION);
        enc.usize(self.capacity);
        enc.usize(self.cursor);
        enc.usize(self.items.len());
        for t in &self.items {
            for &v in t.s.0.iter() {
                enc.f64(v);
            }
            enc.f64(t.a);
            enc.f64(t.r);
            for &v in t.s_next.0.iter() {
                enc.f64(v);
            }
            enc.bool(t.done);
        }
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        dec.expect_version(REPLAY_MAGIC, "replay buffer", REPLAY_VERSION)?;
        let capacity = dec.usize()?;
        let cursor = dec.usize()?;
        let n = dec.usize()?;
        if capacity == 0 || n > capacity || cursor >= capacity {
            return Err(CodecError::Invalid(format!(
                "replay capacity {capacity}, len {n}, cursor {cursor}"
            )));
        }
        let mut items = Vec::with_capacity(n);
        for _ in 0..n {
            let mut s = [0.0; OBS_DIM];
            for v in &mut s {
                *v = dec.f64()?;
            }
            let a = dec.f64()?;
            let r = dec.f64()?;
            let mut s_next = [0.0; OBS_DIM];
            for v in &mut s_next {
                *v = dec.f64()?;
            }
            let done = dec.bool()?;
            items.push(Transition {
                s: Observation(s),
                a,
                r,
                s_next: Observation(s_next),
                done,
            });
        }
        Ok(Self {
            capacity,
            items,
            cursor,
        })
    }
}
