use std::collections::VecDeque;

use super::cache::{FeatureCache, ShardView};
use crate::error::{Error, Result};
use crate::numcore::squared_distance;

/// Anything that can enumerate `(position, source image, embedding)` triples.
pub trait NeighborStore {
    fn dim(&self) -> usize;

    fn for_each_entry(&self, visit: &mut dyn FnMut(usize, usize, &[f64]));
}

impl NeighborStore for FeatureCache {
    fn dim(&self) -> usize {
        FeatureCache::dim(self)
    }

    fn for_each_entry(&self, visit: &mut dyn FnMut(usize, usize, &[f64])) {
        for i in 0..self.len() {
            if let Some(r) = self.row(i) {
                visit(i, i, r);
            }
        }
    }
}

impl NeighborStore for ShardView<'_> {
    fn dim(&self) -> usize {
        self.cache().dim()
    }

    fn for_each_entry(&self, visit: &mut dyn FnMut(usize, usize, &[f64])) {
        let cache = self.cache();
        for i in self.indices() {
            if let Some(r) = cache.row(i) {
                visit(i, i, r);
            }
        }
    }
}

/// Bounded FIFO of previously computed embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct NNQueue {
    capacity: usize,
    dim: usize,
    entries: VecDeque<(usize, Vec<f64>)>,
}

impl NNQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("queue", "capacity must be positive"));
        }
        Ok(Self {
            capacity,
            dim,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Enqueues an embedding, dropping the oldest entry when full.
    pub fn push(&mut self, source: usize, z: Vec<f64>) -> Result<()> {
        if z.len() != self.dim {
            return Err(Error::shape("queue embedding", self.dim, z.len()));
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((source, z));
        Ok(())
    }

    pub fn sources(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.0)
    }
}

impl NeighborStore for NNQueue {
    fn dim(&self) -> usize {
        self.dim
    }

    fn for_each_entry(&self, visit: &mut dyn FnMut(usize, usize, &[f64])) {
        for (pos, (src, z)) in self.entries.iter().enumerate() {
            visit(pos, *src, z);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnHit {
    /// Position inside the store (the row index for a cache).
    pub position: usize,
    pub source: usize,
    pub distance_sq: f64,
}

/// Euclidean nearest neighbor of `z`, skipping entries whose source equals
/// `exclude_source`. Ties go to the lowest position.
pub fn nn_lookup<S: NeighborStore + ?Sized>(store: &S, z: &[f64], exclude_source: Option<usize>) -> Result<NnHit> {
    if z.len() != store.dim() {
        return Err(Error::shape("nn_lookup query", store.dim(), z.len()));
    }
    let mut best: Option<NnHit> = None;
    store.for_each_entry(&mut |position, source, row| {
        if Some(source) == exclude_source {
            return;
        }
        let d = squared_distance(z, row);
        if best.map_or(true, |b| d < b.distance_sq) {
            best = Some(NnHit {
                position,
                source,
                distance_sq: d,
            });
        }
    });
    best.ok_or(Error::NoCandidates)
}
