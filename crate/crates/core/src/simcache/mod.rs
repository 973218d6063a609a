//! Feature cache, per-epoch top-K similarity rows, windowed sampling
//! distributions, the adaptive pair gate and nearest-neighbor lookup.
//!
//! The flow for one query image `i` in epoch `e`:
//!
//! 1. [`FeatureCache::topk_similarities`] scores the fresh embedding against
//!    the cache and keeps the `K` best entries as a [`SparseSimRow`].
//! 2. The row goes into the image's [`SimWindow`]; once `w` epochs are stored,
//!    [`SimWindow::windowed_metric`] averages them over the union of supports.
//! 3. [`WindowedDistribution`] turns the averaged similarities into a
//!    temperature softmax, and [`WindowedDistribution::select_pair`] applies
//!    the gate: sample a partner only if `i` is its own most likely partner.

mod cache;
mod dump;
mod neighbors;
mod window;

pub use cache::{FeatureCache, ShardMap, ShardView, SparseSimRow};
pub use dump::{neighbor_records, write_neighbor_jsonl, CacheDump, NeighborFilter, NeighborRecord};
pub use neighbors::{nn_lookup, NNQueue, NeighborStore, NnHit};
pub use window::{PairDecision, PairKind, SimWindow, WindowedDistribution};
