use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::l2_normalize;
use crate::simcache::{PairDecision, WindowedDistribution};

/// One line of `metrics.jsonl`. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Fraction of pairs whose views come from different images.
    pub bootstrap_ratio: f64,
    /// Label agreement with the most probable windowed neighbor.
    pub nn_top1: Option<f64>,
    /// Label agreement with the second most probable windowed neighbor.
    pub second_nn_top1: Option<f64>,
    /// Mean per-dimension std of normalized probe embeddings; near 0 means collapse.
    pub embed_std: f64,
    /// Seconds spent in the epoch. Kept out of `metrics.jsonl` so reruns are byte-identical.
    #[serde(skip)]
    pub wall_clock: f64,
}

/// Pair-level fields of [`EpochMetrics`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMetrics {
    pub bootstrap_ratio: f64,
    pub nn_top1: Option<f64>,
    pub second_nn_top1: Option<f64>,
}

/// Streaming accumulator behind [`compute_epoch_metrics`].
#[derive(Debug, Clone, Default)]
pub struct PairStats {
    total: usize,
    cross: usize,
    nn_hits: usize,
    nn_count: usize,
    second_hits: usize,
    second_count: usize,
}

impl PairStats {
    pub fn record(&mut self, decision: &PairDecision, dist: Option<&WindowedDistribution>, labels: Option<&[usize]>) {
        self.total += 1;
        if decision.is_cross_image() {
            self.cross += 1;
        }
        let (Some(d), Some(labels)) = (dist, labels) else {
            return;
        };
        let i = decision.query;
        let first = d.argmax();
        self.nn_count += 1;
        if labels[first] == labels[i] {
            self.nn_hits += 1;
        }
        if let Some(second) = d.argmax_excluding(first) {
            self.second_count += 1;
            if labels[second] == labels[i] {
                self.second_hits += 1;
            }
        }
    }

    pub fn finish(&self) -> PairMetrics {
        let frac = |hits: usize, n: usize| (n > 0).then(|| hits as f64 / n as f64);
        PairMetrics {
            bootstrap_ratio: frac(self.cross, self.total).unwrap_or(0.0),
            nn_top1: frac(self.nn_hits, self.nn_count),
            second_nn_top1: frac(self.second_hits, self.second_count),
        }
    }
}

/// Pair metrics over aligned decisions and windowed distributions. Neighbor
/// agreement is `None` for unlabeled data or when no window is filled.
pub fn compute_epoch_metrics(
    decisions: &[PairDecision],
    labels: Option<&[usize]>,
    distributions: &[Option<WindowedDistribution>],
) -> Result<PairMetrics> {
    if decisions.len() != distributions.len() {
        return Err(Error::shape("compute_epoch_metrics", decisions.len(), distributions.len()));
    }
    let mut stats = PairStats::default();
    for (d, p) in decisions.iter().zip(distributions) {
        if let Some(l) = labels {
            if d.query >= l.len() {
                return Err(Error::IndexOutOfRange {
                    index: d.query,
                    len: l.len(),
                });
            }
        }
        stats.record(d, p.as_ref(), labels);
    }
    Ok(stats.finish())
}

/// Mean over dimensions of the population std of L2-normalized embeddings.
pub fn embedding_std<R: AsRef<[f64]>>(embeddings: &[R]) -> Result<f64> {
    let Some(first) = embeddings.first() else {
        return Ok(0.0);
    };
    let d = first.as_ref().len();
    let n = embeddings.len() as f64;
    let units = embeddings.iter().map(|e| l2_normalize(e.as_ref())).collect::<Result<Vec<_>>>()?;
    let mut mean = vec![0.0; d];
    for u in &units {
        for (m, v) in mean.iter_mut().zip(u) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for u in &units {
        for ((s, v), m) in var.iter_mut().zip(u).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let total: f64 = var.iter().map(|v| v.sqrt()).sum();
    Ok(total / d as f64)
}
