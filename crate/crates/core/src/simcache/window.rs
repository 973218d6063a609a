//! Per-image similarity history and the adaptive pair gate.

use std::collections::{BTreeMap, VecDeque};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cache::SparseSimRow;
use crate::error::{Error, Result};

/// Ring buffer of the last `capacity` similarity rows of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimWindow {
    capacity: usize,
    rows: VecDeque<SparseSimRow>,
}

impl SimWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("window", "window size must be at least 1"));
        }
        Ok(Self {
            capacity,
            rows: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_filled(&self) -> bool {
        self.rows.len() == self.capacity
    }

    pub fn rows(&self) -> impl Iterator<Item = &SparseSimRow> {
        self.rows.iter()
    }

    pub fn last_epoch(&self) -> Option<usize> {
        self.rows.back().map(|r| r.epoch)
    }

    /// Appends `row`, evicting the oldest row when full.
    pub fn push(&mut self, row: SparseSimRow) -> Result<()> {
        if let Some(last) = self.last_epoch() {
            if row.epoch <= last {
                return Err(Error::EpochOrder {
                    last,
                    pushed: row.epoch,
                });
            }
        }
        if self.rows.len() == self.capacity {
            self.rows.pop_front();
        }
        self.rows.push_back(row);
        Ok(())
    }

    /// Windowed similarity over the union of stored supports, ascending by
    /// index. An index missing from an epoch contributes zero for that epoch
    /// and the divisor is always the window size.
    pub fn windowed_metric(&self) -> Result<(Vec<usize>, Vec<f64>)> {
        if !self.is_filled() {
            return Err(Error::WindowWarmup {
                have: self.rows.len(),
                need: self.capacity,
            });
        }
        let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
        for row in &self.rows {
            for (j, v) in row.iter() {
                *sums.entry(j).or_insert(0.0) += v;
            }
        }
        let w = self.capacity as f64;
        Ok(sums.into_iter().map(|(j, s)| (j, s / w)).unzip())
    }
}

/// Sampling distribution over a restricted support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedDistribution {
    support: Vec<usize>,
    metric: Vec<f64>,
    probs: Vec<f64>,
    temperature: f64,
    /// Position in `support` of the maximal metric (lowest index on ties).
    argmax_pos: usize,
}

impl WindowedDistribution {
    /// Softmax of `metric / temperature` over `support`. A zero temperature
    /// gives the one-hot hard-argmax limit.
    pub fn new(support: Vec<usize>, metric: Vec<f64>, temperature: f64) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::EmptySupport);
        }
        if support.len() != metric.len() {
            return Err(Error::shape("windowed distribution", support.len(), metric.len()));
        }
        if !(temperature >= 0.0) || !temperature.is_finite() {
            return Err(Error::config("tau", "temperature must be finite and ≥ 0"));
        }
        if metric.iter().any(|m| !m.is_finite()) {
            return Err(Error::Degenerate("similarity values must be finite"));
        }
        let mut argmax_pos = 0;
        for p in 1..support.len() {
            let (best, cur) = (metric[argmax_pos], metric[p]);
            if cur > best || (cur == best && support[p] < support[argmax_pos]) {
                argmax_pos = p;
            }
        }
        let probs = if temperature == 0.0 {
            let mut one_hot = vec![0.0; support.len()];
            one_hot[argmax_pos] = 1.0;
            one_hot
        } else {
            let max = metric[argmax_pos];
            let mut e: Vec<f64> = metric.iter().map(|m| ((m - max) / temperature).exp()).collect();
            let total: f64 = e.iter().sum();
            for v in &mut e {
                *v /= total;
            }
            e
        };
        Ok(Self {
            support,
            metric,
            probs,
            temperature,
            argmax_pos,
        })
    }

    /// Builds the distribution straight from a filled window.
    pub fn from_window(window: &SimWindow, temperature: f64) -> Result<Self> {
        let (support, metric) = window.windowed_metric()?;
        Self::new(support, metric, temperature)
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn metric(&self) -> &[f64] {
        &self.metric
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn prob_of(&self, j: usize) -> f64 {
        self.support
            .iter()
            .position(|&s| s == j)
            .map_or(0.0, |p| self.probs[p])
    }

    /// Most probable image.
    pub fn argmax(&self) -> usize {
        self.support[self.argmax_pos]
    }

    /// Most probable image other than `excluded`.
    pub fn argmax_excluding(&self, excluded: usize) -> Option<usize> {
        let mut best: Option<usize> = None;
        for p in 0..self.support.len() {
            if self.support[p] == excluded {
                continue;
            }
            best = match best {
                Some(b)
                    if self.metric[p] < self.metric[b]
                        || (self.metric[p] == self.metric[b] && self.support[p] > self.support[b]) =>
                {
                    Some(b)
                }
                _ => Some(p),
            };
        }
        best.map(|p| self.support[p])
    }

    /// Draws one support element proportionally to its probability.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let dist = WeightedIndex::new(&self.probs).expect("probabilities are finite and sum to one");
        self.support[dist.sample(rng)]
    }

    /// Support entries ranked by descending probability, lowest index first on ties.
    pub fn ranked(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self.support.iter().copied().zip(self.probs.iter().copied()).collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    /// Adaptive gate: bootstrap only when the query is its own most probable
    /// partner. The closed gate consumes no randomness.
    pub fn select_pair<R: Rng + ?Sized>(&self, query: usize, rng: &mut R) -> PairDecision {
        if self.argmax() == query {
            PairDecision {
                kind: PairKind::Bootstrapped,
                query,
                partner: self.sample(rng),
                gate_passed: true,
            }
        } else {
            PairDecision::standard(query)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Standard,
    Bootstrapped,
}

/// Which image supplies the teacher view for query `query`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairDecision {
    pub kind: PairKind,
    pub query: usize,
    pub partner: usize,
    pub gate_passed: bool,
}

impl PairDecision {
    pub fn standard(query: usize) -> Self {
        Self {
            kind: PairKind::Standard,
            query,
            partner: query,
            gate_passed: false,
        }
    }

    /// Partner chosen without a gate (nearest neighbor or label oracle).
    pub fn external(query: usize, partner: usize) -> Self {
        Self {
            kind: PairKind::Bootstrapped,
            query,
            partner,
            gate_passed: false,
        }
    }

    /// Both views come from different images.
    pub fn is_cross_image(&self) -> bool {
        self.kind == PairKind::Bootstrapped && self.partner != self.query
    }
}
