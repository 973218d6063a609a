use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::l2_normalize;
use crate::simcache::{nn_lookup, FeatureCache, PairDecision, ShardMap, SimWindow, SparseSimRow, WindowedDistribution};

use super::config::{PairMode, TrainConfig};

/// Linear decay of the standard-pair probability from 1 to `p_final`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSchedule {
    pub p_final: f64,
    pub epochs: usize,
}

/// Standard-pair probability at zero-based `epoch`.
pub fn oracle_probability(schedule: &OracleSchedule, epoch: usize) -> f64 {
    if schedule.epochs < 2 {
        return schedule.p_final;
    }
    let t = epoch.min(schedule.epochs - 1) as f64 / (schedule.epochs - 1) as f64;
    let p = 1.0 + (schedule.p_final - 1.0) * t;
    p.clamp(schedule.p_final.min(1.0), 1.0)
}

/// Per-class member lists for label-driven pairing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassIndex {
    labels: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl ClassIndex {
    pub fn new(labels: &[usize]) -> Self {
        let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); classes];
        for (i, &l) in labels.iter().enumerate() {
            members[l].push(i);
        }
        Self {
            labels: labels.to_vec(),
            members,
        }
    }

    pub fn members(&self, class: usize) -> &[usize] {
        self.members.get(class).map_or(&[], Vec::as_slice)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
}

/// Uniform same-class partner for `i`. A singleton class with `exclude_self`
/// falls back to `i` itself.
pub fn supervised_pair<R: Rng + ?Sized>(index: &ClassIndex, i: usize, exclude_self: bool, rng: &mut R) -> Result<usize> {
    if i >= index.labels.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: index.labels.len(),
        });
    }
    let members = index.members(index.label(i));
    if !exclude_self {
        return Ok(members[rng.gen_range(0..members.len())]);
    }
    if members.len() < 2 {
        log::info!("class {} of item {i} is a singleton; pairing it with itself", index.label(i));
        return Ok(i);
    }
    let pos = members.binary_search(&i).expect("item is listed under its own class");
    let k = rng.gen_range(0..members.len() - 1);
    Ok(members[if k >= pos { k + 1 } else { k }])
}

/// Similarity row and neighbor hit computed against the batch-start cache.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub row: SparseSimRow,
    pub nearest: Option<usize>,
}

/// Owns the feature cache and the per-image similarity windows.
#[derive(Debug, Clone)]
pub struct PairingEngine {
    mode: PairMode,
    tau: f64,
    topk: usize,
    window: usize,
    schedule: OracleSchedule,
    cache: FeatureCache,
    windows: Vec<SimWindow>,
    classes: Option<ClassIndex>,
}

impl PairingEngine {
    pub fn new(config: &TrainConfig, len: usize, dim: usize, labels: Option<&[usize]>) -> Result<Self> {
        if config.pair_mode == PairMode::SupervisedOracle && labels.is_none() {
            return Err(Error::config("mode", "the supervised oracle needs a labeled dataset"));
        }
        let mut cache = FeatureCache::new(len, dim).with_normalization(config.normalize_cache);
        if config.shards > 1 {
            cache = cache.with_shards(ShardMap::contiguous(len, config.shards)?)?;
        }
        let windows = (0..len).map(|_| SimWindow::new(config.window)).collect::<Result<_>>()?;
        Ok(Self {
            mode: config.pair_mode,
            tau: config.tau,
            topk: config.topk,
            window: config.window,
            schedule: OracleSchedule {
                p_final: config.oracle_p_final,
                epochs: config.epochs,
            },
            cache,
            windows,
            classes: labels.map(ClassIndex::new),
        })
    }

    pub fn cache(&self) -> &FeatureCache {
        &self.cache
    }

    pub fn windows(&self) -> &[SimWindow] {
        &self.windows
    }

    pub fn into_parts(self) -> (FeatureCache, Vec<SimWindow>) {
        (self.cache, self.windows)
    }

    /// Read-only scoring of `z` for image `i` in one-based `epoch`.
    pub fn score(&self, i: usize, z: &[f64], epoch: usize) -> Result<Scored> {
        Ok(self.score_batch(&[(i, z.to_vec())], epoch)?.remove(0))
    }

    /// [`score`](Self::score) for a whole batch against the same cache state.
    pub fn score_batch(&self, items: &[(usize, Vec<f64>)], epoch: usize) -> Result<Vec<Scored>> {
        let rows = if let Some(map) = self.cache.shards() {
            let mut rows = vec![SparseSimRow::empty(epoch); items.len()];
            for s in 0..map.shard_count() {
                let (pos, queries): (Vec<usize>, Vec<&[f64]>) = items
                    .iter()
                    .enumerate()
                    .filter(|(_, (i, _))| map.route(*i).is_ok_and(|r| r == s))
                    .map(|(p, (_, z))| (p, z.as_slice()))
                    .unzip();
                if queries.is_empty() {
                    continue;
                }
                match self.cache.shard_view(s)?.topk_batch(&queries, self.topk, epoch) {
                    Err(Error::EmptyCache) => {}
                    other => {
                        for (p, row) in pos.into_iter().zip(other?) {
                            rows[p] = row;
                        }
                    }
                }
            }
            rows
        } else {
            let queries: Vec<&[f64]> = items.iter().map(|(_, z)| z.as_slice()).collect();
            match self.cache.topk_batch(&queries, self.topk, epoch) {
                Err(Error::EmptyCache) => vec![SparseSimRow::empty(epoch); items.len()],
                other => other?,
            }
        };
        items
            .iter()
            .zip(rows)
            .map(|((i, z), row)| {
                let nearest = if self.mode == PairMode::NnBootstrap && epoch > self.window {
                    self.nearest_other(*i, z, &row)?
                } else {
                    None
                };
                Ok(Scored { row, nearest })
            })
            .collect()
    }

    /// On a normalized cache the best non-self entry of the similarity row is
    /// the Euclidean nearest neighbor, so the second scan is skipped.
    fn nearest_other(&self, i: usize, z: &[f64], row: &SparseSimRow) -> Result<Option<usize>> {
        if self.cache.normalizes_on_insert() {
            if let Some(&j) = row.indices.iter().find(|&&j| j != i) {
                return Ok(Some(j));
            }
        }
        let q = if self.cache.normalizes_on_insert() {
            l2_normalize(z)?
        } else {
            z.to_vec()
        };
        let hit = if self.cache.shards().is_some() {
            nn_lookup(&self.cache.shard_view_of(i)?, &q, Some(i))
        } else {
            nn_lookup(&self.cache, &q, Some(i))
        };
        match hit {
            Ok(h) => Ok(Some(h.source)),
            Err(Error::EmptyCache | Error::NoCandidates) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Stores the fresh embedding and the epoch's similarity row.
    pub fn commit(&mut self, i: usize, z: &[f64], row: SparseSimRow) -> Result<()> {
        self.cache.update(i, z)?;
        self.windows
            .get_mut(i)
            .ok_or(Error::IndexOutOfRange {
                index: i,
                len: self.cache.len(),
            })?
            .push(row)
    }

    /// Windowed distribution of `i`, once its window holds `w` rows.
    pub fn distribution(&self, i: usize) -> Result<Option<WindowedDistribution>> {
        let w = &self.windows[i];
        if !w.is_filled() {
            return Ok(None);
        }
        match WindowedDistribution::from_window(w, self.tau) {
            Ok(d) => Ok(Some(d)),
            Err(Error::EmptySupport) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Chooses the teacher-side image for query `i`. Call after [`commit`](Self::commit).
    pub fn decide<R: Rng + ?Sized>(
        &self,
        i: usize,
        epoch: usize,
        nearest: Option<usize>,
        dist: Option<&WindowedDistribution>,
        rng: &mut R,
    ) -> Result<PairDecision> {
        if epoch <= self.window {
            return Ok(PairDecision::standard(i));
        }
        Ok(match self.mode {
            PairMode::Standard => PairDecision::standard(i),
            PairMode::Adasim => match dist {
                Some(d) => d.select_pair(i, rng),
                None => PairDecision::standard(i),
            },
            PairMode::NnBootstrap => match nearest {
                Some(j) => PairDecision::external(i, j),
                None => PairDecision::standard(i),
            },
            PairMode::SupervisedOracle => {
                let classes = self.classes.as_ref().expect("checked at construction");
                let p_standard = oracle_probability(&self.schedule, epoch - 1);
                if rng.gen::<f64>() < p_standard {
                    PairDecision::standard(i)
                } else {
                    PairDecision::external(i, supervised_pair(classes, i, true, rng)?)
                }
            }
        })
    }

    /// Scores a whole batch against the current cache, commits every update,
    /// then decides pairs in batch order.
    pub fn step_batch<R: Rng + ?Sized>(
        &mut self,
        items: &[(usize, Vec<f64>)],
        epoch: usize,
        rng: &mut R,
    ) -> Result<Vec<(PairDecision, Option<WindowedDistribution>)>> {
        let scored = self.score_batch(items, epoch)?;
        for ((i, z), s) in items.iter().zip(&scored) {
            self.commit(*i, z, s.row.clone())?;
        }
        items
            .iter()
            .zip(scored)
            .map(|((i, _), s)| {
                let dist = self.distribution(*i)?;
                let d = self.decide(*i, epoch, s.nearest, dist.as_ref(), rng)?;
                Ok((d, dist))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    use super::*;
    use crate::simcache::PairKind;

    #[test]
    fn oracle_schedule_endpoints_and_midpoint() {
        let s = OracleSchedule { p_final: 0.5, epochs: 201 };
        assert_eq!(oracle_probability(&s, 0), 1.0);
        assert_eq!(oracle_probability(&s, 200), 0.5);
        assert!((oracle_probability(&s, 100) - 0.75).abs() < 1e-15);
        let short = OracleSchedule { p_final: 0.3, epochs: 1 };
        assert_eq!(oracle_probability(&short, 0), 0.3);
    }

    #[test]
    fn pair_of_two_is_the_other_member() {
        let idx = ClassIndex::new(&[0, 1, 0, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(supervised_pair(&idx, 0, true, &mut rng).unwrap(), 2);
            assert_eq!(supervised_pair(&idx, 2, true, &mut rng).unwrap(), 0);
        }
        assert_eq!(supervised_pair(&idx, 3, true, &mut rng).unwrap(), 3);
        assert!(supervised_pair(&idx, 9, true, &mut rng).is_err());
    }

    #[test]
    fn pair_draws_are_uniform_within_class() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let idx = ClassIndex::new(&labels);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mut counts = [0usize; 30];
        for _ in 0..draws {
            counts[supervised_pair(&idx, 4, false, &mut rng).unwrap()] += 1;
        }
        let members = idx.members(1);
        assert_eq!(members.len(), 10);
        let expected = draws as f64 / 10.0;
        let stat: f64 = members.iter().map(|&m| (counts[m] as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(9.0).unwrap().cdf(stat);
        assert!(p > 0.01, "chi-square p = {p}");
        assert_eq!(counts.iter().sum::<usize>(), draws);
    }

    fn engine(mode: PairMode, window: usize) -> PairingEngine {
        let cfg = TrainConfig {
            pair_mode: mode,
            window,
            topk: 3,
            tau: 0.2,
            ..Default::default()
        };
        PairingEngine::new(&cfg, 6, 2, Some(&[0, 0, 0, 1, 1, 1])).unwrap()
    }

    fn batch(epoch: usize) -> Vec<(usize, Vec<f64>)> {
        (0..6)
            .map(|i| {
                let a = i as f64 * 0.9 + epoch as f64 * 0.05;
                (i, vec![a.cos(), a.sin()])
            })
            .collect()
    }

    #[test]
    fn warmup_epochs_are_all_standard() {
        let mut e = engine(PairMode::Adasim, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for epoch in 1..=3 {
            for (d, _) in e.step_batch(&batch(epoch), epoch, &mut rng).unwrap() {
                assert_eq!(d.kind, PairKind::Standard);
            }
        }
    }

    #[test]
    fn first_epoch_rows_are_empty() {
        let mut e = engine(PairMode::Standard, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        e.step_batch(&batch(1), 1, &mut rng).unwrap();
        assert!(e.windows().iter().all(|w| w.rows().all(|r| r.is_empty())));
        e.step_batch(&batch(2), 2, &mut rng).unwrap();
        assert!(e.windows().iter().all(|w| w.rows().all(|r| r.len() == 3)));
    }

    #[test]
    fn batched_matches_itemwise_under_snapshot_schedule() {
        let mut a = engine(PairMode::Adasim, 2);
        let mut b = a.clone();
        let mut ra = ChaCha8Rng::seed_from_u64(5);
        let mut rb = ra.clone();
        for epoch in 1..=6 {
            let items = batch(epoch);
            let got: Vec<_> = a.step_batch(&items, epoch, &mut ra).unwrap().into_iter().map(|p| p.0).collect();

            let snapshot = b.clone();
            let mut scored = Vec::new();
            for (i, z) in &items {
                scored.push(snapshot.score(*i, z, epoch).unwrap());
            }
            for ((i, z), s) in items.iter().zip(&scored) {
                b.commit(*i, z, s.row.clone()).unwrap();
            }
            let mut want = Vec::new();
            for ((i, _), s) in items.iter().zip(&scored) {
                let d = b.distribution(*i).unwrap();
                want.push(b.decide(*i, epoch, s.nearest, d.as_ref(), &mut rb).unwrap());
            }
            assert_eq!(got, want);
        }
    }

    #[test]
    fn nn_mode_never_pairs_with_self_after_warmup() {
        let mut e = engine(PairMode::NnBootstrap, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        e.step_batch(&batch(1), 1, &mut rng).unwrap();
        for (d, _) in e.step_batch(&batch(2), 2, &mut rng).unwrap() {
            assert!(d.is_cross_image());
        }
    }

    #[test]
    fn oracle_requires_labels() {
        let cfg = TrainConfig {
            pair_mode: PairMode::SupervisedOracle,
            ..Default::default()
        };
        assert!(PairingEngine::new(&cfg, 4, 2, None).is_err());
    }
}
