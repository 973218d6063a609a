use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::l2_normalize;

/// Partition of `0..n` into disjoint shards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardMap {
    shard_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl ShardMap {
    /// Splits `0..n` into `shards` contiguous ranges whose sizes differ by at most one.
    pub fn contiguous(n: usize, shards: usize) -> Result<Self> {
        if shards == 0 || shards > n.max(1) {
            return Err(Error::config("shards", format!("need 1 ≤ shards ≤ {n}, got {shards}")));
        }
        let base = n / shards;
        let extra = n % shards;
        let mut members = Vec::with_capacity(shards);
        let mut start = 0;
        for s in 0..shards {
            let len = base + usize::from(s < extra);
            members.push((start..start + len).collect());
            start += len;
        }
        Self::from_members(members, n)
    }

    /// Validates that `members` is a disjoint cover of `0..n`.
    pub fn from_members(members: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut shard_of = vec![usize::MAX; n];
        for (s, shard) in members.iter().enumerate() {
            for &i in shard {
                if i >= n {
                    return Err(Error::Partition(format!("index {i} outside 0..{n}")));
                }
                if shard_of[i] != usize::MAX {
                    return Err(Error::Partition(format!(
                        "index {i} in shards {} and {s}",
                        shard_of[i]
                    )));
                }
                shard_of[i] = s;
            }
        }
        if let Some(i) = shard_of.iter().position(|&s| s == usize::MAX) {
            return Err(Error::Partition(format!("index {i} belongs to no shard")));
        }
        let mut members = members;
        for m in &mut members {
            m.sort_unstable();
        }
        Ok(Self { shard_of, members })
    }

    pub fn shard_count(&self) -> usize {
        self.members.len()
    }

    pub fn len(&self) -> usize {
        self.shard_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shard_of.is_empty()
    }

    /// Shard that owns item `i`.
    pub fn route(&self, i: usize) -> Result<usize> {
        self.shard_of
            .get(i)
            .copied()
            .ok_or_else(|| Error::Partition(format!("index {i} belongs to no shard")))
    }

    pub fn members(&self, shard: usize) -> &[usize] {
        &self.members[shard]
    }
}

/// Top-`K` entries of one similarity scan, sorted by descending value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseSimRow {
    pub epoch: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseSimRow {
    pub fn empty(epoch: usize) -> Self {
        Self {
            epoch,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }
}

/// Candidate ranked by (value desc, index asc).
#[derive(Debug, Clone, Copy)]
struct Ranked {
    value: f64,
    index: usize,
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

const LANES: usize = 8;

/// Bounded min-heap keeping the `k` best candidates seen so far.
struct TopK {
    heap: BinaryHeap<Reverse<Ranked>>,
    k: usize,
    floor: f64,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            heap: BinaryHeap::with_capacity(k + 1),
            k,
            floor: f64::NEG_INFINITY,
        }
    }

    #[inline]
    fn offer(&mut self, value: f64, index: usize) {
        if self.heap.len() == self.k && value < self.floor {
            return;
        }
        let cand = Ranked { value, index };
        if self.heap.len() < self.k {
            self.heap.push(Reverse(cand));
        } else if let Some(mut worst) = self.heap.peek_mut() {
            if cand > worst.0 {
                *worst = Reverse(cand);
            }
        }
        if self.heap.len() == self.k {
            self.floor = self.heap.peek().map_or(f64::NEG_INFINITY, |r| r.0.value);
        }
    }

    fn into_row(self, epoch: usize) -> SparseSimRow {
        let mut best: Vec<Ranked> = self.heap.into_iter().map(|Reverse(r)| r).collect();
        best.sort_unstable_by(|a, b| b.cmp(a));
        SparseSimRow {
            epoch,
            indices: best.iter().map(|r| r.index).collect(),
            values: best.iter().map(|r| r.value).collect(),
        }
    }
}

/// Dataset-sized embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    dim: usize,
    normalize_on_insert: bool,
    rows: Vec<f64>,
    initialized: Vec<bool>,
    shards: Option<ShardMap>,
}

impl FeatureCache {
    /// Zero-initialized cache of `len` rows; inserted rows are L2-normalized.
    pub fn new(len: usize, dim: usize) -> Self {
        Self {
            dim,
            normalize_on_insert: true,
            rows: vec![0.0; len * dim],
            initialized: vec![false; len],
            shards: None,
        }
    }

    pub fn with_normalization(mut self, normalize: bool) -> Self {
        self.normalize_on_insert = normalize;
        self
    }

    pub fn with_shards(mut self, shards: ShardMap) -> Result<Self> {
        if shards.len() != self.len() {
            return Err(Error::Partition(format!(
                "shard map covers {} items, cache has {}",
                shards.len(),
                self.len()
            )));
        }
        self.shards = Some(shards);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.initialized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.initialized.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalizes_on_insert(&self) -> bool {
        self.normalize_on_insert
    }

    pub fn shards(&self) -> Option<&ShardMap> {
        self.shards.as_ref()
    }

    pub fn is_initialized(&self, i: usize) -> bool {
        self.initialized.get(i).copied().unwrap_or(false)
    }

    pub fn initialized_count(&self) -> usize {
        self.initialized.iter().filter(|&&b| b).count()
    }

    pub fn initialized_mask(&self) -> &[bool] {
        &self.initialized
    }

    /// Raw row storage; uninitialized rows are zero.
    pub fn raw_row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Row `i`, or `None` when it has never been written.
    pub fn row(&self, i: usize) -> Option<&[f64]> {
        self.is_initialized(i).then(|| self.raw_row(i))
    }

    /// Replaces row `i` with `z` (normalized when the cache policy says so).
    pub fn update(&mut self, i: usize, z: &[f64]) -> Result<()> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        self.check_dim(z)?;
        let dim = self.dim;
        let dst = &mut self.rows[i * dim..(i + 1) * dim];
        if self.normalize_on_insert {
            dst.copy_from_slice(&l2_normalize(z)?);
        } else {
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Degenerate("cache rows must be finite"));
            }
            dst.copy_from_slice(z);
        }
        self.initialized[i] = true;
        Ok(())
    }

    /// The `k` largest dot products `z · Z_j` over initialized rows, sorted
    /// descending with ties going to the lower index.
    pub fn topk_similarities(&self, z: &[f64], k: usize, epoch: usize) -> Result<SparseSimRow> {
        Ok(self.topk_batch(&[z], k, epoch)?.remove(0))
    }

    /// View restricted to the shard that owns item `i`. Without a shard map the
    /// whole cache is a single shard.
    pub fn shard_view_of(&self, i: usize) -> Result<ShardView<'_>> {
        match &self.shards {
            None => {
                if i >= self.len() {
                    return Err(Error::Partition(format!("index {i} belongs to no shard")));
                }
                Ok(ShardView {
                    cache: self,
                    shard: 0,
                    members: None,
                })
            }
            Some(map) => {
                let shard = map.route(i)?;
                Ok(ShardView {
                    cache: self,
                    shard,
                    members: Some(map.members(shard)),
                })
            }
        }
    }

    /// View of shard `shard`; an unsharded cache has the single shard 0.
    pub fn shard_view(&self, shard: usize) -> Result<ShardView<'_>> {
        match &self.shards {
            None if shard == 0 => Ok(ShardView {
                cache: self,
                shard: 0,
                members: None,
            }),
            Some(map) if shard < map.shard_count() => Ok(ShardView {
                cache: self,
                shard,
                members: Some(map.members(shard)),
            }),
            _ => Err(Error::Partition(format!("no shard {shard}"))),
        }
    }

    /// [`topk_similarities`](Self::topk_similarities) for many queries in one
    /// pass over the cache. Results are bit-identical to one query at a time.
    pub fn topk_batch(&self, queries: &[&[f64]], k: usize, epoch: usize) -> Result<Vec<SparseSimRow>> {
        self.topk_over(0..self.len(), queries, k, epoch)
    }

    pub(crate) fn topk_over<I>(&self, candidates: I, queries: &[&[f64]], k: usize, epoch: usize) -> Result<Vec<SparseSimRow>>
    where
        I: Iterator<Item = usize> + Clone,
    {
        if k == 0 {
            return Err(Error::config("topk", "K must be at least 1"));
        }
        for q in queries {
            self.check_dim(q)?;
        }
        let d = self.dim;
        let mut out = Vec::with_capacity(queries.len());
        // Queries interleaved coordinate-major so one cache row feeds LANES dot products.
        let mut qt = vec![0.0; d * LANES];
        for block in queries.chunks(LANES) {
            qt.iter_mut().for_each(|v| *v = 0.0);
            for (l, q) in block.iter().enumerate() {
                for (c, v) in q.iter().enumerate() {
                    qt[c * LANES + l] = *v;
                }
            }
            let mut tops: Vec<TopK> = block.iter().map(|_| TopK::new(k)).collect();
            let mut seen = 0usize;
            for j in candidates.clone() {
                if !self.initialized[j] {
                    continue;
                }
                seen += 1;
                let mut acc = [0.0f64; LANES];
                for (q, &v) in qt.chunks_exact(LANES).zip(&self.rows[j * d..(j + 1) * d]) {
                    let q: &[f64; LANES] = q.try_into().expect("chunk has LANES entries");
                    for l in 0..LANES {
                        acc[l] += q[l] * v;
                    }
                }
                for (t, v) in tops.iter_mut().zip(acc) {
                    t.offer(v, j);
                }
            }
            if seen == 0 {
                return Err(Error::EmptyCache);
            }
            out.extend(tops.into_iter().map(|t| t.into_row(epoch)));
        }
        Ok(out)
    }

    pub(crate) fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim {
            return Err(Error::shape("cache embedding", self.dim, z.len()));
        }
        Ok(())
    }

    pub(crate) fn from_parts(
        dim: usize,
        normalize_on_insert: bool,
        rows: Vec<f64>,
        initialized: Vec<bool>,
    ) -> Self {
        Self {
            dim,
            normalize_on_insert,
            rows,
            initialized,
            shards: None,
        }
    }

    pub(crate) fn rows_raw(&self) -> &[f64] {
        &self.rows
    }
}

/// Read-only view of the rows owned by one shard.
#[derive(Debug, Clone, Copy)]
pub struct ShardView<'a> {
    cache: &'a FeatureCache,
    shard: usize,
    members: Option<&'a [usize]>,
}

impl<'a> ShardView<'a> {
    pub fn shard(&self) -> usize {
        self.shard
    }

    pub fn cache(&self) -> &'a FeatureCache {
        self.cache
    }

    /// Global indices owned by this shard, ascending.
    pub fn indices(&self) -> Box<dyn Iterator<Item = usize> + 'a> {
        match self.members {
            Some(m) => Box::new(m.iter().copied()),
            None => Box::new(0..self.cache.len()),
        }
    }

    pub fn contains(&self, i: usize) -> bool {
        match self.members {
            Some(m) => m.binary_search(&i).is_ok(),
            None => i < self.cache.len(),
        }
    }

    pub fn topk_similarities(&self, z: &[f64], k: usize, epoch: usize) -> Result<SparseSimRow> {
        Ok(self.topk_batch(&[z], k, epoch)?.remove(0))
    }

    pub fn topk_batch(&self, queries: &[&[f64]], k: usize, epoch: usize) -> Result<Vec<SparseSimRow>> {
        match self.members {
            Some(m) => self.cache.topk_over(m.iter().copied(), queries, k, epoch),
            None => self.cache.topk_over(0..self.cache.len(), queries, k, epoch),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn basis_cache() -> FeatureCache {
        let mut c = FeatureCache::new(3, 3);
        for i in 0..3 {
            let mut e = [0.0; 3];
            e[i] = 1.0;
            c.update(i, &e).unwrap();
        }
        c
    }

    /// Brute force: score everything, sort by (value desc, index asc), truncate.
    fn full_sort_oracle(cache: &FeatureCache, z: &[f64], k: usize) -> (Vec<usize>, Vec<f64>) {
        let mut all: Vec<(usize, f64)> = (0..cache.len())
            .filter_map(|j| cache.row(j).map(|r| (j, r.iter().zip(z).map(|(a, b)| a * b).sum::<f64>())))
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        all.into_iter().unzip()
    }

    #[test]
    fn batched_scan_matches_single_queries_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut c = FeatureCache::new(40, 5);
        for i in (0..40).filter(|i| i % 7 != 3) {
            let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            c.update(i, &v).unwrap();
        }
        let qs: Vec<Vec<f64>> = (0..13).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = qs.iter().map(|q| q.as_slice()).collect();
        let batch = c.topk_batch(&refs, 6, 2).unwrap();
        for (q, row) in qs.iter().zip(&batch) {
            assert_eq!(row, &c.topk_similarities(q, 6, 2).unwrap());
            let (idx, vals) = full_sort_oracle(&c, q, 6);
            assert_eq!(row.indices, idx);
            for (a, b) in row.values.iter().zip(&vals) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn basis_example_breaks_ties_by_index() {
        let row = basis_cache().topk_similarities(&[0.0, 1.0, 0.0], 2, 1).unwrap();
        assert_eq!(row.indices, vec![1, 0]);
        assert_eq!(row.values, vec![1.0, 0.0]);
        assert_eq!(row.epoch, 1);
    }

    #[test]
    fn read_your_write_and_isolation() {
        let mut c = FeatureCache::new(5, 2);
        for i in 0..5 {
            c.update(i, &[i as f64 + 1.0, 1.0]).unwrap();
        }
        let before = c.clone();
        c.update(3, &[0.0, 2.0]).unwrap();
        c.update(3, &[3.0, 4.0]).unwrap();
        assert_eq!(c.row(3).unwrap(), &[0.6, 0.8]);
        for i in [0, 1, 2, 4] {
            assert_eq!(c.raw_row(i), before.raw_row(i));
        }
        assert!(matches!(c.update(5, &[1.0, 0.0]), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn raw_policy_keeps_vectors() {
        let mut c = FeatureCache::new(1, 2).with_normalization(false);
        c.update(0, &[3.0, 4.0]).unwrap();
        assert_eq!(c.row(0).unwrap(), &[3.0, 4.0]);
    }

    #[test]
    fn empty_cache_and_partial_fill() {
        let mut c = FeatureCache::new(4, 2);
        assert!(matches!(c.topk_similarities(&[1.0, 0.0], 2, 1), Err(Error::EmptyCache)));
        c.update(2, &[1.0, 0.0]).unwrap();
        let row = c.topk_similarities(&[1.0, 0.0], 3, 1).unwrap();
        assert_eq!(row.indices, vec![2]);
    }

    #[test]
    fn topk_with_k_equal_n_is_dense_scan() {
        let c = basis_cache();
        let z = [0.2, 0.5, -0.1];
        let row = c.topk_similarities(&z, 3, 0).unwrap();
        assert_eq!((row.indices.clone(), row.values.clone()), full_sort_oracle(&c, &z, 3));
    }

    #[test]
    fn topk_matches_sort_all_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut c = FeatureCache::new(64, 8);
        for i in 0..64 {
            let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            c.update(i, &v).unwrap();
        }
        let z: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let row = c.topk_similarities(&z, 5, 2).unwrap();
        let (idx, _) = full_sort_oracle(&c, &z, 5);
        assert_eq!(row.indices, idx);
    }

    #[test]
    fn shard_map_validation() {
        assert!(ShardMap::from_members(vec![vec![0, 1], vec![1, 2]], 3).is_err());
        assert!(ShardMap::from_members(vec![vec![0], vec![2]], 3).is_err());
        let m = ShardMap::contiguous(10, 3).unwrap();
        assert_eq!(m.members(0), &[0, 1, 2, 3]);
        assert_eq!(m.route(9).unwrap(), 2);
        assert!(m.route(10).is_err());
        assert!(ShardMap::contiguous(3, 0).is_err());
    }

    #[test]
    fn shard_local_topk_stays_in_shard() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 40;
        let mut c = FeatureCache::new(n, 4);
        for i in 0..n {
            let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            c.update(i, &v).unwrap();
        }
        let single = c.clone().with_shards(ShardMap::contiguous(n, 1).unwrap()).unwrap();
        let split = c.clone().with_shards(ShardMap::contiguous(n, 2).unwrap()).unwrap();
        let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert_eq!(
            single.shard_view_of(7).unwrap().topk_similarities(&z, 6, 0).unwrap(),
            c.topk_similarities(&z, 6, 0).unwrap()
        );
        let view = split.shard_view_of(30).unwrap();
        let row = view.topk_similarities(&z, 6, 0).unwrap();
        assert!(row.indices.iter().all(|&j| (20..40).contains(&j)));
    }
}
