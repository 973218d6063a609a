//! Splits the cache into shards so each query only competes with its own
//! partition, and checks the single-shard case against the plain cache.

use adasim::dataaug::{make_blobs, BlobSpec};
use adasim::simcache::{nn_lookup, FeatureCache, ShardMap};
use adasim::trainer::{pretrain, PairMode, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> adasim::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 12;
    let mut plain = FeatureCache::new(n, 3);
    for i in 0..n {
        let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        plain.update(i, &v)?;
    }
    let sharded = plain.clone().with_shards(ShardMap::contiguous(n, 3)?)?;
    let z = [0.3, -0.2, 0.9];
    println!("unsharded top-4 {:?}", plain.topk_similarities(&z, 4, 1)?.indices);
    for i in [0, 5, 11] {
        let view = sharded.shard_view_of(i)?;
        let row = view.topk_similarities(&z, 4, 1)?;
        let nn = nn_lookup(&view, &z, Some(i))?;
        println!("query {i:>2} in shard {}: top-4 {:?}, nearest other {}", view.shard(), row.indices, nn.source);
    }

    let one = plain.clone().with_shards(ShardMap::contiguous(n, 1)?)?;
    assert_eq!(one.shard_view_of(0)?.topk_similarities(&z, 4, 1)?, plain.topk_similarities(&z, 4, 1)?);
    println!("one shard matches the plain cache");

    let data = make_blobs(&BlobSpec { per_class: 64, ..Default::default() })?;
    let config = TrainConfig { pair_mode: PairMode::Adasim, shards: 4, epochs: 20, ..Default::default() };
    let out = pretrain(&config, &data)?;
    let map = ShardMap::contiguous(data.len(), 4)?;
    let crossing = out
        .dump
        .windows
        .iter()
        .enumerate()
        .flat_map(|(i, w)| w.rows().flat_map(move |r| r.indices.iter().map(move |&j| (i, j))))
        .filter(|&(i, j)| map.route(i).ok() != map.route(j).ok())
        .count();
    println!("4-shard training: {crossing} window entries outside their shard");
    Ok(())
}
