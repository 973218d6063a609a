//! Trains briefly, saves the cache dump and prints ranked windowed neighbors,
//! including queries whose top neighbor is another image or another class.

use adasim::dataaug::{make_blobs, BlobSpec};
use adasim::simcache::{neighbor_records, CacheDump, NeighborFilter};
use adasim::trainer::{pretrain, TrainConfig};

fn main() -> adasim::Result<()> {
    let data = make_blobs(&BlobSpec { per_class: 64, ..Default::default() })?;
    let config = TrainConfig { epochs: 25, ..Default::default() };
    let out = pretrain(&config, &data)?;

    let path = std::env::temp_dir().join("adasim-neighbor-dump.bin");
    out.dump.write_to(&path)?;
    let dump = CacheDump::read_from(&path)?;
    let labels = data.labels.as_deref();
    let all: Vec<usize> = (0..dump.cache.len()).collect();

    for r in neighbor_records(&dump, &[0, 1, 2], config.tau, Some(4), NeighborFilter::default(), labels)? {
        println!("query {:>3}: {:?}", r.query_index, r.support);
    }
    let not_self = NeighborFilter { first_not_self: true, ..Default::default() };
    let not_class = NeighborFilter { first_not_class: true, ..Default::default() };
    let a = neighbor_records(&dump, &all, config.tau, Some(3), not_self, labels)?;
    let b = neighbor_records(&dump, &all, config.tau, Some(3), not_class, labels)?;
    println!("{} of {} queries rank another image first", a.len(), all.len());
    println!("{} of {} queries rank another class first", b.len(), all.len());
    if let Some(r) = b.first() {
        println!("e.g. query {} (class {:?}): {:?}", r.query_index, data.label(r.query_index), r.support);
    }
    Ok(())
}
