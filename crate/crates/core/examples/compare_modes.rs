//! Standard pairs vs always-nearest-neighbor vs adaptive bootstrapping on the
//! same blobs and seed. `cargo run --release --example compare_modes -- 200`
//! gives the full-length comparison; the default is 60 epochs.

use std::time::Instant;

use adasim::dataaug::{make_blobs_with_holdout, BlobSpec};
use adasim::eval::{embed_dataset, knn_classify, linear_probe, KnnSpec, LinearProbeSpec, Split};
use adasim::trainer::{pretrain, PairMode, TrainConfig};

fn main() -> adasim::Result<()> {
    let epochs = std::env::args().nth(1).map_or(60, |s| s.parse().expect("epoch count"));
    let seed = std::env::args().nth(2).map_or(0, |s| s.parse().expect("seed"));
    let (train, test) = make_blobs_with_holdout(&BlobSpec { seed, ..Default::default() }, 128)?;

    println!("mode      knn     linear  embed_std  ratio   secs");
    for mode in [PairMode::Standard, PairMode::NnBootstrap, PairMode::Adasim] {
        let config = TrainConfig { pair_mode: mode, epochs, seed, ..Default::default() };
        let t = Instant::now();
        let out = pretrain(&config, &train)?;
        let secs = t.elapsed().as_secs_f64();
        let last = out.metrics.last().expect("at least one epoch");
        if out.collapse.is_some() {
            println!("{:<9} -       -       {:.4}     {:.3}  {secs:.1}", mode.flag(), last.embed_std, last.bootstrap_ratio);
            continue;
        }
        let tr = embed_dataset(&out.model.backbone, &train, Split::Train)?;
        let te = embed_dataset(&out.model.backbone, &test, Split::Test)?;
        println!(
            "{:<9} {:.4}  {:.4}  {:.4}     {:.3}  {secs:.1}",
            mode.flag(),
            knn_classify(&tr, &te, KnnSpec::default())?,
            linear_probe(&tr, &te, LinearProbeSpec::default())?,
            last.embed_std,
            last.bootstrap_ratio
        );
    }
    Ok(())
}
