//! Trains the default adasim configuration on 8-class blobs and writes a run
//! directory. Pass an epoch count to shorten the run (default 40).
//!
//! ```text
//! cargo run --release --example pretrain_blobs -- 40 runs/example
//! ```

use std::path::PathBuf;

use adasim::dataaug::{make_blobs_with_holdout, BlobSpec};
use adasim::eval::{embed_dataset, knn_classify, KnnSpec, Split};
use adasim::trainer::{run_to_dir, RunOptions, TrainConfig};

fn main() -> adasim::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(40, |s| s.parse().expect("epoch count"));
    let dir = args.next().map_or_else(|| std::env::temp_dir().join("adasim-pretrain-blobs"), PathBuf::from);

    let (train, test) = make_blobs_with_holdout(&BlobSpec::default(), 128)?;
    let config = TrainConfig { epochs, ..Default::default() };
    let outcome = run_to_dir(&config, &train, &dir, RunOptions::default())?;

    for m in outcome.metrics.iter().filter(|m| m.epoch % 5 == 0 || m.epoch == config.window + 1) {
        println!(
            "epoch {:>3}  loss {:+.4}  ratio {:.3}  nn_top1 {}  embed_std {:.4}",
            m.epoch,
            m.mean_loss,
            m.bootstrap_ratio,
            m.nn_top1.map_or("-".into(), |v| format!("{v:.3}")),
            m.embed_std
        );
    }
    let tr = embed_dataset(&outcome.model.backbone, &train, Split::Train)?;
    let te = embed_dataset(&outcome.model.backbone, &test, Split::Test)?;
    println!("k-NN(20) top-1 {:.4}", knn_classify(&tr, &te, KnnSpec::default())?);
    println!("run directory: {}", dir.display());
    Ok(())
}
