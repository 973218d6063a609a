//! The label-aware upper bound: with probability p(e) the teacher view comes
//! from a random same-class image, with p decaying linearly to `p_final`.

use adasim::dataaug::{make_blobs_with_holdout, BlobSpec};
use adasim::eval::{embed_dataset, knn_classify, KnnSpec, Split};
use adasim::trainer::{oracle_probability, pretrain, OracleSchedule, PairMode, TrainConfig};

fn main() -> adasim::Result<()> {
    let schedule = OracleSchedule { p_final: 0.5, epochs: 60 };
    for e in [0, 15, 30, 45, 59] {
        println!("epoch index {e:>2}: p = {:.3}", oracle_probability(&schedule, e));
    }

    let (train, test) = make_blobs_with_holdout(&BlobSpec { per_class: 256, ..Default::default() }, 64)?;
    for p in [0.0, 0.5] {
        let config = TrainConfig {
            pair_mode: PairMode::SupervisedOracle,
            oracle_p_final: p,
            epochs: 60,
            ..Default::default()
        };
        let out = pretrain(&config, &train)?;
        let tr = embed_dataset(&out.model.backbone, &train, Split::Train)?;
        let te = embed_dataset(&out.model.backbone, &test, Split::Test)?;
        println!(
            "p_final {p}: final ratio {:.3}, k-NN {:.4}",
            out.metrics.last().map_or(0.0, |m| m.bootstrap_ratio),
            knn_classify(&tr, &te, KnnSpec::default())?
        );
    }
    Ok(())
}
