//! k-NN, linear probe and few-shot episodes on raw features and on a briefly
//! trained encoder.

use adasim::dataaug::{make_blobs_with_holdout, BlobSpec};
use adasim::eval::{
    embed_dataset, fewshot_eval, knn_classify, linear_probe, EmbeddingBank, EvalReport, FewShotSpec, KnnSpec,
    LinearProbeSpec, Split,
};
use adasim::numcore::Matrix;
use adasim::trainer::{pretrain, TrainConfig};

fn report(name: &str, train: &EmbeddingBank, test: &EmbeddingBank) -> adasim::Result<()> {
    let knn = KnnSpec::default();
    let lin = LinearProbeSpec::default();
    let fs = FewShotSpec { episodes: 200, ..Default::default() };
    let reports = [
        EvalReport::knn(&knn, knn_classify(train, test, knn)?),
        EvalReport::linear(&lin, linear_probe(train, test, lin)?),
        EvalReport::fewshot(&fs, &fewshot_eval(test, &fs)?),
    ];
    println!("{name}");
    for r in reports {
        println!("  {}", serde_json::to_string(&r)?);
    }
    Ok(())
}

fn raw_bank(d: &adasim::dataaug::Dataset, split: Split) -> adasim::Result<EmbeddingBank> {
    let rows: Vec<&[f64]> = (0..d.len()).map(|i| d.item(i)).collect();
    EmbeddingBank::new(&Matrix::from_rows(&rows)?, d.labels.clone().expect("blobs are labeled"), split)
}

fn main() -> adasim::Result<()> {
    let (train, test) = make_blobs_with_holdout(&BlobSpec { per_class: 256, ..Default::default() }, 64)?;
    report("raw features", &raw_bank(&train, Split::Train)?, &raw_bank(&test, Split::Test)?)?;

    let out = pretrain(&TrainConfig { epochs: 30, ..Default::default() }, &train)?;
    let tr = embed_dataset(&out.model.backbone, &train, Split::Train)?;
    let te = embed_dataset(&out.model.backbone, &test, Split::Test)?;
    report("adasim encoder, 30 epochs", &tr, &te)
}
