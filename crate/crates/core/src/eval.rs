//! Frozen-feature evaluation: cosine k-NN voting, a linear softmax probe, and
//! prototypical few-shot episodes.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataaug::Dataset;
use crate::error::{Error, Result};
use crate::numcore::{dot, l2_normalize, squared_distance, Matrix, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// L2-normalized embeddings with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank {
    embeddings: Matrix,
    labels: Vec<usize>,
    pub split: Split,
}

impl EmbeddingBank {
    /// Normalizes every row of `raw`.
    pub fn new(raw: &Matrix, labels: Vec<usize>, split: Split) -> Result<Self> {
        if raw.rows() != labels.len() {
            return Err(Error::shape("embedding bank labels", raw.rows(), labels.len()));
        }
        let mut embeddings = Matrix::zeros(raw.rows(), raw.cols());
        for (i, row) in raw.iter_rows().enumerate() {
            embeddings.row_mut(i).copy_from_slice(&l2_normalize(row)?);
        }
        Ok(Self {
            embeddings,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        self.embeddings.row(i)
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn class_count(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }
}

/// Augmentation-free forward pass of every item through `encoder`.
pub fn embed_dataset(encoder: &Mlp, dataset: &Dataset, split: Split) -> Result<EmbeddingBank> {
    if encoder.in_dim() != dataset.dim() {
        return Err(Error::shape("embed_dataset input", encoder.in_dim(), dataset.dim()));
    }
    let labels = dataset
        .labels
        .clone()
        .ok_or_else(|| Error::config("data", "evaluation needs a labeled dataset"))?;
    let mut raw = Matrix::zeros(dataset.len(), encoder.out_dim());
    for i in 0..dataset.len() {
        raw.row_mut(i).copy_from_slice(&encoder.infer(dataset.item(i))?);
    }
    EmbeddingBank::new(&raw, labels, split)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnSpec {
    pub k: usize,
    /// Weight votes by `exp(similarity / temperature)` instead of counting them.
    pub weighted: bool,
    pub temperature: f64,
}

impl Default for KnnSpec {
    fn default() -> Self {
        Self {
            k: 20,
            weighted: false,
            temperature: 0.07,
        }
    }
}

/// Cosine k-NN labels for every test row. Neighbors are ranked by similarity,
/// lower train index first on ties; a vote tie goes to the class of the most
/// similar neighbor among the tied classes.
pub fn knn_predict(train: &EmbeddingBank, test: &EmbeddingBank, spec: KnnSpec) -> Result<Vec<usize>> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Degenerate("k-NN needs non-empty banks"));
    }
    if spec.k == 0 || spec.k > train.len() {
        return Err(Error::config("k", format!("must lie in [1, {}], got {}", train.len(), spec.k)));
    }
    if train.dim() != test.dim() {
        return Err(Error::shape("knn_classify dim", train.dim(), test.dim()));
    }
    let mut sims: Vec<(f64, usize)> = Vec::with_capacity(train.len());
    let mut out = Vec::with_capacity(test.len());
    for q in 0..test.len() {
        let x = test.embedding(q);
        sims.clear();
        sims.extend((0..train.len()).map(|j| (dot(x, train.embedding(j)), j)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        sims.select_nth_unstable_by(spec.k - 1, cmp);
        let top = &mut sims[..spec.k];
        top.sort_by(cmp);

        let mut votes: BTreeMap<usize, f64> = BTreeMap::new();
        for &(s, j) in top.iter() {
            let w = if spec.weighted { (s / spec.temperature).exp() } else { 1.0 };
            *votes.entry(train.labels[j]).or_insert(0.0) += w;
        }
        let best = votes.values().copied().fold(f64::NEG_INFINITY, f64::max);
        let label = top
            .iter()
            .map(|&(_, j)| train.labels[j])
            .find(|c| votes[c] == best)
            .expect("the winning class has a neighbor");
        out.push(label);
    }
    Ok(out)
}

/// Top-1 accuracy of [`knn_predict`].
pub fn knn_classify(train: &EmbeddingBank, test: &EmbeddingBank, spec: KnnSpec) -> Result<f64> {
    let pred = knn_predict(train, test, spec)?;
    Ok(accuracy(&pred, test.labels()))
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearProbeSpec {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for LinearProbeSpec {
    fn default() -> Self {
        Self { epochs: 300, lr: 5.0 }
    }
}

/// Multinomial logistic regression on frozen features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LinearClassifier {
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let mut logits = self.weights.matvec(x)?;
        for (l, b) in logits.iter_mut().zip(&self.bias) {
            *l += b;
        }
        Ok(crate::numcore::argmax(&logits).expect("at least two classes"))
    }
}

/// Full-batch gradient descent on the mean cross-entropy from a zero
/// initialization.
pub fn train_linear(train: &EmbeddingBank, classes: usize, spec: LinearProbeSpec) -> Result<LinearClassifier> {
    let distinct: std::collections::BTreeSet<_> = train.labels.iter().collect();
    if distinct.len() < 2 || classes < 2 {
        return Err(Error::Degenerate("linear probe needs at least two classes"));
    }
    if !(spec.lr > 0.0) {
        return Err(Error::config("lr", "must be positive"));
    }
    let d = train.dim();
    let n = train.len() as f64;
    let mut w = Matrix::zeros(classes, d);
    let mut b = vec![0.0; classes];
    for _ in 0..spec.epochs {
        let mut gw = Matrix::zeros(classes, d);
        let mut gb = vec![0.0; classes];
        for i in 0..train.len() {
            let x = train.embedding(i);
            let mut logits = w.matvec(x)?;
            for (l, bi) in logits.iter_mut().zip(&b) {
                *l += bi;
            }
            let mut p = crate::numcore::softmax(&logits, 1.0);
            p[train.labels[i]] -= 1.0;
            for (c, pc) in p.iter().enumerate() {
                gb[c] += pc / n;
                crate::numcore::axpy(pc / n, x, gw.row_mut(c));
            }
        }
        crate::numcore::axpy(-spec.lr, gw.as_slice(), w.as_mut_slice());
        crate::numcore::axpy(-spec.lr, &gb, &mut b);
    }
    Ok(LinearClassifier { weights: w, bias: b })
}

/// Test accuracy of a probe trained on `train`.
pub fn linear_probe(train: &EmbeddingBank, test: &EmbeddingBank, spec: LinearProbeSpec) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Degenerate("linear probe needs a non-empty test bank"));
    }
    if train.dim() != test.dim() {
        return Err(Error::shape("linear_probe dim", train.dim(), test.dim()));
    }
    let classes = train.class_count().max(test.class_count());
    let clf = train_linear(train, classes, spec)?;
    let pred = (0..test.len())
        .map(|i| clf.predict(test.embedding(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(accuracy(&pred, test.labels()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FewShotSpec {
    pub episodes: usize,
    pub way: usize,
    pub shot: usize,
    pub query: usize,
    pub seed: u64,
}

impl Default for FewShotSpec {
    fn default() -> Self {
        Self {
            episodes: 600,
            way: 5,
            shot: 5,
            query: 15,
            seed: 0,
        }
    }
}

/// One sampled task; `classes[c]` is the original label of episode class `c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotEpisode {
    pub classes: Vec<usize>,
    pub support: Vec<Vec<usize>>,
    pub query: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FewShotResult {
    pub mean: f64,
    pub std: f64,
    /// Half-width of the 95% normal confidence interval of the mean.
    pub ci95: f64,
    pub episodes: usize,
}

fn members_by_class(bank: &EmbeddingBank) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); bank.class_count()];
    for (i, &l) in bank.labels.iter().enumerate() {
        members[l].push(i);
    }
    members
}

/// Draws episode number `episode` from its own seeded stream. Episode classes
/// are listed in ascending label order.
pub fn sample_episode(bank: &EmbeddingBank, spec: &FewShotSpec, episode: usize) -> Result<FewShotEpisode> {
    sample_from(&members_by_class(bank), spec, episode)
}

fn sample_from(members: &[Vec<usize>], spec: &FewShotSpec, episode: usize) -> Result<FewShotEpisode> {
    if spec.way == 0 || spec.shot == 0 {
        return Err(Error::config("way", "way and shot must be positive"));
    }
    let need = spec.shot + spec.query;
    let eligible: Vec<usize> = (0..members.len()).filter(|&c| members[c].len() >= need).collect();
    if eligible.len() < spec.way {
        return Err(Error::config(
            "way",
            format!("{} classes have ≥ {need} items, {} needed", eligible.len(), spec.way),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(episode as u64);
    let mut classes: Vec<usize> = index::sample(&mut rng, eligible.len(), spec.way)
        .into_iter()
        .map(|k| eligible[k])
        .collect();
    classes.sort_unstable();
    let mut support = Vec::with_capacity(spec.way);
    let mut query = Vec::with_capacity(spec.way);
    for &c in &classes {
        let picks: Vec<usize> = index::sample(&mut rng, members[c].len(), need)
            .into_iter()
            .map(|k| members[c][k])
            .collect();
        support.push(picks[..spec.shot].to_vec());
        query.push(picks[spec.shot..].to_vec());
    }
    Ok(FewShotEpisode { classes, support, query })
}

/// Nearest-prototype accuracy on one episode; equidistant queries go to the
/// lower episode class.
pub fn episode_accuracy(bank: &EmbeddingBank, episode: &FewShotEpisode) -> f64 {
    let d = bank.dim();
    let prototypes: Vec<Vec<f64>> = episode
        .support
        .iter()
        .map(|s| {
            let mut p = vec![0.0; d];
            for &i in s {
                crate::numcore::axpy(1.0 / s.len() as f64, bank.embedding(i), &mut p);
            }
            p
        })
        .collect();
    let mut hits = 0usize;
    let mut total = 0usize;
    for (c, qs) in episode.query.iter().enumerate() {
        for &q in qs {
            let x = bank.embedding(q);
            let mut best = (f64::INFINITY, 0);
            for (k, p) in prototypes.iter().enumerate() {
                let dist = squared_distance(x, p);
                if dist < best.0 {
                    best = (dist, k);
                }
            }
            hits += usize::from(best.1 == c);
            total += 1;
        }
    }
    if total == 0 {
        return 0.0;
    }
    hits as f64 / total as f64
}

pub fn fewshot_eval(bank: &EmbeddingBank, spec: &FewShotSpec) -> Result<FewShotResult> {
    if spec.episodes == 0 {
        return Err(Error::config("episodes", "must be ≥ 1"));
    }
    let members = members_by_class(bank);
    let accs = (0..spec.episodes)
        .map(|e| sample_from(&members, spec, e).map(|ep| episode_accuracy(bank, &ep)))
        .collect::<Result<Vec<_>>>()?;
    let n = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / n;
    let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(FewShotResult {
        mean,
        std,
        ci95: 1.96 * std / n.sqrt(),
        episodes: spec.episodes,
    })
}

/// One entry of `eval.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub way: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shot: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub episodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epochs: Option<usize>,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub checkpoint: Option<String>,
}

impl EvalReport {
    fn bare(protocol: &str, accuracy: f64) -> Self {
        Self {
            protocol: protocol.into(),
            k: None,
            way: None,
            shot: None,
            episodes: None,
            epochs: None,
            accuracy,
            std: None,
            seed: None,
            checkpoint: None,
        }
    }

    pub fn knn(spec: &KnnSpec, accuracy: f64) -> Self {
        Self {
            k: Some(spec.k),
            ..Self::bare("knn", accuracy)
        }
    }

    pub fn linear(spec: &LinearProbeSpec, accuracy: f64) -> Self {
        Self {
            epochs: Some(spec.epochs),
            ..Self::bare("linear", accuracy)
        }
    }

    pub fn fewshot(spec: &FewShotSpec, result: &FewShotResult) -> Self {
        Self {
            way: Some(spec.way),
            shot: Some(spec.shot),
            episodes: Some(spec.episodes),
            std: Some(result.std),
            seed: Some(spec.seed),
            ..Self::bare("fewshot", result.mean)
        }
    }

    pub fn with_checkpoint(mut self, checkpoint: impl Into<String>) -> Self {
        self.checkpoint = Some(checkpoint.into());
        self
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::dataaug::{make_blobs, BlobSpec};
    use crate::numcore::{Activation, Mlp};

    fn bank(rows: &[Vec<f64>], labels: &[usize], split: Split) -> EmbeddingBank {
        EmbeddingBank::new(&Matrix::from_rows(rows).unwrap(), labels.to_vec(), split).unwrap()
    }

    fn random_bank(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> EmbeddingBank {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        bank(&rows, &labels, Split::Train)
    }

    fn identity(d: usize) -> Mlp {
        Mlp::from_layers(vec![(Matrix::identity(d), vec![0.0; d], Activation::Identity)]).unwrap()
    }

    #[test]
    fn identity_encoder_normalizes_raw_vectors() {
        let data = make_blobs(&BlobSpec {
            classes: 2,
            per_class: 5,
            dim: 3,
            ..Default::default()
        })
        .unwrap();
        let b = embed_dataset(&identity(3), &data, Split::Train).unwrap();
        for i in 0..data.len() {
            let want = l2_normalize(data.item(i)).unwrap();
            assert_eq!(b.embedding(i), want.as_slice());
        }
        assert_eq!(b, embed_dataset(&identity(3), &data, Split::Train).unwrap());
        assert!(embed_dataset(&identity(4), &data, Split::Train).is_err());
    }

    #[test]
    fn knn_trivial_cases() {
        let train = bank(&[vec![1.0, 0.0]], &[3], Split::Train);
        let test = bank(&[vec![0.0, 1.0], vec![-1.0, 0.2]], &[3, 0], Split::Test);
        let spec = KnnSpec { k: 1, ..Default::default() };
        assert_eq!(knn_predict(&train, &test, spec).unwrap(), vec![3, 3]);

        let train = bank(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1], Split::Train);
        let test = bank(&[vec![0.0, 2.0]], &[1], Split::Test);
        assert_eq!(knn_classify(&train, &test, spec).unwrap(), 1.0);
        assert!(knn_classify(&train, &test, KnnSpec { k: 3, ..spec }).is_err());
    }

    fn knn_oracle(train: &EmbeddingBank, test: &EmbeddingBank, k: usize) -> Vec<usize> {
        (0..test.len())
            .map(|q| {
                let mut all: Vec<(f64, usize)> = (0..train.len())
                    .map(|j| {
                        let s: f64 = test.embedding(q).iter().zip(train.embedding(j)).map(|(a, b)| a * b).sum();
                        (s, j)
                    })
                    .collect();
                all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
                let top = &all[..k];
                let mut counts = vec![0usize; 16];
                for &(_, j) in top {
                    counts[train.labels()[j]] += 1;
                }
                let best = *counts.iter().max().unwrap();
                top.iter().map(|&(_, j)| train.labels()[j]).find(|&c| counts[c] == best).unwrap()
            })
            .collect()
    }

    #[test]
    fn knn_matches_brute_force_voter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let train = random_bank(&mut rng, 60, 5, 4);
            let test = random_bank(&mut rng, 25, 5, 4);
            assert_eq!(knn_predict(&train, &test, KnnSpec { k: 5, ..Default::default() }).unwrap(), knn_oracle(&train, &test, 5));
        }
    }

    #[test]
    fn knn_is_order_and_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let raw: Vec<Vec<f64>> = (0..40).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let test = random_bank(&mut rng, 15, 4, 3);
        let spec = KnnSpec { k: 7, ..Default::default() };
        let base = knn_classify(&bank(&raw, &labels, Split::Train), &test, spec).unwrap();
        let scaled: Vec<Vec<f64>> = raw.iter().map(|r| r.iter().map(|v| v * 3.5).collect()).collect();
        assert_eq!(knn_classify(&bank(&scaled, &labels, Split::Train), &test, spec).unwrap(), base);
        let rev_rows: Vec<Vec<f64>> = raw.iter().rev().cloned().collect();
        let rev_labels: Vec<usize> = labels.iter().rev().copied().collect();
        assert_eq!(knn_classify(&bank(&rev_rows, &rev_labels, Split::Train), &test, spec).unwrap(), base);
    }

    #[test]
    fn weighted_vote_favors_close_neighbors() {
        let train = bank(
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![-0.1, 1.0]],
            &[0, 1, 1],
            Split::Train,
        );
        let test = bank(&[vec![1.0, 0.7]], &[0], Split::Test);
        let plain = KnnSpec { k: 3, ..Default::default() };
        assert_eq!(knn_predict(&train, &test, plain).unwrap(), vec![1]);
        let weighted = KnnSpec { weighted: true, ..plain };
        assert_eq!(knn_predict(&train, &test, weighted).unwrap(), vec![0]);
    }

    #[test]
    fn linear_probe_separates_two_blobs() {
        let data = make_blobs(&BlobSpec {
            classes: 2,
            per_class: 100,
            dim: 8,
            spread: 0.5,
            separation: 5.0,
            seed: 2,
        })
        .unwrap();
        let b = embed_dataset(&identity(8), &data, Split::Train).unwrap();
        assert!(linear_probe(&b, &b, LinearProbeSpec::default()).unwrap() >= 0.99);
    }

    #[test]
    fn linear_probe_on_shuffled_labels_is_chance() {
        let data = make_blobs(&BlobSpec {
            classes: 8,
            per_class: 100,
            dim: 16,
            spread: 1.0,
            separation: 0.5,
            seed: 5,
        })
        .unwrap();
        let b = embed_dataset(&identity(16), &data, Split::Train).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shuffled = |b: &EmbeddingBank, rng: &mut ChaCha8Rng| {
            let labels: Vec<usize> = (0..b.len()).map(|_| rng.gen_range(0..8)).collect();
            EmbeddingBank::new(b.embeddings(), labels, b.split).unwrap()
        };
        let train = shuffled(&b, &mut rng);
        let test = shuffled(&b, &mut rng);
        let acc = linear_probe(&train, &test, LinearProbeSpec { epochs: 100, lr: 1.0 }).unwrap();
        assert!((acc - 0.125).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn untrained_probe_predicts_class_zero() {
        let train = bank(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1], Split::Train);
        let test = bank(&[vec![1.0, 0.1], vec![0.1, 1.0], vec![0.3, 1.0], vec![0.0, 1.0]], &[0, 1, 1, 1], Split::Test);
        assert_eq!(linear_probe(&train, &test, LinearProbeSpec { epochs: 0, lr: 1.0 }).unwrap(), 0.25);
        let single = bank(&[vec![1.0, 0.0]], &[0], Split::Train);
        assert!(matches!(linear_probe(&single, &test, LinearProbeSpec::default()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn perfect_prototypes_score_one() {
        let rows: Vec<Vec<f64>> = (0..5)
            .flat_map(|c| {
                let mut v = vec![0.0; 5];
                v[c] = 1.0;
                vec![v; 20]
            })
            .collect();
        let labels: Vec<usize> = (0..100).map(|i| i / 20).collect();
        let b = bank(&rows, &labels, Split::Test);
        let r = fewshot_eval(&b, &FewShotSpec { episodes: 10, ..Default::default() }).unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.std, 0.0);
    }

    #[test]
    fn equidistant_query_goes_to_lower_class() {
        let b = bank(
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![1.0, 0.1]],
            &[0, 1, 1, 0],
            Split::Test,
        );
        let ep = FewShotEpisode {
            classes: vec![0, 1],
            support: vec![vec![0], vec![1]],
            query: vec![vec![3], vec![2]],
        };
        // Query 2 sits exactly between both prototypes and is assigned to class 0.
        assert_eq!(episode_accuracy(&b, &ep), 0.5);
    }

    #[test]
    fn fewshot_matches_independent_centroid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b = random_bank(&mut rng, 300, 6, 7);
        let spec = FewShotSpec { episodes: 30, seed: 4, ..Default::default() };
        let r = fewshot_eval(&b, &spec).unwrap();
        let mut accs = Vec::new();
        for e in 0..spec.episodes {
            let ep = sample_episode(&b, &spec, e).unwrap();
            assert_eq!(ep.classes.len(), 5);
            let mut correct = 0;
            for (c, qs) in ep.query.iter().enumerate() {
                assert_eq!(qs.len(), 15);
                assert!(qs.iter().all(|q| !ep.support[c].contains(q)));
                for &q in qs {
                    let dists: Vec<f64> = ep
                        .support
                        .iter()
                        .map(|s| {
                            (0..6)
                                .map(|k| {
                                    let m: f64 = s.iter().map(|&i| b.embedding(i)[k]).sum::<f64>() / s.len() as f64;
                                    (b.embedding(q)[k] - m).powi(2)
                                })
                                .sum()
                        })
                        .collect();
                    let pick = (0..dists.len()).fold(0, |best, k| if dists[k] < dists[best] { k } else { best });
                    correct += usize::from(pick == c);
                }
            }
            accs.push(correct as f64 / 75.0);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((r.mean - mean).abs() < 1e-12);
        assert_eq!(fewshot_eval(&b, &spec).unwrap(), r);
    }

    #[test]
    fn full_shot_reduces_to_nearest_centroid() {
        let data = make_blobs(&BlobSpec {
            classes: 5,
            per_class: 10,
            dim: 4,
            spread: 1.0,
            separation: 1.0,
            seed: 6,
        })
        .unwrap();
        let b = embed_dataset(&identity(4), &data, Split::Test).unwrap();
        let spec = FewShotSpec {
            episodes: 1,
            way: 5,
            shot: 10,
            query: 0,
            seed: 0,
        };
        let ep = sample_episode(&b, &spec, 0).unwrap();
        assert!(ep.query.iter().all(Vec::is_empty));
        let mut centroids = vec![vec![0.0; 4]; 5];
        for i in 0..b.len() {
            crate::numcore::axpy(0.1, b.embedding(i), &mut centroids[b.labels()[i]]);
        }
        for (c, s) in ep.support.iter().enumerate() {
            let mut m = vec![0.0; 4];
            for &i in s {
                crate::numcore::axpy(0.1, b.embedding(i), &mut m);
            }
            for k in 0..4 {
                assert!((m[k] - centroids[c][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn insufficient_population_is_an_error() {
        let b = bank(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1], Split::Test);
        assert!(fewshot_eval(&b, &FewShotSpec::default()).is_err());
    }

    #[test]
    fn report_json_omits_unused_fields() {
        let r = EvalReport::knn(&KnnSpec::default(), 0.5).with_checkpoint("c.ckpt");
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"protocol":"knn","k":20,"accuracy":0.5,"checkpoint":"c.ckpt"}"#
        );
    }
}
