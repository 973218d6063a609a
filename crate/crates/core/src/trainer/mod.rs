//! The pretraining loop: augment, embed, score against the feature cache,
//! pick a partner per query, take an optimizer step, and log per-epoch
//! metrics.
//!
//! Each mini-batch is scored against the cache as it stood at batch start;
//! all cache and window updates land before pair decisions are made, and
//! decisions are made in batch order. Randomness comes from four independent
//! ChaCha streams (init, shuffle, augmentation, pairing), so changing how
//! pairs are drawn never perturbs the augmentations or the data order.

mod config;
mod metrics;
mod model;
mod pairing;
mod rundir;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{CacheSource, LossKind, PairMode, TrainConfig};
pub use metrics::{compute_epoch_metrics, embedding_std, EpochMetrics, PairMetrics, PairStats};
pub use model::EncoderPair;
pub use pairing::{oracle_probability, supervised_pair, ClassIndex, OracleSchedule, PairingEngine, Scored};
pub use rundir::{read_metrics_jsonl, run_to_dir, RunFiles, RunOptions};
pub(crate) use rundir::{write_atomic, write_json_atomic};

use crate::dataaug::Dataset;
use crate::error::{Error, Result};
use crate::simcache::{CacheDump, PairDecision};
use model::Learner;

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_AUGMENT: u64 = 2;
const STREAM_PAIR: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub epoch: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EncoderPair,
    /// One entry per completed epoch.
    pub metrics: Vec<EpochMetrics>,
    pub dump: CacheDump,
    pub collapse: Option<CollapseReport>,
}

impl TrainOutcome {
    /// Turns a collapsed run into [`Error::Collapsed`].
    pub fn into_result(self) -> Result<Self> {
        match &self.collapse {
            Some(c) => Err(Error::Collapsed {
                epoch: c.epoch,
                reason: c.reason.clone(),
            }),
            None => Ok(self),
        }
    }
}

/// Everything an observer sees at the end of an epoch.
pub struct EpochReport<'a> {
    pub metrics: &'a EpochMetrics,
    /// Decisions in processing order.
    pub decisions: &'a [PairDecision],
    pub model: &'a EncoderPair,
}

pub trait TrainObserver {
    fn on_epoch(&mut self, report: &EpochReport<'_>) -> Result<()>;
}

impl TrainObserver for () {
    fn on_epoch(&mut self, _: &EpochReport<'_>) -> Result<()> {
        Ok(())
    }
}

impl<F: FnMut(&EpochReport<'_>) -> Result<()>> TrainObserver for F {
    fn on_epoch(&mut self, report: &EpochReport<'_>) -> Result<()> {
        self(report)
    }
}

pub fn pretrain(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    pretrain_with(config, dataset, &mut ())
}

pub fn pretrain_with(config: &TrainConfig, dataset: &Dataset, observer: &mut dyn TrainObserver) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::config("data", "dataset is empty"));
    }
    let n = dataset.len();
    let dim = dataset.dim();
    let labels = dataset.labels.as_deref();

    let mut model = EncoderPair::new(config, dim, &mut stream(config.seed, STREAM_INIT))?;
    let mut learner = Learner::new(config, &model)?;
    let cache_dim = match config.cache_source {
        CacheSource::Embedding => model.embed_dim(),
        CacheSource::Output => match config.loss {
            LossKind::Simsiam => config.embed_dim,
            LossKind::Dino => config.dino_out_dim,
            LossKind::Infonce => config.embed_dim,
        },
    };
    let mut engine = PairingEngine::new(config, n, cache_dim, labels)?;
    let mut shuffle_rng = stream(config.seed, STREAM_SHUFFLE);
    let mut aug_rng = stream(config.seed, STREAM_AUGMENT);
    let mut pair_rng = stream(config.seed, STREAM_PAIR);

    let mut order: Vec<usize> = (0..n).collect();
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut collapse = None;
    let mut last_epoch = 0;

    'epochs: for epoch in 1..=config.epochs {
        let started = Instant::now();
        if config.lr_warmup_epochs > 0 && epoch <= config.lr_warmup_epochs {
            learner.set_learning_rate(config.lr * epoch as f64 / config.lr_warmup_epochs as f64);
        } else {
            learner.set_learning_rate(config.lr);
        }
        order.shuffle(&mut shuffle_rng);
        let mut decisions = Vec::with_capacity(n);
        let mut stats = PairStats::default();
        let mut loss_sum = 0.0;

        for chunk in order.chunks(config.batch_size) {
            let mut students = Vec::with_capacity(chunk.len());
            let mut teacher_aug = Vec::with_capacity(chunk.len());
            let mut items = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let t = config.augmentation.sample(dim, &mut aug_rng);
                let t_prime = config.augmentation.sample(dim, &mut aug_rng);
                let pass = learner.student_pass(&model, &t.apply(dataset.item(i)))?;
                items.push((i, pass.cache_vector(config.cache_source).to_vec()));
                students.push(pass);
                teacher_aug.push(t_prime);
            }
            let paired = match engine.step_batch(&items, epoch, &mut pair_rng) {
                Err(Error::Degenerate(why)) => {
                    collapse = Some(CollapseReport {
                        epoch,
                        reason: format!("cache update failed: {why}"),
                    });
                    break 'epochs;
                }
                other => other?,
            };
            let teacher_inputs: Vec<Vec<f64>> = paired
                .iter()
                .zip(&teacher_aug)
                .map(|((d, _), t)| t.apply(dataset.item(d.partner)))
                .collect();
            let batch_loss = match learner.accumulate(&model, &students, &teacher_inputs, epoch - 1) {
                Err(Error::Degenerate(why)) => {
                    collapse = Some(CollapseReport {
                        epoch,
                        reason: format!("loss undefined: {why}"),
                    });
                    break 'epochs;
                }
                other => other?,
            };
            if !batch_loss.is_finite() {
                collapse = Some(CollapseReport {
                    epoch,
                    reason: format!("non-finite batch loss {batch_loss}"),
                });
                break 'epochs;
            }
            learner.step(&mut model)?;
            loss_sum += batch_loss * chunk.len() as f64;
            for (d, dist) in &paired {
                stats.record(d, dist.as_ref(), labels);
                decisions.push(*d);
            }
        }

        let mean_loss = loss_sum / n as f64;
        let probe = n.min(config.probe_size.max(1));
        let embeds = (0..probe).map(|i| model.embed(dataset.item(i))).collect::<Result<Vec<_>>>()?;
        let embed_std = match embedding_std(&embeds) {
            Ok(s) => s,
            Err(Error::Degenerate(_)) => 0.0,
            Err(e) => return Err(e),
        };
        if !mean_loss.is_finite() || !embed_std.is_finite() {
            collapse = Some(CollapseReport {
                epoch,
                reason: format!("non-finite epoch statistics (mean_loss {mean_loss}, embed_std {embed_std})"),
            });
            break;
        }
        let pm = stats.finish();
        let m = EpochMetrics {
            epoch,
            mean_loss,
            bootstrap_ratio: pm.bootstrap_ratio,
            nn_top1: pm.nn_top1,
            second_nn_top1: pm.second_nn_top1,
            embed_std,
            wall_clock: started.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {epoch}: loss {:.4} ratio {:.3} std {:.4}",
            m.mean_loss,
            m.bootstrap_ratio,
            m.embed_std
        );
        observer.on_epoch(&EpochReport {
            metrics: &m,
            decisions: &decisions,
            model: &model,
        })?;
        metrics.push(m);
        last_epoch = epoch;
    }

    if let Some(c) = &collapse {
        log::warn!("run collapsed at epoch {}: {}", c.epoch, c.reason);
    }
    let (cache, windows) = engine.into_parts();
    Ok(TrainOutcome {
        model,
        metrics,
        dump: CacheDump {
            cache,
            windows,
            topk: config.topk,
            window: config.window,
            epoch: last_epoch,
        },
        collapse,
    })
}
