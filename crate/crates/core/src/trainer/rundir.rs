use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{pretrain_with, EpochReport, TrainConfig, TrainOutcome};
use crate::dataaug::Dataset;
use crate::error::{Error, Result};

/// File names inside a run directory.
pub struct RunFiles;

impl RunFiles {
    pub const CONFIG: &'static str = "config.json";
    pub const METRICS: &'static str = "metrics.jsonl";
    pub const TIMING: &'static str = "timing.jsonl";
    pub const CHECKPOINTS: &'static str = "checkpoints";
    pub const CACHE: &'static str = "cache.bin";
    pub const COLLAPSE: &'static str = "collapse.json";
    pub const NEIGHBORS: &'static str = "neighbors.jsonl";
    pub const EVAL: &'static str = "eval.json";
    pub const MANIFEST: &'static str = "manifest.json";

    pub fn checkpoint(dir: &Path, epoch: usize) -> PathBuf {
        dir.join(Self::CHECKPOINTS).join(format!("epoch-{epoch:04}.ckpt"))
    }

    /// Highest-epoch checkpoint in `dir`, if any.
    pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
        let ckpts = dir.join(Self::CHECKPOINTS);
        if !ckpts.is_dir() {
            return Ok(None);
        }
        let mut best: Option<(usize, PathBuf)> = None;
        for entry in fs::read_dir(ckpts)? {
            let path = entry?.path();
            let epoch = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("epoch-"))
                .and_then(|n| n.strip_suffix(".ckpt"))
                .and_then(|n| n.parse::<usize>().ok());
            if let Some(e) = epoch {
                if best.as_ref().map_or(true, |(b, _)| e > *b) {
                    best = Some((e, path));
                }
            }
        }
        Ok(best.map(|(_, p)| p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Save a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { checkpoint_every: 50 }
    }
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub(crate) fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Trains and populates `dir` with the resolved config, per-epoch metrics,
/// checkpoints, the cache dump and, on collapse, a collapse report.
pub fn run_to_dir(config: &TrainConfig, dataset: &Dataset, dir: &Path, options: RunOptions) -> Result<TrainOutcome> {
    config.validate()?;
    fs::create_dir_all(dir.join(RunFiles::CHECKPOINTS))?;
    write_json_atomic(&dir.join(RunFiles::CONFIG), config)?;
    let mut metrics = BufWriter::new(fs::File::create(dir.join(RunFiles::METRICS))?);
    let mut timing = BufWriter::new(fs::File::create(dir.join(RunFiles::TIMING))?);

    let mut observer = |r: &EpochReport<'_>| -> Result<()> {
        serde_json::to_writer(&mut metrics, r.metrics)?;
        metrics.write_all(b"\n")?;
        metrics.flush()?;
        writeln!(timing, "{{\"epoch\":{},\"wall_clock\":{}}}", r.metrics.epoch, r.metrics.wall_clock)?;
        let e = r.metrics.epoch;
        if options.checkpoint_every > 0 && e % options.checkpoint_every == 0 && e != config.epochs {
            r.model.to_checkpoint(e).save(&RunFiles::checkpoint(dir, e))?;
        }
        Ok(())
    };
    let outcome = pretrain_with(config, dataset, &mut observer)?;
    metrics.flush()?;
    timing.flush()?;

    let last = outcome.metrics.last().map_or(0, |m| m.epoch);
    outcome.model.to_checkpoint(last).save(&RunFiles::checkpoint(dir, last))?;
    outcome.dump.write_to(&dir.join(RunFiles::CACHE))?;
    if let Some(c) = &outcome.collapse {
        write_json_atomic(&dir.join(RunFiles::COLLAPSE), c)?;
    }
    Ok(outcome)
}

/// Parses `metrics.jsonl`, naming the offending line on failure.
pub fn read_metrics_jsonl(path: &Path) -> Result<Vec<super::EpochMetrics>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
