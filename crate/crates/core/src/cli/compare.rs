use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::load_run;
use crate::error::{Error, Result};
use crate::eval::{embed_dataset, knn_classify, linear_probe, KnnSpec, LinearProbeSpec, Split};
use crate::trainer::{read_metrics_jsonl, RunFiles};

/// One CSV row. Accuracies are `None` for runs that collapsed.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub run: String,
    pub mode: String,
    pub loss: String,
    pub tau: f64,
    pub seed: u64,
    pub epochs: usize,
    pub knn_top1: Option<f64>,
    pub linear_top1: Option<f64>,
    pub embed_std: f64,
    pub bootstrap_ratio: f64,
    pub collapsed: bool,
}

pub const COMPARE_HEADER: &str = "run,mode,loss,tau,seed,epochs,knn_top1,linear_top1,embed_std,bootstrap_ratio,collapsed";

fn compare_one(run: &Path) -> Result<CompareRow> {
    if !run.is_dir() {
        return Err(Error::Schema {
            path: run.to_path_buf(),
            message: "run directory not found".into(),
        });
    }
    let (manifest, model, _, train, test) = load_run(run, None)?;
    let metrics = read_metrics_jsonl(&run.join(RunFiles::METRICS))?;
    let collapsed = run.join(RunFiles::COLLAPSE).exists();
    let (knn_top1, linear_top1) = if collapsed {
        (None, None)
    } else {
        let test = test.ok_or_else(|| Error::config("test_data", "comparison needs a held-out split"))?;
        let tr = embed_dataset(&model.backbone, &train, Split::Train)?;
        let te = embed_dataset(&model.backbone, &test, Split::Test)?;
        (
            Some(knn_classify(&tr, &te, KnnSpec::default())?),
            Some(linear_probe(&tr, &te, LinearProbeSpec::default())?),
        )
    };
    let last = metrics.last();
    let c = &manifest.config;
    Ok(CompareRow {
        run: run.file_name().map_or_else(|| run.display().to_string(), |n| n.to_string_lossy().into_owned()),
        mode: c.pair_mode.flag().to_string(),
        loss: c.loss.to_string(),
        tau: c.tau,
        seed: c.seed,
        epochs: last.map_or(0, |m| m.epoch),
        knn_top1,
        linear_top1,
        embed_std: last.map_or(0.0, |m| m.embed_std),
        bootstrap_ratio: last.map_or(0.0, |m| m.bootstrap_ratio),
        collapsed,
    })
}

/// Rows in argument order.
pub fn compare_runs(runs: &[PathBuf]) -> Result<Vec<CompareRow>> {
    if runs.len() < 2 {
        return Err(Error::config("runs", "compare needs at least two run directories"));
    }
    runs.iter().map(|r| compare_one(r)).collect()
}

pub(crate) fn to_csv(rows: &[CompareRow]) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
    let mut s = String::from(COMPARE_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{:.4},{:.4},{}",
            r.run,
            r.mode,
            r.loss,
            r.tau,
            r.seed,
            r.epochs,
            cell(r.knn_top1),
            cell(r.linear_top1),
            r.embed_std,
            r.bootstrap_ratio,
            r.collapsed
        );
    }
    s
}
