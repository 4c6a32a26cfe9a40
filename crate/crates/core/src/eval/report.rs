use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CosineSeparation, Embeddings, MetricsReport};
use crate::data::Dataset;
use crate::error::Result;
use crate::training::{Strategy, TrainConfig, TrainTrace};

pub const METRICS_FILE: &str = "metrics.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";

/// Outcome of one training run. Contains no timestamps or durations, so two
/// runs with the same config and seed serialize to the same bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub code_version: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub stage1_epochs: Option<usize>,
    /// Starting point of every weight in the run.
    pub initialization: String,
    pub config: TrainConfig,
    pub train_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    #[serde(flatten)]
    pub metrics: MetricsReport,
    /// Cosine statistics of the test-set mapping-module outputs.
    pub separation: Option<CosineSeparation>,
    pub trace: TrainTrace,
}

impl RunReport {
    pub fn new(
        cfg: &TrainConfig,
        train: &Dataset,
        test: &Dataset,
        metrics: MetricsReport,
        separation: Option<CosineSeparation>,
        trace: TrainTrace,
    ) -> Self {
        Self {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            strategy: cfg.strategy,
            seed: cfg.seed,
            stage1_epochs: cfg.stage1_epochs.filter(|_| cfg.strategy.is_two_stage()),
            initialization: "random (no pretrained weights)".into(),
            config: cfg.clone(),
            train_counts: train.class_counts(),
            test_counts: test.class_counts(),
            metrics,
            separation,
            trace,
        }
    }
}

pub fn write_metrics_json(path: &Path, report: &RunReport) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}

/// Matrix layout: a header of predicted class names, then one row per true class.
pub fn write_confusion_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let names: Vec<&str> = report.per_class.iter().map(|c| c.name.as_str()).collect();
    let mut out = format!("true/predicted,{}\n", names.join(","));
    for (name, row) in names.iter().zip(report.confusion.counts()) {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "{name},{}", cells.join(","));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_curves_csv(path: &Path, trace: &TrainTrace) -> Result<()> {
    let mut out = String::from("epoch,stage,loss\n");
    for stage in &trace.stages {
        for (e, loss) in stage.epoch_losses.iter().enumerate() {
            let _ = writeln!(out, "{},{},{loss}", e + 1, stage.stage.name());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn push_row(out: &mut String, values: &[f64]) {
    for v in values {
        let _ = write!(out, ",{v}");
    }
}

/// One row per sample: id, label, representation, mapping-module output and
/// 2-D projection columns (the latter two only when available).
pub fn write_embeddings_csv(path: &Path, e: &Embeddings) -> Result<()> {
    let mut out = String::from("id,label");
    for k in 0..e.rep.row_len() {
        let _ = write!(out, ",rep_{k}");
    }
    if let Some(z) = &e.z {
        for k in 0..z.row_len() {
            let _ = write!(out, ",z_{k}");
        }
    }
    if e.projection.is_some() {
        out.push_str(",pc_1,pc_2");
    }
    out.push('\n');
    for (i, label) in e.labels.iter().enumerate() {
        let _ = write!(out, "{i},{label}");
        push_row(&mut out, e.rep.row(i));
        if let Some(z) = &e.z {
            push_row(&mut out, z.row(i));
        }
        if let Some(p) = &e.projection {
            push_row(&mut out, p.row(i));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes the four report files into `dir` and returns their paths.
pub fn write_run_artifacts(dir: &Path, report: &RunReport, embeddings: &Embeddings) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let paths = [METRICS_FILE, CONFUSION_FILE, CURVES_FILE, EMBEDDINGS_FILE].map(|f| dir.join(f));
    write_metrics_json(&paths[0], report)?;
    write_confusion_csv(&paths[1], &report.metrics)?;
    write_curves_csv(&paths[2], &report.trace)?;
    write_embeddings_csv(&paths[3], embeddings)?;
    Ok(paths.to_vec())
}
