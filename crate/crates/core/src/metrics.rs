//! Evaluation metrics: IoU, sample diversity, RMSE model comparison.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{SegMask, IGNORE_CLASS};
use crate::plot::{line_chart, Series};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IouReport {
    /// `None` for classes absent from both masks.
    pub per_class: Vec<Option<f64>>,
    /// Mean over present classes; 1.0 when no class is present at all.
    pub mean: f64,
}

/// Running intersection and union counts over many mask pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct IouAccumulator {
    num_classes: usize,
    ignore: Option<u8>,
    intersection: Vec<u64>,
    union: Vec<u64>,
}

impl IouAccumulator {
    pub fn new(num_classes: usize, ignore: Option<u8>) -> Self {
        Self {
            num_classes,
            ignore,
            intersection: vec![0; num_classes],
            union: vec![0; num_classes],
        }
    }

    /// Pixels where either mask holds the ignore class are skipped.
    pub fn add(&mut self, pred: &SegMask, truth: &SegMask) -> Result<()> {
        if (pred.height(), pred.width()) != (truth.height(), truth.width()) {
            return Err(Error::Argument(format!(
                "mask shapes differ: {}×{} vs {}×{}",
                pred.height(),
                pred.width(),
                truth.height(),
                truth.width()
            )));
        }
        let k = self.num_classes;
        for (&p, &t) in pred.classes().iter().zip(truth.classes()) {
            if Some(p) == self.ignore || Some(t) == self.ignore {
                continue;
            }
            for c in [p, t] {
                if c as usize >= k {
                    return Err(Error::Label(format!(
                        "class id {c} not below class count {k}"
                    )));
                }
            }
            if p == t {
                self.intersection[p as usize] += 1;
                self.union[p as usize] += 1;
            } else {
                self.union[p as usize] += 1;
                self.union[t as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn report(&self) -> IouReport {
        let per_class: Vec<Option<f64>> = self
            .intersection
            .iter()
            .zip(&self.union)
            .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let mean = if present.is_empty() {
            1.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        IouReport { per_class, mean }
    }
}

pub fn mean_iou(
    pred: &SegMask,
    truth: &SegMask,
    num_classes: usize,
    ignore: Option<u8>,
) -> Result<IouReport> {
    let mut acc = IouAccumulator::new(num_classes, ignore);
    acc.add(pred, truth)?;
    Ok(acc.report())
}

/// Mean over unordered sample pairs of `1 − mean IoU`, skipping pixels
/// marked [`IGNORE_CLASS`].
pub fn sample_diversity(samples: &[SegMask]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Argument(format!(
            "diversity needs at least two samples, got {}",
            samples.len()
        )));
    }
    let k = samples.iter().map(SegMask::num_classes).max().unwrap_or(1);
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            total += 1.0 - mean_iou(&samples[i], &samples[j], k, Some(IGNORE_CLASS))?.mean;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// One row of a per-epoch friction training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_rmse: f64,
    pub val_rmse: f64,
}

pub fn read_epoch_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let rows = reader
        .deserialize()
        .collect::<std::result::Result<Vec<EpochRecord>, _>>()
        .map_err(|e| Error::format(path, e))?;
    if rows.is_empty() {
        return Err(Error::format(path, "log has no epochs"));
    }
    Ok(rows)
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub best_val_rmse: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub model: String,
    pub log: PathBuf,
}

/// Best (minimum) validation RMSE per run, sorted ascending.
pub fn comparison_table(runs: &[EvalRun]) -> Result<(Vec<ComparisonRow>, Vec<Vec<EpochRecord>>)> {
    if runs.is_empty() {
        return Err(Error::Argument("no evaluation runs to compare".into()));
    }
    let logs = runs
        .iter()
        .map(|r| read_epoch_log(&r.log))
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<ComparisonRow> = runs
        .iter()
        .zip(&logs)
        .map(|(run, log)| {
            let best = log
                .iter()
                .min_by(|a, b| a.val_rmse.total_cmp(&b.val_rmse))
                .expect("logs are non-empty");
            ComparisonRow {
                model: run.model.clone(),
                best_val_rmse: best.val_rmse,
                best_epoch: best.epoch,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.best_val_rmse
            .total_cmp(&b.best_val_rmse)
            .then_with(|| a.model.cmp(&b.model))
    });
    Ok((rows, logs))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the comparison CSV and an RMSE-vs-epoch overlay plot.
pub fn compare_models(
    runs: &[EvalRun],
    table_csv: &Path,
    plot_svg: &Path,
) -> Result<Vec<ComparisonRow>> {
    let (rows, logs) = comparison_table(runs)?;
    write_csv(table_csv, &rows)?;
    let series: Vec<Series> = runs
        .iter()
        .zip(&logs)
        .map(|(run, log)| Series {
            label: run.model.clone(),
            points: log.iter().map(|r| (r.epoch as f64, r.val_rmse)).collect(),
        })
        .collect();
    line_chart(plot_svg, "Validation RMSE", "epoch", "RMSE", &series)?;
    Ok(rows)
}

/// Per-frame friction evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrictionEvalRow {
    pub frame_id: String,
    pub mu_pred: f64,
    pub mu_true: f64,
}

pub fn read_friction_eval(path: &Path) -> Result<Vec<FrictionEvalRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format(path, e))
}
