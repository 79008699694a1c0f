use std::path::{Path, PathBuf};
use std::sync::Arc;

use fricvae::data::{friction_pairs, load_samples, segmentation_pairs};
use fricvae::ground_truth::{build_dataset, IngestOptions, MuMode};
use fricvae::manifest::{manifest_dir, write_manifest};
use fricvae::metrics::{
    compare_models, read_epoch_log, write_csv, EpochRecord, EvalRun, FrictionEvalRow,
    IouAccumulator,
};
use fricvae::plot::{line_chart, Series};
use fricvae::rng::derive_seed;
use fricvae::synthetic::{generate_dataset, TRAIN_MANIFEST, VAL_MANIFEST};
use fricvae::train::{
    append_line, train_cvae, train_end_to_end, train_friction_head, write_cvae_log,
};
use fricvae::{
    param_checksum, Checkpoint, EndToEndModel, ExperimentConfig, HierarchicalCvae, Image,
    ModelKind, SegMask, IGNORE_CLASS,
};
use serde::Serialize;

use crate::{
    CliError, CliResult, CompareArgs, Context, EvalArgs, GenerateArgs, InferArgs, IngestArgs,
    ModelArg, TrainArgs,
};

fn require_exists(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<String> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))? + "\n";
    std::fs::write(path, &text)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    Ok(text)
}

fn load_config(ctx: &Context, path: Option<&Path>) -> CliResult<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => {
            require_exists(p, "config file")?;
            ExperimentConfig::load(p)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = ctx.seed {
        cfg.apply_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `(train manifest, optional validation manifest)` for a dataset argument.
fn training_manifests(data: &Path) -> CliResult<(PathBuf, Option<PathBuf>)> {
    require_exists(data, "dataset")?;
    if data.is_dir() {
        let train = data.join(TRAIN_MANIFEST);
        require_exists(&train, "training manifest")?;
        let val = data.join(VAL_MANIFEST);
        Ok((train, val.exists().then_some(val)))
    } else {
        Ok((data.to_path_buf(), None))
    }
}

fn eval_manifest(data: &Path) -> CliResult<PathBuf> {
    require_exists(data, "dataset")?;
    if data.is_dir() {
        let val = data.join(VAL_MANIFEST);
        require_exists(&val, "validation manifest")?;
        Ok(val)
    } else {
        Ok(data.to_path_buf())
    }
}

pub(crate) fn generate(ctx: &Context, a: GenerateArgs) -> CliResult<()> {
    if a.count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    let mut spec = load_config(ctx, a.spec.as_deref())?.data;
    if let Some(seed) = ctx.seed {
        spec.seed = seed;
    }
    let fraction = a.train_fraction;
    let ds = generate_dataset(&spec, a.count, (fraction, 1.0 - fraction), &a.out)?;
    println!(
        "wrote {} training and {} validation scenes to {}",
        ds.train.len(),
        ds.val.len(),
        a.out.display()
    );
    Ok(())
}

pub(crate) fn ingest(_ctx: &Context, a: IngestArgs) -> CliResult<()> {
    require_exists(&a.frames, "frames directory")?;
    require_exists(&a.signals, "signal log")?;
    let options = IngestOptions {
        tolerance_s: a.tolerance,
        gravity: a.gravity,
        mode: match a.window {
            Some(window_s) => MuMode::WindowedMax { window_s },
            None => MuMode::Instantaneous,
        },
        ..IngestOptions::default()
    };
    let (records, summary) = build_dataset(&a.frames, &a.signals, &manifest_dir(&a.out), &options)?;
    write_manifest(&a.out, &records)?;
    println!(
        "{}",
        serde_json::to_string(&summary).map_err(|e| CliError::runtime(e.to_string()))?
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    model: &'static str,
    initial_loss: f64,
    final_loss: f64,
    best_val_rmse: Option<f64>,
    best_epoch: Option<usize>,
    checksum: String,
    backbone_checksum: Option<String>,
}

struct Layout {
    checkpoints: PathBuf,
    logs: PathBuf,
    reports: PathBuf,
}

impl Layout {
    fn create(out: &Path) -> CliResult<Self> {
        let l = Self {
            checkpoints: out.join("checkpoints"),
            logs: out.join("logs"),
            reports: out.join("reports"),
        };
        for d in [&l.checkpoints, &l.logs, &l.reports] {
            create_dir(d)?;
        }
        Ok(l)
    }
}

fn epoch_line(r: &EpochRecord) -> String {
    format!(
        "epoch {:4}  train_rmse {:.6}  val_rmse {:.6}",
        r.epoch, r.train_rmse, r.val_rmse
    )
}

/// Writes the epoch CSV, then plots it from the file.
fn finish_epoch_log(
    layout: &Layout,
    name: &str,
    log: &[EpochRecord],
) -> CliResult<(Option<f64>, Option<usize>)> {
    let csv = layout.logs.join(format!("{name}.csv"));
    write_csv(&csv, log)?;
    let log = read_epoch_log(&csv)?;
    let series = [
        Series {
            label: "train".into(),
            points: log.iter().map(|r| (r.epoch as f64, r.train_rmse)).collect(),
        },
        Series {
            label: "validation".into(),
            points: log
                .iter()
                .filter(|r| r.val_rmse.is_finite())
                .map(|r| (r.epoch as f64, r.val_rmse))
                .collect(),
        },
    ];
    line_chart(
        &layout.reports.join(format!("{name}_rmse.svg")),
        name,
        "epoch",
        "RMSE",
        &series,
    )?;
    let best = log
        .iter()
        .filter(|r| r.val_rmse.is_finite())
        .min_by(|a, b| a.val_rmse.total_cmp(&b.val_rmse));
    Ok((best.map(|r| r.val_rmse), best.map(|r| r.epoch)))
}

pub(crate) fn train(ctx: &Context, a: TrainArgs) -> CliResult<()> {
    if a.model == ModelArg::FrictionLatent && a.backbone.is_none() {
        return Err(CliError::usage(
            "--model friction-latent requires --backbone <checkpoint>",
        ));
    }
    let cfg = load_config(ctx, a.config.as_deref())?;
    let (train_manifest, val_manifest) = training_manifests(&ctx.data_path(&a.data))?;
    let layout = Layout::create(&a.out)?;
    let name = a.model.name();
    let human_log = layout.logs.join(format!("{name}.log"));
    std::fs::write(&human_log, "")
        .map_err(|e| CliError::runtime(format!("{}: {e}", human_log.display())))?;
    let classes = cfg.cvae.num_classes;
    let train_samples = load_samples(&train_manifest, classes)?;
    let val_samples = match &val_manifest {
        Some(v) => load_samples(v, classes)?,
        None => Vec::new(),
    };
    let mut log_err = None;
    let mut log_line = |line: String| {
        log::info!("{line}");
        if let Err(e) = append_line(&human_log, &line) {
            log_err.get_or_insert(e);
        }
    };

    let (checkpoint, summary) = match a.model {
        ModelArg::Cvae => {
            let data = segmentation_pairs(&train_samples)?;
            let mut model = HierarchicalCvae::new(cfg.cvae.clone())?;
            let rows = train_cvae(&mut model, &data, &cfg.train, &cfg.augment, |r| {
                log_line(format!(
                    "step {:5}  loss {:.6}  recon {:.6}  kl {:?}",
                    r.iteration, r.total_loss, r.reconstruction, r.kl
                ))
            })?;
            write_cvae_log(
                &layout.logs.join("cvae.csv"),
                &rows,
                model.config().latent_scales,
            )?;
            let series = [
                Series {
                    label: "total".into(),
                    points: rows
                        .iter()
                        .map(|r| (r.iteration as f64, r.total_loss))
                        .collect(),
                },
                Series {
                    label: "reconstruction".into(),
                    points: rows
                        .iter()
                        .map(|r| (r.iteration as f64, r.reconstruction))
                        .collect(),
                },
            ];
            line_chart(
                &layout.reports.join("cvae_loss.svg"),
                "cvae",
                "iteration",
                "loss",
                &series,
            )?;
            let (first, last) = (rows.first(), rows.last());
            let summary = TrainSummary {
                model: name,
                initial_loss: first.map_or(f64::NAN, |r| r.total_loss),
                final_loss: last.map_or(f64::NAN, |r| r.total_loss),
                best_val_rmse: None,
                best_epoch: None,
                checksum: param_checksum(model.params()),
                backbone_checksum: None,
            };
            (Checkpoint::cvae(&model, &cfg), summary)
        }
        ModelArg::FrictionLatent => {
            let backbone_path = a.backbone.as_deref().expect("checked above");
            require_exists(backbone_path, "backbone checkpoint")?;
            let backbone = Checkpoint::load(backbone_path)?.to_cvae()?;
            let before = param_checksum(backbone.params());
            let (model, log) = train_friction_head(
                Arc::new(backbone),
                cfg.friction.clone(),
                &friction_pairs(&train_samples),
                &friction_pairs(&val_samples),
                &cfg.train,
                |r| log_line(epoch_line(r)),
            )?;
            let after = param_checksum(model.backbone.params());
            if after != before {
                return Err(CliError::runtime(format!(
                    "backbone parameters changed during head training ({before} → {after})"
                )));
            }
            let (best, epoch) = finish_epoch_log(&layout, name, &log)?;
            let summary = TrainSummary {
                model: name,
                initial_loss: log.first().map_or(f64::NAN, |r| r.train_rmse),
                final_loss: log.last().map_or(f64::NAN, |r| r.train_rmse),
                best_val_rmse: best,
                best_epoch: epoch,
                checksum: param_checksum(model.head.params()),
                backbone_checksum: Some(after),
            };
            (Checkpoint::friction_latent(&model, &cfg), summary)
        }
        ModelArg::EndToEnd => {
            let mut model = EndToEndModel::new(cfg.e2e.clone())?;
            let log = train_end_to_end(
                &mut model,
                &friction_pairs(&train_samples),
                &friction_pairs(&val_samples),
                &cfg.train,
                |r| log_line(epoch_line(r)),
            )?;
            let (best, epoch) = finish_epoch_log(&layout, name, &log)?;
            let summary = TrainSummary {
                model: name,
                initial_loss: log.first().map_or(f64::NAN, |r| r.train_rmse),
                final_loss: log.last().map_or(f64::NAN, |r| r.train_rmse),
                best_val_rmse: best,
                best_epoch: epoch,
                checksum: param_checksum(model.params()),
                backbone_checksum: None,
            };
            (Checkpoint::end_to_end(&model, &cfg), summary)
        }
    };
    if let Some(e) = log_err {
        return Err(e.into());
    }
    let checkpoint = checkpoint.with_meta("final_loss", summary.final_loss);
    checkpoint.save(&layout.checkpoints.join(format!("{name}.ckpt")))?;
    let config_path = layout.checkpoints.join(format!("{name}.config"));
    std::fs::write(&config_path, checkpoint.config.render())
        .map_err(|e| CliError::runtime(format!("{}: {e}", config_path.display())))?;
    write_json(&layout.reports.join(format!("{name}_train.json")), &summary)?;
    println!("final loss {}", summary.final_loss);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentationReport {
    pub kind: &'static str,
    pub frames: usize,
    pub samples: usize,
    pub mean_iou: f64,
    /// `None` for classes absent from both prediction and truth everywhere.
    pub per_class: Vec<Option<f64>>,
}

/// Pools IoU over every labelled frame; `predict` sees the frame index.
pub fn segmentation_report(
    data: &[(Image, SegMask)],
    num_classes: usize,
    samples: usize,
    mut predict: impl FnMut(usize, &Image) -> fricvae::Result<SegMask>,
) -> fricvae::Result<SegmentationReport> {
    let mut acc = IouAccumulator::new(num_classes, Some(IGNORE_CLASS));
    for (i, (x, y)) in data.iter().enumerate() {
        acc.add(&predict(i, x)?, y)?;
    }
    let r = acc.report();
    Ok(SegmentationReport {
        kind: "segmentation",
        frames: data.len(),
        samples,
        mean_iou: r.mean,
        per_class: r.per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrictionReport {
    pub kind: &'static str,
    pub frames: usize,
    pub rmse: f64,
    /// File name of the per-frame CSV, next to the report.
    pub per_frame: String,
}

pub fn friction_report(
    rows: &[FrictionEvalRow],
    per_frame: &str,
) -> fricvae::Result<FrictionReport> {
    let pred: Vec<f64> = rows.iter().map(|r| r.mu_pred).collect();
    let truth: Vec<f64> = rows.iter().map(|r| r.mu_true).collect();
    Ok(FrictionReport {
        kind: "friction",
        frames: rows.len(),
        rmse: fricvae::friction::rmse(&pred, &truth)?,
        per_frame: per_frame.to_string(),
    })
}

fn run_seed(ctx: &Context, ckpt: &Checkpoint) -> u64 {
    ctx.seed.unwrap_or(ckpt.config.train.seed)
}

pub(crate) fn eval(ctx: &Context, a: EvalArgs) -> CliResult<()> {
    if a.samples == 0 {
        return Err(CliError::usage("--samples must be at least 1"));
    }
    require_exists(&a.model, "checkpoint")?;
    let ckpt = Checkpoint::load(&a.model)?;
    let manifest = eval_manifest(&ctx.data_path(&a.data))?;
    let samples = load_samples(&manifest, ckpt.config.cvae.num_classes)?;
    let seed = run_seed(ctx, &ckpt);
    if let Some(dir) = a.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let text = match ckpt.kind {
        ModelKind::Cvae => {
            let model = ckpt.to_cvae()?;
            let data = segmentation_pairs(&samples)?;
            let report =
                segmentation_report(&data, model.config().num_classes, a.samples, |i, x| {
                    Ok(model
                        .predict(x, a.samples, derive_seed(seed, "eval", i as u64))?
                        .probabilities
                        .argmax())
                })?;
            write_json(&a.report, &report)?
        }
        ModelKind::FrictionLatent | ModelKind::EndToEnd => {
            let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
            let mut preds = Vec::with_capacity(images.len());
            if ckpt.kind == ModelKind::FrictionLatent {
                let model = ckpt.to_friction_latent()?;
                for chunk in images.chunks(16) {
                    preds.extend(model.estimate_batch(chunk, seed)?);
                }
            } else {
                let model = ckpt.to_end_to_end()?;
                let (h, w) = (model.config().height, model.config().width);
                let resized: Vec<Image> = images.iter().map(|x| x.resize(h, w)).collect();
                let refs: Vec<&Image> = resized.iter().collect();
                for chunk in refs.chunks(16) {
                    preds.extend(model.predict_batch(chunk)?);
                }
            }
            let rows: Vec<FrictionEvalRow> = samples
                .iter()
                .zip(preds)
                .map(|(s, mu_pred)| FrictionEvalRow {
                    frame_id: s.frame_id.clone(),
                    mu_pred,
                    mu_true: s.mu,
                })
                .collect();
            let csv = a.report.with_extension("frames.csv");
            write_csv(&csv, &rows)?;
            let file = csv.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            write_json(&a.report, &friction_report(&rows, file)?)?
        }
    };
    print!("{text}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct InferResult {
    kind: &'static str,
    samples: usize,
    mu: Option<f64>,
    mu_spread: Option<f64>,
    mask: Option<String>,
    uncertainty: Option<String>,
    max_uncertainty: Option<f64>,
}

pub(crate) fn infer(ctx: &Context, a: InferArgs) -> CliResult<()> {
    if a.samples == 0 {
        return Err(CliError::usage("--samples must be at least 1"));
    }
    require_exists(&a.model, "checkpoint")?;
    require_exists(&a.image, "image")?;
    let ckpt = Checkpoint::load(&a.model)?;
    let x = Image::load_png(&a.image)?;
    let seed = run_seed(ctx, &ckpt);
    create_dir(&a.out)?;
    let mut result = InferResult {
        kind: ckpt.kind.as_str(),
        samples: a.samples,
        mu: None,
        mu_spread: None,
        mask: None,
        uncertainty: None,
        max_uncertainty: None,
    };
    if matches!(ckpt.kind, ModelKind::Cvae | ModelKind::FrictionLatent) {
        let model = ckpt.to_cvae()?;
        let pred = model.predict(&x, a.samples, seed)?;
        pred.probabilities
            .argmax()
            .save_png(&a.out.join("mask.png"))?;
        let (h, w) = (x.height(), x.width());
        let u = Image::new(
            h,
            w,
            1,
            pred.uncertainty.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )?;
        u.save_png(&a.out.join("uncertainty.png"))?;
        result.mask = Some("mask.png".into());
        result.uncertainty = Some("uncertainty.png".into());
        result.max_uncertainty = Some(pred.uncertainty.iter().copied().fold(0.0, f64::max));
    }
    match ckpt.kind {
        ModelKind::FrictionLatent => {
            let est = ckpt.to_friction_latent()?.estimate(&x, seed)?;
            result.mu = Some(est.mu);
            result.mu_spread = est.spread;
        }
        ModelKind::EndToEnd => {
            let model = ckpt.to_end_to_end()?;
            let (h, w) = (model.config().height, model.config().width);
            result.mu = Some(model.predict(&x.resize(h, w))?.mu);
        }
        ModelKind::Cvae => {}
    }
    print!("{}", write_json(&a.out.join("result.json"), &result)?);
    Ok(())
}

pub(crate) fn compare(a: CompareArgs) -> CliResult<()> {
    let runs = a
        .runs
        .iter()
        .map(|spec| {
            let (model, log) = spec
                .split_once('=')
                .filter(|(m, l)| !m.is_empty() && !l.is_empty())
                .ok_or_else(|| CliError::usage(format!("--run expects name=path, got {spec:?}")))?;
            let log = PathBuf::from(log);
            require_exists(&log, "training log")?;
            Ok(EvalRun {
                model: model.to_string(),
                log,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let reports = a.out.join("reports");
    create_dir(&reports)?;
    let rows = compare_models(
        &runs,
        &reports.join("comparison.csv"),
        &reports.join("comparison.svg"),
    )?;
    for r in rows {
        println!(
            "{:<20} {:.6} (epoch {})",
            r.model, r.best_val_rmse, r.best_epoch
        );
    }
    Ok(())
}
