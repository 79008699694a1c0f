//! Training loops for the three model families.

use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use autograd::{Adam, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{five_patch_crop, random_transform_traced, AugmentConfig};
use crate::baseline::EndToEndModel;
use crate::config::kv_section;
use crate::cvae::{HierarchicalCvae, SegBatch};
use crate::error::{Error, Result};
use crate::friction::{rmse, FrictionHead, FrictionHeadConfig, LatentFrictionModel};
use crate::image::{Image, SegMask, IGNORE_CLASS};
use crate::metrics::{EpochRecord, IouAccumulator, IouReport};
use crate::rng::{derive_seed, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Optimizer steps for the segmentation model.
    pub steps: usize,
    /// Epochs for the friction head and the end-to-end model.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub head_lr: f64,
    pub e2e_lr: f64,
    /// Five-patch crop plus one random transform per segmentation sample.
    pub augment: bool,
    /// Distinct prior draws cycled through when training the friction head.
    pub feature_draws: usize,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1300,
            epochs: 35,
            batch_size: 8,
            lr: 1e-4,
            head_lr: 1e-3,
            e2e_lr: 1e-4,
            augment: true,
            feature_draws: 4,
            log_every: 50,
            seed: 0,
        }
    }
}

kv_section!(
    TrainConfig,
    "train",
    [
        steps,
        epochs,
        batch_size,
        lr,
        head_lr,
        e2e_lr,
        augment,
        feature_draws,
        log_every,
        seed
    ]
);

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.feature_draws == 0 {
            return Err(Error::Config(
                "train.batch_size and train.feature_draws must be positive".into(),
            ));
        }
        for (name, lr) in [
            ("lr", self.lr),
            ("head_lr", self.head_lr),
            ("e2e_lr", self.e2e_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("train.{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Deterministic epoch-wise shuffled mini-batches of indices.
struct BatchSampler {
    n: usize,
    batch: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut s = Self {
            n,
            batch: batch.min(n),
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.n).collect();
        self.order
            .shuffle(&mut rng_for(self.seed, "batch-order", self.epoch));
        self.pos = 0;
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.n {
            self.epoch += 1;
            self.reshuffle();
        }
        let b = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        b
    }

    /// Every index once, in `ceil(n / batch)` batches.
    fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(seed, "batch-order", epoch));
        order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvaeLogRow {
    pub iteration: usize,
    pub total_loss: f64,
    pub reconstruction: f64,
    pub kl: Vec<f64>,
}

pub fn write_cvae_log(path: &Path, rows: &[CvaeLogRow], scales: usize) -> Result<()> {
    let mut header = vec!["iteration".to_string(), "total_loss".into(), "recon".into()];
    header.extend((1..=scales).map(|i| format!("kl_scale_{i}")));
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::metrics::csv_error(path, e))?;
    w.write_record(&header)
        .map_err(|e| crate::metrics::csv_error(path, e))?;
    for r in rows {
        let mut rec = vec![
            r.iteration.to_string(),
            r.total_loss.to_string(),
            r.reconstruction.to_string(),
        ];
        rec.extend(r.kl.iter().map(f64::to_string));
        w.write_record(&rec)
            .map_err(|e| crate::metrics::csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One training example, optionally augmented: a random patch of the
/// five-patch crop, then one random transform.
fn training_example(
    x: &Image,
    y: &SegMask,
    augment: Option<(&AugmentConfig, usize)>,
    seed: u64,
) -> Result<(Image, SegMask)> {
    match augment {
        None => Ok((x.clone(), y.clone())),
        Some((config, multiple)) => {
            let patches = five_patch_crop(x, y, multiple)?;
            let pick = rng_for(seed, "patch", 0).random_range(0..patches.len());
            let (px, py) = &patches[pick];
            let (ax, ay, _) = random_transform_traced(px, py, seed, config)?;
            Ok((ax, ay))
        }
    }
}

/// Trains with Adam for `config.steps` steps. `on_row` sees every logged
/// iteration (for progress output).
pub fn train_cvae(
    model: &mut HierarchicalCvae,
    data: &[(Image, SegMask)],
    config: &TrainConfig,
    augment: &AugmentConfig,
    mut on_row: impl FnMut(&CvaeLogRow),
) -> Result<Vec<CvaeLogRow>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("empty segmentation dataset".into()));
    }
    if config.augment {
        augment.validate()?;
    }
    let multiple = 1usize << model.config().levels;
    let mut sampler = BatchSampler::new(data.len(), config.batch_size, config.seed);
    let mut adam = Adam::new(model.params(), config.lr);
    let mut rows = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let idx = sampler.next_batch();
        let examples = idx
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let seed = derive_seed(
                    config.seed,
                    "augment-step",
                    (step * config.batch_size + k) as u64,
                );
                training_example(
                    &data[i].0,
                    &data[i].1,
                    config.augment.then_some((augment, multiple)),
                    seed,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let pairs: Vec<(&Image, &SegMask)> = examples.iter().map(|(x, y)| (x, y)).collect();
        let batch = SegBatch::new(&pairs)?;
        let (report, grads) = model
            .loss_and_gradients(&batch, derive_seed(config.seed, "elbo-step", step as u64))
            .map_err(|e| match e {
                Error::Training {
                    loss, diagnostics, ..
                } => Error::Training {
                    iteration: step,
                    loss,
                    diagnostics,
                },
                other => other,
            })?;
        adam.step(model.params_mut(), &grads);
        let row = CvaeLogRow {
            iteration: step,
            total_loss: report.loss,
            reconstruction: report.reconstruction,
            kl: report.kl,
        };
        if config.log_every > 0 && (step % config.log_every == 0 || step + 1 == config.steps) {
            on_row(&row);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Mean IoU of the averaged prediction (argmax) over a labelled set.
pub fn evaluate_segmentation(
    model: &HierarchicalCvae,
    data: &[(Image, SegMask)],
    samples: usize,
    seed: u64,
) -> Result<IouReport> {
    let mut acc = IouAccumulator::new(model.config().num_classes, Some(IGNORE_CLASS));
    for (i, (x, y)) in data.iter().enumerate() {
        let pred = model.predict(x, samples, derive_seed(seed, "eval", i as u64))?;
        acc.add(&pred.probabilities.argmax(), y)?;
    }
    Ok(acc.report())
}

fn check_mu(data: &[(Image, f64)]) -> Result<()> {
    if let Some((_, mu)) = data.iter().find(|(_, mu)| !(0.0..=1.0).contains(mu)) {
        return Err(Error::Data(format!("friction target {mu} outside [0, 1]")));
    }
    Ok(())
}

fn batch_rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let width = t.dim(1);
    let mut data = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * width..(i + 1) * width]);
    }
    Tensor::new(&[idx.len(), width], data)
}

/// Features and surface vectors for every image, one tensor pair per draw.
fn precompute_inputs(
    model: &LatentFrictionModel,
    images: &[&Image],
    seed: u64,
    draws: usize,
) -> Result<Vec<(Tensor, Tensor)>> {
    const CHUNK: usize = 16;
    (0..draws as u64)
        .map(|draw| {
            let mut feats = Vec::new();
            let mut surfs = Vec::new();
            for chunk in images.chunks(CHUNK) {
                let (f, s) = model.inputs(chunk, seed, draw)?;
                feats.push(f);
                surfs.push(s);
            }
            Ok((Tensor::stack_batch(&feats), Tensor::stack_batch(&surfs)))
        })
        .collect()
}

fn averaged_predictions(head: &FrictionHead, inputs: &[(Tensor, Tensor)]) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; inputs[0].0.dim(0)];
    for (f, s) in inputs {
        for (a, p) in acc.iter_mut().zip(head.predict_batch(f, s)?) {
            *a += p;
        }
    }
    Ok(acc.into_iter().map(|a| a / inputs.len() as f64).collect())
}

/// Trains a friction head on features of a frozen backbone. Validation
/// averages `latent_samples` prior draws per image, as inference does.
pub fn train_friction_head(
    backbone: Arc<HierarchicalCvae>,
    head_config: FrictionHeadConfig,
    train: &[(Image, f64)],
    val: &[(Image, f64)],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(LatentFrictionModel, Vec<EpochRecord>)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("empty friction training set".into()));
    }
    check_mu(train)?;
    check_mu(val)?;
    let head = FrictionHead::new(head_config, backbone.config().feature_len())?;
    let mut model = LatentFrictionModel::new(backbone, head)?;
    let train_images: Vec<&Image> = train.iter().map(|(x, _)| x).collect();
    let train_mu: Vec<f64> = train.iter().map(|(_, m)| *m).collect();
    let train_inputs = precompute_inputs(&model, &train_images, config.seed, config.feature_draws)?;
    let val_images: Vec<&Image> = val.iter().map(|(x, _)| x).collect();
    let val_mu: Vec<f64> = val.iter().map(|(_, m)| *m).collect();
    let val_inputs = if val.is_empty() {
        Vec::new()
    } else {
        precompute_inputs(
            &model,
            &val_images,
            config.seed,
            model.head.config().latent_samples,
        )?
    };

    let mut adam = Adam::new(model.head.params(), config.head_lr);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (feats, surfs) = &train_inputs[epoch % train_inputs.len()];
        let mut sq = 0.0;
        for idx in
            BatchSampler::epoch_batches(train.len(), config.batch_size, config.seed, epoch as u64)
        {
            let targets: Vec<f64> = idx.iter().map(|&i| train_mu[i]).collect();
            let (loss, grads) = model.head.loss_and_gradients(
                &batch_rows(feats, &idx),
                &batch_rows(surfs, &idx),
                &targets,
            )?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    iteration: epoch,
                    loss,
                    diagnostics: crate::error::LossDiagnostics {
                        reconstruction: loss,
                        kl: Vec::new(),
                    },
                });
            }
            sq += loss * loss * idx.len() as f64;
            adam.step(model.head.params_mut(), &grads);
        }
        let train_rmse = (sq / train.len() as f64).sqrt();
        let val_rmse = if val.is_empty() {
            f64::NAN
        } else {
            rmse(&averaged_predictions(&model.head, &val_inputs)?, &val_mu)?
        };
        let rec = EpochRecord {
            epoch: epoch + 1,
            train_rmse,
            val_rmse,
        };
        on_epoch(&rec);
        log.push(rec);
    }
    Ok((model, log))
}

/// Trains the end-to-end regressor; images are resized to the configured
/// input resolution first.
pub fn train_end_to_end(
    model: &mut EndToEndModel,
    train: &[(Image, f64)],
    val: &[(Image, f64)],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("empty friction training set".into()));
    }
    check_mu(train)?;
    check_mu(val)?;
    let (h, w) = (model.config().height, model.config().width);
    let resize = |d: &[(Image, f64)]| -> Vec<(Image, f64)> {
        d.iter().map(|(x, m)| (x.resize(h, w), *m)).collect()
    };
    let train = resize(train);
    let val = resize(val);
    let val_images: Vec<&Image> = val.iter().map(|(x, _)| x).collect();
    let val_mu: Vec<f64> = val.iter().map(|(_, m)| *m).collect();

    let mut adam = Adam::new(model.params(), config.e2e_lr);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut sq = 0.0;
        for idx in
            BatchSampler::epoch_batches(train.len(), config.batch_size, config.seed, epoch as u64)
        {
            let images: Vec<&Image> = idx.iter().map(|&i| &train[i].0).collect();
            let targets: Vec<f64> = idx.iter().map(|&i| train[i].1).collect();
            let (loss, grads) = model.loss_and_gradients(&images, &targets)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    iteration: epoch,
                    loss,
                    diagnostics: crate::error::LossDiagnostics {
                        reconstruction: loss,
                        kl: Vec::new(),
                    },
                });
            }
            sq += loss * loss * idx.len() as f64;
            adam.step(model.params_mut(), &grads);
        }
        let train_rmse = (sq / train.len() as f64).sqrt();
        let val_rmse = if val.is_empty() {
            f64::NAN
        } else {
            let mut preds = Vec::with_capacity(val.len());
            for chunk in val_images.chunks(16) {
                preds.extend(model.predict_batch(chunk)?);
            }
            rmse(&preds, &val_mu)?
        };
        let rec = EpochRecord {
            epoch: epoch + 1,
            train_rmse,
            val_rmse,
        };
        on_epoch(&rec);
        log.push(rec);
    }
    Ok(log)
}

/// Human-readable progress line for a log file.
pub fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}
