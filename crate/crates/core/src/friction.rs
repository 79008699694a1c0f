//! Friction regression from the segmentation model's latent space.
//!
//! The head maps a pooled latent feature vector through two hidden layers,
//! concatenates the one-hot surface vector onto those mid-level features,
//! and maps the result through one more hidden layer and a sigmoid output
//! to a normalized frictional force in `[0, 1]`.

use std::sync::Arc;

use autograd::{Binding, Graph, ParamSet, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::config::kv_section;
use crate::cvae::HierarchicalCvae;
use crate::error::{Error, Result};
use crate::image::{Image, SegMask, IGNORE_CLASS};
use crate::nn::Dense;
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrictionHeadConfig {
    pub hidden: usize,
    /// Class ids that count as driving surfaces; the one-hot vector has one
    /// entry per id, in this order.
    pub surface_classes: Vec<usize>,
    /// Latent draws averaged per frame at inference.
    pub latent_samples: usize,
    pub seed: u64,
}

impl Default for FrictionHeadConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            surface_classes: (0..6).collect(),
            latent_samples: 1,
            seed: 0,
        }
    }
}

kv_section!(
    FrictionHeadConfig,
    "friction",
    [hidden, surface_classes, latent_samples, seed]
);

impl FrictionHeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("friction.hidden must be positive".into()));
        }
        if self.surface_classes.is_empty() {
            return Err(Error::Config("friction.surface_classes is empty".into()));
        }
        if self.latent_samples == 0 {
            return Err(Error::Config(
                "friction.latent_samples must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Indicator of the dominant driving-surface class. All zeros means no
/// surface pixel was found.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceOneHot(Vec<f64>);

impl SurfaceOneHot {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Argument("one-hot entries must be 0 or 1".into()));
        }
        if values.iter().filter(|&&v| v == 1.0).count() > 1 {
            return Err(Error::Argument(
                "one-hot vector has more than one active entry".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn active(&self) -> Option<usize> {
        self.0.iter().position(|&v| v == 1.0)
    }
}

/// One-hot of the most frequent class among pixels whose class is listed in
/// `surface_class_ids`; ties go to the earlier list entry.
pub fn surface_onehot(mask: &SegMask, surface_class_ids: &[usize]) -> Result<SurfaceOneHot> {
    if surface_class_ids.is_empty() {
        return Err(Error::Argument("no surface classes given".into()));
    }
    if let Some(&bad) = surface_class_ids.iter().find(|&&c| c >= mask.num_classes()) {
        return Err(Error::Argument(format!(
            "surface class {bad} not below class count {}",
            mask.num_classes()
        )));
    }
    let mut histogram = vec![0usize; mask.num_classes()];
    for &c in mask.classes() {
        if c != IGNORE_CLASS {
            histogram[c as usize] += 1;
        }
    }
    let mut out = vec![0.0; surface_class_ids.len()];
    let mut best: Option<(usize, usize)> = None;
    for (slot, &class) in surface_class_ids.iter().enumerate() {
        let count = histogram[class];
        if count > 0 && best.is_none_or(|(_, c)| count > c) {
            best = Some((slot, count));
        }
    }
    if let Some((slot, _)) = best {
        out[slot] = 1.0;
    }
    Ok(SurfaceOneHot(out))
}

/// Pooled latent features of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFeature(Vec<f64>);

impl LatentFeature {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument(
                "latent feature has non-finite entries".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrictionEstimate {
    pub mu: f64,
    /// Standard deviation over latent draws, when more than one was averaged.
    pub spread: Option<f64>,
}

/// Samples `z` from the frozen backbone's prior at every scale, averages
/// each scale spatially and concatenates the results (coarsest first).
pub fn extract_latent_feature(
    x: &Image,
    backbone: &HierarchicalCvae,
    seed: u64,
) -> Result<LatentFeature> {
    let (features, _) = backbone.prior_features(&[x], seed, 0)?;
    LatentFeature::new(features.into_data())
}

/// Root-mean-square error.
pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Argument("rmse of no values".into()));
    }
    if predictions.len() != targets.len() {
        return Err(Error::Argument(format!(
            "rmse length mismatch: {} predictions, {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let sse: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sse / predictions.len() as f64).sqrt())
}

/// RMSE training loss on the tape.
pub(crate) fn rmse_loss<'g>(pred: Var<'g>, targets: &[f64]) -> Var<'g> {
    let t = pred
        .graph()
        .constant(Tensor::new(&pred.shape(), targets.to_vec()));
    pred.sub(t).square().mean().sqrt()
}

#[derive(Debug, Clone)]
pub struct FrictionHead {
    config: FrictionHeadConfig,
    feature_len: usize,
    params: ParamSet,
    encode1: Dense,
    encode2: Dense,
    joint: Dense,
    output: Dense,
}

impl FrictionHead {
    pub fn new(config: FrictionHeadConfig, feature_len: usize) -> Result<Self> {
        config.validate()?;
        if feature_len == 0 {
            return Err(Error::Config(
                "latent feature length must be positive".into(),
            ));
        }
        let mut rng = rng_for(config.seed, "friction-init", 0);
        let mut params = ParamSet::new();
        let h = config.hidden;
        let n_s = config.surface_classes.len();
        let encode1 = Dense::new(&mut params, "head.fc1", feature_len, h, 1.0, &mut rng);
        let encode2 = Dense::new(&mut params, "head.fc2", h, h, 1.0, &mut rng);
        let joint = Dense::new(&mut params, "head.fc3", h + n_s, h, 1.0, &mut rng);
        let output = Dense::new(&mut params, "head.out", h, 1, 0.5, &mut rng);
        Ok(Self {
            config,
            feature_len,
            params,
            encode1,
            encode2,
            joint,
            output,
        })
    }

    pub fn config(&self) -> &FrictionHeadConfig {
        &self.config
    }

    pub fn feature_len(&self) -> usize {
        self.feature_len
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn zero_parameters(&mut self) {
        self.params.map_all(|_, t| t.data_mut().fill(0.0));
    }

    /// `[N, feature_len]`, `[N, n_s]` → `[N, 1]` in `(0, 1)`.
    pub(crate) fn forward<'g>(&self, p: &Binding<'g, '_>, z: Var<'g>, s: Var<'g>) -> Var<'g> {
        let h = self.encode1.forward(p, z).relu();
        let h = self.encode2.forward(p, h).relu();
        let h = self.joint.forward(p, Var::concat(&[h, s])).relu();
        self.output.forward(p, h).sigmoid()
    }

    fn check_lengths(&self, z_len: usize, s_len: usize) -> Result<()> {
        if z_len != self.feature_len {
            return Err(Error::Argument(format!(
                "latent feature has length {z_len}, head expects {}",
                self.feature_len
            )));
        }
        if s_len != self.config.surface_classes.len() {
            return Err(Error::Argument(format!(
                "surface vector has length {s_len}, head expects {}",
                self.config.surface_classes.len()
            )));
        }
        Ok(())
    }

    pub fn regress(&self, z: &LatentFeature, s: &SurfaceOneHot) -> Result<FrictionEstimate> {
        self.check_lengths(z.len(), s.len())?;
        let mu = self.predict_batch(
            &Tensor::new(&[1, z.len()], z.values().to_vec()),
            &Tensor::new(&[1, s.len()], s.values().to_vec()),
        )?[0];
        Ok(FrictionEstimate { mu, spread: None })
    }

    pub fn predict_batch(&self, features: &Tensor, surfaces: &Tensor) -> Result<Vec<f64>> {
        self.check_lengths(features.dim(1), surfaces.dim(1))?;
        let g = Graph::new();
        let p = Binding::new(&g, &self.params, false);
        let out = self.forward(
            &p,
            g.constant(features.clone()),
            g.constant(surfaces.clone()),
        );
        Ok(out.value().data().to_vec())
    }

    /// RMSE over the batch and its gradient for every head parameter.
    pub fn loss_and_gradients(
        &self,
        features: &Tensor,
        surfaces: &Tensor,
        targets: &[f64],
    ) -> Result<(f64, Vec<Tensor>)> {
        self.check_lengths(features.dim(1), surfaces.dim(1))?;
        if targets.len() != features.dim(0) {
            return Err(Error::Argument("one target per feature row".into()));
        }
        let g = Graph::new();
        let p = Binding::new(&g, &self.params, true);
        let pred = self.forward(
            &p,
            g.constant(features.clone()),
            g.constant(surfaces.clone()),
        );
        let loss = rmse_loss(pred, targets);
        let value = loss.value().item();
        let grads = g.backward(loss);
        Ok((value, p.gradients(&grads)))
    }

    pub fn loss(&self, features: &Tensor, surfaces: &Tensor, targets: &[f64]) -> Result<f64> {
        let pred = self.predict_batch(features, surfaces)?;
        rmse(&pred, targets)
    }
}

/// A frozen segmentation backbone paired with a friction head.
#[derive(Debug, Clone)]
pub struct LatentFrictionModel {
    pub backbone: Arc<HierarchicalCvae>,
    pub head: FrictionHead,
}

impl LatentFrictionModel {
    pub fn new(backbone: Arc<HierarchicalCvae>, head: FrictionHead) -> Result<Self> {
        let expected = backbone.config().feature_len();
        if head.feature_len() != expected {
            return Err(Error::Config(format!(
                "head expects {}-dim features, backbone produces {expected}",
                head.feature_len()
            )));
        }
        if let Some(&bad) = head
            .config()
            .surface_classes
            .iter()
            .find(|&&c| c >= backbone.config().num_classes)
        {
            return Err(Error::Config(format!(
                "surface class {bad} not produced by a {}-class backbone",
                backbone.config().num_classes
            )));
        }
        Ok(Self { backbone, head })
    }

    /// Features and surface vectors for a batch, from prior draw `draw`.
    pub fn inputs(&self, images: &[&Image], seed: u64, draw: u64) -> Result<(Tensor, Tensor)> {
        let (features, masks) = self.backbone.prior_features(images, seed, draw)?;
        let classes = &self.head.config().surface_classes;
        let mut surfaces = Vec::with_capacity(images.len() * classes.len());
        for m in &masks {
            surfaces.extend_from_slice(surface_onehot(m, classes)?.values());
        }
        Ok((
            features,
            Tensor::new(&[images.len(), classes.len()], surfaces),
        ))
    }

    /// Averages the head output over `latent_samples` prior draws.
    pub fn estimate(&self, x: &Image, seed: u64) -> Result<FrictionEstimate> {
        let k = self.head.config().latent_samples;
        let mut mus = Vec::with_capacity(k);
        for draw in 0..k as u64 {
            let (f, s) = self.inputs(&[x], seed, draw)?;
            mus.push(self.head.predict_batch(&f, &s)?[0]);
        }
        let mean = mus.iter().sum::<f64>() / k as f64;
        let spread = (k > 1)
            .then(|| (mus.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / k as f64).sqrt());
        Ok(FrictionEstimate { mu: mean, spread })
    }

    pub fn estimate_batch(&self, images: &[&Image], seed: u64) -> Result<Vec<f64>> {
        let k = self.head.config().latent_samples;
        let mut acc = vec![0.0; images.len()];
        for draw in 0..k as u64 {
            let (f, s) = self.inputs(images, seed, draw)?;
            for (a, m) in acc.iter_mut().zip(self.head.predict_batch(&f, &s)?) {
                *a += m;
            }
        }
        Ok(acc.into_iter().map(|a| a / k as f64).collect())
    }
}
