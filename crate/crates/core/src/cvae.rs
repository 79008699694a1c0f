//! Hierarchical conditional VAE for semantic segmentation.
//!
//! Two residual U-Nets share one layout:
//!
//! * the **prior** network sees only the image. Its decoder emits
//!   `p_i(z_i | x, z_<i)` at each latent scale, coarsest first, and after
//!   the last scale continues to full resolution to produce class logits.
//!   It is also the segmentation decoder `p(y | x, z)`.
//! * the **posterior** network sees the image concatenated with the one-hot
//!   mask and emits `q_i(z_i | z_<i, x, y)`; its decoder stops at the finest
//!   latent scale.
//!
//! Training samples `z ~ q` (one reparameterized draw per step), feeds those
//! latents into the prior decoder and minimizes
//!
//! ```text
//! loss = CE(y, decode(x, z)) + β · (1/L) · Σ_i KL(q_i ‖ p_i)
//! ```
//!
//! where CE is the mean per-pixel cross-entropy and each `KL_i` is summed over
//! latent elements and divided by the number of image pixels, so both terms
//! are in nats per pixel. Prediction averages the decoder's class
//! probabilities over `N` draws from the prior.

use std::sync::Arc;

use autograd::{Binding, Graph, ParamSet, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::kv_section;
use crate::error::{Error, LossDiagnostics, Result};
use crate::image::{ClassProbabilities, Image, OneHotMask, SegMask, IGNORE_CLASS};
use crate::rng::rng_for;
use crate::unet::{tile_constant, DecodeTrace, Decoder, Encoder, Latent, UNetShape};

/// Default number of prior samples averaged at prediction time.
pub const DEFAULT_PREDICTION_SAMPLES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaeConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub levels: usize,
    pub residual_blocks_per_level: usize,
    pub latent_scales: usize,
    /// Channels of each latent scale, coarsest first.
    pub latent_channels: Vec<usize>,
    pub base_width: usize,
    /// KL weight.
    pub beta: f64,
    pub seed: u64,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            num_classes: 6,
            levels: 3,
            residual_blocks_per_level: 2,
            latent_scales: 3,
            latent_channels: vec![2, 2, 2],
            base_width: 8,
            beta: 1.0,
            seed: 0,
        }
    }
}

kv_section!(
    CvaeConfig,
    "cvae",
    [
        in_channels,
        num_classes,
        levels,
        residual_blocks_per_level,
        latent_scales,
        latent_channels,
        base_width,
        beta,
        seed
    ]
);

impl CvaeConfig {
    /// Cityscapes-style 19-class preset.
    pub fn cityscapes() -> Self {
        Self {
            num_classes: 19,
            base_width: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.latent_scales == 0 || self.levels < self.latent_scales {
            return fail(format!(
                "need levels ({}) >= latent_scales ({}) >= 1",
                self.levels, self.latent_scales
            ));
        }
        if self.latent_channels.len() != self.latent_scales {
            return fail(format!(
                "latent_channels lists {} scales, latent_scales is {}",
                self.latent_channels.len(),
                self.latent_scales
            ));
        }
        if self.in_channels == 0 || self.base_width == 0 || self.latent_channels.contains(&0) {
            return fail("all widths must be positive".into());
        }
        if self.num_classes < 2 || self.num_classes >= IGNORE_CLASS as usize {
            return fail(format!("class count {} out of range", self.num_classes));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return fail(format!(
                "beta must be finite and non-negative, got {}",
                self.beta
            ));
        }
        Ok(())
    }

    fn shape(&self) -> UNetShape {
        UNetShape {
            in_channels: self.in_channels,
            levels: self.levels,
            blocks: self.residual_blocks_per_level,
            base_width: self.base_width,
            latent_channels: self.latent_channels.clone(),
        }
    }

    /// Spatial size `(h, w)` of latent scale `scale` (0 = coarsest) for an
    /// `height × width` input.
    pub fn latent_resolution(&self, scale: usize, height: usize, width: usize) -> (usize, usize) {
        let level = self.levels - scale;
        (height >> level, width >> level)
    }

    /// Length of the pooled latent feature vector: the sum of latent channels.
    pub fn feature_len(&self) -> usize {
        self.latent_channels.iter().sum()
    }
}

/// Diagonal Gaussian for one latent scale, `[channels, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mean: Tensor,
    pub log_variance: Tensor,
}

impl GaussianParams {
    pub fn new(mean: Tensor, log_variance: Tensor) -> Result<Self> {
        if mean.shape() != log_variance.shape() {
            return Err(Error::Argument(format!(
                "mean {:?} and log-variance {:?} shapes differ",
                mean.shape(),
                log_variance.shape()
            )));
        }
        if !log_variance.all_finite() {
            return Err(Error::Argument("log-variance must be finite".into()));
        }
        Ok(Self { mean, log_variance })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentScale {
    pub params: GaussianParams,
    pub z: Tensor,
}

/// Sampled latents for every scale, coarsest first.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub scales: Vec<LatentScale>,
}

/// `mean + exp(log_variance / 2) · noise`.
pub fn sample_latent(params: &GaussianParams, noise: &Tensor) -> Result<Tensor> {
    if noise.shape() != params.mean.shape() {
        return Err(Error::Argument(format!(
            "noise shape {:?} does not match {:?}",
            noise.shape(),
            params.mean.shape()
        )));
    }
    let data = params
        .mean
        .data()
        .iter()
        .zip(params.log_variance.data())
        .zip(noise.data())
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect();
    Ok(Tensor::new(params.mean.shape(), data))
}

/// Closed-form `KL(q ‖ p)` summed over every component.
pub fn gaussian_kl(q: &GaussianParams, p: &GaussianParams) -> Result<f64> {
    if q.mean.shape() != p.mean.shape() {
        return Err(Error::Argument(format!(
            "KL between shapes {:?} and {:?}",
            q.mean.shape(),
            p.mean.shape()
        )));
    }
    Ok(autograd::gaussian_kl_sum(
        q.mean.data(),
        q.log_variance.data(),
        p.mean.data(),
        p.log_variance.data(),
    ))
}

pub fn standard_normal(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

/// Loss value and its parts for one evaluation of the training objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboReport {
    pub loss: f64,
    pub reconstruction: f64,
    /// Per-scale `KL(q_i ‖ p_i)` in nats per image pixel, coarsest first.
    pub kl: Vec<f64>,
}

impl ElboReport {
    fn diagnostics(&self) -> LossDiagnostics {
        LossDiagnostics {
            reconstruction: self.reconstruction,
            kl: self.kl.clone(),
        }
    }
}

/// Output of [`HierarchicalCvae::predict`].
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Mean of the per-sample class distributions.
    pub probabilities: ClassProbabilities,
    /// Per pixel, the variance of each class probability across samples,
    /// summed over classes (`H·W`, row-major).
    pub uncertainty: Vec<f64>,
    /// Argmax mask of each individual sample.
    pub sample_masks: Vec<SegMask>,
}

/// A batch of aligned images and masks prepared for the training graph.
pub struct SegBatch {
    images: Tensor,
    one_hot: Tensor,
    targets: Arc<Vec<usize>>,
}

impl SegBatch {
    pub fn new(pairs: &[(&Image, &SegMask)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let images: Vec<&Image> = pairs.iter().map(|(x, _)| *x).collect();
        let images = Image::batch_tensor(&images)?;
        let mut one_hot = Vec::new();
        let mut targets = Vec::new();
        for (x, y) in pairs {
            if (x.height(), x.width()) != (y.height(), y.width()) {
                return Err(Error::Argument(format!(
                    "image {}×{} and mask {}×{} are not aligned",
                    x.height(),
                    x.width(),
                    y.height(),
                    y.width()
                )));
            }
            one_hot.push(y.to_one_hot().to_tensor());
            targets.extend(y.targets());
        }
        Ok(Self {
            images,
            one_hot: Tensor::stack_batch(&one_hot),
            targets: Arc::new(targets),
        })
    }

    pub fn len(&self) -> usize {
        self.images.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct HierarchicalCvae {
    config: CvaeConfig,
    params: ParamSet,
    prior_encoder: Encoder,
    prior_decoder: Decoder,
    posterior_encoder: Encoder,
    posterior_decoder: Decoder,
}

impl HierarchicalCvae {
    /// Randomly initialized model (seeded by `config.seed`).
    pub fn new(config: CvaeConfig) -> Result<Self> {
        config.validate()?;
        let shape = config.shape();
        let mut rng = rng_for(config.seed, "cvae-init", 0);
        let mut params = ParamSet::new();
        let prior_encoder = Encoder::new(
            &mut params,
            "prior.enc",
            &shape,
            config.in_channels,
            &mut rng,
        );
        let prior_decoder = Decoder::new(
            &mut params,
            "prior.dec",
            &shape,
            0,
            Some(config.num_classes),
            &mut rng,
        );
        let posterior_encoder = Encoder::new(
            &mut params,
            "posterior.enc",
            &shape,
            config.in_channels + config.num_classes,
            &mut rng,
        );
        let last_latent_level = config.levels + 1 - config.latent_scales;
        let posterior_decoder = Decoder::new(
            &mut params,
            "posterior.dec",
            &shape,
            last_latent_level,
            None,
            &mut rng,
        );
        Ok(Self {
            config,
            params,
            prior_encoder,
            prior_decoder,
            posterior_encoder,
            posterior_decoder,
        })
    }

    pub fn config(&self) -> &CvaeConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Sets every weight and bias to zero.
    pub fn zero_parameters(&mut self) {
        self.params.map_all(|_, t| t.data_mut().fill(0.0));
    }

    /// Sets the bias of every log-variance head (prior and posterior) so
    /// that, with zero weights, all scales sit at the given log-variance.
    pub fn set_logvar_bias(&mut self, value: f64) {
        self.params.map_all(|name, t| {
            if name.contains(".logvar.b") {
                t.data_mut().fill(value);
            }
        });
    }

    /// Checks an input against the architecture.
    pub fn check_image(&self, x: &Image) -> Result<()> {
        check_resolution(x, self.config.in_channels, self.config.levels)
    }

    fn check_mask(&self, x: &Image, y: &OneHotMask) -> Result<()> {
        if y.num_classes() != self.config.num_classes {
            return Err(Error::Label(format!(
                "mask has {} classes, model expects {}",
                y.num_classes(),
                self.config.num_classes
            )));
        }
        if (y.height(), y.width()) != (x.height(), x.width()) {
            return Err(Error::Argument(
                "image and mask are not spatially aligned".into(),
            ));
        }
        Ok(())
    }

    fn latent_shape(&self, scale: usize, batch: usize, height: usize, width: usize) -> [usize; 4] {
        let (h, w) = self.config.latent_resolution(scale, height, width);
        [batch, self.config.latent_channels[scale], h, w]
    }

    fn given_latents<'g>(
        &self,
        g: &'g Graph,
        x: &Image,
        partial: &[Tensor],
    ) -> Result<Vec<Latent<'g>>> {
        if partial.len() >= self.config.latent_scales {
            return Err(Error::Argument(format!(
                "{} latents given but the model has only {} scales",
                partial.len(),
                self.config.latent_scales
            )));
        }
        partial
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let want = self.latent_shape(i, 1, x.height(), x.width());
                if z.shape() != &want[1..] {
                    return Err(Error::Argument(format!(
                        "latent {i} has shape {:?}, expected {:?}",
                        z.shape(),
                        &want[1..]
                    )));
                }
                Ok(Latent::Given(g.constant(z.clone().reshape(&want))))
            })
            .collect()
    }

    /// Prior Gaussian for scale `partial.len()` given the image and the
    /// already-chosen coarser latents (`[channels, h, w]` each).
    pub fn encode_prior(&self, x: &Image, partial: &[Tensor]) -> Result<GaussianParams> {
        self.check_image(x)?;
        let g = Graph::new();
        let p = Binding::new(&g, &self.params, false);
        let latents = self.given_latents(&g, x, partial)?;
        let skips = self.prior_encoder.forward(&p, g.constant(x.to_tensor()));
        let trace = self.prior_decoder.forward(&p, &skips, &latents);
        Ok(last_gaussian(&trace))
    }

    /// Posterior Gaussian for scale `partial.len()`.
    pub fn encode_posterior(
        &self,
        x: &Image,
        y: &SegMask,
        partial: &[Tensor],
    ) -> Result<GaussianParams> {
        self.encode_posterior_one_hot(x, &y.to_one_hot(), partial)
    }

    pub fn encode_posterior_one_hot(
        &self,
        x: &Image,
        y: &OneHotMask,
        partial: &[Tensor],
    ) -> Result<GaussianParams> {
        self.check_image(x)?;
        self.check_mask(x, y)?;
        let g = Graph::new();
        let p = Binding::new(&g, &self.params, false);
        let latents = self.given_latents(&g, x, partial)?;
        let input = Var::concat(&[g.constant(x.to_tensor()), g.constant(y.to_tensor())]);
        let skips = self.posterior_encoder.forward(&p, input);
        let trace = self.posterior_decoder.forward(&p, &skips, &latents);
        Ok(last_gaussian(&trace))
    }

    /// Per-scale standard-normal noise for prior sample `sample` of an
    /// `height × width` input; shapes `[1, channels, h, w]`.
    pub fn prior_noise(&self, height: usize, width: usize, seed: u64, sample: u64) -> Vec<Tensor> {
        let mut rng = rng_for(seed, "prior-noise", sample);
        (0..self.config.latent_scales)
            .map(|i| standard_normal(&self.latent_shape(i, 1, height, width), &mut rng))
            .collect()
    }

    fn check_noise(&self, x: &Image, noise: &[Tensor]) -> Result<()> {
        if noise.len() != self.config.latent_scales {
            return Err(Error::Argument(format!(
                "noise for {} scales, model has {}",
                noise.len(),
                self.config.latent_scales
            )));
        }
        for (i, n) in noise.iter().enumerate() {
            let want = self.latent_shape(i, 1, x.height(), x.width());
            if n.shape() != want {
                return Err(Error::Argument(format!(
                    "noise {i} has shape {:?}, expected {want:?}",
                    n.shape()
                )));
            }
        }
        Ok(())
    }

    /// Ancestral draw from the prior using [`Self::prior_noise`] sample 0.
    pub fn sample_prior(&self, x: &Image, seed: u64) -> Result<LatentSample> {
        self.check_image(x)?;
        let noise = self.prior_noise(x.height(), x.width(), seed, 0);
        self.sample_prior_with_noise(x, &noise)
    }

    pub fn sample_prior_with_noise(&self, x: &Image, noise: &[Tensor]) -> Result<LatentSample> {
        self.check_image(x)?;
        self.check_noise(x, noise)?;
        let g = Graph::new();
        let p = Binding::new(&g, &self.params, false);
        let skips = self.prior_encoder.forward(&p, g.constant(x.to_tensor()));
        let latents: Vec<Latent> = noise.iter().cloned().map(Latent::Noise).collect();
        let trace = self.prior_decoder.forward(&p, &skips, &latents);
        Ok(latent_sample(&trace))
    }

    /// Ancestral draw from the posterior.
    pub fn sample_posterior(&self, x: &Image, y: &SegMask, seed: u64) -> Result<LatentSample> {
        self.check_image(x)?;
        let one_hot = y.to_one_hot();
        self.check_mask(x, &one_hot)?;
        let g = Graph::new();
        let p = Binding::new(&g, &self.params, false);
        let mut rng = rng_for(seed, "posterior-noise", 0);
        let latents: Vec<Latent> = (0..self.config.latent_scales)
            .map(|i| {
                Latent::Noise(standard_normal(
                    &self.latent_shape(i, 1, x.height(), x.width()),
                    &mut rng,
                ))
            })
            .collect();
        let input = Var::concat(&[g.constant(x.to_tensor()), g.constant(one_hot.to_tensor())]);
        let skips = self.posterior_encoder.forward(&p, input);
        let trace = self.posterior_decoder.forward(&p, &skips, &latents);
        Ok(latent_sample(&trace))
    }

    /// Per-pixel class distribution `p(y | x, z)`.
    pub fn decode(&self, x: &Image, z: &LatentSample) -> Result<ClassProbabilities> {
        self.check_image(x)?;
        if z.scales.len() != self.config.latent_scales {
            return Err(Error::Argument(format!(
                "decode needs {} latent scales, got {}",
                self.config.latent_scales,
                z.scales.len()
            )));
        }
        let partial: Vec<Tensor> = z.scales.iter().map(|s| s.z.clone()).collect();
        let g = Graph::new();
        let p = Binding::new(&g, &self.params, false);
        let latents: Vec<Latent> = partial
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let want = self.latent_shape(i, 1, x.height(), x.width());
                if t.shape() != &want[1..] {
                    return Err(Error::Argument(format!(
                        "latent {i} has shape {:?}, expected {:?}",
                        t.shape(),
                        &want[1..]
                    )));
                }
                Ok(Latent::Given(g.constant(t.clone().reshape(&want))))
            })
            .collect::<Result<_>>()?;
        let skips = self.prior_encoder.forward(&p, g.constant(x.to_tensor()));
        let trace = self.prior_decoder.forward(&p, &skips, &latents);
        let logits = trace.output.expect("full pass produces logits").value();
        Ok(ClassProbabilities::from_tensor(&logits.softmax_axis1()))
    }

    fn elbo_graph<'g>(
        &self,
        p: &Binding<'g, '_>,
        batch: &SegBatch,
        seed: u64,
    ) -> (Var<'g>, Var<'g>, Vec<Var<'g>>) {
        let g = p.graph();
        let n = batch.len();
        let (h, w) = (batch.images.dim(2), batch.images.dim(3));
        let x = g.constant(batch.images.clone());
        let xy = Var::concat(&[x, g.constant(batch.one_hot.clone())]);

        let mut rng = rng_for(seed, "posterior-noise", 0);
        let noise: Vec<Latent> = (0..self.config.latent_scales)
            .map(|i| Latent::Noise(standard_normal(&self.latent_shape(i, n, h, w), &mut rng)))
            .collect();
        let post_skips = self.posterior_encoder.forward(p, xy);
        let posterior = self.posterior_decoder.forward(p, &post_skips, &noise);

        let given: Vec<Latent> = posterior
            .latents
            .iter()
            .map(|z| Latent::Given(*z))
            .collect();
        let prior_skips = self.prior_encoder.forward(p, x);
        let prior = self.prior_decoder.forward(p, &prior_skips, &given);

        let logits = prior.output.expect("full pass produces logits");
        let recon =
            logits.softmax_cross_entropy(Arc::clone(&batch.targets), Some(IGNORE_CLASS as usize));
        let per_pixel = 1.0 / (n * h * w) as f64;
        let kls: Vec<Var> = posterior
            .gaussians
            .iter()
            .zip(&prior.gaussians)
            .map(|((mq, lvq), (mp, lvp))| Var::gaussian_kl(*mq, *lvq, *mp, *lvp).scale(per_pixel))
            .collect();
        let weight = self.config.beta / self.config.latent_scales as f64;
        let mut loss = recon;
        for kl in &kls {
            loss = loss.add(kl.scale(weight));
        }
        (loss, recon, kls)
    }

    fn report(loss: Var<'_>, recon: Var<'_>, kls: &[Var<'_>]) -> ElboReport {
        ElboReport {
            loss: loss.value().item(),
            reconstruction: recon.value().item(),
            kl: kls.iter().map(|k| k.value().item()).collect(),
        }
    }

    /// Training objective on a single pair, one posterior sample drawn
    /// from `seed`.
    pub fn elbo_loss(&self, x: &Image, y: &SegMask, seed: u64) -> Result<ElboReport> {
        self.check_image(x)?;
        self.check_mask(x, &y.to_one_hot())?;
        let batch = SegBatch::new(&[(x, y)])?;
        self.elbo_batch(&batch, seed)
    }

    pub fn elbo_batch(&self, batch: &SegBatch, seed: u64) -> Result<ElboReport> {
        self.check_batch(batch)?;
        let g = Graph::new();
        let p = Binding::new(&g, &self.params, false);
        let (loss, recon, kls) = self.elbo_graph(&p, batch, seed);
        let report = Self::report(loss, recon, &kls);
        finite_or_error(report, 0)
    }

    /// Objective and its gradient with respect to every parameter, in
    /// [`ParamSet`] order.
    pub fn loss_and_gradients(
        &self,
        batch: &SegBatch,
        seed: u64,
    ) -> Result<(ElboReport, Vec<Tensor>)> {
        self.check_batch(batch)?;
        let g = Graph::new();
        let p = Binding::new(&g, &self.params, true);
        let (loss, recon, kls) = self.elbo_graph(&p, batch, seed);
        let report = finite_or_error(Self::report(loss, recon, &kls), 0)?;
        let grads = g.backward(loss);
        Ok((report, p.gradients(&grads)))
    }

    fn check_batch(&self, batch: &SegBatch) -> Result<()> {
        let s = batch.images.shape();
        if s[1] != self.config.in_channels {
            return Err(Error::Config(format!(
                "batch has {} channels, model expects {}",
                s[1], self.config.in_channels
            )));
        }
        check_divisible(s[2], s[3], self.config.levels)?;
        if batch.one_hot.dim(1) != self.config.num_classes {
            return Err(Error::Label(format!(
                "masks have {} classes, model expects {}",
                batch.one_hot.dim(1),
                self.config.num_classes
            )));
        }
        Ok(())
    }

    /// Averages decoder probabilities over `samples` prior draws
    /// ([`Self::prior_noise`] samples `0..samples`).
    pub fn predict(&self, x: &Image, samples: usize, seed: u64) -> Result<Prediction> {
        if samples < 1 {
            return Err(Error::Argument(
                "prediction needs at least one sample".into(),
            ));
        }
        self.check_image(x)?;
        let noise: Vec<Vec<Tensor>> = (0..samples as u64)
            .map(|s| self.prior_noise(x.height(), x.width(), seed, s))
            .collect();
        self.predict_with_noise(x, &noise)
    }

    /// [`Self::predict`] with explicit per-sample noise.
    pub fn predict_with_noise(&self, x: &Image, noise: &[Vec<Tensor>]) -> Result<Prediction> {
        if noise.is_empty() {
            return Err(Error::Argument(
                "prediction needs at least one sample".into(),
            ));
        }
        self.check_image(x)?;
        for n in noise {
            self.check_noise(x, n)?;
        }
        let samples = noise.len();
        let probs = self.sample_probabilities(x, noise)?;
        let c = self.config.num_classes;
        let plane = c * x.height() * x.width();
        let mut mean = vec![0.0; plane];
        for s in 0..samples {
            for (m, v) in mean
                .iter_mut()
                .zip(&probs.data()[s * plane..(s + 1) * plane])
            {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= samples as f64);
        let hw = x.height() * x.width();
        let mut uncertainty = vec![0.0; hw];
        for s in 0..samples {
            let sp = &probs.data()[s * plane..(s + 1) * plane];
            for k in 0..c {
                for (p, u) in uncertainty.iter_mut().enumerate() {
                    let d = sp[k * hw + p] - mean[k * hw + p];
                    *u += d * d;
                }
            }
        }
        uncertainty.iter_mut().for_each(|u| *u /= samples as f64);
        let sample_masks = (0..samples)
            .map(|s| ClassProbabilities::from_tensor(&probs.select_batch(s)).argmax())
            .collect();
        Ok(Prediction {
            probabilities: ClassProbabilities::from_parts(c, x.height(), x.width(), mean),
            uncertainty,
            sample_masks,
        })
    }

    /// Decoder probabilities for each noise draw, `[samples, C, H, W]`.
    fn sample_probabilities(&self, x: &Image, noise: &[Vec<Tensor>]) -> Result<Tensor> {
        let samples = noise.len();
        let g = Graph::new();
        let p = Binding::new(&g, &self.params, false);
        let skips = self.prior_encoder.forward(&p, g.constant(x.to_tensor()));
        let tiled: Vec<Var> = skips
            .iter()
            .map(|s| tile_constant(&p, &s.value(), samples))
            .collect();
        let latents: Vec<Latent> = (0..self.config.latent_scales)
            .map(|i| {
                let per_sample: Vec<Tensor> = noise.iter().map(|n| n[i].clone()).collect();
                Latent::Noise(Tensor::stack_batch(&per_sample))
            })
            .collect();
        let trace = self.prior_decoder.forward(&p, &tiled, &latents);
        Ok(trace
            .output
            .expect("full pass produces logits")
            .value()
            .softmax_axis1())
    }

    /// Prior draws for a batch of images: pooled latent features
    /// `[N, Σ channels]` (global mean per channel, coarsest scale first) and
    /// the argmax segmentation decoded from the same draw.
    pub fn prior_features(
        &self,
        images: &[&Image],
        seed: u64,
        draw: u64,
    ) -> Result<(Tensor, Vec<SegMask>)> {
        let first = images
            .first()
            .ok_or_else(|| Error::Argument("no images".into()))?;
        for x in images {
            self.check_image(x)?;
        }
        let (h, w) = (first.height(), first.width());
        let n = images.len();
        let batch = Image::batch_tensor(images)?;
        let g = Graph::new();
        let p = Binding::new(&g, &self.params, false);
        let mut rng = rng_for(seed, "feature-noise", draw);
        let latents: Vec<Latent> = (0..self.config.latent_scales)
            .map(|i| Latent::Noise(standard_normal(&self.latent_shape(i, n, h, w), &mut rng)))
            .collect();
        let skips = self.prior_encoder.forward(&p, g.constant(batch));
        let trace = self.prior_decoder.forward(&p, &skips, &latents);
        let pooled: Vec<Var> = trace.latents.iter().map(|z| z.global_avg_pool()).collect();
        let features = Var::concat(&pooled).value();
        let probs = trace
            .output
            .expect("full pass produces logits")
            .value()
            .softmax_axis1();
        let masks = (0..n)
            .map(|b| ClassProbabilities::from_tensor(&probs.select_batch(b)).argmax())
            .collect();
        Ok(((*features).clone(), masks))
    }
}

fn last_gaussian(trace: &DecodeTrace<'_>) -> GaussianParams {
    let (mean, logvar) = trace.gaussians.last().expect("at least one scale reached");
    GaussianParams {
        mean: strip_batch(&mean.value()),
        log_variance: strip_batch(&logvar.value()),
    }
}

fn latent_sample(trace: &DecodeTrace<'_>) -> LatentSample {
    LatentSample {
        scales: trace
            .gaussians
            .iter()
            .zip(&trace.latents)
            .map(|((m, lv), z)| LatentScale {
                params: GaussianParams {
                    mean: strip_batch(&m.value()),
                    log_variance: strip_batch(&lv.value()),
                },
                z: strip_batch(&z.value()),
            })
            .collect(),
    }
}

fn strip_batch(t: &Tensor) -> Tensor {
    assert_eq!(t.dim(0), 1);
    t.clone().reshape(&t.shape()[1..])
}

fn finite_or_error(report: ElboReport, iteration: usize) -> Result<ElboReport> {
    if report.loss.is_finite() {
        Ok(report)
    } else {
        Err(Error::Training {
            iteration,
            loss: report.loss,
            diagnostics: report.diagnostics(),
        })
    }
}

pub(crate) fn check_divisible(height: usize, width: usize, levels: usize) -> Result<()> {
    let step = 1usize << levels;
    let min = step.max(8);
    if height < min || width < min || !height.is_multiple_of(step) || !width.is_multiple_of(step) {
        return Err(Error::Config(format!(
            "input {height}×{width} must be at least {min} and divisible by {step}"
        )));
    }
    Ok(())
}

pub(crate) fn check_resolution(x: &Image, channels: usize, levels: usize) -> Result<()> {
    if x.channels() != channels {
        return Err(Error::Config(format!(
            "image has {} channels, model expects {channels}",
            x.channels()
        )));
    }
    check_divisible(x.height(), x.width(), levels)
}
