//! Discriminative end-to-end friction estimator: the same residual U-Net
//! without latent scales, its full-resolution output map flattened and
//! passed through three affine layers to a sigmoid.

use autograd::{Binding, Graph, ParamSet, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::config::kv_section;
use crate::cvae::check_resolution;
use crate::error::{Error, Result};
use crate::friction::{rmse_loss, FrictionEstimate};
use crate::image::Image;
use crate::nn::Dense;
use crate::rng::rng_for;
use crate::unet::{Decoder, Encoder, UNetShape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2EConfig {
    pub in_channels: usize,
    /// Input resolution; images are resized to this before inference.
    pub height: usize,
    pub width: usize,
    pub levels: usize,
    pub residual_blocks_per_level: usize,
    pub base_width: usize,
    /// Channels of the final 1×1 output map that gets flattened.
    pub output_channels: usize,
    /// Widths of the three affine layers; the last must be 1.
    pub affine_widths: Vec<usize>,
    pub seed: u64,
}

impl Default for E2EConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            height: 64,
            width: 64,
            levels: 3,
            residual_blocks_per_level: 2,
            base_width: 8,
            output_channels: 2,
            affine_widths: vec![256, 64, 1],
            seed: 0,
        }
    }
}

kv_section!(
    E2EConfig,
    "e2e",
    [
        in_channels,
        height,
        width,
        levels,
        residual_blocks_per_level,
        base_width,
        output_channels,
        affine_widths,
        seed
    ]
);

impl E2EConfig {
    pub fn validate(&self) -> Result<()> {
        if self.affine_widths.len() != 3 {
            return Err(Error::Config(format!(
                "exactly three affine layers required, got {}",
                self.affine_widths.len()
            )));
        }
        if self.affine_widths[2] != 1 {
            return Err(Error::Config(
                "the last affine layer must have width 1".into(),
            ));
        }
        if self.affine_widths.contains(&0)
            || self.base_width == 0
            || self.output_channels == 0
            || self.in_channels == 0
            || self.levels == 0
        {
            return Err(Error::Config("all widths must be positive".into()));
        }
        crate::cvae::check_divisible(self.height, self.width, self.levels)
    }

    fn flat_len(&self) -> usize {
        self.output_channels * self.height * self.width
    }
}

#[derive(Debug, Clone)]
pub struct EndToEndModel {
    config: E2EConfig,
    params: ParamSet,
    encoder: Encoder,
    decoder: Decoder,
    affine: [Dense; 3],
}

impl EndToEndModel {
    pub fn new(config: E2EConfig) -> Result<Self> {
        config.validate()?;
        let shape = UNetShape {
            in_channels: config.in_channels,
            levels: config.levels,
            blocks: config.residual_blocks_per_level,
            base_width: config.base_width,
            latent_channels: Vec::new(),
        };
        let mut rng = rng_for(config.seed, "e2e-init", 0);
        let mut params = ParamSet::new();
        let encoder = Encoder::new(&mut params, "e2e.enc", &shape, config.in_channels, &mut rng);
        let decoder = Decoder::new(
            &mut params,
            "e2e.dec",
            &shape,
            0,
            Some(config.output_channels),
            &mut rng,
        );
        let w = &config.affine_widths;
        let affine = [
            Dense::new(
                &mut params,
                "e2e.fc1",
                config.flat_len(),
                w[0],
                1.0,
                &mut rng,
            ),
            Dense::new(&mut params, "e2e.fc2", w[0], w[1], 1.0, &mut rng),
            Dense::new(&mut params, "e2e.fc3", w[1], w[2], 0.5, &mut rng),
        ];
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
            affine,
        })
    }

    pub fn config(&self) -> &E2EConfig {
        &self.config
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

    /// Number of latent scales (always zero: the baseline is discriminative).
    pub fn latent_scales(&self) -> usize {
        0
    }

    /// Parameters belonging to Gaussian latent heads (none in this model).
    pub fn gaussian_head_parameters(&self) -> usize {
        self.params
            .iter()
            .filter(|(name, _)| name.contains(".mean.") || name.contains(".logvar."))
            .map(|(_, t)| t.len())
            .sum()
    }

    fn check(&self, x: &Image) -> Result<()> {
        check_resolution(x, self.config.in_channels, self.config.levels)?;
        if (x.height(), x.width()) != (self.config.height, self.config.width) {
            return Err(Error::Config(format!(
                "input {}×{} does not match configured {}×{}",
                x.height(),
                x.width(),
                self.config.height,
                self.config.width
            )));
        }
        Ok(())
    }

    fn forward<'g>(&self, p: &Binding<'g, '_>, x: Var<'g>) -> Var<'g> {
        let skips = self.encoder.forward(p, x);
        let map = self
            .decoder
            .forward(p, &skips, &[])
            .output
            .expect("decoder has an output map");
        let h = self.affine[0].forward(p, map.flatten()).relu();
        let h = self.affine[1].forward(p, h).relu();
        self.affine[2].forward(p, h).sigmoid()
    }

    pub fn predict(&self, x: &Image) -> Result<FrictionEstimate> {
        Ok(FrictionEstimate {
            mu: self.predict_batch(&[x])?[0],
            spread: None,
        })
    }

    pub fn predict_batch(&self, images: &[&Image]) -> Result<Vec<f64>> {
        for x in images {
            self.check(x)?;
        }
        let g = Graph::new();
        let p = Binding::new(&g, &self.params, false);
        let out = self.forward(&p, g.constant(Image::batch_tensor(images)?));
        Ok(out.value().data().to_vec())
    }

    pub fn loss_and_gradients(
        &self,
        images: &[&Image],
        targets: &[f64],
    ) -> Result<(f64, Vec<Tensor>)> {
        for x in images {
            self.check(x)?;
        }
        if images.len() != targets.len() {
            return Err(Error::Argument("one target per image".into()));
        }
        let g = Graph::new();
        let p = Binding::new(&g, &self.params, true);
        let pred = self.forward(&p, g.constant(Image::batch_tensor(images)?));
        let loss = rmse_loss(pred, targets);
        let value = loss.value().item();
        let grads = g.backward(loss);
        Ok((value, p.gradients(&grads)))
    }
}
