//! Residual U-Net encoder/decoder shared by the segmentation CVAE and the
//! end-to-end friction baseline.
//!
//! Resolution level `l` runs at `H / 2^l`. The encoder produces one skip per
//! level `0..=levels`; the decoder walks back from the bottleneck. Decoder
//! stages that carry a latent scale emit a diagonal Gaussian from their
//! features, obtain `z` (given, or sampled with injected noise) and
//! concatenate it onto the features before moving to the next finer level.

use autograd::{Binding, ParamSet, Tensor, Var};
use rand::Rng;

use crate::nn::{Conv, ResBlock, UpConv};

/// Log-variance outputs are clamped to this symmetric range.
pub const LOGVAR_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct UNetShape {
    pub in_channels: usize,
    pub levels: usize,
    pub blocks: usize,
    pub base_width: usize,
    /// Channels per latent scale, coarsest first.
    pub latent_channels: Vec<usize>,
}

impl UNetShape {
    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn latent_at(&self, level: usize) -> Option<usize> {
        let from_bottom = self.levels - level;
        self.latent_channels.get(from_bottom).copied()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Encoder {
    stem: Conv,
    levels: Vec<(Conv, Vec<ResBlock>)>,
}

impl Encoder {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        shape: &UNetShape,
        in_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let stem = Conv::new(
            ps,
            &format!("{name}.stem"),
            in_channels,
            shape.width(0),
            3,
            rng,
        );
        let levels = (1..=shape.levels)
            .map(|l| {
                let proj = Conv::new(
                    ps,
                    &format!("{name}.down{l}.proj"),
                    shape.width(l - 1),
                    shape.width(l),
                    1,
                    rng,
                );
                let blocks = (0..shape.blocks)
                    .map(|b| {
                        ResBlock::new(ps, &format!("{name}.down{l}.res{b}"), shape.width(l), rng)
                    })
                    .collect();
                (proj, blocks)
            })
            .collect();
        Self { stem, levels }
    }

    /// Feature maps for levels `0..=levels`, finest first.
    pub fn forward<'g>(&self, p: &Binding<'g, '_>, x: Var<'g>) -> Vec<Var<'g>> {
        let mut h = self.stem.forward(p, x).relu();
        let mut skips = vec![h];
        for (proj, blocks) in &self.levels {
            h = proj.forward(p, h.avg_pool2());
            for block in blocks {
                h = block.forward(p, h);
            }
            skips.push(h);
        }
        skips
    }
}

#[derive(Debug, Clone)]
struct GaussianHead {
    mean: Conv,
    logvar: Conv,
}

#[derive(Debug, Clone)]
struct Stage {
    level: usize,
    up: Option<(UpConv, Conv)>,
    blocks: Vec<ResBlock>,
    refine: Option<Conv>,
    head: Option<GaussianHead>,
}

/// How the decoder obtains the latent at one scale.
#[derive(Clone)]
pub(crate) enum Latent<'g> {
    /// Use this value (e.g. a posterior sample during training).
    Given(Var<'g>),
    /// Reparameterized draw `mean + exp(logvar / 2) · noise`.
    Noise(Tensor),
}

pub(crate) struct DecodeTrace<'g> {
    /// `(mean, clamped log-variance)` per latent scale reached, coarsest first.
    pub gaussians: Vec<(Var<'g>, Var<'g>)>,
    pub latents: Vec<Var<'g>>,
    /// Output map at full resolution; `None` if the pass stopped early.
    pub output: Option<Var<'g>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Decoder {
    top: usize,
    stages: Vec<Stage>,
    output: Option<Conv>,
}

impl Decoder {
    /// Stages run from the bottleneck down to `stop_level`; `out_channels`
    /// adds a 1×1 output projection (only valid when `stop_level == 0`).
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        shape: &UNetShape,
        stop_level: usize,
        out_channels: Option<usize>,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(stop_level <= shape.levels);
        assert!(out_channels.is_none() || stop_level == 0);
        let mut stages = Vec::new();
        let mut incoming = shape.width(shape.levels);
        for level in (stop_level..=shape.levels).rev() {
            let w = shape.width(level);
            let up = (level < shape.levels).then(|| {
                let up = UpConv::new(ps, &format!("{name}.up{level}"), incoming, w, rng);
                let merge = Conv::new(ps, &format!("{name}.up{level}.merge"), 2 * w, w, 1, rng);
                (up, merge)
            });
            let blocks = if level < shape.levels && level > 0 {
                (0..shape.blocks)
                    .map(|b| ResBlock::new(ps, &format!("{name}.up{level}.res{b}"), w, rng))
                    .collect()
            } else {
                Vec::new()
            };
            let refine =
                (level == 0).then(|| Conv::new(ps, &format!("{name}.up0.refine"), w, w, 3, rng));
            let head = shape.latent_at(level).map(|lc| GaussianHead {
                mean: Conv::with_gain(ps, &format!("{name}.z{level}.mean"), w, lc, 1, 0.1, rng),
                logvar: Conv::with_gain(ps, &format!("{name}.z{level}.logvar"), w, lc, 1, 0.1, rng),
            });
            incoming = w + shape.latent_at(level).unwrap_or(0);
            stages.push(Stage {
                level,
                up,
                blocks,
                refine,
                head,
            });
        }
        let output = out_channels
            .map(|c| Conv::with_gain(ps, &format!("{name}.out"), incoming, c, 1, 0.2, rng));
        Self {
            top: shape.levels,
            stages,
            output,
        }
    }

    /// Runs the decoder. Latent scale `i` uses `latents[i]`; if the list is
    /// shorter than the number of scales the pass stops right after emitting
    /// the Gaussian for the first missing scale.
    pub fn forward<'g>(
        &self,
        p: &Binding<'g, '_>,
        skips: &[Var<'g>],
        latents: &[Latent<'g>],
    ) -> DecodeTrace<'g> {
        let mut h = skips[self.top];
        let mut trace = DecodeTrace {
            gaussians: Vec::new(),
            latents: Vec::new(),
            output: None,
        };
        for stage in &self.stages {
            if let Some((up, merge)) = &stage.up {
                let upsampled = up.forward(p, h);
                h = merge
                    .forward(p, Var::concat(&[upsampled, skips[stage.level]]))
                    .relu();
            }
            for block in &stage.blocks {
                h = block.forward(p, h);
            }
            if let Some(refine) = &stage.refine {
                h = refine.forward(p, h).relu();
            }
            if let Some(head) = &stage.head {
                let mean = head.mean.forward(p, h);
                let logvar = head.logvar.forward(p, h).clamp(-LOGVAR_LIMIT, LOGVAR_LIMIT);
                trace.gaussians.push((mean, logvar));
                let Some(source) = latents.get(trace.latents.len()) else {
                    return trace;
                };
                let z = match source {
                    Latent::Given(z) => *z,
                    Latent::Noise(eps) => {
                        let eps = p.graph().constant(eps.clone());
                        logvar.scale(0.5).exp().mul(eps).add(mean)
                    }
                };
                trace.latents.push(z);
                h = Var::concat(&[h, z]);
            }
        }
        trace.output = self.output.as_ref().map(|o| o.forward(p, h));
        trace
    }
}

/// Places `n` copies of a single-item tensor on the graph as a constant batch.
pub(crate) fn tile_constant<'g>(p: &Binding<'g, '_>, value: &Tensor, n: usize) -> Var<'g> {
    assert_eq!(value.dim(0), 1, "tile_constant expects a batch of one");
    let copies: Vec<Tensor> = (0..n).map(|_| value.clone()).collect();
    p.graph().constant(Tensor::stack_batch(&copies))
}
