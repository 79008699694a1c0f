//! Layer building blocks over the autograd tape.

use autograd::{Binding, ParamId, ParamSet, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

fn he_normal(rng: &mut impl Rng, shape: &[usize], fan_in: usize, gain: f64) -> Tensor {
    let std = gain * (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| std * rng.sample::<f64, _>(StandardNormal))
}

/// Square stride-1 convolution with "same" padding.
#[derive(Debug, Clone)]
pub(crate) struct Conv {
    w: ParamId,
    b: ParamId,
    pad: usize,
}

impl Conv {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self::with_gain(ps, name, cin, cout, k, 1.0, rng)
    }

    pub fn with_gain(
        ps: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(k % 2 == 1, "odd kernel sizes only");
        let w = ps.add(
            format!("{name}.w"),
            he_normal(rng, &[cout, cin, k, k], cin * k * k, gain),
        );
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Self { w, b, pad: k / 2 }
    }

    pub fn forward<'g>(&self, p: &Binding<'g, '_>, x: Var<'g>) -> Var<'g> {
        x.conv2d(p.var(self.w), p.var(self.b), self.pad)
    }
}

/// 2×2 stride-2 transposed convolution (doubles spatial size).
#[derive(Debug, Clone)]
pub(crate) struct UpConv {
    w: ParamId,
    b: ParamId,
}

impl UpConv {
    pub fn new(ps: &mut ParamSet, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let w = ps.add(
            format!("{name}.w"),
            he_normal(rng, &[cin, cout, 2, 2], cin, 1.0),
        );
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Self { w, b }
    }

    pub fn forward<'g>(&self, p: &Binding<'g, '_>, x: Var<'g>) -> Var<'g> {
        x.conv_transpose2x2(p.var(self.w), p.var(self.b))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        fin: usize,
        fout: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let w = ps.add(format!("{name}.w"), he_normal(rng, &[fout, fin], fin, gain));
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[fout]));
        Self { w, b }
    }

    pub fn forward<'g>(&self, p: &Binding<'g, '_>, x: Var<'g>) -> Var<'g> {
        x.linear(p.var(self.w), p.var(self.b))
    }
}

/// Pre-activation residual block: `x + conv(relu(conv(relu(x))))`.
#[derive(Debug, Clone)]
pub(crate) struct ResBlock {
    first: Conv,
    second: Conv,
}

impl ResBlock {
    pub fn new(ps: &mut ParamSet, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            first: Conv::new(ps, &format!("{name}.conv1"), channels, channels, 3, rng),
            second: Conv::with_gain(
                ps,
                &format!("{name}.conv2"),
                channels,
                channels,
                3,
                0.5,
                rng,
            ),
        }
    }

    pub fn forward<'g>(&self, p: &Binding<'g, '_>, x: Var<'g>) -> Var<'g> {
        let h = self.first.forward(p, x.relu());
        let h = self.second.forward(p, h.relu());
        x.add(h)
    }
}
