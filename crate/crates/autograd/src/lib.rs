//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Only the operations the segmentation and friction models need are
//! provided: stride-1 convolutions, 2×2 transposed convolutions, pooling,
//! affine layers, a few pointwise nonlinearities, softmax cross-entropy and
//! a closed-form diagonal-Gaussian KL.

mod graph;
mod kernels;
mod optim;
mod params;
mod tensor;

pub mod gradcheck;

pub use graph::{Gradients, Graph, Var};
pub use optim::Adam;
pub use params::{Binding, ParamId, ParamSet};
pub use tensor::Tensor;

/// `Σ KL(N(mq, e^lvq) ‖ N(mp, e^lvp))` over all components.
pub fn gaussian_kl_sum(mean_q: &[f64], logvar_q: &[f64], mean_p: &[f64], logvar_p: &[f64]) -> f64 {
    mean_q
        .iter()
        .zip(logvar_q)
        .zip(mean_p.iter().zip(logvar_p))
        .map(|((&mq, &lvq), (&mp, &lvp))| {
            let d = mq - mp;
            0.5 * (lvp - lvq + (lvq.exp() + d * d) * (-lvp).exp() - 1.0)
        })
        .sum()
}
