//! Probabilistic segmentation with a hierarchical conditional VAE, friction
//! regression from its latent space, an end-to-end baseline, and the data
//! pipelines around them.

pub mod augment;
pub mod baseline;
pub mod checkpoint;
pub mod config;
pub mod cvae;
pub mod data;
pub mod error;
pub mod friction;
pub mod ground_truth;
pub mod image;
pub mod manifest;
pub mod metrics;
mod nn;
pub mod plot;
pub mod rng;
pub mod synthetic;
pub mod train;
mod unet;

pub use autograd::Tensor;
pub use baseline::{E2EConfig, EndToEndModel};
pub use checkpoint::{param_checksum, Checkpoint, ModelKind};
pub use config::ExperimentConfig;
pub use cvae::{CvaeConfig, GaussianParams, HierarchicalCvae, LatentSample, Prediction};
pub use error::{Error, Result};
pub use friction::{
    FrictionEstimate, FrictionHead, FrictionHeadConfig, LatentFrictionModel, SurfaceOneHot,
};
pub use image::{ClassProbabilities, Image, OneHotMask, SegMask, IGNORE_CLASS};
pub use synthetic::{Scene, SceneSpec};
