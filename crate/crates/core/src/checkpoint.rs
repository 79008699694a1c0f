//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, little-endian `u32` version, `u64` header length,
//! a JSON header (model kind, config echo, tensor names and shapes, scalar
//! metadata), then every tensor's values as little-endian `f64` in header
//! order. Saving the same model twice yields identical bytes.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use autograd::{ParamSet, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::EndToEndModel;
use crate::config::ExperimentConfig;
use crate::cvae::HierarchicalCvae;
use crate::error::{Error, Result};
use crate::friction::{FrictionHead, LatentFrictionModel};

const MAGIC: &[u8; 8] = b"FRICVAE\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "cvae")]
    Cvae,
    #[serde(rename = "friction-latent")]
    FrictionLatent,
    #[serde(rename = "end2end")]
    EndToEnd,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cvae => "cvae",
            ModelKind::FrictionLatent => "friction-latent",
            ModelKind::EndToEnd => "end2end",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cvae" => Ok(ModelKind::Cvae),
            "friction-latent" => Ok(ModelKind::FrictionLatent),
            "end2end" => Ok(ModelKind::EndToEnd),
            other => Err(Error::Argument(format!(
                "unknown model kind {other:?} (expected cvae, friction-latent or end2end)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorMeta {
    group: String,
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    config: ExperimentConfig,
    tensors: Vec<TensorMeta>,
    meta: BTreeMap<String, f64>,
}

/// Named parameter groups plus the configuration they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: ExperimentConfig,
    /// `(group, parameter name, value)` in a fixed order.
    pub tensors: Vec<(String, String, Tensor)>,
    /// Scalar training facts such as the final loss.
    pub meta: BTreeMap<String, f64>,
}

pub const CVAE_GROUP: &str = "cvae";
pub const HEAD_GROUP: &str = "head";
pub const E2E_GROUP: &str = "e2e";

fn group_tensors(group: &str, params: &ParamSet) -> Vec<(String, String, Tensor)> {
    params
        .iter()
        .map(|(n, t)| (group.to_string(), n.to_string(), t.clone()))
        .collect()
}

impl Checkpoint {
    pub fn cvae(model: &HierarchicalCvae, config: &ExperimentConfig) -> Self {
        let mut config = config.clone();
        config.cvae = model.config().clone();
        Self {
            kind: ModelKind::Cvae,
            config,
            tensors: group_tensors(CVAE_GROUP, model.params()),
            meta: BTreeMap::new(),
        }
    }

    pub fn friction_latent(model: &LatentFrictionModel, config: &ExperimentConfig) -> Self {
        let mut config = config.clone();
        config.cvae = model.backbone.config().clone();
        config.friction = model.head.config().clone();
        let mut tensors = group_tensors(CVAE_GROUP, model.backbone.params());
        tensors.extend(group_tensors(HEAD_GROUP, model.head.params()));
        Self {
            kind: ModelKind::FrictionLatent,
            config,
            tensors,
            meta: BTreeMap::new(),
        }
    }

    pub fn end_to_end(model: &EndToEndModel, config: &ExperimentConfig) -> Self {
        let mut config = config.clone();
        config.e2e = model.config().clone();
        Self {
            kind: ModelKind::EndToEnd,
            config,
            tensors: group_tensors(E2E_GROUP, model.params()),
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: f64) -> Self {
        self.meta.insert(key.to_string(), value);
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind,
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(g, n, t)| TensorMeta {
                    group: g.clone(),
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header always serializes");
        let values: usize = self.tensors.iter().map(|(_, _, t)| t.len()).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 8 * values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(20..20 + header_len)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)
            .map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;
        let mut data = &bytes[20 + header_len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for meta in header.tensors {
            let n: usize = meta.shape.iter().product();
            if data.len() < 8 * n {
                return Err(bad("truncated tensor data"));
            }
            let values = data[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            data = &data[8 * n..];
            tensors.push((meta.group, meta.name, Tensor::new(&meta.shape, values)));
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            tensors,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Copies the tensors of `group` into `params`, requiring the exact same
    /// names and shapes.
    fn restore(&self, group: &str, params: &mut ParamSet) -> Result<()> {
        let stored: Vec<_> = self.tensors.iter().filter(|(g, _, _)| g == group).collect();
        if stored.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "group {group}: checkpoint has {} tensors, configured model has {}",
                stored.len(),
                params.len()
            )));
        }
        for (_, name, t) in stored {
            let id = params.find(name).ok_or_else(|| {
                Error::Checkpoint(format!(
                    "parameter {name} does not exist in configured model"
                ))
            })?;
            if params.get(id).shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: stored shape {:?}, configured {:?}",
                    t.shape(),
                    params.get(id).shape()
                )));
            }
            params.set(id, t.clone());
        }
        Ok(())
    }

    fn expect_kind(&self, allowed: &[ModelKind]) -> Result<()> {
        if allowed.contains(&self.kind) {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "checkpoint holds a {} model, expected {}",
                self.kind.as_str(),
                allowed
                    .iter()
                    .map(|k| k.as_str())
                    .collect::<Vec<_>>()
                    .join(" or ")
            )))
        }
    }

    /// The segmentation model (also the backbone of a friction-latent model).
    pub fn to_cvae(&self) -> Result<HierarchicalCvae> {
        self.expect_kind(&[ModelKind::Cvae, ModelKind::FrictionLatent])?;
        let mut model = HierarchicalCvae::new(self.config.cvae.clone())?;
        self.restore(CVAE_GROUP, model.params_mut())?;
        Ok(model)
    }

    pub fn to_friction_latent(&self) -> Result<LatentFrictionModel> {
        self.expect_kind(&[ModelKind::FrictionLatent])?;
        let backbone = Arc::new(self.to_cvae()?);
        let mut head = FrictionHead::new(
            self.config.friction.clone(),
            backbone.config().feature_len(),
        )?;
        self.restore(HEAD_GROUP, head.params_mut())?;
        LatentFrictionModel::new(backbone, head)
    }

    pub fn to_end_to_end(&self) -> Result<EndToEndModel> {
        self.expect_kind(&[ModelKind::EndToEnd])?;
        let mut model = EndToEndModel::new(self.config.e2e.clone())?;
        self.restore(E2E_GROUP, model.params_mut())?;
        Ok(model)
    }
}

/// SHA-256 over parameter names, shapes and values, as lowercase hex.
pub fn param_checksum(params: &ParamSet) -> String {
    let mut h = Sha256::new();
    for (name, t) in params.iter() {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvae::CvaeConfig;

    fn tiny() -> CvaeConfig {
        CvaeConfig {
            levels: 1,
            latent_scales: 1,
            latent_channels: vec![1],
            base_width: 2,
            residual_blocks_per_level: 1,
            num_classes: 3,
            ..Default::default()
        }
    }

    #[test]
    fn cvae_round_trip_is_exact_and_deterministic() {
        let model = HierarchicalCvae::new(tiny()).unwrap();
        let ck =
            Checkpoint::cvae(&model, &ExperimentConfig::default()).with_meta("final_loss", 1.25);
        let bytes = ck.to_bytes();
        assert_eq!(bytes, ck.to_bytes());
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        let restored = back.to_cvae().unwrap();
        assert_eq!(
            param_checksum(restored.params()),
            param_checksum(model.params())
        );
        assert_eq!(back.config.cvae, tiny());
    }

    #[test]
    fn config_mismatch_fails_loudly() {
        let model = HierarchicalCvae::new(tiny()).unwrap();
        let mut ck = Checkpoint::cvae(&model, &ExperimentConfig::default());
        ck.config.cvae.base_width = 4;
        assert!(matches!(ck.to_cvae(), Err(Error::Checkpoint(_))));
        assert!(matches!(ck.to_end_to_end(), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn corrupt_bytes_rejected() {
        let model = HierarchicalCvae::new(tiny()).unwrap();
        let bytes = Checkpoint::cvae(&model, &ExperimentConfig::default()).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"garbage garbage garbage").is_err());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(Checkpoint::from_bytes(&v2).is_err());
    }

    #[test]
    fn checksum_tracks_values() {
        let mut model = HierarchicalCvae::new(tiny()).unwrap();
        let before = param_checksum(model.params());
        model.params_mut().map_all(|_, t| t.data_mut()[0] += 1e-12);
        assert_ne!(before, param_checksum(model.params()));
    }
}
