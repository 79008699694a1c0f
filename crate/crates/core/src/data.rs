//! Loading labelled samples listed in a manifest.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, SegMask};
use crate::manifest::{manifest_dir, read_manifest};
use crate::synthetic::Scene;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frame_id: String,
    pub timestamp_s: f64,
    pub image: Image,
    pub mask: Option<SegMask>,
    pub mu: f64,
    pub mode_id: Option<u8>,
}

impl Sample {
    pub fn from_scene(id: usize, scene: Scene) -> Self {
        Self {
            frame_id: format!("scene_{id:05}"),
            timestamp_s: id as f64 * crate::synthetic::FRAME_PERIOD_S,
            image: scene.image,
            mask: Some(scene.mask),
            mu: scene.mu,
            mode_id: Some(scene.mode_id),
        }
    }

    pub fn require_mask(&self) -> Result<&SegMask> {
        self.mask.as_ref().ok_or_else(|| {
            Error::Data(format!("sample {} has no segmentation mask", self.frame_id))
        })
    }
}

/// Reads every record of a manifest, resolving paths against its directory.
pub fn load_samples(manifest: &Path, num_classes: usize) -> Result<Vec<Sample>> {
    let dir = manifest_dir(manifest);
    read_manifest(manifest)?
        .into_iter()
        .map(|r| {
            let image = Image::load_png(&r.frame_path(&dir))?;
            let mask = match r.mask_path(&dir) {
                Some(p) => Some(SegMask::load_png(&p, num_classes)?),
                None => None,
            };
            Ok(Sample {
                frame_id: r.frame_id,
                timestamp_s: r.timestamp_s,
                image,
                mask,
                mu: r.mu,
                mode_id: r.mode_id,
            })
        })
        .collect()
}

pub fn segmentation_pairs(samples: &[Sample]) -> Result<Vec<(Image, SegMask)>> {
    samples
        .iter()
        .map(|s| Ok((s.image.clone(), s.require_mask()?.clone())))
        .collect()
}

pub fn friction_pairs(samples: &[Sample]) -> Vec<(Image, f64)> {
    samples.iter().map(|s| (s.image.clone(), s.mu)).collect()
}
