//! Procedural desk-scale driving scenes with segmentation masks and
//! friction labels.
//!
//! Palette: 0 road, 1 sidewalk, 2 vegetation, 3 sky, 4 vehicle, 5 obstacle.
//! The first three are ground surfaces. A scene has a sky band above a random
//! horizon, a drivable trapezoid painted with one surface texture over a
//! background of another, then vehicles and cones. μ follows the drivable
//! surface class.
//!
//! With probability `ambiguity_prob` a gravel shoulder runs along one edge of
//! the drivable area. Its pixels are labelled either as the drivable surface
//! (mode 1) or as obstacle (mode 2); the image itself does not depend on the
//! mode.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::gaussian_blur;
use crate::config::kv_section;
use crate::error::{Error, Result};
use crate::image::{Image, SegMask};
use crate::manifest::{write_manifest, ManifestRecord, MuSource};
use crate::rng::rng_for;

pub const NUM_CLASSES: usize = 6;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "road",
    "sidewalk",
    "vegetation",
    "sky",
    "vehicle",
    "obstacle",
];
pub const SKY: u8 = 3;
pub const VEHICLE: u8 = 4;
pub const OBSTACLE: u8 = 5;
/// Classes that can form the ground plane.
pub const GROUND_CLASSES: [u8; 3] = [0, 1, 2];

/// Seconds between consecutive synthetic frames in a manifest.
pub const FRAME_PERIOD_S: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Base μ of road, sidewalk and vegetation.
    pub surface_mu: Vec<f64>,
    /// Standard deviation of the μ label noise; draws are clipped to ±3σ.
    pub mu_noise: f64,
    pub ambiguity_prob: f64,
    pub max_vehicles: usize,
    pub max_obstacles: usize,
    pub glare_prob: f64,
    pub shadow_prob: f64,
    pub blur_prob: f64,
    pub pixel_noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            surface_mu: vec![0.8, 0.55, 0.3],
            mu_noise: 0.02,
            ambiguity_prob: 0.0,
            max_vehicles: 2,
            max_obstacles: 2,
            glare_prob: 0.2,
            shadow_prob: 0.3,
            blur_prob: 0.2,
            pixel_noise: 0.03,
            seed: 0,
        }
    }
}

kv_section!(
    SceneSpec,
    "data",
    [
        height,
        width,
        surface_mu,
        mu_noise,
        ambiguity_prob,
        max_vehicles,
        max_obstacles,
        glare_prob,
        shadow_prob,
        blur_prob,
        pixel_noise,
        seed
    ]
);

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "data.{name} must lie in [0, 1], got {p}"
        )))
    }
}

impl SceneSpec {
    pub fn num_classes(&self) -> usize {
        NUM_CLASSES
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::Config(format!(
                "scene resolution {}×{} below the 16×16 minimum",
                self.height, self.width
            )));
        }
        if self.surface_mu.len() != GROUND_CLASSES.len() {
            return Err(Error::Config(format!(
                "data.surface_mu needs {} entries (road, sidewalk, vegetation)",
                GROUND_CLASSES.len()
            )));
        }
        for &mu in &self.surface_mu {
            check_prob("surface_mu", mu)?;
        }
        for (name, p) in [
            ("ambiguity_prob", self.ambiguity_prob),
            ("glare_prob", self.glare_prob),
            ("shadow_prob", self.shadow_prob),
            ("blur_prob", self.blur_prob),
        ] {
            check_prob(name, p)?;
        }
        if !(self.mu_noise >= 0.0 && self.pixel_noise >= 0.0) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Image,
    pub mask: SegMask,
    pub mu: f64,
    /// 0: no ambiguous region; 1: shoulder labelled as surface; 2: as obstacle.
    pub mode_id: u8,
    pub surface_class: u8,
    /// Row-major flags of the ambiguous shoulder pixels.
    pub ambiguous_region: Vec<bool>,
}

impl Scene {
    pub fn has_ambiguity(&self) -> bool {
        self.ambiguous_region.iter().any(|&a| a)
    }

    /// The same scene with the shoulder labelled according to `mode` (1 or 2).
    pub fn relabelled(&self, mode: u8) -> Scene {
        assert!(mode == 1 || mode == 2, "mode must be 1 or 2");
        if !self.has_ambiguity() {
            return self.clone();
        }
        let label = if mode == 1 {
            self.surface_class
        } else {
            OBSTACLE
        };
        let mut mask = self.mask.clone();
        for (i, &amb) in self.ambiguous_region.iter().enumerate() {
            if amb {
                mask.set(i / mask.width(), i % mask.width(), label);
            }
        }
        Scene {
            mask,
            mode_id: mode,
            ..self.clone()
        }
    }
}

type Rgb = [f64; 3];

fn jitter_color(rng: &mut ChaCha8Rng, base: Rgb, amount: f64) -> Rgb {
    let shift = rng.random_range(-amount..=amount);
    base.map(|v| (v + shift + rng.random_range(-amount / 2.0..=amount / 2.0)).clamp(0.0, 1.0))
}

/// Per-pixel texture of a ground class.
fn ground_texture(class: u8, base: Rgb, y: usize, x: usize, rng: &mut ChaCha8Rng) -> Rgb {
    match class {
        // asphalt: fine speckle
        0 => {
            let n = rng.random_range(-0.04..0.04);
            base.map(|v| v + n)
        }
        // paving slabs: grid of darker joints
        1 => {
            let joint = y.is_multiple_of(6) || x.is_multiple_of(8);
            let f = if joint { 0.7 } else { 1.0 };
            let n = rng.random_range(-0.02..0.02);
            base.map(|v| v * f + n)
        }
        // grass: strong per-pixel variation in the green channel
        _ => {
            let n = rng.random_range(-0.12..0.12);
            [base[0] + n * 0.4, base[1] + n, base[2] + n * 0.3]
        }
    }
}

fn ground_base(class: u8, rng: &mut ChaCha8Rng) -> Rgb {
    match class {
        0 => jitter_color(rng, [0.3, 0.3, 0.32], 0.05),
        1 => jitter_color(rng, [0.68, 0.64, 0.58], 0.05),
        _ => jitter_color(rng, [0.2, 0.5, 0.15], 0.05),
    }
}

struct Canvas {
    h: usize,
    w: usize,
    rgb: Vec<Rgb>,
    label: Vec<u8>,
}

impl Canvas {
    fn put(&mut self, y: usize, x: usize, c: Rgb, class: u8) {
        let i = y * self.w + x;
        self.rgb[i] = c;
        self.label[i] = class;
    }
}

fn render(spec: &SceneSpec, index: u64) -> (Canvas, u8, Vec<bool>, ChaCha8Rng) {
    let (h, w) = (spec.height, spec.width);
    let (hf, wf) = (h as f64, w as f64);
    let mut rng = rng_for(spec.seed, "scene", index);
    let mut cv = Canvas {
        h,
        w,
        rgb: vec![[0.0; 3]; h * w],
        label: vec![0; h * w],
    };

    let horizon = (hf * rng.random_range(0.3..0.45)).round() as usize;
    let surface = GROUND_CLASSES[rng.random_range(0..GROUND_CLASSES.len())];
    let others: Vec<u8> = GROUND_CLASSES
        .iter()
        .copied()
        .filter(|&c| c != surface)
        .collect();
    let background = others[rng.random_range(0..others.len())];
    let surface_base = ground_base(surface, &mut rng);
    let background_base = ground_base(background, &mut rng);

    // trapezoid edges at the horizon and the bottom row
    let centre = wf * rng.random_range(0.4..0.6);
    let top_half = wf * rng.random_range(0.15..0.25);
    let bottom_left = wf * rng.random_range(-0.3..0.0);
    let bottom_right = wf * rng.random_range(1.0..1.3);
    let edges = |y: usize| {
        let t = (y as f64 - horizon as f64) / ((h - 1 - horizon) as f64).max(1.0);
        let l = (centre - top_half) * (1.0 - t) + bottom_left * t;
        let r = (centre + top_half) * (1.0 - t) + bottom_right * t;
        (l, r)
    };

    let amb_present = rng.random_bool(spec.ambiguity_prob);
    let amb_left = rng.random_bool(0.5);
    let amb_frac = rng.random_range(0.18..0.28);
    let gravel_base = jitter_color(&mut rng, [0.55, 0.47, 0.36], 0.03);
    let mut ambiguous = vec![false; h * w];

    let sky_top = jitter_color(&mut rng, [0.35, 0.55, 0.9], 0.05);
    for y in 0..h {
        for x in 0..w {
            if y < horizon {
                let t = y as f64 / horizon.max(1) as f64;
                let c = sky_top.map(|v| v + 0.2 * t + rng.random_range(-0.01..0.01));
                cv.put(y, x, c, SKY);
                continue;
            }
            let (l, r) = edges(y);
            let xc = x as f64 + 0.5;
            if xc >= l && xc < r {
                let shoulder = amb_present
                    && if amb_left {
                        xc < l + (r - l) * amb_frac
                    } else {
                        xc >= r - (r - l) * amb_frac
                    };
                if shoulder {
                    let n = rng.random_range(-0.1..0.1);
                    let speck = if rng.random_bool(0.15) { 0.15 } else { 0.0 };
                    cv.put(y, x, gravel_base.map(|v| v + n + speck), surface);
                    ambiguous[y * w + x] = true;
                } else {
                    let c = ground_texture(surface, surface_base, y, x, &mut rng);
                    cv.put(y, x, c, surface);
                }
            } else {
                let c = ground_texture(background, background_base, y, x, &mut rng);
                cv.put(y, x, c, background);
            }
        }
    }

    // vehicles: boxes sized by distance below the horizon
    let n_vehicles = rng.random_range(0..=spec.max_vehicles);
    for _ in 0..n_vehicles {
        let bottom = rng.random_range((horizon + 4).min(h - 1)..h);
        let depth = (bottom - horizon) as f64 / (h - horizon) as f64;
        let vh = ((0.12 + 0.18 * depth) * hf).round().max(3.0) as usize;
        let vw = (vh as f64 * rng.random_range(1.3..1.9)).round() as usize;
        let left = rng.random_range(0..w.saturating_sub(vw).max(1));
        let body = if rng.random_bool(0.5) {
            jitter_color(&mut rng, [0.78, 0.1, 0.12], 0.05)
        } else {
            jitter_color(&mut rng, [0.55, 0.12, 0.55], 0.05)
        };
        let top = (bottom + 1).saturating_sub(vh);
        for y in top..=bottom {
            for x in left..(left + vw).min(w) {
                let window = (y - top) < vh / 3 && x > left && x + 1 < left + vw;
                let c = if window { [0.12, 0.14, 0.18] } else { body };
                cv.put(y, x, c, VEHICLE);
                ambiguous[y * w + x] = false;
            }
        }
    }

    // traffic cones: triangles
    let n_cones = rng.random_range(0..=spec.max_obstacles);
    for _ in 0..n_cones {
        let bottom = rng.random_range((horizon + 4).min(h - 1)..h);
        let depth = (bottom - horizon) as f64 / (h - horizon) as f64;
        let ch = ((0.08 + 0.12 * depth) * hf).round().max(3.0) as usize;
        let cx = rng.random_range(0..w) as f64;
        let colour = jitter_color(&mut rng, [0.97, 0.5, 0.05], 0.03);
        let top = (bottom + 1).saturating_sub(ch);
        for y in top..=bottom {
            let half = 0.5 + 0.4 * ch as f64 * (y - top) as f64 / ch as f64;
            let x0 = (cx - half).floor().max(0.0) as usize;
            let x1 = ((cx + half).ceil() as usize).min(w);
            for x in x0..x1 {
                let stripe = (y - top) == ch / 2;
                let c = if stripe { [0.95, 0.95, 0.95] } else { colour };
                cv.put(y, x, c, OBSTACLE);
                ambiguous[y * w + x] = false;
            }
        }
    }
    (cv, surface, ambiguous, rng)
}

/// Scene `index` of the family described by `spec`.
pub fn generate_scene(spec: &SceneSpec, index: u64) -> Result<Scene> {
    spec.validate()?;
    let (cv, surface, ambiguous, mut rng) = render(spec, index);
    let (h, w) = (cv.h, cv.w);

    let mut rgb = cv.rgb;
    if rng.random_bool(spec.shadow_prob) {
        // a diagonal band darkened multiplicatively
        let offset = rng.random_range(-(w as f64)..w as f64);
        let slope = rng.random_range(-1.0..1.0);
        let width = rng.random_range(0.08..0.2) * w as f64;
        let factor = rng.random_range(0.55..0.75);
        for y in 0..h {
            for x in 0..w {
                let d = x as f64 - (offset + slope * y as f64);
                if d.abs() < width / 2.0 {
                    rgb[y * w + x] = rgb[y * w + x].map(|v| v * factor);
                }
            }
        }
    }
    if rng.random_bool(spec.glare_prob) {
        let (gy, gx) = (rng.random_range(0..h) as f64, rng.random_range(0..w) as f64);
        let radius = rng.random_range(0.05..0.15) * w as f64;
        let strength = rng.random_range(0.3..0.6);
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as f64 - gy).powi(2) + (x as f64 - gx).powi(2);
                let g = strength * (-d2 / (2.0 * radius * radius)).exp();
                rgb[y * w + x] = rgb[y * w + x].map(|v| v + g * (1.0 - v));
            }
        }
    }
    let noise = Normal::new(0.0, spec.pixel_noise.max(1e-12)).expect("valid std");
    let mut image = Image::from_fn(h, w, 3, |_, _, _| 0.0);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let n = if spec.pixel_noise > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                image.set(c, y, x, (rgb[y * w + x][c] + n).clamp(0.0, 1.0));
            }
        }
    }
    if rng.random_bool(spec.blur_prob) {
        image = gaussian_blur(&image, rng.random_range(0.5..1.0));
    }

    let base_mu = spec.surface_mu[surface as usize];
    let mu = if spec.mu_noise > 0.0 {
        let e: f64 = Normal::new(0.0, spec.mu_noise)
            .expect("valid std")
            .sample(&mut rng);
        (base_mu + e.clamp(-3.0 * spec.mu_noise, 3.0 * spec.mu_noise)).clamp(0.0, 1.0)
    } else {
        base_mu
    };

    let mask = SegMask::new(h, w, NUM_CLASSES, cv.label).expect("palette ids are valid");
    let scene = Scene {
        image,
        mask,
        mu,
        mode_id: 0,
        surface_class: surface,
        ambiguous_region: ambiguous,
    };
    if scene.has_ambiguity() {
        let mode = if rng_for(spec.seed, "scene-mode", index).random_bool(0.5) {
            1
        } else {
            2
        };
        Ok(scene.relabelled(mode))
    } else {
        Ok(scene)
    }
}

/// Scenes `range` generated in memory.
pub fn generate_scenes(spec: &SceneSpec, range: std::ops::Range<u64>) -> Result<Vec<Scene>> {
    range.map(|i| generate_scene(spec, i)).collect()
}

/// Number of train and validation scenes for `count` under `ratios`.
pub fn split_sizes(count: usize, ratios: (f64, f64)) -> Result<(usize, usize)> {
    let (a, b) = ratios;
    if !(a >= 0.0 && b >= 0.0) || ((a + b) - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "split ratios {a}, {b} must be non-negative and sum to 1"
        )));
    }
    if count == 0 {
        return Err(Error::Argument("scene count must be at least 1".into()));
    }
    let train = (count as f64 * a).round() as usize;
    let val = count - train;
    if (a > 0.0 && train == 0) || (b > 0.0 && val == 0) {
        return Err(Error::Argument(format!(
            "{count} scenes cannot be split into non-empty parts with ratios {a}, {b}"
        )));
    }
    Ok((train, val))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub train: Vec<ManifestRecord>,
    pub val: Vec<ManifestRecord>,
}

pub const TRAIN_MANIFEST: &str = "train.jsonl";
pub const VAL_MANIFEST: &str = "val.jsonl";

/// Writes `count` scenes as PNGs under `out_dir/{images,masks}` with
/// `train.jsonl` and `val.jsonl` manifests. The first scenes form the
/// training split.
pub fn generate_dataset(
    spec: &SceneSpec,
    count: usize,
    ratios: (f64, f64),
    out_dir: &Path,
) -> Result<GeneratedDataset> {
    spec.validate()?;
    let (n_train, _) = split_sizes(count, ratios)?;
    for sub in ["images", "masks"] {
        let dir = out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut train = Vec::with_capacity(n_train);
    let mut val = Vec::with_capacity(count - n_train);
    for i in 0..count {
        let scene = generate_scene(spec, i as u64)?;
        let name = format!("scene_{i:05}");
        let frame = format!("images/{name}.png");
        let mask = format!("masks/{name}.png");
        scene.image.save_png(&out_dir.join(&frame))?;
        scene.mask.save_png(&out_dir.join(&mask))?;
        let record = ManifestRecord {
            frame_id: name,
            frame,
            timestamp_s: i as f64 * FRAME_PERIOD_S,
            mu: scene.mu,
            source: MuSource::Synthetic,
            signal_timestamp_s: None,
            mask: Some(mask),
            mode_id: Some(scene.mode_id),
        };
        if i < n_train {
            train.push(record);
        } else {
            val.push(record);
        }
    }
    write_manifest(&out_dir.join(TRAIN_MANIFEST), &train)?;
    write_manifest(&out_dir.join(VAL_MANIFEST), &val)?;
    Ok(GeneratedDataset { train, val })
}
