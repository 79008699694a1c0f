//! Training-time augmentation: five-patch cropping, then one randomly
//! chosen photometric or geometric transform per patch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::kv_section;
use crate::error::{Error, Result};
use crate::image::{Image, SegMask, IGNORE_CLASS};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Brightness, contrast and saturation factors are drawn from `1 ± jitter`.
    pub jitter: f64,
    pub blur_sigma_min: f64,
    pub blur_sigma_max: f64,
    pub erase_area_min: f64,
    pub erase_area_max: f64,
    pub erase_value: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            jitter: 0.2,
            blur_sigma_min: 0.5,
            blur_sigma_max: 2.0,
            erase_area_min: 0.05,
            erase_area_max: 0.2,
            erase_value: 0.5,
        }
    }
}

kv_section!(
    AugmentConfig,
    "augment",
    [
        jitter,
        blur_sigma_min,
        blur_sigma_max,
        erase_area_min,
        erase_area_max,
        erase_value
    ]
);

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.jitter)
            && 0.0 < self.blur_sigma_min
            && self.blur_sigma_min <= self.blur_sigma_max
            && 0.0 < self.erase_area_min
            && self.erase_area_min <= self.erase_area_max
            && self.erase_area_max <= 1.0
            && (0.0..=1.0).contains(&self.erase_value);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid augmentation settings {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    ColorJitter,
    Erase,
    Blur,
    Grayscale,
    Rotate,
}

impl TransformKind {
    pub const ALL: [TransformKind; 5] = [
        TransformKind::ColorJitter,
        TransformKind::Erase,
        TransformKind::Blur,
        TransformKind::Grayscale,
        TransformKind::Rotate,
    ];
}

fn check_aligned(x: &Image, y: &SegMask) -> Result<()> {
    if (x.height(), x.width()) != (y.height(), y.width()) {
        return Err(Error::Argument(format!(
            "image {}×{} and mask {}×{} are not aligned",
            x.height(),
            x.width(),
            y.height(),
            y.width()
        )));
    }
    Ok(())
}

/// Four corner crops and a centre crop, each half the input size rounded
/// down to a multiple of `multiple`.
pub fn five_patch_crop(x: &Image, y: &SegMask, multiple: usize) -> Result<Vec<(Image, SegMask)>> {
    check_aligned(x, y)?;
    let m = multiple.max(1);
    let (h, w) = (x.height(), x.width());
    let (ph, pw) = (h / 2 / m * m, w / 2 / m * m);
    if ph == 0 || pw == 0 {
        return Err(Error::Argument(format!(
            "{h}×{w} image is too small for patches that are multiples of {m}"
        )));
    }
    let origins = [
        (0, 0),
        (0, w - pw),
        (h - ph, 0),
        (h - ph, w - pw),
        ((h - ph) / 2, (w - pw) / 2),
    ];
    origins
        .iter()
        .map(|&(t, l)| Ok((x.crop(t, l, ph, pw)?, y.crop(t, l, ph, pw)?)))
        .collect()
}

fn luminance(x: &Image, y: usize, c: usize) -> f64 {
    0.299 * x.get(0, y, c) + 0.587 * x.get(1, y, c) + 0.114 * x.get(2, y, c)
}

pub fn grayscale(x: &Image) -> Image {
    if x.channels() != 3 {
        return x.clone();
    }
    Image::from_fn(x.height(), x.width(), 3, |_, y, c| luminance(x, y, c))
}

pub fn color_jitter(x: &Image, brightness: f64, contrast: f64, saturation: f64) -> Image {
    let n = (x.height() * x.width() * x.channels()) as f64;
    let mean = x.data().iter().sum::<f64>() / n;
    let color = x.channels() == 3;
    Image::from_fn(x.height(), x.width(), x.channels(), |c, y, col| {
        let mut v = x.get(c, y, col) * brightness;
        v = (v - mean) * contrast + mean;
        if color {
            let g = luminance(x, y, col) * brightness;
            let g = (g - mean) * contrast + mean;
            v = g + (v - g) * saturation;
        }
        v
    })
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(x: &Image, sigma: f64) -> Image {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (h, w) = (x.height() as isize, x.width() as isize);
    let tap = |i: isize, n: isize| i.clamp(0, n - 1) as usize;
    let horizontal = Image::from_fn(x.height(), x.width(), x.channels(), |c, y, col| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, wt)| wt * x.get(c, y, tap(col as isize + k as isize - radius, w)))
            .sum()
    });
    Image::from_fn(x.height(), x.width(), x.channels(), |c, y, col| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, wt)| wt * horizontal.get(c, tap(y as isize + k as isize - radius, h), col))
            .sum()
    })
}

/// Fills the rectangle `[top, top+height) × [left, left+width)` with `value`.
pub fn erase(x: &Image, top: usize, left: usize, height: usize, width: usize, value: f64) -> Image {
    Image::from_fn(x.height(), x.width(), x.channels(), |c, y, col| {
        if (top..top + height).contains(&y) && (left..left + width).contains(&col) {
            value
        } else {
            x.get(c, y, col)
        }
    })
}

/// Rotation about the image centre. The image is sampled bilinearly and
/// the mask by nearest neighbour; pixels that come from outside the frame
/// become black and [`IGNORE_CLASS`].
pub fn rotate(x: &Image, y: &SegMask, degrees: f64) -> Result<(Image, SegMask)> {
    check_aligned(x, y)?;
    let (h, w) = (x.height(), x.width());
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    // inverse map: output pixel -> source coordinates
    let source = |r: usize, c: usize| {
        let (dy, dx) = (r as f64 - cy, c as f64 - cx);
        (cy + cos * dy - sin * dx, cx + sin * dy + cos * dx)
    };
    let inside =
        |sy: f64, sx: f64| sy > -0.5 && sy < h as f64 - 0.5 && sx > -0.5 && sx < w as f64 - 0.5;
    let image = Image::from_fn(h, w, x.channels(), |ch, r, c| {
        let (sy, sx) = source(r, c);
        if !inside(sy, sx) {
            return 0.0;
        }
        let (fy, fx) = (sy.clamp(0.0, (h - 1) as f64), sx.clamp(0.0, (w - 1) as f64));
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
        let top = x.get(ch, y0, x0) * (1.0 - tx) + x.get(ch, y0, x1) * tx;
        let bottom = x.get(ch, y1, x0) * (1.0 - tx) + x.get(ch, y1, x1) * tx;
        top * (1.0 - ty) + bottom * ty
    });
    let mut labels = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (sy, sx) = source(r, c);
            labels.push(if inside(sy, sx) {
                y.get(
                    sy.round().clamp(0.0, (h - 1) as f64) as usize,
                    sx.round().clamp(0.0, (w - 1) as f64) as usize,
                )
            } else {
                IGNORE_CLASS
            });
        }
    }
    Ok((image, SegMask::new(h, w, y.num_classes(), labels)?))
}

/// Applies exactly one uniformly chosen transform and reports which.
pub fn random_transform_traced(
    x: &Image,
    y: &SegMask,
    seed: u64,
    config: &AugmentConfig,
) -> Result<(Image, SegMask, TransformKind)> {
    check_aligned(x, y)?;
    let mut rng = rng_for(seed, "augment", 0);
    let kind = TransformKind::ALL[rng.random_range(0..TransformKind::ALL.len())];
    let j = config.jitter;
    let out = match kind {
        TransformKind::ColorJitter => {
            let [b, c, s] = [(); 3].map(|_| rng.random_range(1.0 - j..=1.0 + j));
            (color_jitter(x, b, c, s), y.clone())
        }
        TransformKind::Erase => {
            let (h, w) = (x.height(), x.width());
            let area =
                rng.random_range(config.erase_area_min..=config.erase_area_max) * (h * w) as f64;
            let aspect: f64 = rng.random_range(0.5f64.ln()..=2.0f64.ln()).exp();
            let eh = ((area * aspect).sqrt().round() as usize).clamp(1, h);
            let ew = ((area / aspect).sqrt().round() as usize).clamp(1, w);
            let top = rng.random_range(0..=h - eh);
            let left = rng.random_range(0..=w - ew);
            (erase(x, top, left, eh, ew, config.erase_value), y.clone())
        }
        TransformKind::Blur => {
            let sigma = rng.random_range(config.blur_sigma_min..=config.blur_sigma_max);
            (gaussian_blur(x, sigma), y.clone())
        }
        TransformKind::Grayscale => (grayscale(x), y.clone()),
        TransformKind::Rotate => {
            let degrees = rng.random_range(0.0..360.0);
            rotate(x, y, degrees)?
        }
    };
    Ok((out.0, out.1, kind))
}

pub fn random_transform(x: &Image, y: &SegMask, seed: u64) -> Result<(Image, SegMask)> {
    let (a, b, _) = random_transform_traced(x, y, seed, &AugmentConfig::default())?;
    Ok((a, b))
}
