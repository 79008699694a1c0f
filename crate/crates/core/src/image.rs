//! Images, segmentation masks and per-pixel class distributions.
//!
//! All pixel grids are stored planar (channel-major), matching the
//! `[N, C, H, W]` tensor layout used by the models.

use std::path::Path;

use autograd::Tensor;

use crate::error::{Error, Result};

/// Mask value for pixels excluded from losses and metrics (e.g. rotated
/// out of frame).
pub const IGNORE_CLASS: u8 = 255;

/// Real-valued `H×W×C` pixel grid with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// `data` is planar: `data[(c * height + y) * width + x]`.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Argument(format!(
                "empty image {height}×{width}×{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Argument(format!(
                "image {height}×{width}×{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value.clamp(0.0, 1.0); height * width * channels],
        }
    }

    /// Builds from `f(channel, y, x)`; values are clamped into `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x).clamp(0.0, 1.0));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            &[1, self.channels, self.height, self.width],
            self.data.clone(),
        )
    }

    pub fn batch_tensor(images: &[&Image]) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::Argument("empty image batch".into()))?;
        let mut data = Vec::with_capacity(first.data.len() * images.len());
        for im in images {
            if (im.height, im.width, im.channels) != (first.height, first.width, first.channels) {
                return Err(Error::Argument(
                    "images in a batch must share a shape".into(),
                ));
            }
            data.extend_from_slice(&im.data);
        }
        Ok(Tensor::new(
            &[images.len(), first.channels, first.height, first.width],
            data,
        ))
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Argument(format!(
                "crop {height}×{width} at ({top},{left}) exceeds {}×{}",
                self.height, self.width
            )));
        }
        Ok(Image::from_fn(height, width, self.channels, |c, y, x| {
            self.get(c, top + y, left + x)
        }))
    }

    /// Bilinear resampling (pixel-centre aligned).
    pub fn resize(&self, height: usize, width: usize) -> Image {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        Image::from_fn(height, width, self.channels, |c, y, x| {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
            let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
            let top = self.get(c, y0, x0) * (1.0 - tx) + self.get(c, y0, x1) * tx;
            let bottom = self.get(c, y1, x0) * (1.0 - tx) + self.get(c, y1, x1) * tx;
            top * (1.0 - ty) + bottom * ty
        })
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path)
            .map_err(|e| Error::format(path, e))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Ok(Image::from_fn(h, w, 3, |c, y, x| {
            img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
        }))
    }

    /// Writes 8-bit PNG (RGB for three channels, grayscale for one).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        let q = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
        let result = match self.channels {
            1 => image::GrayImage::from_fn(w, h, |x, y| {
                image::Luma([q(self.get(0, y as usize, x as usize))])
            })
            .save(path),
            3 => image::RgbImage::from_fn(w, h, |x, y| {
                image::Rgb([0, 1, 2].map(|c| q(self.get(c, y as usize, x as usize))))
            })
            .save(path),
            c => {
                return Err(Error::Argument(format!(
                    "cannot encode {c}-channel image as PNG"
                )))
            }
        };
        result.map_err(|e| Error::format(path, e))
    }
}

/// `H×W` grid of class ids in `[0, num_classes)`, or [`IGNORE_CLASS`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SegMask {
    height: usize,
    width: usize,
    num_classes: usize,
    classes: Vec<u8>,
}

impl SegMask {
    pub fn new(height: usize, width: usize, num_classes: usize, classes: Vec<u8>) -> Result<Self> {
        if classes.len() != height * width {
            return Err(Error::Argument(format!(
                "mask {height}×{width} needs {} labels, got {}",
                height * width,
                classes.len()
            )));
        }
        if num_classes == 0 || num_classes > IGNORE_CLASS as usize {
            return Err(Error::Argument(format!(
                "unsupported class count {num_classes}"
            )));
        }
        if let Some(&bad) = classes
            .iter()
            .find(|&&c| c != IGNORE_CLASS && c as usize >= num_classes)
        {
            return Err(Error::Label(format!(
                "class id {bad} not below class count {num_classes}"
            )));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            classes,
        })
    }

    pub fn filled(height: usize, width: usize, num_classes: usize, class: u8) -> Result<Self> {
        Self::new(height, width, num_classes, vec![class; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.classes[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, class: u8) {
        debug_assert!(class == IGNORE_CLASS || (class as usize) < self.num_classes);
        self.classes[y * self.width + x] = class;
    }

    /// Class targets for the cross-entropy op; ignored pixels keep the
    /// [`IGNORE_CLASS`] value.
    pub fn targets(&self) -> impl Iterator<Item = usize> + '_ {
        self.classes.iter().map(|&c| c as usize)
    }

    pub fn to_one_hot(&self) -> OneHotMask {
        let hw = self.height * self.width;
        let mut data = vec![0.0; self.num_classes * hw];
        for (p, &c) in self.classes.iter().enumerate() {
            if c != IGNORE_CLASS {
                data[c as usize * hw + p] = 1.0;
            }
        }
        OneHotMask {
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            data,
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<SegMask> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Argument(format!(
                "crop {height}×{width} at ({top},{left}) exceeds {}×{}",
                self.height, self.width
            )));
        }
        let mut classes = Vec::with_capacity(height * width);
        for y in 0..height {
            classes.extend_from_slice(&self.classes[(top + y) * self.width + left..][..width]);
        }
        Ok(SegMask {
            height,
            width,
            num_classes: self.num_classes,
            classes,
        })
    }

    /// Nearest-neighbour resampling.
    pub fn resize(&self, height: usize, width: usize) -> SegMask {
        let mut classes = Vec::with_capacity(height * width);
        for y in 0..height {
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            for x in 0..width {
                let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as usize;
                classes.push(self.get(sy.min(self.height - 1), sx.min(self.width - 1)));
            }
        }
        SegMask {
            height,
            width,
            num_classes: self.num_classes,
            classes,
        }
    }

    /// Copy where pixels outside `region` become [`IGNORE_CLASS`].
    pub fn restricted(&self, region: &[bool]) -> Result<SegMask> {
        if region.len() != self.classes.len() {
            return Err(Error::Argument("region size does not match mask".into()));
        }
        let classes = self
            .classes
            .iter()
            .zip(region)
            .map(|(&c, &keep)| if keep { c } else { IGNORE_CLASS })
            .collect();
        Ok(SegMask {
            classes,
            ..self.clone()
        })
    }

    /// Grayscale PNG whose 8-bit values are the class ids.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::GrayImage::from_raw(self.width as u32, self.height as u32, self.classes.clone())
            .expect("buffer size matches mask")
            .save(path)
            .map_err(|e| Error::format(path, e))
    }

    pub fn load_png(path: &Path, num_classes: usize) -> Result<SegMask> {
        let img = image::open(path).map_err(|e| Error::format(path, e))?;
        let gray = match img {
            image::DynamicImage::ImageLuma8(g) => g,
            _ => return Err(Error::format(path, "mask must be an 8-bit grayscale PNG")),
        };
        let (w, h) = (gray.width() as usize, gray.height() as usize);
        SegMask::new(h, w, num_classes, gray.into_raw()).map_err(|e| Error::format(path, e))
    }
}

/// One-hot form of a [`SegMask`]: `C′×H×W`, planar.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotMask {
    height: usize,
    width: usize,
    num_classes: usize,
    data: Vec<f64>,
}

impl OneHotMask {
    /// Each pixel must be all-zero (ignored) or a single 1.
    pub fn new(height: usize, width: usize, num_classes: usize, data: Vec<f64>) -> Result<Self> {
        let hw = height * width;
        if data.len() != num_classes * hw {
            return Err(Error::Argument("one-hot buffer size mismatch".into()));
        }
        for p in 0..hw {
            let mut total = 0.0;
            for k in 0..num_classes {
                let v = data[k * hw + p];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Label(format!("one-hot entry {v} is not 0 or 1")));
                }
                total += v;
            }
            if total > 1.0 {
                return Err(Error::Label(format!(
                    "pixel {p} has more than one active class"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            num_classes,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_classes(&self) -> SegMask {
        let hw = self.height * self.width;
        let classes = (0..hw)
            .map(|p| {
                (0..self.num_classes)
                    .find(|&k| self.data[k * hw + p] == 1.0)
                    .map_or(IGNORE_CLASS, |k| k as u8)
            })
            .collect();
        SegMask {
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            classes,
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            &[1, self.num_classes, self.height, self.width],
            self.data.clone(),
        )
    }
}

/// Per-pixel categorical distribution, `C′×H×W` planar.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities {
    height: usize,
    width: usize,
    num_classes: usize,
    data: Vec<f64>,
}

impl ClassProbabilities {
    pub(crate) fn from_tensor(t: &Tensor) -> Self {
        let s = t.shape();
        assert!(
            s.len() == 4 && s[0] == 1,
            "expected a single [1, C, H, W] map"
        );
        Self {
            num_classes: s[1],
            height: s[2],
            width: s[3],
            data: t.data().to_vec(),
        }
    }

    pub(crate) fn from_parts(
        num_classes: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(data.len(), num_classes * height * width);
        Self {
            height,
            width,
            num_classes,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn prob(&self, class: usize, y: usize, x: usize) -> f64 {
        self.data[(class * self.height + y) * self.width + x]
    }

    /// Largest deviation of any pixel's probability mass from 1.
    pub fn max_normalization_error(&self) -> f64 {
        let hw = self.height * self.width;
        (0..hw)
            .map(|p| {
                let s: f64 = (0..self.num_classes).map(|k| self.data[k * hw + p]).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Most probable class per pixel; ties go to the lower class id.
    pub fn argmax(&self) -> SegMask {
        let hw = self.height * self.width;
        let classes = (0..hw)
            .map(|p| {
                let mut best = 0;
                for k in 1..self.num_classes {
                    if self.data[k * hw + p] > self.data[best * hw + p] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        SegMask {
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            classes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_pixels_and_labels() {
        assert!(matches!(
            Image::new(1, 1, 1, vec![1.5]),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            SegMask::new(1, 2, 3, vec![0, 3]),
            Err(Error::Label(_))
        ));
        assert!(SegMask::new(1, 2, 3, vec![2, IGNORE_CLASS]).is_ok());
    }

    #[test]
    fn one_hot_round_trip_keeps_ignored_pixels() {
        let m = SegMask::new(2, 2, 3, vec![0, 2, IGNORE_CLASS, 1]).unwrap();
        let oh = m.to_one_hot();
        assert_eq!(oh.data().iter().sum::<f64>(), 3.0);
        assert_eq!(oh.to_classes(), m);
        let rebuilt = OneHotMask::new(2, 2, 3, oh.data().to_vec()).unwrap();
        assert_eq!(rebuilt, oh);
    }

    #[test]
    fn one_hot_validation() {
        assert!(matches!(
            OneHotMask::new(1, 1, 2, vec![1.0, 1.0]),
            Err(Error::Label(_))
        ));
        assert!(matches!(
            OneHotMask::new(1, 1, 2, vec![0.5, 0.5]),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn crop_and_resize() {
        let im = Image::from_fn(4, 4, 1, |_, y, x| (y * 4 + x) as f64 / 15.0);
        let c = im.crop(2, 1, 2, 2).unwrap();
        assert_eq!(c.get(0, 0, 0), im.get(0, 2, 1));
        assert!(im.crop(3, 3, 2, 2).is_err());
        let flat = Image::filled(8, 8, 3, 0.25).resize(4, 4);
        assert!(flat.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
        let m = SegMask::new(2, 2, 4, vec![0, 1, 2, 3])
            .unwrap()
            .resize(4, 4);
        assert_eq!(m.get(0, 0), 0);
        assert_eq!(m.get(3, 3), 3);
        assert_eq!(m.get(1, 2), 1);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let p = ClassProbabilities::from_parts(2, 1, 2, vec![0.5, 0.2, 0.5, 0.8]);
        assert_eq!(p.argmax().classes(), &[0, 1]);
        assert!(p.max_normalization_error() < 1e-12);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = SegMask::new(3, 2, 6, vec![0, 1, 2, 3, 4, IGNORE_CLASS]).unwrap();
        let path = dir.path().join("m.png");
        m.save_png(&path).unwrap();
        assert_eq!(SegMask::load_png(&path, 6).unwrap(), m);
        let im = Image::from_fn(3, 2, 3, |c, y, x| ((c + y + x) * 17) as f64 / 255.0);
        let ip = dir.path().join("i.png");
        im.save_png(&ip).unwrap();
        let back = Image::load_png(&ip).unwrap();
        for (a, b) in im.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
