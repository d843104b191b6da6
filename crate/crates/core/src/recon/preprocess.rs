//! Crop to the subject and box-filter downsample, with the adjoint used to
//! carry image gradients back to full resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Pixels whose alpha exceeds this count as subject.
pub const ALPHA_THRESHOLD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl CropBox {
    pub fn full(width: usize, height: usize) -> Self {
        Self { x0: 0, y0: 0, width, height }
    }

    /// Tight box around `alpha > ALPHA_THRESHOLD`, grown by `margin` and
    /// clamped to the image.
    pub fn from_alpha(alpha: &Image, margin: usize) -> Result<Self> {
        if alpha.channels() != 1 {
            return Err(Error::Shape(format!("alpha map has {} channels", alpha.channels())));
        }
        let (w, h) = (alpha.width(), alpha.height());
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..h {
            for x in 0..w {
                if alpha.get(x, y, 0) > ALPHA_THRESHOLD {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        if x0 == usize::MAX {
            return Err(Error::EmptySubject);
        }
        let (x0, y0) = (x0.saturating_sub(margin), y0.saturating_sub(margin));
        let (x1, y1) = ((x1 + margin).min(w - 1), (y1 + margin).min(h - 1));
        Ok(Self {
            x0,
            y0,
            width: x1 - x0 + 1,
            height: y1 - y0 + 1,
        })
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &CropBox) -> CropBox {
        let x0 = self.x0.min(other.x0);
        let y0 = self.y0.min(other.y0);
        let x1 = (self.x0 + self.width).max(other.x0 + other.width);
        let y1 = (self.y0 + self.height).max(other.y0 + other.height);
        CropBox {
            x0,
            y0,
            width: x1 - x0,
            height: y1 - y0,
        }
    }
}

/// A fixed crop followed by `factor`× box-filter downsampling. Blocks that
/// overhang the crop edge average the pixels they do cover.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocess {
    pub crop: CropBox,
    pub factor: usize,
}

impl Preprocess {
    pub fn new(crop: CropBox, factor: usize) -> Result<Self> {
        if factor == 0 || crop.width == 0 || crop.height == 0 {
            return Err(Error::Param(format!("crop {crop:?} with factor {factor}")));
        }
        Ok(Self { crop, factor })
    }

    pub fn output_size(&self) -> (usize, usize) {
        (self.crop.width.div_ceil(self.factor), self.crop.height.div_ceil(self.factor))
    }

    fn check(&self, img: &Image) -> Result<()> {
        if self.crop.x0 + self.crop.width > img.width() || self.crop.y0 + self.crop.height > img.height() {
            return Err(Error::Shape(format!(
                "crop {:?} outside {}x{} image",
                self.crop,
                img.width(),
                img.height()
            )));
        }
        Ok(())
    }

    /// Source pixel range of output block `(bx, by)` and its pixel count.
    fn block(&self, bx: usize, by: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>, f64) {
        let f = self.factor;
        let xs = self.crop.x0 + bx * f..self.crop.x0 + ((bx + 1) * f).min(self.crop.width);
        let ys = self.crop.y0 + by * f..self.crop.y0 + ((by + 1) * f).min(self.crop.height);
        let n = (xs.len() * ys.len()) as f64;
        (xs, ys, n)
    }

    pub fn apply(&self, img: &Image) -> Result<Image> {
        self.check(img)?;
        let (ow, oh) = self.output_size();
        let c = img.channels();
        let mut out = Image::new(ow, oh, c);
        for by in 0..oh {
            for bx in 0..ow {
                let (xs, ys, n) = self.block(bx, by);
                let dst = out.pixel_mut(bx, by);
                for y in ys {
                    for x in xs.clone() {
                        for (d, s) in dst.iter_mut().zip(img.pixel(x, y)) {
                            *d += s;
                        }
                    }
                }
                dst.iter_mut().for_each(|d| *d /= n);
            }
        }
        Ok(out)
    }

    /// Adjoint of [`apply`](Self::apply): spreads each output gradient evenly
    /// over its source block of a `width×height` image.
    pub fn adjoint(&self, grad: &Image, width: usize, height: usize) -> Result<Image> {
        let (ow, oh) = self.output_size();
        if grad.width() != ow || grad.height() != oh {
            return Err(Error::Shape(format!(
                "gradient {}x{} for {ow}x{oh} preprocessed image",
                grad.width(),
                grad.height()
            )));
        }
        let mut full = Image::new(width, height, grad.channels());
        self.check(&full)?;
        for by in 0..oh {
            for bx in 0..ow {
                let (xs, ys, n) = self.block(bx, by);
                let g = grad.pixel(bx, by).to_vec();
                for y in ys {
                    for x in xs.clone() {
                        for (d, s) in full.pixel_mut(x, y).iter_mut().zip(&g) {
                            *d += s / n;
                        }
                    }
                }
            }
        }
        Ok(full)
    }
}

/// Crops `img` to the subject in `alpha_map` (plus `margin`) and downsamples
/// by `factor`.
pub fn crop_and_downsample(img: &Image, alpha_map: &Image, margin: usize, factor: usize) -> Result<Image> {
    if img.width() != alpha_map.width() || img.height() != alpha_map.height() {
        return Err(Error::Shape("alpha map does not match image".into()));
    }
    Preprocess::new(CropBox::from_alpha(alpha_map, margin)?, factor)?.apply(img)
}
