use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// 8-bit raster image in HWC order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterImage {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::Config(format!("image must be at least 2x2, got {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Config(format!("channels must be 1 or 3, got {channels}")));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "{}x{}x{} image needs {} bytes, got {}",
                height,
                width,
                channels,
                height * width * channels,
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
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

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    fn with_pixels(&self, pixels: Vec<u8>) -> Self {
        Self {
            pixels,
            ..self.clone()
        }
    }

    /// ITU-R 601-2 luma, as used for greyscale conversion.
    fn luma(&self, idx: usize) -> f64 {
        if self.channels == 1 {
            self.pixels[idx] as f64
        } else {
            let p = &self.pixels[idx * 3..idx * 3 + 3];
            0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
        }
    }

    pub(crate) fn patch_size(&self, scale: f64) -> (usize, usize) {
        let ph = ((scale * self.height as f64).floor() as usize).clamp(1, self.height);
        let pw = ((scale * self.width as f64).floor() as usize).clamp(1, self.width);
        (ph, pw)
    }
}

fn to_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub(crate) fn flip(img: &RasterImage) -> RasterImage {
    let (w, c) = (img.width, img.channels);
    let mut out = img.pixels.clone();
    for y in 0..img.height {
        for x in 0..w {
            let src = (y * w + (w - 1 - x)) * c;
            let dst = (y * w + x) * c;
            out[dst..dst + c].copy_from_slice(&img.pixels[src..src + c]);
        }
    }
    img.with_pixels(out)
}

/// Per-channel histogram equalization with the cumulative-distribution remap
/// `round((cdf(v) - cdf_min) / (n - cdf_min) * 255)`.
pub(crate) fn equalize(img: &RasterImage) -> RasterImage {
    let c = img.channels;
    let n = img.height * img.width;
    let mut out = img.pixels.clone();
    for ch in 0..c {
        let mut hist = [0usize; 256];
        for i in 0..n {
            hist[img.pixels[i * c + ch] as usize] += 1;
        }
        let mut cdf = [0usize; 256];
        let mut acc = 0;
        for (v, h) in hist.iter().enumerate() {
            acc += h;
            cdf[v] = acc;
        }
        let cdf_min = cdf[hist.iter().position(|&h| h > 0).unwrap_or(0)];
        if cdf_min == n {
            continue;
        }
        let denom = (n - cdf_min) as f64;
        for i in 0..n {
            let v = img.pixels[i * c + ch] as usize;
            out[i * c + ch] = to_u8((cdf[v] - cdf_min) as f64 / denom * 255.0);
        }
    }
    img.with_pixels(out)
}

/// Bilinear resize of the patch at `(top, left)` sized `ph × pw` back to the
/// full frame, with corner-aligned sampling.
fn resize_patch(img: &RasterImage, top: usize, left: usize, ph: usize, pw: usize) -> RasterImage {
    let (h, w, c) = (img.height, img.width, img.channels);
    let map = |dst: usize, dst_len: usize, src_len: usize| -> f64 {
        if src_len <= 1 || dst_len <= 1 {
            0.0
        } else {
            dst as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64
        }
    };
    let mut out = vec![0u8; h * w * c];
    for y in 0..h {
        let sy = map(y, h, ph);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(ph - 1);
        let fy = sy - y0 as f64;
        for x in 0..w {
            let sx = map(x, w, pw);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(pw - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let p = |yy: usize, xx: usize| img.at(top + yy, left + xx, ch) as f64;
                let v = (1.0 - fy) * ((1.0 - fx) * p(y0, x0) + fx * p(y0, x1))
                    + fy * ((1.0 - fx) * p(y1, x0) + fx * p(y1, x1));
                out[(y * w + x) * c + ch] = to_u8(v);
            }
        }
    }
    img.with_pixels(out)
}

pub(crate) fn crop(img: &RasterImage, scale: f64, rng: &mut impl Rng) -> RasterImage {
    let (ph, pw) = img.patch_size(scale);
    let top = rng.random_range(0..=img.height - ph);
    let left = rng.random_range(0..=img.width - pw);
    resize_patch(img, top, left, ph, pw)
}

pub(crate) fn cutout(img: &RasterImage, scale: f64, rng: &mut impl Rng) -> RasterImage {
    let (ph, pw) = img.patch_size(scale);
    let top = rng.random_range(0..=img.height - ph);
    let left = rng.random_range(0..=img.width - pw);
    let (w, c) = (img.width, img.channels);
    let mut out = img.pixels.clone();
    for y in top..top + ph {
        for x in left..left + pw {
            out[(y * w + x) * c..(y * w + x + 1) * c].fill(127);
        }
    }
    img.with_pixels(out)
}

/// `degenerate + factor * (img - degenerate)`, clamped to the pixel range.
fn blend(img: &RasterImage, degenerate: &[f64], factor: f64) -> RasterImage {
    let out = img
        .pixels
        .iter()
        .zip(degenerate)
        .map(|(&p, &d)| to_u8(d + factor * (p as f64 - d)))
        .collect();
    img.with_pixels(out)
}

/// Colour balance: factor 0 gives the greyscale image.
pub(crate) fn color(img: &RasterImage, factor: f64) -> RasterImage {
    let c = img.channels;
    let grey: Vec<f64> = (0..img.pixels.len()).map(|i| to_u8(img.luma(i / c)) as f64).collect();
    blend(img, &grey, factor)
}

/// Contrast: factor 0 gives a solid image at the mean luma.
pub(crate) fn contrast(img: &RasterImage, factor: f64) -> RasterImage {
    let n = img.height * img.width;
    let mean = (0..n).map(|i| img.luma(i)).sum::<f64>() / n as f64;
    let degenerate = vec![to_u8(mean) as f64; img.pixels.len()];
    blend(img, &degenerate, factor)
}

/// Brightness: factor 0 gives a black image.
pub(crate) fn brightness(img: &RasterImage, factor: f64) -> RasterImage {
    blend(img, &vec![0.0; img.pixels.len()], factor)
}

/// `alpha * x + (1 - alpha) * (255 - x)`.
pub(crate) fn invert(img: &RasterImage, alpha: f64) -> RasterImage {
    let out = img
        .pixels
        .iter()
        .map(|&p| to_u8(alpha * p as f64 + (1.0 - alpha) * (255 - p) as f64))
        .collect();
    img.with_pixels(out)
}

/// Separable Gaussian blur with standard deviation `radius`, blended as
/// `alpha * x + (1 - alpha) * blur(x)`.
pub(crate) fn blur(img: &RasterImage, radius: u32, alpha: f64) -> RasterImage {
    let sigma = radius as f64;
    let half = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let ksum: f64 = kernel.iter().sum();
    let (h, w, c) = (img.height as isize, img.width as isize, img.channels);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut dst = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (ki, k) in kernel.iter().enumerate() {
                        let off = ki as isize - half;
                        let (yy, xx) = if horizontal {
                            (y, (x + off).clamp(0, w - 1))
                        } else {
                            ((y + off).clamp(0, h - 1), x)
                        };
                        acc += k * src[((yy * w + xx) as usize) * c + ch];
                    }
                    dst[((y * w + x) as usize) * c + ch] = acc / ksum;
                }
            }
        }
        dst
    };
    let src: Vec<f64> = img.pixels.iter().map(|&p| p as f64).collect();
    let blurred = pass(&pass(&src, true), false);
    let out = img
        .pixels
        .iter()
        .zip(&blurred)
        .map(|(&p, &b)| to_u8(alpha * p as f64 + (1.0 - alpha) * b))
        .collect();
    img.with_pixels(out)
}
