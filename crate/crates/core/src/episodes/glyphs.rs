//! Procedural raster classes.
//!
//! Every class is a glyph: a background colour, a few filled shapes and an
//! oriented sinusoidal texture. Instances jitter the glyph position, its
//! brightness and add pixel noise, so augmentations have real structure to
//! act on.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{assign_splits, ClassData, Dataset, Layout, Payload};
use crate::augment::RasterImage;
use crate::{seeds, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RasterDatasetSpec {
    pub num_classes: usize,
    pub instances_per_class: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Maximum glyph shift in pixels.
    pub max_shift: usize,
    /// Standard deviation of per-pixel noise, in 8-bit units.
    pub pixel_noise: f64,
    pub split_fractions: [f64; 3],
    pub seed: u64,
}

impl Default for RasterDatasetSpec {
    fn default() -> Self {
        Self {
            num_classes: 100,
            instances_per_class: 600,
            height: 32,
            width: 32,
            channels: 3,
            max_shift: 3,
            pixel_noise: 12.0,
            split_fractions: [0.64, 0.16, 0.20],
            seed: 0,
        }
    }
}

enum Shape {
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Disc { cy: f64, cx: f64, r: f64 },
    Bar { cy: f64, cx: f64, angle: f64, half_len: f64, half_width: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y <= y1 && x >= x0 && x <= x1,
            Shape::Disc { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
            Shape::Bar { cy, cx, angle, half_len, half_width } => {
                let (s, c) = angle.sin_cos();
                let (dy, dx) = (y - cy, x - cx);
                (dx * c + dy * s).abs() <= half_len && (-dx * s + dy * c).abs() <= half_width
            }
        }
    }
}

struct Glyph {
    background: [f64; 3],
    shapes: Vec<(Shape, [f64; 3])>,
    texture: (f64, f64, f64, f64),
}

impl Glyph {
    fn random(rng: &mut impl Rng, h: f64, w: f64) -> Self {
        let colour = |rng: &mut dyn rand::RngCore| [0, 1, 2].map(|_| rng.random_range(0.0..255.0));
        let background = colour(rng);
        let shapes = (0..3)
            .map(|_| {
                let shape = match rng.random_range(0..3) {
                    0 => {
                        let (ya, yb) = (rng.random_range(0.0..h), rng.random_range(0.0..h));
                        let (xa, xb) = (rng.random_range(0.0..w), rng.random_range(0.0..w));
                        Shape::Rect { y0: ya.min(yb), x0: xa.min(xb), y1: ya.max(yb), x1: xa.max(xb) }
                    }
                    1 => Shape::Disc {
                        cy: rng.random_range(0.0..h),
                        cx: rng.random_range(0.0..w),
                        r: rng.random_range(0.1..0.35) * h.min(w),
                    },
                    _ => Shape::Bar {
                        cy: rng.random_range(0.25 * h..0.75 * h),
                        cx: rng.random_range(0.25 * w..0.75 * w),
                        angle: rng.random_range(0.0..std::f64::consts::PI),
                        half_len: rng.random_range(0.2..0.45) * h.max(w),
                        half_width: rng.random_range(1.0..3.0),
                    },
                };
                (shape, colour(rng))
            })
            .collect();
        let texture = (
            rng.random_range(0.2..1.2),
            rng.random_range(0.0..std::f64::consts::PI),
            rng.random_range(10.0..40.0),
            rng.random_range(0.0..std::f64::consts::TAU),
        );
        Self { background, shapes, texture }
    }

    fn render(&self, spec: &RasterDatasetSpec, rng: &mut impl Rng) -> RasterImage {
        let (h, w, c) = (spec.height, spec.width, spec.channels);
        let shift = spec.max_shift as i64;
        let dy = rng.random_range(-shift..=shift) as f64;
        let dx = rng.random_range(-shift..=shift) as f64;
        let gain = rng.random_range(0.85..1.15);
        let noise = Normal::new(0.0, spec.pixel_noise.max(1e-12)).expect("valid noise");
        let (freq, orient, amp, phase) = self.texture;
        let (so, co) = orient.sin_cos();
        let mut px = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                let (gy, gx) = (y as f64 - dy, x as f64 - dx);
                let mut rgb = self.background;
                for (shape, col) in &self.shapes {
                    if shape.contains(gy, gx) {
                        rgb = *col;
                    }
                }
                let t = amp * (freq * (gx * co + gy * so) + phase).sin();
                let vals: Vec<f64> = if c == 1 {
                    vec![0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]]
                } else {
                    rgb.to_vec()
                };
                for v in vals {
                    let n = if spec.pixel_noise > 0.0 { noise.sample(rng) } else { 0.0 };
                    px.push(((v + t) * gain + n).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        RasterImage::new(h, w, c, px).expect("rendered image matches spec")
    }
}

pub fn make_raster(spec: &RasterDatasetSpec) -> Result<Dataset> {
    if spec.num_classes == 0 {
        return Err(Error::Config("raster dataset needs num_classes >= 1".into()));
    }
    if !(spec.pixel_noise >= 0.0 && spec.pixel_noise.is_finite()) {
        return Err(Error::Config(format!("pixel_noise must be >= 0, got {}", spec.pixel_noise)));
    }
    RasterImage::filled(spec.height, spec.width, spec.channels, 0)?;
    let splits = assign_splits(spec.num_classes, spec.split_fractions)?;
    let classes = splits
        .into_iter()
        .enumerate()
        .map(|(class, split)| {
            let mut rng = seeds::rng(seeds::derive(spec.seed, &[seeds::STREAM_DATA, class as u64]));
            let glyph = Glyph::random(&mut rng, spec.height as f64, spec.width as f64);
            let instances = (0..spec.instances_per_class)
                .map(|_| Payload::Image(glyph.render(spec, &mut rng)))
                .collect();
            ClassData { split, center: None, instances }
        })
        .collect();
    Dataset::new(
        Layout::Image { height: spec.height, width: spec.width, channels: spec.channels },
        classes,
    )
}
