//! Augmentation operators `A_0..A_m` for raster images and feature vectors.
//!
//! Operator names follow the short forms used in run configs:
//!
//! | name | operator | parameters (default) |
//! |------|----------|----------------------|
//! | `F`  | horizontal flip | none |
//! | `Eq` | histogram equalization | none |
//! | `X`  | random crop then resize | scale `a` (0.68) |
//! | `Co` | colour balance | factor (3) |
//! | `Cr` | contrast | factor (1.5) |
//! | `I`  | blend with inverted image | alpha (0.8) |
//! | `Cu` | cutout filled with 127 | scale `a` (0.3) |
//! | `B`  | blend with Gaussian blur | radius, alpha (2, 0.5) |
//! | `Br` | brightness | factor (1.5) |
//! | `FN` | additive Gaussian feature noise | sigma (0.1) |
//! | `FM` | zero a fraction of coordinates | rate (0.25) |
//!
//! Parameters are written in parentheses, e.g. `X(0.68)` or `B(2,0.5)`.

mod raster;

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use raster::RasterImage;

use crate::numkit::Tensor;
use crate::{seeds, Error, Result};

pub const DEFAULT_CROP_SCALE: f64 = 0.68;
pub const DEFAULT_COLOR_FACTOR: f64 = 3.0;
pub const DEFAULT_FEATURE_SIGMA: f64 = 0.1;
pub const DEFAULT_FEATURE_RATE: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AugOp {
    Identity,
    Flip,
    Equalize,
    Crop { scale: f64 },
    Color { factor: f64 },
    Contrast { factor: f64 },
    Invert { alpha: f64 },
    Cutout { scale: f64 },
    Blur { radius: u32, alpha: f64 },
    Brightness { factor: f64 },
    FeatureNoise { sigma: f64 },
    FeatureMask { rate: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Image,
    Feature,
}

impl AugOp {
    pub fn is_feature_op(&self) -> bool {
        matches!(self, AugOp::Identity | AugOp::FeatureNoise { .. } | AugOp::FeatureMask { .. })
    }

    pub fn is_image_op(&self) -> bool {
        !matches!(self, AugOp::FeatureNoise { .. } | AugOp::FeatureMask { .. })
    }

    /// Checks parameter ranges that do not depend on the input.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::Config(format!("{self}: {what} out of range ({v})")));
        match *self {
            AugOp::Crop { scale } | AugOp::Cutout { scale } if !(scale > 0.0 && scale <= 1.0) => {
                bad("scale", scale)
            }
            AugOp::Color { factor } | AugOp::Contrast { factor } | AugOp::Brightness { factor }
                if !(factor >= 0.0 && factor.is_finite()) =>
            {
                bad("factor", factor)
            }
            AugOp::Invert { alpha } | AugOp::Blur { alpha, .. } if !(0.0..=1.0).contains(&alpha) => {
                bad("alpha", alpha)
            }
            AugOp::Blur { radius: 0, .. } => bad("radius", 0.0),
            AugOp::FeatureNoise { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => bad("sigma", sigma),
            AugOp::FeatureMask { rate } if !(0.0..=1.0).contains(&rate) => bad("rate", rate),
            _ => Ok(()),
        }
    }

    fn validate_for(&self, img: &RasterImage) -> Result<()> {
        self.validate()?;
        if let AugOp::Crop { scale } | AugOp::Cutout { scale } = *self {
            let min_side = img.height().min(img.width()) as f64;
            if scale < 1.0 / min_side {
                return Err(Error::Config(format!(
                    "{self}: scale must be at least 1/{min_side} for a {}x{} image",
                    img.height(),
                    img.width()
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for AugOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugOp::Identity => write!(f, "Id"),
            AugOp::Flip => write!(f, "F"),
            AugOp::Equalize => write!(f, "Eq"),
            AugOp::Crop { scale } => write!(f, "X({scale})"),
            AugOp::Color { factor } => write!(f, "Co({factor})"),
            AugOp::Contrast { factor } => write!(f, "Cr({factor})"),
            AugOp::Invert { alpha } => write!(f, "I({alpha})"),
            AugOp::Cutout { scale } => write!(f, "Cu({scale})"),
            AugOp::Blur { radius, alpha } => write!(f, "B({radius},{alpha})"),
            AugOp::Brightness { factor } => write!(f, "Br({factor})"),
            AugOp::FeatureNoise { sigma } => write!(f, "FN({sigma})"),
            AugOp::FeatureMask { rate } => write!(f, "FM({rate})"),
        }
    }
}

impl FromStr for AugOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) if s.ends_with(')') => (&s[..open], &s[open + 1..s.len() - 1]),
            Some(_) => return Err(Error::Config(format!("malformed augmentation '{s}'"))),
            None => (s, ""),
        };
        let args: Vec<f64> = if args.trim().is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|a| {
                    a.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad parameter '{a}' in '{s}'")))
                })
                .collect::<Result<_>>()?
        };
        let arg = |i: usize, default: f64| args.get(i).copied().unwrap_or(default);
        let max_args = match name {
            "Id" | "F" | "Eq" => 0,
            "B" => 2,
            _ => 1,
        };
        if args.len() > max_args {
            return Err(Error::Config(format!("too many parameters in '{s}'")));
        }
        let op = match name {
            "Id" => AugOp::Identity,
            "F" => AugOp::Flip,
            "Eq" => AugOp::Equalize,
            "X" => AugOp::Crop { scale: arg(0, DEFAULT_CROP_SCALE) },
            "Co" => AugOp::Color { factor: arg(0, DEFAULT_COLOR_FACTOR) },
            "Cr" => AugOp::Contrast { factor: arg(0, 1.5) },
            "I" => AugOp::Invert { alpha: arg(0, 0.8) },
            "Cu" => AugOp::Cutout { scale: arg(0, 0.3) },
            "B" => {
                let r = arg(0, 2.0);
                if r.fract() != 0.0 || r < 1.0 {
                    return Err(Error::Config(format!("blur radius must be a positive integer in '{s}'")));
                }
                AugOp::Blur { radius: r as u32, alpha: arg(1, 0.5) }
            }
            "Br" => AugOp::Brightness { factor: arg(0, 1.5) },
            "FN" => AugOp::FeatureNoise { sigma: arg(0, DEFAULT_FEATURE_SIGMA) },
            "FM" => AugOp::FeatureMask { rate: arg(0, DEFAULT_FEATURE_RATE) },
            other => return Err(Error::Config(format!("unknown augmentation '{other}'"))),
        };
        op.validate()?;
        Ok(op)
    }
}

impl Serialize for AugOp {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AugOp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Applies a raster operator. Stochastic operators draw every random
/// choice from `seed`.
pub fn apply(op: &AugOp, img: &RasterImage, seed: u64) -> Result<RasterImage> {
    op.validate_for(img)?;
    let mut rng = seeds::rng(seed);
    Ok(match *op {
        AugOp::Identity => img.clone(),
        AugOp::Flip => raster::flip(img),
        AugOp::Equalize => raster::equalize(img),
        AugOp::Crop { scale } => raster::crop(img, scale, &mut rng),
        AugOp::Color { factor } => raster::color(img, factor),
        AugOp::Contrast { factor } => raster::contrast(img, factor),
        AugOp::Invert { alpha } => raster::invert(img, alpha),
        AugOp::Cutout { scale } => raster::cutout(img, scale, &mut rng),
        AugOp::Blur { radius, alpha } => raster::blur(img, radius, alpha),
        AugOp::Brightness { factor } => raster::brightness(img, factor),
        AugOp::FeatureNoise { .. } | AugOp::FeatureMask { .. } => {
            return Err(Error::Usage(format!("{op} applies to feature vectors, not images")))
        }
    })
}

/// Feature-space perturbation on a raw slice.
pub fn apply_feature_slice(op: &AugOp, feat: &[f64], seed: u64) -> Result<Vec<f64>> {
    op.validate()?;
    let mut rng = seeds::rng(seed);
    match *op {
        AugOp::Identity => Ok(feat.to_vec()),
        AugOp::FeatureNoise { sigma } => {
            if sigma == 0.0 {
                return Ok(feat.to_vec());
            }
            let normal = Normal::new(0.0, sigma).expect("validated sigma");
            Ok(feat.iter().map(|&v| v + normal.sample(&mut rng)).collect())
        }
        AugOp::FeatureMask { rate } => {
            let count = masked_count(feat.len(), rate);
            let mut out = feat.to_vec();
            for i in rand::seq::index::sample(&mut rng, feat.len(), count) {
                out[i] = 0.0;
            }
            Ok(out)
        }
        _ => Err(Error::Usage(format!("{op} applies to images, not feature vectors"))),
    }
}

/// Number of coordinates zeroed by a feature mask of `rate` over `d` dims.
pub fn masked_count(d: usize, rate: f64) -> usize {
    ((rate * d as f64).round() as usize).min(d)
}

pub fn apply_feature(op: &AugOp, feat: &Tensor, seed: u64) -> Result<Tensor> {
    let out = apply_feature_slice(op, feat.data(), seed)?;
    Ok(Tensor::from_parts(feat.shape().to_vec(), out))
}

/// An ordered augmentation ensemble whose first member is the identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AugOp>", into = "Vec<AugOp>")]
pub struct Pipeline {
    ops: Vec<AugOp>,
}

impl Pipeline {
    /// Builds `[Identity, augmentations...]`. At least one augmentation is
    /// required; a leading identity in the list is accepted and not doubled.
    pub fn new(augmentations: Vec<AugOp>) -> Result<Self> {
        let mut ops = vec![AugOp::Identity];
        let skip = usize::from(augmentations.first() == Some(&AugOp::Identity));
        ops.extend(augmentations.into_iter().skip(skip));
        if ops.len() < 2 {
            return Err(Error::Config(
                "an augmentation pipeline needs at least one operator besides the identity".into(),
            ));
        }
        for op in &ops {
            op.validate()?;
        }
        Ok(Self { ops })
    }

    pub fn ops(&self) -> &[AugOp] {
        &self.ops
    }

    /// Ensemble size `m + 1`.
    pub fn members(&self) -> usize {
        self.ops.len()
    }

    pub fn mode_compatible(&self, mode: Mode) -> Result<()> {
        let ok = match mode {
            Mode::Image => self.ops.iter().all(AugOp::is_image_op),
            Mode::Feature => self.ops.iter().all(AugOp::is_feature_op),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("pipeline {self} is not valid for {mode:?} mode")))
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.ops.iter().map(|o| o.to_string()).collect();
        write!(f, "[{}]", names.join(", "))
    }
}

impl TryFrom<Vec<AugOp>> for Pipeline {
    type Error = Error;
    fn try_from(v: Vec<AugOp>) -> Result<Self> {
        Pipeline::new(v)
    }
}

impl From<Pipeline> for Vec<AugOp> {
    fn from(p: Pipeline) -> Self {
        p.ops
    }
}

/// Default ensemble: flip, equalization, colour (factor 3) and crop (0.68)
/// for images; two noise streams around a mask for features.
pub fn default_pipeline(mode: Mode) -> Pipeline {
    feature_pipeline_with(mode, DEFAULT_FEATURE_SIGMA, DEFAULT_FEATURE_RATE)
}

pub fn feature_pipeline_with(mode: Mode, sigma: f64, rate: f64) -> Pipeline {
    let ops = match mode {
        Mode::Image => vec![
            AugOp::Flip,
            AugOp::Equalize,
            AugOp::Color { factor: DEFAULT_COLOR_FACTOR },
            AugOp::Crop { scale: DEFAULT_CROP_SCALE },
        ],
        Mode::Feature => vec![
            AugOp::FeatureNoise { sigma },
            AugOp::FeatureMask { rate },
            AugOp::FeatureNoise { sigma },
        ],
    };
    Pipeline::new(ops).expect("default pipeline is valid")
}
