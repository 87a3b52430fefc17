use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{assign_splits, ClassData, Dataset, Layout, Payload};
use crate::{seeds, Error, Result};

/// Gaussian-cluster feature dataset: one centre per class drawn uniformly
/// from `[-c, c]^d`, instances `centre + N(0, sigma^2 I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticDatasetSpec {
    pub num_classes: usize,
    pub instances_per_class: usize,
    pub feature_dim: usize,
    pub class_center_scale: f64,
    pub within_class_sigma: f64,
    /// Train/val/test fractions of the classes.
    pub split_fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            num_classes: 100,
            instances_per_class: 600,
            feature_dim: 8,
            class_center_scale: 1.0,
            within_class_sigma: 0.5,
            split_fractions: [0.64, 0.16, 0.20],
            seed: 0,
        }
    }
}

pub fn make_synthetic(spec: &SyntheticDatasetSpec) -> Result<Dataset> {
    if spec.feature_dim == 0 || spec.num_classes == 0 {
        return Err(Error::Config("synthetic dataset needs feature_dim and num_classes >= 1".into()));
    }
    if !(spec.within_class_sigma >= 0.0 && spec.within_class_sigma.is_finite()) {
        return Err(Error::Config(format!(
            "within_class_sigma must be >= 0, got {}",
            spec.within_class_sigma
        )));
    }
    if !(spec.class_center_scale > 0.0 && spec.class_center_scale.is_finite()) {
        return Err(Error::Config(format!(
            "class_center_scale must be > 0, got {}",
            spec.class_center_scale
        )));
    }
    let splits = assign_splits(spec.num_classes, spec.split_fractions)?;
    let c = spec.class_center_scale;
    let classes = splits
        .into_iter()
        .enumerate()
        .map(|(class, split)| {
            let mut rng = seeds::rng(seeds::derive(spec.seed, &[seeds::STREAM_DATA, class as u64]));
            let center: Vec<f64> = (0..spec.feature_dim).map(|_| rng.random_range(-c..=c)).collect();
            let instances = (0..spec.instances_per_class)
                .map(|_| {
                    let v = if spec.within_class_sigma == 0.0 {
                        center.clone()
                    } else {
                        let noise = Normal::new(0.0, spec.within_class_sigma).expect("valid sigma");
                        center.iter().map(|m| m + noise.sample(&mut rng)).collect()
                    };
                    Payload::Feature(v)
                })
                .collect();
            ClassData {
                split,
                center: Some(center),
                instances,
            }
        })
        .collect();
    Dataset::new(Layout::Feature { dim: spec.feature_dim }, classes)
}
