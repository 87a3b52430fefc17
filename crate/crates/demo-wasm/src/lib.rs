//! Browser demo: ensemble mutual information, a 2D refinement trajectory
//! and an augmentation preview.

use fewshot_core::augment::{apply, AugOp, Pipeline, RasterImage};
use fewshot_core::episodes::{make_synthetic, sample_episode, EpisodeSpec, Split, SyntheticDatasetSpec};
use fewshot_core::metric::ScoreTensor;
use fewshot_core::refine::refine_episode;
use fewshot_core::uncertainty::{average_scores, entropy, mutual_information};
use fewshot_core::{Model, ModelConfig, Variant};
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const PREVIEW_SIZE: usize = 64;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[derive(Serialize)]
struct MiReport {
    normalized: Vec<Vec<f64>>,
    average: Vec<f64>,
    entropy_of_average: f64,
    mutual_information: f64,
}

/// `members` is a JSON array of score rows for one query, one row per
/// ensemble member. Rows are normalized to sum to one before use.
pub fn ensemble_mi(members: &[Vec<f64>]) -> Result<String, String> {
    if members.is_empty() || members[0].is_empty() {
        return Err("need at least one member with one class".into());
    }
    let normalized = members
        .iter()
        .map(|row| {
            if row.len() != members[0].len() {
                return Err("all members need the same number of classes".to_string());
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err("scores must be finite and non-negative".to_string());
            }
            let s: f64 = row.iter().sum();
            if s <= 0.0 {
                return Err("each member needs a positive score".to_string());
            }
            Ok(row.iter().map(|v| v / s).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let st = ScoreTensor::from_nested(&[normalized.clone()]).map_err(|e| e.to_string())?;
    let average = average_scores(&st).values.data().to_vec();
    let report = MiReport {
        entropy_of_average: entropy(&average).map_err(|e| e.to_string())?,
        mutual_information: mutual_information(&st).values[0],
        normalized,
        average,
    };
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = ensembleMi)]
pub fn ensemble_mi_js(members_json: &str) -> Result<String, JsValue> {
    let members: Vec<Vec<f64>> = serde_json::from_str(members_json).map_err(js_err)?;
    ensemble_mi(&members).map_err(js_err)
}

#[derive(Serialize)]
struct Trajectory {
    support: Vec<[f64; 2]>,
    support_labels: Vec<usize>,
    queries: Vec<[f64; 2]>,
    query_labels: Vec<usize>,
    /// Prototypes per iteration, starting with the support mean.
    prototypes: Vec<Vec<[f64; 2]>>,
    gates: Vec<Vec<f64>>,
    predictions: Vec<usize>,
}

fn points(t: &fewshot_core::numkit::Tensor) -> Vec<[f64; 2]> {
    t.data().chunks(2).map(|c| [c[0], c[1]]).collect()
}

/// Refines a 3-way 1-shot episode on two-dimensional Gaussian classes with
/// an untrained model and returns every iteration's prototypes.
pub fn refinement_trajectory(seed: u64, iterations: usize, spread: f64) -> Result<String, String> {
    let ds = make_synthetic(&SyntheticDatasetSpec {
        num_classes: 3,
        instances_per_class: 40,
        feature_dim: 2,
        within_class_sigma: spread,
        split_fractions: [0.0, 0.0, 1.0],
        seed,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let cfg = ModelConfig {
        variant: Variant::Ucn,
        temperature_hidden: vec![8],
        generator_dim: 8,
        heads: 2,
        iterations,
        ..Default::default()
    };
    let model = Model::new(cfg, ds.layout(), seed).map_err(|e| e.to_string())?;
    let pipeline = Pipeline::new(vec![AugOp::FeatureNoise { sigma: 0.1 }, AugOp::FeatureNoise { sigma: 0.1 }])
        .map_err(|e| e.to_string())?;
    let ep = sample_episode(&ds, Split::Test, &EpisodeSpec::new(3, 1, 15), seed).map_err(|e| e.to_string())?;
    let x = model.prepare(&ep, &pipeline).map_err(|e| e.to_string())?;
    let out = refine_episode(&model, &x).map_err(|e| e.to_string())?;

    let m1 = x.members;
    let all_support = points(&x.support);
    let support: Vec<[f64; 2]> = all_support.chunks(m1).map(|c| c[0]).collect();
    let support_labels = (0..x.n_way).flat_map(|i| std::iter::repeat_n(i, x.k_shot)).collect();
    let initial = all_support
        .chunks(x.k_shot * m1)
        .map(|c| {
            let n = c.len() as f64;
            [c.iter().map(|p| p[0]).sum::<f64>() / n, c.iter().map(|p| p[1]).sum::<f64>() / n]
        })
        .collect();
    let mut prototypes = vec![initial];
    prototypes.extend(out.trajectory.iter().map(|r| points(&r.prototypes)));
    let t = Trajectory {
        support,
        support_labels,
        queries: points(&x.query_plain),
        query_labels: x.query_labels.clone(),
        prototypes,
        gates: out.trajectory.iter().map(|r| r.gates.clone()).collect(),
        predictions: out.predictions,
    };
    serde_json::to_string(&t).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = refinementTrajectory)]
pub fn refinement_trajectory_js(seed: u32, iterations: u32, spread: f64) -> Result<String, JsValue> {
    refinement_trajectory(seed as u64, iterations as usize, spread).map_err(js_err)
}

/// Test card: colour gradient with an off-centre disc and a bar.
pub fn sample_image() -> RasterImage {
    let n = PREVIEW_SIZE;
    let mut px = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (x as f64 / n as f64, y as f64 / n as f64);
            let disc = (fx - 0.35).powi(2) + (fy - 0.4).powi(2) < 0.04;
            let bar = (0.7..0.85).contains(&fx) && (0.2..0.8).contains(&fy);
            let rgb = if disc {
                [230, 60, 40]
            } else if bar {
                [30, 40, 200]
            } else {
                [(60.0 + 150.0 * fx) as u8, (80.0 + 120.0 * fy) as u8, 120]
            };
            px.extend_from_slice(&rgb);
        }
    }
    RasterImage::new(n, n, 3, px).expect("valid test card")
}

/// Applies one image augmentation written in the usual notation
/// (e.g. `Cr(0.7)`, `B(2,0.5)`) to the test card and returns RGBA pixels.
pub fn augment_preview(op: &str, seed: u64) -> Result<Vec<u8>, String> {
    let op: AugOp = op.parse().map_err(|e: fewshot_core::Error| e.to_string())?;
    if !op.is_image_op() {
        return Err(format!("{op} is not an image augmentation"));
    }
    let img = apply(&op, &sample_image(), seed).map_err(|e| e.to_string())?;
    Ok(img.pixels().chunks(3).flat_map(|c| [c[0], c[1], c[2], 255]).collect())
}

#[wasm_bindgen(js_name = augmentPreview)]
pub fn augment_preview_js(op: &str, seed: u32) -> Result<Vec<u8>, JsValue> {
    augment_preview(op, seed as u64).map_err(js_err)
}

#[wasm_bindgen(js_name = previewSize)]
pub fn preview_size() -> usize {
    PREVIEW_SIZE
}
