use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{evaluate, map_indexed, write_episode_csv, EvalPlan, EvalReport};
use crate::augment::{Mode, Pipeline};
use crate::episodes::{sample_episode, Dataset};
use crate::model::{Model, Variant};
use crate::refine::refine_episode;
use crate::uncertainty::MiRecord;
use crate::{seeds, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "T_sweep")]
    TSweep,
    #[serde(rename = "augmentation_sets")]
    AugmentationSets,
    #[serde(rename = "uncertainty_onoff")]
    UncertaintyOnoff,
    #[serde(rename = "weight_generator_variant")]
    WeightGeneratorVariant,
    #[serde(rename = "semi_supervised")]
    SemiSupervised,
}

impl Axis {
    pub const ALL: [Axis; 5] = [
        Axis::TSweep,
        Axis::AugmentationSets,
        Axis::UncertaintyOnoff,
        Axis::WeightGeneratorVariant,
        Axis::SemiSupervised,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::TSweep => "T_sweep",
            Axis::AugmentationSets => "augmentation_sets",
            Axis::UncertaintyOnoff => "uncertainty_onoff",
            Axis::WeightGeneratorVariant => "weight_generator_variant",
            Axis::SemiSupervised => "semi_supervised",
        }
    }

    /// Grid used when the config gives none.
    pub fn default_grid(self, mode: Mode) -> Vec<String> {
        let v: &[&str] = match (self, mode) {
            (Axis::TSweep, _) => &["0", "1", "2", "4", "6"],
            (Axis::AugmentationSets, Mode::Image) => &["F", "F,Eq", "F,Eq,X", "F,Eq,X,Co"],
            (Axis::AugmentationSets, Mode::Feature) => &["FN", "FN,FM", "FN,FM,FN"],
            (Axis::UncertaintyOnoff, _) => &["baseline", "ucn_a", "ucn_b", "ucn"],
            (Axis::WeightGeneratorVariant, _) => &["multi_att", "mlp"],
            (Axis::SemiSupervised, _) => &["0", "10", "30"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// Whether every cell needs its own trained checkpoint.
    pub fn per_cell_checkpoints(self) -> bool {
        matches!(self, Axis::UncertaintyOnoff | Axis::WeightGeneratorVariant)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Usage(format!("unknown ablation axis {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSpec {
    pub axis: Axis,
    pub grid: Vec<String>,
}

/// One evaluated configuration.
#[derive(Clone, Debug)]
pub struct AblationCell {
    pub label: String,
    pub model: Model,
    pub pipeline: Pipeline,
    pub plan: EvalPlan,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: String,
    pub mean_accuracy: f64,
    pub ci95: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationResult {
    pub axis: Axis,
    pub seed: u64,
    pub config_fingerprint: String,
    pub summary: Vec<CellSummary>,
    #[serde(skip)]
    pub reports: Vec<(String, EvalReport)>,
}

fn parse_semi(value: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("semi_supervised cell {value:?}: expected `u` or `u+distractors`"));
    let (u, d) = value.split_once('+').unwrap_or((value, "0"));
    Ok((u.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?))
}

/// Expands a spec into cells. `load` returns the trained model for a key:
/// the grid value for axes with per-cell checkpoints, `"ucn"` otherwise.
pub fn build_cells(
    spec: &AblationSpec,
    load: &dyn Fn(&str) -> Result<Model>,
    pipeline: &Pipeline,
    plan: &EvalPlan,
) -> Result<Vec<AblationCell>> {
    spec.grid
        .iter()
        .map(|value| {
            let mut cell = AblationCell {
                label: value.clone(),
                model: load(if spec.axis.per_cell_checkpoints() { value } else { "ucn" })?,
                pipeline: pipeline.clone(),
                plan: plan.clone(),
            };
            match spec.axis {
                Axis::TSweep => {
                    let t: usize = value
                        .parse()
                        .map_err(|_| Error::Config(format!("T_sweep cell {value:?} is not an integer")))?;
                    let variant = match cell.model.variant() {
                        Variant::Baseline => Variant::Ucn,
                        v => v,
                    };
                    cell.model = cell.model.with_settings(variant, t);
                }
                Axis::AugmentationSets => {
                    let ops = value
                        .split(',')
                        .map(|s| s.trim().parse())
                        .collect::<Result<Vec<_>>>()?;
                    cell.pipeline = Pipeline::new(ops)?;
                }
                Axis::UncertaintyOnoff => {
                    let v: Variant = value.parse()?;
                    let t = cell.model.config.iterations;
                    cell.model = cell.model.with_settings(v, t);
                }
                Axis::WeightGeneratorVariant => {
                    let want = format!("{:?}", cell.model.config.generator);
                    let given = value.replace('_', "");
                    if !want.eq_ignore_ascii_case(&given) {
                        return Err(Error::Config(format!(
                            "checkpoint for cell {value:?} was built with generator {want}"
                        )));
                    }
                }
                Axis::SemiSupervised => {
                    let (u, d) = parse_semi(value)?;
                    cell.plan.episode.unlabeled = u * cell.plan.episode.n_way;
                    cell.plan.episode.distractors = d;
                }
            }
            Ok(cell)
        })
        .collect()
}

/// Evaluates every cell on the shared episode seeds.
pub fn run_ablation(
    spec: &AblationSpec,
    load: &dyn Fn(&str) -> Result<Model>,
    dataset: &Dataset,
    pipeline: &Pipeline,
    plan: &EvalPlan,
) -> Result<AblationResult> {
    let cells = build_cells(spec, load, pipeline, plan)?;
    let mut reports = Vec::with_capacity(cells.len());
    for cell in &cells {
        reports.push((cell.label.clone(), evaluate(&cell.model, dataset, &cell.pipeline, &cell.plan)?));
    }
    let summary = reports
        .iter()
        .map(|(cell, r)| CellSummary { cell: cell.clone(), mean_accuracy: r.mean_accuracy, ci95: r.ci95, n: r.n })
        .collect();
    Ok(AblationResult { axis: spec.axis, seed: plan.seed, config_fingerprint: String::new(), summary, reports })
}

/// One `cell,mean_accuracy,ci95,n` row per cell.
pub fn write_ablation_csv(result: &AblationResult, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "cell,mean_accuracy,ci95,n")?;
    for s in &result.summary {
        writeln!(w, "{},{:?},{:?},{}", s.cell, s.mean_accuracy, s.ci95, s.n)?;
    }
    Ok(())
}

/// One row per cell and episode, in the per-episode schema.
pub fn write_ablation_episodes_csv(result: &AblationResult, w: &mut impl Write) -> std::io::Result<()> {
    let rows: Vec<(String, &EvalReport)> = result.reports.iter().map(|(c, r)| (c.clone(), r)).collect();
    write_episode_csv(&rows, w)
}

/// Top-`top_k` true queries of every episode ranked by their final weight
/// for class 0, with their final-iteration MI.
pub fn export_mi_distribution(
    models: &[(String, Model)],
    dataset: &Dataset,
    pipeline: &Pipeline,
    plan: &EvalPlan,
    top_k: usize,
) -> Result<Vec<MiRecord>> {
    let mut records = Vec::new();
    for (name, model) in models {
        if model.iterations() == 0 {
            return Err(Error::Config(format!("model {name} does not refine; MI export needs T >= 1")));
        }
        let per_episode = map_indexed(plan.episodes, plan.workers, |e| {
            let seed = seeds::derive(plan.seed, &[e as u64]);
            let episode = sample_episode(dataset, plan.split, &plan.episode, seed)?;
            let inputs = model.prepare(&episode, pipeline)?;
            let out = refine_episode(model, &inputs)?;
            let last = out.trajectory.last().expect("at least one iteration");
            let q = inputs.queries;
            let mut order: Vec<usize> = (0..q).collect();
            order.sort_by(|&a, &b| last.weights.get(0, b).total_cmp(&last.weights.get(0, a)).then(a.cmp(&b)));
            Ok(order
                .into_iter()
                .take(top_k)
                .enumerate()
                .map(|(rank, j)| MiRecord {
                    variant: name.clone(),
                    episode: e,
                    rank: rank + 1,
                    mi: last.mi[j],
                    weight: last.weights.get(0, j),
                })
                .collect::<Vec<_>>())
        })?;
        records.extend(per_episode.into_iter().flatten());
    }
    Ok(records)
}
