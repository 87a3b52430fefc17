use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{feature_pipeline_with, AugOp, Mode, Pipeline, DEFAULT_FEATURE_RATE, DEFAULT_FEATURE_SIGMA};
use crate::bench::Axis;
use crate::episodes::{
    load_dataset, make_raster, make_synthetic, Dataset, EpisodeSpec, RasterDatasetSpec, Split, SyntheticDatasetSpec,
};
use crate::model::ModelConfig;
use crate::train::LossConfig;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Raster,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Container to load when `kind = "file"`.
    pub path: PathBuf,
    pub synthetic: SyntheticDatasetSpec,
    pub raster: RasterDatasetSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            path: PathBuf::new(),
            synthetic: SyntheticDatasetSpec::default(),
            raster: RasterDatasetSpec::default(),
        }
    }
}

impl DatasetConfig {
    pub fn build(&self) -> Result<Dataset> {
        match self.kind {
            DatasetKind::Synthetic => make_synthetic(&self.synthetic),
            DatasetKind::Raster => make_raster(&self.raster),
            DatasetKind::File => {
                if self.path.as_os_str().is_empty() {
                    return Err(Error::Config("dataset.path is required when dataset.kind = \"file\"".into()));
                }
                load_dataset(&self.path)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Operators after the identity; empty selects the default for the
    /// dataset mode.
    pub pipeline: Vec<AugOp>,
    pub feature_sigma: f64,
    pub feature_rate: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { pipeline: Vec::new(), feature_sigma: DEFAULT_FEATURE_SIGMA, feature_rate: DEFAULT_FEATURE_RATE }
    }
}

impl AugmentConfig {
    pub fn build(&self, mode: Mode) -> Result<Pipeline> {
        let p = if self.pipeline.is_empty() {
            feature_pipeline_with(mode, self.feature_sigma, self.feature_rate)
        } else {
            Pipeline::new(self.pipeline.clone())?
        };
        p.mode_compatible(mode)?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: SplitName,
    pub episodes: usize,
    pub checkpoint: PathBuf,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { split: SplitName::Test, episodes: 600, checkpoint: PathBuf::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl From<SplitName> for Split {
    fn from(s: SplitName) -> Split {
        match s {
            SplitName::Train => Split::Train,
            SplitName::Val => Split::Val,
            SplitName::Test => Split::Test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub axis: Axis,
    /// Empty selects the axis default.
    pub grid: Vec<String>,
    /// Trained checkpoints keyed by cell value (`baseline`, `ucn_a`, ...,
    /// `multi_att`, `mlp`) or `ucn` for axes sharing one model.
    pub checkpoints: BTreeMap<String, PathBuf>,
    /// Model settings per key, merged over `[model]`.
    pub models: BTreeMap<String, toml::Table>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { axis: Axis::UncertaintyOnoff, grid: Vec::new(), checkpoints: BTreeMap::new(), models: BTreeMap::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportConfig {
    /// Variant name to checkpoint.
    pub checkpoints: BTreeMap<String, PathBuf>,
    pub episodes: usize,
    pub top_k: usize,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self { checkpoints: BTreeMap::new(), episodes: 3000, top_k: 3 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    /// Minimum mean accuracy (percent) of every evaluated cell.
    pub min_accuracy: f64,
    /// Ablation cells must not decrease in grid order.
    pub ordered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// 0 uses `FEWSHOT_WORKERS` or the core count.
    pub workers: usize,
    pub dataset: DatasetConfig,
    pub episode: EpisodeSpec,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub train: LossConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
    pub export: ExportConfig,
    pub check: CheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            workers: 0,
            dataset: DatasetConfig::default(),
            episode: EpisodeSpec::new(5, 1, 75),
            augment: AugmentConfig::default(),
            model: ModelConfig::default(),
            train: LossConfig::default(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
            export: ExportConfig::default(),
            check: CheckConfig::default(),
        }
    }
}

/// Sets `path` (dotted) in `table` to `raw`, parsed as a TOML value when
/// possible and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, path: &str, raw: &str) -> Result<()> {
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Usage(format!("malformed override key {path:?}")));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Usage(format!("override {path:?}: {k} is not a table")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses a config document after applying `key=value` overrides.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("malformed config: {e}")))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("override {o:?} is not of the form key=value")))?;
            apply_override(&mut table, k.trim(), v.trim())?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.episode.validate()?;
        self.train.validate()
    }

    /// Materializes mode-dependent defaults.
    pub fn resolve(&mut self, mode: Mode) -> Result<Pipeline> {
        let p = self.augment.build(mode)?;
        self.augment.pipeline = p.ops()[1..].to_vec();
        if self.ablation.grid.is_empty() {
            self.ablation.grid = self.ablation.axis.default_grid(mode);
        }
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Short hash of the resolved config.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
