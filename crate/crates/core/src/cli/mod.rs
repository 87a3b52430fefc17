//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error,
//! 3 failed `--check` thresholds.

mod config;

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{
    apply_override, AblationConfig, AugmentConfig, CheckConfig, DatasetConfig, DatasetKind, EvalConfig,
    ExportConfig, RunConfig, SplitName,
};

use crate::bench::{self, AblationSpec, Axis, EvalPlan};
use crate::episodes::{save_dataset, Dataset, Split};
use crate::model::{Model, ModelConfig, Variant};
use crate::train::{meta_train, TrainPlan};
use crate::uncertainty::write_mi_csv;
use crate::{seeds, Error, Result};

const STREAM_EVAL: u64 = 9;

#[derive(Parser, Debug)]
#[command(name = "fewshot", version, about = "Transductive few-shot classification with uncertainty-weighted prototype refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset and write it as a container file.
    MakeData(Common),
    /// Meta-train a model; writes checkpoint.json and train_log.jsonl.
    Train(Common),
    /// Evaluate a checkpoint; writes eval.json and episodes.csv.
    Eval(Common),
    /// Run an ablation sweep; writes ablation.csv (one row per cell),
    /// ablation_episodes.csv and ablation.json.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// T_sweep, augmentation_sets, uncertainty_onoff,
        /// weight_generator_variant or semi_supervised.
        #[arg(long)]
        axis: Option<String>,
    },
    /// Export per-episode MI and weights of the top-ranked queries to mi.csv.
    ExportMi(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set model.iterations=2` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Episode count: training episodes for `train`, evaluation episodes
    /// otherwise.
    #[arg(long)]
    episodes: Option<usize>,
    /// Exit with code 3 when results miss the `[check]` thresholds.
    #[arg(long)]
    check: bool,
    /// Worker threads for evaluation.
    #[arg(long, env = "FEWSHOT_WORKERS")]
    workers: Option<usize>,
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("check failed");
            3
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Usage(_) => 2,
                _ => 1,
            }
        }
    }
}

fn load_config(c: &Common, train: bool) -> Result<RunConfig> {
    let text = match &c.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    let mut cfg = RunConfig::from_toml(&text, &c.overrides)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(n) = c.episodes {
        if train {
            cfg.train.episodes = n;
        } else {
            cfg.eval.episodes = n;
            cfg.export.episodes = n;
        }
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

struct Prepared {
    cfg: RunConfig,
    dataset: Dataset,
    pipeline: crate::augment::Pipeline,
    workers: usize,
}

fn prepare(mut cfg: RunConfig) -> Result<Prepared> {
    let dataset = cfg.dataset.build()?;
    let pipeline = cfg.resolve(dataset.mode())?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let snapshot = cfg.out.join("config.toml");
    fs::write(&snapshot, cfg.to_toml()).map_err(|e| Error::io(&snapshot, e))?;
    let workers = if cfg.workers == 0 { bench::default_workers() } else { cfg.workers };
    Ok(Prepared { cfg, dataset, pipeline, workers })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::format(path, e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn load_model(config: &ModelConfig, dataset: &Dataset, seed: u64, checkpoint: &Path, key: &str) -> Result<Model> {
    if checkpoint.as_os_str().is_empty() {
        return Err(Error::Config(format!("no checkpoint configured for {key}")));
    }
    let mut m = Model::new(config.clone(), dataset.layout(), seed)?;
    m.load(checkpoint)?;
    Ok(m)
}

fn eval_seed(cfg: &RunConfig) -> u64 {
    match Split::from(cfg.eval.split) {
        Split::Val => crate::train::validation_seed(cfg.seed),
        _ => seeds::derive(cfg.seed, &[STREAM_EVAL]),
    }
}

fn eval_plan(p: &Prepared, episodes: usize) -> EvalPlan {
    EvalPlan {
        split: p.cfg.eval.split.into(),
        episode: p.cfg.episode,
        episodes,
        seed: eval_seed(&p.cfg),
        workers: p.workers,
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::MakeData(c) => {
            let p = prepare(load_config(&c, false)?)?;
            let path = p.cfg.out.join("dataset.fsds");
            save_dataset(&p.dataset, &path)?;
            println!("wrote {} ({} classes)", path.display(), p.dataset.num_classes());
            Ok(true)
        }
        Command::Train(c) => {
            let p = prepare(load_config(&c, true)?)?;
            let mut model = Model::new(p.cfg.model.clone(), p.dataset.layout(), p.cfg.seed)?;
            let plan = TrainPlan {
                episode: p.cfg.episode,
                pipeline: p.pipeline.clone(),
                loss: p.cfg.train.clone(),
                seed: p.cfg.seed,
                workers: p.workers,
            };
            let log_path = p.cfg.out.join("train_log.jsonl");
            let mut log = create(&log_path)?;
            let summary = meta_train(&mut model, &p.dataset, &plan, &mut log)?;
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            model.save(&p.cfg.out.join("checkpoint.json"))?;
            write_json(&p.cfg.out.join("train_summary.json"), &summary)?;
            println!(
                "trained {} episodes; best validation accuracy {:.2}% at episode {}",
                summary.episodes, summary.best_val_accuracy, summary.best_episode
            );
            Ok(!c.check || summary.best_val_accuracy >= p.cfg.check.min_accuracy)
        }
        Command::Eval(c) => {
            let p = prepare(load_config(&c, false)?)?;
            let model = load_model(&p.cfg.model, &p.dataset, p.cfg.seed, &p.cfg.eval.checkpoint, "eval.checkpoint")?;
            let mut report = bench::evaluate(&model, &p.dataset, &p.pipeline, &eval_plan(&p, p.cfg.eval.episodes))?;
            report.config_fingerprint = p.cfg.fingerprint();
            write_json(&p.cfg.out.join("eval.json"), &report)?;
            let csv = p.cfg.out.join("episodes.csv");
            let mut w = create(&csv)?;
            bench::write_episode_csv(&[(model.variant().to_string(), &report)], &mut w)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(&csv, e))?;
            println!("accuracy {:.2} ± {:.2}% over {} episodes", report.mean_accuracy, report.ci95, report.n);
            Ok(!c.check || report.mean_accuracy >= p.cfg.check.min_accuracy)
        }
        Command::Ablate { common: c, axis } => {
            let mut cfg = load_config(&c, false)?;
            if let Some(a) = axis {
                let parsed: Axis = a.parse()?;
                if parsed != cfg.ablation.axis {
                    cfg.ablation.grid.clear();
                }
                cfg.ablation.axis = parsed;
            }
            let p = prepare(cfg)?;
            let spec = AblationSpec { axis: p.cfg.ablation.axis, grid: p.cfg.ablation.grid.clone() };
            let load = |key: &str| -> Result<Model> {
                let path = p.cfg.ablation.checkpoints.get(key).ok_or_else(|| {
                    Error::Config(format!("ablation.checkpoints has no entry for {key:?}"))
                })?;
                let config = model_config_for(&p.cfg, key)?;
                load_model(&config, &p.dataset, p.cfg.seed, path, key)
            };
            let mut result = bench::run_ablation(&spec, &load, &p.dataset, &p.pipeline, &eval_plan(&p, p.cfg.eval.episodes))?;
            result.config_fingerprint = p.cfg.fingerprint();
            let csv = p.cfg.out.join("ablation.csv");
            let mut w = create(&csv)?;
            bench::write_ablation_csv(&result, &mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&csv, e))?;
            let csv = p.cfg.out.join("ablation_episodes.csv");
            let mut w = create(&csv)?;
            bench::write_ablation_episodes_csv(&result, &mut w)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(&csv, e))?;
            write_json(&p.cfg.out.join("ablation.json"), &result)?;
            for s in &result.summary {
                println!("{:>20}  {:6.2} ± {:.2}%", s.cell, s.mean_accuracy, s.ci95);
            }
            let means: Vec<f64> = result.summary.iter().map(|s| s.mean_accuracy).collect();
            let ok = means.iter().all(|&m| m >= p.cfg.check.min_accuracy)
                && (!p.cfg.check.ordered || means.windows(2).all(|w| w[0] <= w[1]));
            Ok(!c.check || ok)
        }
        Command::ExportMi(c) => {
            let p = prepare(load_config(&c, false)?)?;
            let mut checkpoints = p.cfg.export.checkpoints.clone();
            if checkpoints.is_empty() {
                return Err(Error::Config("export.checkpoints must name at least one variant".into()));
            }
            let mut models = Vec::new();
            for (name, path) in std::mem::take(&mut checkpoints) {
                let variant: Variant = name.parse()?;
                let config = ModelConfig { variant, ..model_config_for(&p.cfg, &name)? };
                models.push((name.clone(), load_model(&config, &p.dataset, p.cfg.seed, &path, &name)?));
            }
            let records =
                bench::export_mi_distribution(&models, &p.dataset, &p.pipeline, &eval_plan(&p, p.cfg.export.episodes), p.cfg.export.top_k)?;
            let csv = p.cfg.out.join("mi.csv");
            let mut w = create(&csv)?;
            write_mi_csv(&records, &mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&csv, e))?;
            println!("wrote {} rows to {}", records.len(), csv.display());
            Ok(true)
        }
    }
}

/// `[model]` merged with `ablation.models.<key>`.
fn model_config_for(cfg: &RunConfig, key: &str) -> Result<ModelConfig> {
    let mut table = toml::Table::try_from(&cfg.model).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(extra) = cfg.ablation.models.get(key) {
        for (k, v) in extra {
            table.insert(k.clone(), v.clone());
        }
    }
    table.try_into().map_err(|e: toml::de::Error| Error::Config(format!("ablation.models.{key}: {}", e.message())))
}
