//! Model definition: encoder, temperature generator and weight generator
//! sharing one parameter set, plus episode input preparation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::{self, AugOp, Pipeline};
use crate::embed::{payload_matrix, Encoder, EncoderKind};
use crate::episodes::{Episode, Layout, Payload};
use crate::metric::{TemperatureNet, DEFAULT_EPSILON};
use crate::numkit::{load_checkpoint, save_checkpoint, ParamSet, Tensor};
use crate::refine::{GeneratorKind, WeightGenerator};
use crate::{seeds, Error, Result};

/// Ablation variants.
///
/// - `baseline`: inductive, predicts from augmentation-averaged scores
///   against the support prototypes.
/// - `ucn_a`: refinement with weights `P̄` alone (gate fixed at 1).
/// - `ucn_b`: learned gate, trained without the generator loss.
/// - `ucn`: learned gate and generator loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    UcnA,
    UcnB,
    #[default]
    Ucn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::UcnA, Variant::UcnB, Variant::Ucn];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::UcnA => "ucn_a",
            Variant::UcnB => "ucn_b",
            Variant::Ucn => "ucn",
        }
    }

    pub fn learned_gate(self) -> bool {
        matches!(self, Variant::UcnB | Variant::Ucn)
    }

    pub fn uses_generator_loss(self) -> bool {
        self == Variant::Ucn
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected baseline, ucn_a, ucn_b or ucn)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub encoder: EncoderKind,
    /// Output width of the `small_mlp` encoder; the identity encoder keeps
    /// the input width.
    pub embed_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub temperature_hidden: Vec<usize>,
    pub epsilon: f64,
    pub init_temperature: f64,
    pub generator: GeneratorKind,
    pub heads: usize,
    pub generator_dim: usize,
    /// Gate value of the untrained weight generator.
    pub init_gate: f64,
    /// Refinement iterations `T`; ignored by the baseline.
    pub iterations: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Ucn,
            encoder: EncoderKind::Identity,
            embed_dim: 64,
            encoder_hidden: vec![256, 128],
            temperature_hidden: vec![512, 128],
            epsilon: DEFAULT_EPSILON,
            init_temperature: 0.1,
            generator: GeneratorKind::MultiAtt,
            heads: 4,
            generator_dim: 128,
            init_gate: 0.5,
            iterations: 6,
        }
    }
}

/// Augmented, flattened inputs of one episode.
///
/// Row orders: `support` is class-major, then shot, then ensemble member;
/// `query_plain` holds the true queries followed by unlabeled instances;
/// each `query_aug[t]` holds the same instances, member-minor.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeInputs {
    pub n_way: usize,
    pub k_shot: usize,
    pub members: usize,
    pub queries: usize,
    pub unlabeled: usize,
    pub support: Tensor,
    pub query_plain: Tensor,
    pub query_aug: Vec<Tensor>,
    pub query_labels: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub temperature: TemperatureNet,
    pub generator: WeightGenerator,
    pub params: ParamSet,
}

impl Model {
    /// Builds and initializes a model for data of `layout`. Every variant
    /// owns the full parameter set so checkpoints are interchangeable.
    pub fn new(config: ModelConfig, layout: Layout, seed: u64) -> Result<Self> {
        let encoder = match (config.encoder, layout) {
            (EncoderKind::Identity, Layout::Feature { dim }) => Encoder::Identity { dim },
            (EncoderKind::Identity, Layout::Image { .. }) => {
                return Err(Error::Config("image data needs the small_mlp encoder".into()))
            }
            (EncoderKind::SmallMlp, _) => {
                if config.embed_dim == 0 || config.encoder_hidden.iter().any(|&h| h == 0) {
                    return Err(Error::Config("encoder layer widths must be positive".into()));
                }
                Encoder::SmallMlp {
                    input: layout.input_len(),
                    hidden: config.encoder_hidden.clone(),
                    output: config.embed_dim,
                }
            }
        };
        let temperature =
            TemperatureNet::new(encoder.output_dim(), config.temperature_hidden.clone(), config.epsilon)?;
        let generator = WeightGenerator::new(config.generator, config.generator_dim, config.heads)?;
        let mut params = ParamSet::new();
        let mut rng = seeds::rng(seeds::derive(seed, &[seeds::STREAM_INIT]));
        encoder.init(&mut params, &mut rng);
        temperature.init(&mut params, config.init_temperature, &mut rng)?;
        generator.init(&mut params, config.init_gate, &mut rng)?;
        Ok(Self { config, encoder, temperature, generator, params })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Effective number of refinement iterations.
    pub fn iterations(&self) -> usize {
        match self.config.variant {
            Variant::Baseline => 0,
            _ => self.config.iterations,
        }
    }

    /// Same parameters evaluated as another variant or iteration count.
    pub fn with_settings(&self, variant: Variant, iterations: usize) -> Model {
        let mut m = self.clone();
        m.config.variant = variant;
        m.config.iterations = iterations;
        m
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.params, path)
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        load_checkpoint(&mut self.params, path)
    }

    /// Augments and flattens an episode. Seeds depend on the episode seed,
    /// the iteration, the set, the position within the set and the member,
    /// so adding unlabeled instances leaves query augmentations untouched.
    pub fn prepare(&self, episode: &Episode, pipeline: &Pipeline) -> Result<EpisodeInputs> {
        let members = pipeline.members();
        let t_slots = self.iterations().max(1);
        let augment_set = |set: &[&Payload], stream: u64, t: u64| -> Result<Vec<Payload>> {
            let mut out = Vec::with_capacity(set.len() * members);
            for (j, p) in set.iter().enumerate() {
                for (k, op) in pipeline.ops().iter().enumerate() {
                    let seed = seeds::derive(episode.seed, &[stream, t, j as u64, k as u64]);
                    out.push(augment_payload(op, p, seed)?);
                }
            }
            Ok(out)
        };
        let support: Vec<&Payload> = episode.support.iter().map(|i| &i.payload).collect();
        let queries: Vec<&Payload> = episode.query.iter().map(|i| &i.payload).collect();
        let unlabeled: Vec<&Payload> = episode.unlabeled.iter().map(|i| &i.payload).collect();

        let support_aug = augment_set(&support, seeds::STREAM_AUG_SUPPORT, 0)?;
        let mut query_aug = Vec::with_capacity(t_slots);
        for t in 0..t_slots as u64 {
            let mut rows = augment_set(&queries, seeds::STREAM_AUG_QUERY, t)?;
            rows.extend(augment_set(&unlabeled, seeds::STREAM_AUG_UNLABELED, t)?);
            query_aug.push(payload_matrix(&self.encoder, &rows)?);
        }
        Ok(EpisodeInputs {
            n_way: episode.n_way,
            k_shot: episode.k_shot,
            members,
            queries: queries.len(),
            unlabeled: unlabeled.len(),
            support: payload_matrix(&self.encoder, &support_aug)?,
            query_plain: payload_matrix(&self.encoder, queries.iter().chain(&unlabeled).copied())?,
            query_aug,
            query_labels: episode.query_labels(),
        })
    }
}

fn augment_payload(op: &AugOp, p: &Payload, seed: u64) -> Result<Payload> {
    Ok(match p {
        Payload::Feature(v) => Payload::Feature(augment::apply_feature_slice(op, v, seed)?),
        Payload::Image(img) => Payload::Image(augment::apply(op, img, seed)?),
    })
}
