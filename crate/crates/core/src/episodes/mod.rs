//! Datasets and N-way K-shot episode sampling.

mod container;
mod glyphs;
mod synthetic;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use container::{load_dataset, read_dataset, save_dataset, write_dataset, DATASET_FORMAT_VERSION};
pub use glyphs::{make_raster, RasterDatasetSpec};
pub use synthetic::{make_synthetic, SyntheticDatasetSpec};

use crate::augment::{Mode, RasterImage};
use crate::{seeds, Error, Result};

/// Instance content; homogeneous within a dataset.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Feature(Vec<f64>),
    Image(RasterImage),
}

impl Payload {
    pub fn mode(&self) -> Mode {
        match self {
            Payload::Feature(_) => Mode::Feature,
            Payload::Image(_) => Mode::Image,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub(crate) fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

/// Payload geometry shared by every instance of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    Feature { dim: usize },
    Image { height: usize, width: usize, channels: usize },
}

impl Layout {
    pub fn mode(&self) -> Mode {
        match self {
            Layout::Feature { .. } => Mode::Feature,
            Layout::Image { .. } => Mode::Image,
        }
    }

    /// Length of the flattened encoder input.
    pub fn input_len(&self) -> usize {
        match *self {
            Layout::Feature { dim } => dim,
            Layout::Image { height, width, channels } => height * width * channels,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassData {
    pub split: Split,
    /// Generator centre, when the dataset is synthetic Gaussian.
    pub center: Option<Vec<f64>>,
    pub instances: Vec<Payload>,
}

/// Immutable labelled collection, partitioned into splits by class.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    layout: Layout,
    classes: Vec<ClassData>,
}

impl Dataset {
    pub fn new(layout: Layout, classes: Vec<ClassData>) -> Result<Self> {
        for (i, class) in classes.iter().enumerate() {
            for p in &class.instances {
                let ok = match (p, layout) {
                    (Payload::Feature(v), Layout::Feature { dim }) => v.len() == dim,
                    (Payload::Image(img), Layout::Image { height, width, channels }) => {
                        img.height() == height && img.width() == width && img.channels() == channels
                    }
                    _ => false,
                };
                if !ok {
                    return Err(Error::Dimension(format!(
                        "class {i} holds an instance that does not match layout {layout:?}"
                    )));
                }
            }
        }
        Ok(Self { layout, classes })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn mode(&self) -> Mode {
        self.layout.mode()
    }

    pub fn classes(&self) -> &[ClassData] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Global ids of the classes assigned to `split`, ascending.
    pub fn split_classes(&self, split: Split) -> Vec<usize> {
        (0..self.classes.len()).filter(|&c| self.classes[c].split == split).collect()
    }
}

/// Assigns `n` consecutive class ids to train/val/test by fractions.
pub(crate) fn assign_splits(n: usize, fractions: [f64; 3]) -> Result<Vec<Split>> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let train = (fractions[0] * n as f64).round() as usize;
    let val = ((fractions[1] * n as f64).round() as usize).min(n - train.min(n));
    Ok((0..n)
        .map(|c| {
            if c < train {
                Split::Train
            } else if c < train + val {
                Split::Val
            } else {
                Split::Test
            }
        })
        .collect())
}

/// Shape of an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    /// Total query instances, spread evenly over the classes.
    pub queries: usize,
    /// Unlabeled instances drawn from the episode classes, spread evenly.
    pub unlabeled: usize,
    /// Extra classes contributing unlabeled instances only.
    pub distractors: usize,
}

impl Default for EpisodeSpec {
    /// 5-way 1-shot with 15 queries per class.
    fn default() -> Self {
        Self::new(5, 1, 75)
    }
}

impl EpisodeSpec {
    pub fn new(n_way: usize, k_shot: usize, queries: usize) -> Self {
        Self {
            n_way,
            k_shot,
            queries,
            unlabeled: 0,
            distractors: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way < 1 || self.k_shot < 1 || self.queries < 1 {
            return Err(Error::Config(format!(
                "episode needs n_way, k_shot and queries >= 1, got {self:?}"
            )));
        }
        if self.distractors > 0 && self.unlabeled == 0 {
            return Err(Error::Config("distractor classes need a non-empty unlabeled set".into()));
        }
        Ok(())
    }

    /// Balanced counts: `total / n` each, the first `total % n` get one more.
    pub fn balanced(total: usize, n: usize) -> Vec<usize> {
        (0..n).map(|i| total / n + usize::from(i < total % n)).collect()
    }

    /// Unlabeled instances contributed by each distractor class.
    pub fn unlabeled_per_distractor(&self) -> usize {
        self.unlabeled.div_ceil(self.n_way)
    }
}

/// Instance drawn into an episode. `label` is the episode-local class
/// (`0..N`), or `N + k` for the k-th distractor class.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub payload: Payload,
    pub label: usize,
    pub class_id: usize,
    pub index: usize,
}

/// One N-way K-shot task.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub n_way: usize,
    pub k_shot: usize,
    /// Class-major: support of class `i` occupies `i*K..(i+1)*K`.
    pub support: Vec<Instance>,
    pub query: Vec<Instance>,
    pub unlabeled: Vec<Instance>,
    /// Global class ids: the `N` episode classes followed by distractors.
    pub class_ids: Vec<usize>,
    pub seed: u64,
}

impl Episode {
    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|i| i.label).collect()
    }

    pub fn support_labels(&self) -> Vec<usize> {
        self.support.iter().map(|i| i.label).collect()
    }

    /// Short hash identifying exactly which instances were drawn.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.class_ids {
            h.update((*c as u64).to_le_bytes());
        }
        for (tag, set) in [(0u8, &self.support), (1, &self.query), (2, &self.unlabeled)] {
            h.update([tag]);
            for inst in set.iter() {
                h.update((inst.class_id as u64).to_le_bytes());
                h.update((inst.index as u64).to_le_bytes());
            }
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Samples an episode from the classes of `split`.
pub fn sample_episode(dataset: &Dataset, split: Split, spec: &EpisodeSpec, seed: u64) -> Result<Episode> {
    spec.validate()?;
    let pool = dataset.split_classes(split);
    let wanted = spec.n_way + spec.distractors;
    if pool.len() < wanted {
        return Err(Error::Sampling(format!(
            "{split:?} split has {} classes, episode needs {wanted}",
            pool.len()
        )));
    }
    let mut rng = seeds::rng(seeds::derive(seed, &[seeds::STREAM_EPISODE]));
    let chosen: Vec<usize> = pool.choose_multiple(&mut rng, wanted).copied().collect();

    let query_counts = EpisodeSpec::balanced(spec.queries, spec.n_way);
    let unlabeled_counts = EpisodeSpec::balanced(spec.unlabeled, spec.n_way);
    let per_distractor = spec.unlabeled_per_distractor();

    let mut support = Vec::with_capacity(spec.n_way * spec.k_shot);
    let mut query = Vec::with_capacity(spec.queries);
    let mut unlabeled = Vec::new();
    for (label, &class_id) in chosen.iter().enumerate() {
        let instances = &dataset.classes[class_id].instances;
        let (nq, nu) = if label < spec.n_way {
            (query_counts[label], unlabeled_counts[label])
        } else {
            (0, per_distractor)
        };
        let ns = if label < spec.n_way { spec.k_shot } else { 0 };
        let need = ns + nq + nu;
        if instances.len() < need {
            return Err(Error::Sampling(format!(
                "class {class_id} has {} instances, episode needs {need}",
                instances.len()
            )));
        }
        let picks = rand::seq::index::sample(&mut rng, instances.len(), need).into_vec();
        let make = |index: usize| Instance {
            payload: instances[index].clone(),
            label,
            class_id,
            index,
        };
        support.extend(picks[..ns].iter().map(|&i| make(i)));
        query.extend(picks[ns..ns + nq].iter().map(|&i| make(i)));
        unlabeled.extend(picks[ns + nq..].iter().map(|&i| make(i)));
    }
    query.shuffle(&mut rng);
    unlabeled.shuffle(&mut rng);
    Ok(Episode {
        n_way: spec.n_way,
        k_shot: spec.k_shot,
        support,
        query,
        unlabeled,
        class_ids: chosen,
        seed,
    })
}
