//! Transductive few-shot classification with uncertainty-weighted prototype
//! refinement.
//!
//! Each query instance is perturbed by an ensemble of augmentations and
//! scored against the class prototypes. The disagreement of the ensemble,
//! measured as mutual information, is fed to a learned weight generator
//! whose output modulates the averaged scores; the resulting weights pull
//! query embeddings into the prototypes over a fixed number of iterations.
//!
//! Module map:
//!
//! - [`numkit`]: dense tensors, a reverse-mode tape, parameters, SGD with
//!   Nesterov momentum and checkpoints.
//! - [`augment`]: raster and feature-space augmentation operators.
//! - [`episodes`]: synthetic datasets and N-way K-shot episode sampling.
//! - [`embed`]: the feature extractor.
//! - [`metric`]: temperature generator, scaled distance and scoring.
//! - [`uncertainty`]: ensemble averaging, entropy and mutual information.
//! - [`refine`]: weight generator and the iterative prototype update.
//! - [`train`]: losses and the episodic meta-training loop.
//! - [`bench`]: evaluation protocol, ablations and exports.
//! - `cli`: command-line front end (feature `cli`).

pub mod augment;
pub mod bench;
#[cfg(feature = "cli")]
pub mod cli;
pub mod embed;
pub mod episodes;
mod error;
#[cfg(test)]
mod testutil;
pub mod metric;
pub mod model;
pub mod numkit;
pub mod refine;
pub mod seeds;
pub mod train;
pub mod uncertainty;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, Variant};
pub use numkit::{ParamSet, Tape, Tensor, Var};
