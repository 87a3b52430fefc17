//! Parameter checkpoints.
//!
//! A checkpoint is a JSON document:
//!
//! ```json
//! {"format_version": 1,
//!  "params": [{"name": "temperature.w1", "shape": [64, 512], "values": [...]}, ...]}
//! ```
//!
//! Records appear in name order. Values are written with shortest
//! round-trip formatting, so a save/load cycle is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Record {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    format_version: u32,
    params: Vec<Record>,
}

pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<()> {
    let doc = Document {
        format_version: CHECKPOINT_FORMAT_VERSION,
        params: params
            .iter()
            .map(|(name, p)| Record {
                name: name.to_string(),
                shape: p.value.shape().to_vec(),
                values: p.value.data().to_vec(),
            })
            .collect(),
    };
    let text = serde_json::to_string(&doc).expect("checkpoint serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads checkpoint values into `params`. Every parameter of `params` must
/// be present with a matching shape; unknown records are an error.
pub fn load_checkpoint(params: &mut ParamSet, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: Document =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if doc.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {}", doc.format_version),
        ));
    }
    let mut seen = 0;
    for rec in doc.params {
        let tensor = Tensor::new(rec.shape, rec.values)
            .map_err(|e| Error::format(path, format!("{}: {e}", rec.name)))?;
        if params.get(&rec.name).is_none() {
            return Err(Error::format(path, format!("unexpected parameter {}", rec.name)));
        }
        params
            .set_value(&rec.name, tensor)
            .map_err(|e| Error::format(path, e.to_string()))?;
        seen += 1;
    }
    if seen != params.len() {
        return Err(Error::format(
            path,
            format!("checkpoint holds {seen} of {} parameters", params.len()),
        ));
    }
    Ok(())
}
