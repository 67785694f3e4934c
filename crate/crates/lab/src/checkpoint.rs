//! Model checkpoints.
//!
//! A checkpoint is a pretty-printed JSON object:
//!
//! ```text
//! {
//!   "format": "valley-checkpoint",
//!   "version": 1,
//!   "seed": <u64>,
//!   "bn_epsilon": <f64>,
//!   "arch": <Architecture>,
//!   "params": [<f64>; P],
//!   "init_snapshot": [<f64>; P],
//!   "bn_state": [{ "running_mean": [..], "running_var": [..] }, ..]
//! }
//! ```
//!
//! The parameter layout is rebuilt from `arch`, so only raw values are
//! stored. Floats are written in shortest round-trip form and parsed
//! exactly, so save → load → save is byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use valley_core::nn::{Architecture, BnState, Model};
use valley_core::params::ParamVector;

use crate::error::{LabError, LabResult};

pub const FORMAT: &str = "valley-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub bn_epsilon: f64,
    pub arch: Architecture,
    pub params: Vec<f64>,
    pub init_snapshot: Vec<f64>,
    pub bn_state: Vec<BnState>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            seed: model.seed(),
            bn_epsilon: model.bn_epsilon(),
            arch: model.arch().clone(),
            params: model.params().values().to_vec(),
            init_snapshot: model.init_snapshot().values().to_vec(),
            bn_state: model.bn_state().to_vec(),
        }
    }

    pub fn into_model(self) -> LabResult<Model> {
        if self.format != FORMAT {
            return Err(LabError::Format(format!("not a checkpoint (format `{}`)", self.format)));
        }
        if self.version != VERSION {
            return Err(LabError::Format(format!("unsupported checkpoint version {}", self.version)));
        }
        let layout = self.arch.layout()?;
        let params = ParamVector::new(self.params, layout.clone())?;
        let init = ParamVector::new(self.init_snapshot, layout)?;
        Ok(Model::from_parts(self.arch, params, self.bn_state, self.bn_epsilon, init, self.seed)?)
    }
}

pub fn to_string(model: &Model) -> LabResult<String> {
    let ck = Checkpoint::from_model(model);
    let all_finite = ck.params.iter().chain(&ck.init_snapshot).all(|v| v.is_finite())
        && ck.bn_state.iter().all(|s| s.running_mean.iter().chain(&s.running_var).all(|v| v.is_finite()));
    if !all_finite {
        return Err(LabError::Format("cannot checkpoint a model with non-finite values".into()));
    }
    let mut s = serde_json::to_string_pretty(&ck)?;
    s.push('\n');
    Ok(s)
}

pub fn from_str(text: &str) -> LabResult<Model> {
    let ck: Checkpoint = serde_json::from_str(text).map_err(|e| LabError::Format(format!("checkpoint: {e}")))?;
    ck.into_model()
}

pub fn save(model: &Model, path: &Path) -> LabResult<()> {
    fs::write(path, to_string(model)?).map_err(|e| LabError::io(path, e))
}

pub fn load(path: &Path) -> LabResult<Model> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    from_str(&text).map_err(|e| match e {
        LabError::Format(m) => LabError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
