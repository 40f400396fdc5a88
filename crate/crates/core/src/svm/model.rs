use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::Hyperparameters;
use super::svc::SvcModel;
use super::svr::SvrModel;
use super::SvmError;
use crate::sampling::TargetKind;
use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "peatcube-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum ModelPayload {
    Svc(SvcModel),
    Svr { target: TargetKind, model: SvrModel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub hyperparameters: Hyperparameters,
    pub model: ModelPayload,
}

impl ModelDocument {
    pub fn new(seed: u64, hyperparameters: Hyperparameters, model: ModelPayload) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_FORMAT_VERSION,
            seed,
            hyperparameters,
            model,
        }
    }

    fn check(&self) -> std::result::Result<(), SvmError> {
        if self.format != MODEL_FORMAT {
            return Err(SvmError::UnsupportedModel(format!("format `{}`", self.format)));
        }
        if self.version != MODEL_FORMAT_VERSION {
            return Err(SvmError::UnsupportedModel(format!("version {}", self.version)));
        }
        Ok(())
    }
}

pub fn save_model(doc: &ModelDocument, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(doc).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelDocument> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ModelDocument = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    doc.check()?;
    Ok(doc)
}
