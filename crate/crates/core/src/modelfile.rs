//! Shared container for persisted models.
//!
//! Every model is one JSON document:
//!
//! ```json
//! { "format": "agitation-model", "version": 1, "model_kind": "vae", ... }
//! ```
//!
//! Reals are written in shortest round-trip form, so a load/save cycle
//! reproduces every parameter bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "agitation-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Vae,
    Forest,
    Boosted,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelFileError {
    #[error("model file version {found} is newer than supported version {supported}")]
    VersionMismatch { found: u64, supported: u32 },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("expected a {expected:?} model, found {found:?}")]
    WrongKind { expected: Vec<ModelKind>, found: ModelKind },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    format: &'static str,
    version: u32,
    model_kind: ModelKind,
    model: &'a T,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u64,
    model_kind: ModelKind,
}

pub fn to_string<T: Serialize>(kind: ModelKind, model: &T) -> String {
    let env = EnvelopeOut { format: FORMAT, version: VERSION, model_kind: kind, model };
    serde_json::to_string_pretty(&env).expect("model serialization is infallible")
}

/// Peek at the kind of a serialized model after format and version checks.
pub fn kind_of(text: &str) -> Result<ModelKind, ModelFileError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ModelFileError::CorruptModel(e.to_string()))?;
    let header: Header =
        serde_json::from_value(value).map_err(|e| ModelFileError::CorruptModel(format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(ModelFileError::CorruptModel(format!("unknown format {:?}", header.format)));
    }
    if header.version > VERSION as u64 {
        return Err(ModelFileError::VersionMismatch { found: header.version, supported: VERSION });
    }
    Ok(header.model_kind)
}

pub fn from_str<T: DeserializeOwned>(text: &str, expected: ModelKind) -> Result<T, ModelFileError> {
    let kind = kind_of(text)?;
    if kind != expected {
        return Err(ModelFileError::WrongKind { expected: vec![expected], found: kind });
    }
    #[derive(Deserialize)]
    struct Body<T> {
        model: T,
    }
    let body: Body<T> = serde_json::from_str(text).map_err(|e| ModelFileError::CorruptModel(e.to_string()))?;
    Ok(body.model)
}

pub fn save<T: Serialize>(path: &Path, kind: ModelKind, model: &T) -> Result<(), ModelFileError> {
    fs::write(path, to_string(kind, model)).map_err(|source| ModelFileError::Io { path: path.to_path_buf(), source })
}

pub fn read(path: &Path) -> Result<String, ModelFileError> {
    fs::read_to_string(path).map_err(|source| ModelFileError::Io { path: path.to_path_buf(), source })
}
