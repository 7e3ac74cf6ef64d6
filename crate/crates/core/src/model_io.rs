//! Versioned JSON model files.
//!
//! The document has one top-level section per concern so that load errors can
//! point at the offending section:
//!
//! ```text
//! {
//!   "format": "asbart-model",
//!   "format_version": 1,
//!   "features":      { "names": [...], "is_dummy": [...] },
//!   "schema":        { ... } | null,
//!   "config":        { ... },
//!   "priors":        { ... },
//!   "preprocessing": { "y_center": .., "y_scale": .., "bandwidth": { "percents": [...], "sorted_features": [[...]] } },
//!   "forests":       [ { "trees": [...], "sigma2": .. }, ... ],
//!   "trace":         { "sigma2": [...], ... }
//! }
//! ```
//!
//! Files are written to a temporary sibling and renamed into place.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DatasetSchema;
use crate::error::{Error, Result};
use crate::sampler::{BandwidthGrid, FitConfig, FitTrace, FittedModel, ResolvedPriors};
use crate::tree::Forest;

pub const MODEL_FORMAT: &str = "asbart-model";
pub const MODEL_FORMAT_VERSION: u64 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct FeatureSection {
    names: Vec<String>,
    is_dummy: Vec<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Preprocessing {
    y_center: f64,
    y_scale: f64,
    bandwidth: BandwidthGrid,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    format_version: u64,
    features: FeatureSection,
    schema: Option<DatasetSchema>,
    config: FitConfig,
    priors: ResolvedPriors,
    preprocessing: Preprocessing,
    forests: Vec<Forest>,
    trace: FitTrace,
}

impl ModelDocument {
    fn from_model(m: &FittedModel) -> Self {
        ModelDocument {
            format: MODEL_FORMAT.to_string(),
            format_version: MODEL_FORMAT_VERSION,
            features: FeatureSection {
                names: m.feature_names.clone(),
                is_dummy: m.is_dummy.clone(),
            },
            schema: m.schema.clone(),
            config: m.config.clone(),
            priors: m.priors,
            preprocessing: Preprocessing {
                y_center: m.y_center,
                y_scale: m.y_scale,
                bandwidth: m.bandwidth.clone(),
            },
            forests: m.forests.clone(),
            trace: m.trace.clone(),
        }
    }

    fn into_model(self) -> Result<FittedModel> {
        let corrupted = |path: &str, message: String| Error::CorruptedModel {
            path: path.to_string(),
            message,
        };
        if self.features.names.len() != self.features.is_dummy.len() {
            return Err(corrupted("features", "names and is_dummy differ in length".into()));
        }
        if self.forests.is_empty() {
            return Err(corrupted("forests", "no retained forests".into()));
        }
        for (k, forest) in self.forests.iter().enumerate() {
            forest
                .validate()
                .map_err(|e| corrupted(&format!("forests[{k}]"), e.to_string()))?;
            if forest.required_features() > self.features.names.len() {
                return Err(corrupted(
                    &format!("forests[{k}]"),
                    "tree splits on a feature the model does not have".into(),
                ));
            }
        }
        if !(self.preprocessing.y_scale > 0.0) || !self.preprocessing.y_center.is_finite() {
            return Err(corrupted("preprocessing", "invalid response scaling".into()));
        }
        Ok(FittedModel {
            feature_names: self.features.names,
            is_dummy: self.features.is_dummy,
            schema: self.schema,
            config: self.config,
            priors: self.priors,
            y_center: self.preprocessing.y_center,
            y_scale: self.preprocessing.y_scale,
            bandwidth: self.preprocessing.bandwidth,
            forests: self.forests,
            trace: self.trace,
        })
    }
}

pub fn model_to_string(model: &FittedModel) -> Result<String> {
    Ok(serde_json::to_string(&ModelDocument::from_model(model))?)
}

fn load_error(text: &str, path: String, message: String) -> Error {
    // a well-formed document from another version reports that first
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(text) {
        if let Some(found) = value.get("format_version").and_then(serde_json::Value::as_u64) {
            if found != MODEL_FORMAT_VERSION {
                return Error::VersionMismatch {
                    found,
                    expected: MODEL_FORMAT_VERSION,
                };
            }
        }
    }
    Error::CorruptedModel {
        path: if path.is_empty() || path == "." { "<document>".into() } else { path },
        message,
    }
}

pub fn model_from_str(text: &str) -> Result<FittedModel> {
    let mut de = serde_json::Deserializer::from_str(text);
    let doc: ModelDocument = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| load_error(text, e.path().to_string(), e.into_inner().to_string()))?;
    de.end()
        .map_err(|e| load_error(text, String::new(), e.to_string()))?;
    if doc.format != MODEL_FORMAT {
        return Err(Error::CorruptedModel {
            path: "format".into(),
            message: format!("expected '{MODEL_FORMAT}', found '{}'", doc.format),
        });
    }
    if doc.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: doc.format_version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    doc.into_model()
}

/// Runs `write` against a temporary file next to `path`, then renames it
/// into place. Nothing is left behind on failure.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn save_model(model: &FittedModel, path: &Path) -> Result<()> {
    let text = model_to_string(model)?;
    write_atomic(path, |w| {
        w.write_all(text.as_bytes())?;
        Ok(())
    })
}

pub fn load_model(path: &Path) -> Result<FittedModel> {
    model_from_str(&fs::read_to_string(path)?)
}
