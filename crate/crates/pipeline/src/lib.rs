//! Dataset layout and manifest export, inference backends, run evaluation and
//! the annotation server behind the `urbanform` CLI.

pub mod annotate;
pub mod backend;
pub mod dataset;
pub mod evaluate;
pub mod manifest;
pub mod server;

use std::path::PathBuf;

use thiserror::Error;
use urbanform_core::metrics::MetricsError;
use urbanform_core::raster::RasterError;
use urbanform_core::windowing::WindowError;

pub use backend::{run_inference, BackendError, InferenceBackend};
pub use dataset::{build_dataset, DatasetLayout, GridOptions};
pub use evaluate::{evaluate_run, load_predictions, RunEvaluation};
pub use manifest::{export_manifest, DatasetManifest, ExportOptions, HyperparameterRecord, MANIFEST_SCHEMA};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {reason}", .path.display())]
    Json { path: PathBuf, reason: String },
    #[error("referenced file is missing: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("manifest is inconsistent: {0}")]
    Manifest(String),
    #[error("prediction tile missing for {} (expected {})", .tile, .path.display())]
    Coverage { tile: String, path: PathBuf },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Io { path, source }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Json {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Pretty JSON with a trailing newline; stable for a given value.
pub(crate) fn write_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Json {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}
