//! File formats, run configuration and the pipeline commands.

mod checkpoint;
mod commands;
mod config;
mod container;
mod dataset;
mod error;
pub mod report;

use std::path::Path;

pub use checkpoint::Checkpoint;
pub use commands::{apply_overrides, cmd_eval, cmd_protocol, cmd_report, cmd_synth, cmd_train, run_command, Command, Overrides};
pub use config::{DataPaths, EvalConfig, ProtocolConfig, ReportConfig, ResumeConfig, RunConfig, SynthConfig};
pub use container::{encode_tensor, tensor_from_bytes, tensor_to_bytes, Dtype, TENSOR_MAGIC, TENSOR_VERSION};
pub use dataset::{decode_dataset, encode_dataset, DATASET_MAGIC, DATASET_VERSION, UNLABELED};
pub use error::IoError;

use crate::data::Dataset;

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes).map_err(|e| IoError::file(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| IoError::file(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|e| IoError::file(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset, IoError> {
    Ok(decode_dataset(&read_file(path)?)?.0)
}

pub fn write_dataset(path: &Path, ds: &Dataset, dtype: Dtype) -> Result<(), IoError> {
    write_atomic(path, &encode_dataset(ds, dtype)?)
}
