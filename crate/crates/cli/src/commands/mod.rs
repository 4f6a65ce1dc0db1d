//! Subcommand implementations.

pub mod eval;
pub mod experiments;
pub mod generate;
pub mod refine;
pub mod serve;
pub mod train;

use std::path::Path;

use anyhow::{Context, Result};
use deformkit::net::checkpoint::Checkpoint;

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub(crate) fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Appends one JSON value per line.
pub(crate) fn json_lines<T: serde::Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|x| serde_json::to_string(x).expect("records serialize") + "\n")
        .collect()
}
