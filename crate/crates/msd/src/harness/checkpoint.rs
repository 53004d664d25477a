//! Checkpoint file IO around the parameter-set binary container.

use std::fs;
use std::path::Path;

use crate::autodiff::ParamSet;
use crate::error::Result;

/// Writes the parameter container to `path` (byte-exact round trip with
/// [`restore`]).
pub fn checkpoint(params: &ParamSet, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, params.to_bytes())?;
    Ok(())
}

/// Reads a parameter container back, validating magic and dimensions.
pub fn restore(path: &Path) -> Result<ParamSet> {
    let bytes = fs::read(path)?;
    ParamSet::from_bytes(&bytes)
}
