pub mod bench;
pub mod convert;
pub mod eval;
pub mod gen;
pub mod infer;
pub mod train;
pub mod viz;

use std::path::Path;

use graspformer_core::error::{Error, Result};

/// Loads a JSON config file (strict keys) or falls back to the default.
pub fn load_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("bad config {}: {e}", p.display())))
        }
    }
}

/// Fails early when an input path is missing.
pub fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(Error::Data(format!("{what} directory {} does not exist", path.display())));
    }
    Ok(())
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Data(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}
