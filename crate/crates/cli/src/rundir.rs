//! Run-directory layout and deterministic file emission.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::RunConfig;

pub const VERSION_STRING: &str = concat!("copersim-", env!("CARGO_PKG_VERSION"));

/// Create the run directory and drop the config snapshot, seed, and
/// version marker every run carries.
pub fn init_run_dir(out: &Path, cfg: &RunConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("cannot create run directory {}", out.display()))?;
    write_text(out, "config.toml", &cfg.to_toml_string())?;
    write_text(out, "version.txt", &format!("{VERSION_STRING}\nseed={}\n", cfg.seed))?;
    Ok(out.to_path_buf())
}

pub fn write_text(dir: &Path, name: &str, content: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, content).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Join per-UAV optional values with `|` for a single CSV cell.
pub fn join_per_uav<T: std::fmt::Display>(values: &[Option<T>]) -> String {
    values
        .iter()
        .map(|v| v.as_ref().map(|x| x.to_string()).unwrap_or_else(|| "-".to_string()))
        .collect::<Vec<_>>()
        .join("|")
}
