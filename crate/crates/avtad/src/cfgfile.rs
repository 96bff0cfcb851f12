//! Flat `key = value` configuration documents.
//!
//! One setting per line, dotted keys, `#` starts a comment. Keys not mentioned
//! keep their defaults, so an empty document is the default configuration.

use std::collections::HashMap;
use std::path::Path;

use avtad_core::config::RunConfig;

use crate::error::{AppError, Result};

/// The annotated default configuration shipped with the crate.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.cfg");

/// Applies every setting of `text` on top of the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(AppError::config(format!("line {line_no}: expected `key = value`, got `{line}`")));
        };
        let key = key.trim();
        if let Some(prev) = seen.insert(key.to_string(), line_no) {
            return Err(AppError::config(format!("line {line_no}: `{key}` already set on line {prev}")));
        }
        cfg.set(key, value.trim())
            .map_err(|e| AppError::config(format!("line {line_no}: {e}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        AppError::Config(m) => AppError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Hex SHA-256 of the canonical text of `cfg`.
pub fn config_hash(cfg: &RunConfig) -> String {
    use sha2::{Digest, Sha256};
    format!("{:x}", Sha256::digest(cfg.to_canonical_text().as_bytes()))
}
