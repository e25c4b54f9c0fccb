use std::path::Path;

use anyhow::Context;
use condaudio::dataset::{DatasetError, ExtractConfig};
use condaudio::ldm::LdmError;

/// Invalid flags, flag values or configuration.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<LdmError>() {
            match e {
                LdmError::Divergence(_) | LdmError::SamplerDivergence { .. } => return 3,
                LdmError::Config(_) | LdmError::Toml(_) | LdmError::UnknownControlType(_) => return 1,
                _ => {}
            }
        }
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(DatasetError::Config(_)) = cause.downcast_ref::<DatasetError>() {
            return 1;
        }
    }
    2
}

/// The error chain joined by `: `, skipping causes already quoted by an outer message.
pub fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

/// Pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn load_extract_config(path: Option<&Path>) -> anyhow::Result<ExtractConfig> {
    let config = match path {
        None => ExtractConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text)
                .map_err(|e| usage(format!("invalid extraction config {}: {e}", p.display())))?
        }
    };
    config.validate()?;
    Ok(config)
}

/// Parses `a,b,c` into values.
pub fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    text.split(',').map(|s| s.trim().parse::<T>().map_err(|e| format!("{s:?}: {e}"))).collect()
}

pub fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn create_dir(path: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}
