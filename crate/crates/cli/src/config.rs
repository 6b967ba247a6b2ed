//! Flat `key = value` configuration with `[section]` headers. A key inside
//! a section is addressed as `section.key`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .filter(|n| !n.trim().is_empty())
                    .ok_or_else(|| CliError::Config { line: i + 1, reason: format!("bad section header `{line}`") })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config { line: i + 1, reason: format!("expected `key = value`, got `{line}`") })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(CliError::Config { line: i + 1, reason: "empty key".into() });
            }
            let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            values.insert(full, value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
        Self::parse(&text)
    }

    /// Applies `section.key=value` overrides.
    pub fn with_overrides(mut self, sets: &[String]) -> Result<Self, CliError> {
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Config { line: 0, reason: format!("override `{s}` is not key=value") })?;
            self.values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(self)
    }
}

/// Renders a flat map back into the sectioned format.
pub fn render(values: &BTreeMap<String, String>) -> String {
    let mut top = String::new();
    let mut sections: BTreeMap<&str, String> = BTreeMap::new();
    for (k, v) in values {
        match k.split_once('.') {
            Some((sec, key)) => *sections.entry(sec).or_default() += &format!("{key} = {v}\n"),
            None => top += &format!("{k} = {v}\n"),
        }
    }
    for (sec, body) in sections {
        top += &format!("\n[{sec}]\n{body}");
    }
    top
}

/// Looks values up with precedence command line > config file > default and
/// records every resolved value for the snapshot.
pub struct Resolver<'a> {
    file: &'a ConfigFile,
    pub resolved: BTreeMap<String, String>,
}

impl<'a> Resolver<'a> {
    pub fn new(file: &'a ConfigFile) -> Self {
        Resolver { file, resolved: BTreeMap::new() }
    }

    pub fn get<T>(&mut self, key: &str, cli: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match (cli, self.file.values.get(key)) {
            (Some(v), _) => v,
            (None, Some(text)) => text
                .parse()
                .map_err(|e: T::Err| CliError::Config { line: 0, reason: format!("`{key}` = `{text}`: {e}") })?,
            (None, None) => default,
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    pub fn record(&mut self, key: &str, value: impl Display) {
        self.resolved.insert(key.to_string(), value.to_string());
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Short content hash of a resolved configuration.
pub fn config_hash(values: &BTreeMap<String, String>) -> String {
    sha256_hex(render(values).as_bytes())[..16].to_string()
}

/// Independent seed for a named stage, derived from the run seed.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}/{stage}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
