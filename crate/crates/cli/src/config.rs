//! Flag > config file > default resolution, with a record of every resolved value.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: unknown or missing flags, unparsable values, unreadable config.
    Usage(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<rgen_core::Error> for CliError {
    fn from(e: rgen_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parsed config file: top-level keys are global, `[subcommand]` tables hold per-command keys
/// named like the long flags (`prefix-len = 32`).
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    root: toml::Table,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let root: toml::Table = toml::from_str(&text)
            .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?;
        Ok(ConfigFile { root })
    }

    pub fn global(&self, key: &str) -> Option<&toml::Value> {
        self.root.get(key).filter(|v| !v.is_table())
    }

    pub fn section(&self, command: &str) -> toml::Table {
        self.root
            .get(command)
            .and_then(|v| v.as_table())
            .cloned()
            .unwrap_or_default()
    }
}

fn from_toml<T: DeserializeOwned>(key: &str, v: &toml::Value) -> CliResult<T> {
    v.clone()
        .try_into()
        .map_err(|e| usage(format!("config key `{key}`: {e}")))
}

/// Resolves the settings of one subcommand and remembers them for the manifest.
pub struct Settings {
    section: toml::Table,
    resolved: Map<String, Value>,
}

impl Settings {
    pub fn new(section: toml::Table) -> Self {
        Settings {
            section,
            resolved: Map::new(),
        }
    }

    fn record<T: Serialize>(&mut self, key: &str, v: &T) {
        self.resolved.insert(
            key.to_string(),
            serde_json::to_value(v).unwrap_or(Value::Null),
        );
    }

    pub fn opt<T: DeserializeOwned + Serialize>(
        &mut self,
        key: &str,
        flag: Option<T>,
    ) -> CliResult<Option<T>> {
        let v = match flag {
            Some(v) => Some(v),
            None => self
                .section
                .get(key)
                .map(|v| from_toml(key, v))
                .transpose()?,
        };
        if let Some(v) = &v {
            self.record(key, v);
        }
        Ok(v)
    }

    pub fn or<T: DeserializeOwned + Serialize>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> CliResult<T> {
        let v = self.opt(key, flag)?.unwrap_or(default);
        self.record(key, &v);
        Ok(v)
    }

    pub fn req<T: DeserializeOwned + Serialize>(
        &mut self,
        key: &str,
        flag: Option<T>,
    ) -> CliResult<T> {
        self.opt(key, flag)?
            .ok_or_else(|| usage(format!("missing required argument --{key}")))
    }

    /// Repeated flag; a config value may be a single string or an array.
    pub fn list(
        &mut self,
        key: &str,
        flag: Vec<String>,
        default: &[&str],
    ) -> CliResult<Vec<String>> {
        let v = if !flag.is_empty() {
            flag
        } else {
            match self.section.get(key) {
                Some(toml::Value::String(s)) => vec![s.clone()],
                Some(v) => from_toml(key, v)?,
                None => default.iter().map(|s| s.to_string()).collect(),
            }
        };
        self.record(key, &v);
        Ok(v)
    }

    pub fn into_resolved(self) -> Map<String, Value> {
        self.resolved
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(toml_text: &str) -> Settings {
        let root: toml::Table = toml::from_str(toml_text).unwrap();
        Settings::new(ConfigFile { root }.section("cmd"))
    }

    #[test]
    fn flag_beats_config_beats_default() {
        let mut s = settings("[cmd]\nsteps = 5\nlr = 0.5\n");
        assert_eq!(s.or("steps", Some(9usize), 1).unwrap(), 9);
        assert_eq!(s.or("lr", None, 0.1).unwrap(), 0.5);
        assert_eq!(s.or("batch", None, 32usize).unwrap(), 32);
        let r = s.into_resolved();
        assert_eq!(r["steps"], 9);
        assert_eq!(r["batch"], 32);
    }

    #[test]
    fn missing_required_names_the_flag() {
        let mut s = settings("");
        match s.req::<String>("corpus", None) {
            Err(CliError::Usage(m)) => assert!(m.contains("--corpus")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_config_type_is_a_usage_error() {
        let mut s = settings("[cmd]\nsteps = \"many\"\n");
        assert!(matches!(
            s.or("steps", None, 1usize),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn lists_accept_a_single_string() {
        let mut s = settings("[cmd]\nscorer = \"overlap\"\n");
        assert_eq!(s.list("scorer", vec![], &[]).unwrap(), vec!["overlap"]);
        let mut s = settings("[cmd]\nscorer = [\"overlap\", \"random:1\"]\n");
        assert_eq!(s.list("scorer", vec![], &[]).unwrap().len(), 2);
    }
}
