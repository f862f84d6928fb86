//! Flat key-value config files with dotted section keys, e.g.
//! `difficulty.k=25`. CLI flags override file values, which override
//! built-in defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default)]
pub struct KvConfig {
    map: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn load(path: &Path) -> Result<KvConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Config {
                msg: format!(
                    "{}:{}: expected key=value, got '{line}'",
                    path.display(),
                    lineno + 1
                ),
            })?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(KvConfig { map })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }
}

/// Merges CLI flags, config file values, and defaults, in that order.
pub struct Resolver {
    file: Option<KvConfig>,
}

impl Resolver {
    pub fn new(config_path: Option<&Path>) -> Result<Resolver, CliError> {
        let file = config_path.map(KvConfig::load).transpose()?;
        Ok(Resolver { file })
    }

    fn file_value(&self, key: &str) -> Option<&str> {
        self.file.as_ref().and_then(|f| f.get(key))
    }

    pub fn string(&self, flag: Option<&str>, key: &str, default: &str) -> String {
        flag.map(str::to_string)
            .or_else(|| self.file_value(key).map(str::to_string))
            .unwrap_or_else(|| default.to_string())
    }

    pub fn opt_string(&self, flag: Option<&str>, key: &str) -> Option<String> {
        flag.map(str::to_string)
            .or_else(|| self.file_value(key).map(str::to_string))
    }

    pub fn opt_path(&self, flag: Option<&Path>, key: &str) -> Option<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.file_value(key).map(PathBuf::from))
    }

    pub fn required_path(&self, flag: Option<&Path>, key: &str) -> Result<PathBuf, CliError> {
        self.opt_path(flag, key).ok_or_else(|| CliError::Config {
            msg: format!("missing required path: pass a flag or set '{key}' in the config file"),
        })
    }

    pub fn parse<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file_value(key) {
            Some(raw) => raw.parse().map_err(|e| CliError::Config {
                msg: format!("invalid value '{raw}' for '{key}': {e}"),
            }),
            None => Ok(default),
        }
    }

    pub fn opt_parse<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(Some(v));
        }
        match self.file_value(key) {
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| CliError::Config {
                    msg: format!("invalid value '{raw}' for '{key}': {e}"),
                }),
            None => Ok(None),
        }
    }

    /// Booleans: a bare flag wins when set; otherwise the file key.
    pub fn flag(&self, flag: bool, key: &str, default: bool) -> Result<bool, CliError> {
        if flag {
            return Ok(true);
        }
        match self.file_value(key) {
            Some(raw) => parse_bool(raw).ok_or_else(|| CliError::Config {
                msg: format!("invalid boolean '{raw}' for '{key}'"),
            }),
            None => Ok(default),
        }
    }

    pub fn list<T>(&self, flag: Option<&str>, key: &str, default: &[T]) -> Result<Vec<T>, CliError>
    where
        T: FromStr + Clone,
        T::Err: fmt::Display,
    {
        let raw = match flag {
            Some(v) => v.to_string(),
            None => match self.file_value(key) {
                Some(v) => v.to_string(),
                None => return Ok(default.to_vec()),
            },
        };
        parse_list(&raw).map_err(|e| CliError::Config {
            msg: format!("invalid list for '{key}': {e}"),
        })
    }
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

/// Comma-separated list; the empty string is the empty list.
pub fn parse_list<T>(raw: &str) -> Result<Vec<T>, String>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|item| {
            item.trim()
                .parse()
                .map_err(|e| format!("'{}': {e}", item.trim()))
        })
        .collect()
}
