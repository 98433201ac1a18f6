//! Layered settings: command-line flag, then the flat `key = value` config
//! file, then the built-in default. Every value actually used is recorded so
//! the manifest shows the fully resolved run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::UsageError;

#[derive(Debug, Clone, Serialize)]
pub struct ConfigFile {
    pub path: PathBuf,
    /// The file exactly as read.
    pub contents: String,
}

/// Parses `key = value` lines. `#` starts a comment line; keys may use `-`
/// or `_` interchangeably.
pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>, UsageError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(UsageError(format!("config line {}: expected `key = value`", i + 1)));
        };
        let key = normalize(k.trim());
        let value = v.trim().trim_matches('"').to_string();
        if key.is_empty() {
            return Err(UsageError(format!("config line {}: empty key", i + 1)));
        }
        if out.insert(key.clone(), value).is_some() {
            return Err(UsageError(format!("config line {}: duplicate key `{key}`", i + 1)));
        }
    }
    Ok(out)
}

fn normalize(key: &str) -> String {
    key.replace('-', "_").to_ascii_lowercase()
}

pub struct Resolver {
    file: BTreeMap<String, String>,
    pub source: Option<ConfigFile>,
    resolved: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl Resolver {
    pub fn load(path: Option<&Path>) -> Result<Self, UsageError> {
        let (file, source) = match path {
            None => (BTreeMap::new(), None),
            Some(p) => {
                let contents = std::fs::read_to_string(p)
                    .map_err(|e| UsageError(format!("cannot read config file {}: {e}", p.display())))?;
                (
                    parse_flat(&contents)?,
                    Some(ConfigFile {
                        path: p.to_path_buf(),
                        contents,
                    }),
                )
            }
        };
        Ok(Self {
            file,
            source,
            resolved: BTreeMap::new(),
            used: BTreeSet::new(),
        })
    }

    fn file_value<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, UsageError>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| UsageError(format!("config key `{key}`: invalid value `{raw}`: {e}"))),
        }
    }

    fn record(&mut self, key: &str, shown: String) {
        self.used.insert(key.to_string());
        self.resolved.insert(key.to_string(), shown);
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, UsageError>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn optional<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, UsageError>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        let v = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        if let Some(v) = &v {
            self.record(key, v.to_string());
        }
        Ok(v)
    }

    pub fn optional_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>, UsageError> {
        self.used.insert(key.to_string());
        let v = match flag {
            Some(v) => Some(v),
            None => self.file_value::<String>(key)?.map(PathBuf::from),
        };
        if let Some(v) = &v {
            self.record(key, v.display().to_string());
        }
        Ok(v)
    }

    /// A path that must come from a flag or the config file.
    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf, UsageError> {
        self.optional_path(key, flag)?
            .ok_or_else(|| UsageError(format!("missing required `--{}` (or `{key}` in the config file)", key.replace('_', "-"))))
    }

    /// Boolean switch: a flag present on the command line wins, otherwise the
    /// config file, otherwise false.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool, UsageError> {
        let v = flag || self.file_value::<bool>(key)?.unwrap_or(false);
        self.record(key, v.to_string());
        Ok(v)
    }

    /// Records a derived value that has no flag of its own.
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.record(key, value.to_string());
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }

    /// Config keys this subcommand never looked at.
    pub fn unused(&self) -> Vec<&str> {
        self.file.keys().filter(|k| !self.used.contains(*k)).map(String::as_str).collect()
    }
}

/// Comma-separated list, e.g. `0,1,2`.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<T>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .and_then(|v| if v.is_empty() { Err("empty list".into()) } else { Ok(List(v)) })
    }
}

impl<T: Display> Display for List<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let mut r = Resolver {
            file: parse_flat("epochs = 7\nlearning-rate=0.5\n# comment\n").unwrap(),
            source: None,
            resolved: BTreeMap::new(),
            used: BTreeSet::new(),
        };
        assert_eq!(r.get("epochs", Some(3usize), 30).unwrap(), 3);
        assert_eq!(r.get("learning_rate", None, 0.1).unwrap(), 0.5);
        assert_eq!(r.get("momentum", None, 0.9).unwrap(), 0.9);
        assert_eq!(r.resolved()["epochs"], "3");
        assert!(r.unused().is_empty());
    }

    #[test]
    fn bad_lines_are_usage_errors() {
        assert!(parse_flat("epochs 3").is_err());
        assert!(parse_flat("a=1\na=2").is_err());
        let mut r = Resolver {
            file: parse_flat("epochs = many").unwrap(),
            source: None,
            resolved: BTreeMap::new(),
            used: BTreeSet::new(),
        };
        assert!(r.get("epochs", None, 1usize).is_err());
    }

    #[test]
    fn lists_parse() {
        assert_eq!("0, 1,2".parse::<List<u64>>().unwrap(), List(vec![0, 1, 2]));
        assert!("".parse::<List<u64>>().is_err());
        assert_eq!(List(vec![0.2, 0.4]).to_string(), "0.2,0.4");
    }
}
