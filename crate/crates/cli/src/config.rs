//! Line-oriented `section.key = value` configuration.
//!
//! - blank lines and lines starting with `#` are skipped
//! - every key must be in the command's allowed set; duplicates are rejected
//! - `--set key=value` overrides are validated against the same set
//! - all errors carry the offending line number

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

/// Configuration or usage problem; maps to exit status 2.
#[derive(Debug)]
pub struct ConfigError {
    /// 1-based line in the config file; `None` for overrides and missing keys.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config line {l}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(message: impl Into<String>) -> ConfigError {
    ConfigError {
        line: None,
        message: message.into(),
    }
}

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    line: Option<usize>,
}

/// Parsed key/value pairs with their source lines.
#[derive(Clone, Debug, Default)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
    /// Directory used to resolve relative file paths.
    base_dir: PathBuf,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .split('.')
            .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
}

impl Config {
    /// Parses `text`, rejecting keys outside `allowed`.
    pub fn parse(text: &str, allowed: &[&str]) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let err = |message: String| ConfigError {
                line: Some(line),
                message,
            };
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{s}`")))?;
            let key = key.trim();
            let value = value.trim();
            if !valid_key(key) {
                return Err(err(format!("malformed key `{key}`")));
            }
            if !allowed.contains(&key) {
                return Err(err(format!("unknown key `{key}`")));
            }
            if value.is_empty() {
                return Err(err(format!("missing value for `{key}`")));
            }
            if let Some(prev) = cfg.entries.get(key) {
                return Err(err(format!(
                    "duplicate key `{key}` (first set on line {})",
                    prev.line.unwrap_or(0)
                )));
            }
            cfg.entries.insert(
                key.to_string(),
                Entry {
                    value: unquote(value).to_string(),
                    line: Some(line),
                },
            );
        }
        Ok(cfg)
    }

    /// Reads and parses a file; relative paths inside resolve against its directory.
    pub fn load(path: &Path, allowed: &[&str]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, allowed)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String], allowed: &[&str]) -> Result<(), ConfigError> {
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| config_error(format!("override `{o}` is not `key=value`")))?;
            let key = key.trim();
            if !allowed.contains(&key) {
                return Err(config_error(format!("unknown override key `{key}`")));
            }
            self.entries.insert(
                key.to_string(),
                Entry {
                    value: unquote(value.trim()).to_string(),
                    line: None,
                },
            );
        }
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn entry_error(&self, key: &str, message: String) -> ConfigError {
        ConfigError {
            line: self.entries.get(key).and_then(|e| e.line),
            message,
        }
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    pub fn require_str(&self, key: &str) -> Result<&str, ConfigError> {
        self.str(key).ok_or_else(|| config_error(format!("missing required key `{key}`")))
    }

    fn parse_with<T>(&self, key: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Result<Option<T>, ConfigError> {
        match self.str(key) {
            None => Ok(None),
            Some(v) => f(v)
                .map(Some)
                .ok_or_else(|| self.entry_error(key, format!("`{key}` must be {what}, found `{v}`"))),
        }
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.parse_with(key, "a finite number", |v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    pub fn require_f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.f64(key)?
            .ok_or_else(|| config_error(format!("missing required key `{key}`")))
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        self.parse_with(key, "a non-negative integer", |v| v.parse::<usize>().ok())
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        Ok(self.usize(key)?.unwrap_or(default))
    }

    pub fn require_usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.usize(key)?
            .ok_or_else(|| config_error(format!("missing required key `{key}`")))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        Ok(self
            .parse_with(key, "true or false", |v| match v {
                "true" => Some(true),
                "false" => Some(false),
                _ => None,
            })?
            .unwrap_or(default))
    }

    /// Comma-separated numbers.
    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.parse_with(key, "a comma-separated list of numbers", |v| parse_f64_list(v).ok())
    }

    pub fn usize_list(&self, key: &str) -> Result<Option<Vec<usize>>, ConfigError> {
        self.parse_with(key, "a comma-separated list of integers", |v| parse_usize_list(v).ok())
    }

    /// Comma-separated points whose coordinates are separated by `:`.
    pub fn point_list(&self, key: &str) -> Result<Option<Vec<Vec<f64>>>, ConfigError> {
        self.parse_with(key, "a list like `t:x1, t:x1`", |v| {
            v.split(',')
                .map(|p| parse_list(p, ':', |s| s.parse::<f64>().ok().filter(|x| x.is_finite())))
                .collect::<Option<Vec<_>>>()
        })
    }

    /// Path value resolved against the config file's directory.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.str(key).map(|v| {
            let p = Path::new(v);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                self.base_dir.join(p)
            }
        })
    }

    /// Error tied to the line of `key`.
    pub fn invalid(&self, key: &str, message: impl Into<String>) -> ConfigError {
        self.entry_error(key, message.into())
    }
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v)
}

fn parse_list<T>(v: &str, sep: char, f: impl Fn(&str) -> Option<T>) -> Option<Vec<T>> {
    let items: Option<Vec<T>> = v.split(sep).map(|s| f(s.trim())).collect();
    items.filter(|x| !x.is_empty())
}

/// Parses `a,b,c` into numbers.
pub fn parse_f64_list(v: &str) -> Result<Vec<f64>, String> {
    parse_list(v, ',', |s| s.parse::<f64>().ok().filter(|x| x.is_finite()))
        .ok_or_else(|| format!("expected comma-separated numbers, found `{v}`"))
}

/// Parses `a,b,c` into non-negative integers.
pub fn parse_usize_list(v: &str) -> Result<Vec<usize>, String> {
    parse_list(v, ',', |s| s.parse::<usize>().ok())
        .ok_or_else(|| format!("expected comma-separated integers, found `{v}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEYS: &[&str] = &["grid.nx", "grid.t1", "f_file", "diagnose.centers"];

    #[test]
    fn parses_values_and_comments() {
        let cfg = Config::parse("# c\n\ngrid.nx = 16\ngrid.t1=0.5\nf_file = \"f.csv\"\n", KEYS).unwrap();
        assert_eq!(cfg.require_usize("grid.nx").unwrap(), 16);
        assert_eq!(cfg.require_f64("grid.t1").unwrap(), 0.5);
        assert_eq!(cfg.str("f_file"), Some("f.csv"));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = Config::parse("grid.nx = 4\ngrid.nz = 3\n", KEYS).unwrap_err();
        assert_eq!(e.line, Some(2));
        let e = Config::parse("grid.nx = 4\n\nnot a pair\n", KEYS).unwrap_err();
        assert_eq!(e.line, Some(3));
        let e = Config::parse("grid.nx = 4\ngrid.nx = 5\n", KEYS).unwrap_err();
        assert_eq!(e.line, Some(2));
        let cfg = Config::parse("grid.t1 = 1\ngrid.nx = many\n", KEYS).unwrap();
        assert_eq!(cfg.usize("grid.nx").unwrap_err().line, Some(2));
    }

    #[test]
    fn overrides_are_strict() {
        let mut cfg = Config::parse("grid.nx = 4\n", KEYS).unwrap();
        cfg.apply_overrides(&["grid.nx=8".into()], KEYS).unwrap();
        assert_eq!(cfg.require_usize("grid.nx").unwrap(), 8);
        assert!(cfg.apply_overrides(&["grid.ny=8".into()], KEYS).is_err());
    }

    #[test]
    fn point_lists() {
        let cfg = Config::parse("diagnose.centers = 0.5:0.1, 0.25:-0.2\n", KEYS).unwrap();
        assert_eq!(
            cfg.point_list("diagnose.centers").unwrap().unwrap(),
            vec![vec![0.5, 0.1], vec![0.25, -0.2]]
        );
    }
}
