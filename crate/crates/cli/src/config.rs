//! INI-style experiment configuration.
//!
//! ```text
//! # full-line comments start with `#` or `;`
//! seed = 7
//! output_dir = runs/audit
//!
//! [schedule]
//! steps = 4, 16, 1000
//!
//! [audit]
//! samplers = cps(0.9), flow_sde(dance, 0.3)
//! ```
//!
//! Keys before the first header belong to the root section. List values are
//! split at commas outside parentheses. Repeated sections or keys are
//! rejected, as are keys the command does not read.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flowcps::spec::split_top_level;

use crate::error::{CliError, CliResult};

pub const ROOT: &str = "";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ini {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl Ini {
    pub fn parse(text: &str) -> CliResult<Ini> {
        let mut ini = Ini::default();
        let mut current = ROOT.to_string();
        ini.sections.insert(current.clone(), BTreeMap::new());
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| usage(format!("line {}: unterminated section header", n + 1)))?
                    .trim();
                if name.is_empty() || ini.sections.contains_key(name) {
                    return Err(usage(format!("line {}: empty or repeated section `[{name}]`", n + 1)));
                }
                current = name.to_string();
                ini.sections.insert(current.clone(), BTreeMap::new());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("line {}: expected `key = value`", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(usage(format!("line {}: empty key", n + 1)));
            }
            let section = ini.sections.get_mut(&current).expect("current section exists");
            if section.insert(k.to_string(), v.to_string()).is_some() {
                return Err(usage(format!("line {}: duplicate key `{k}`", n + 1)));
            }
        }
        Ok(ini)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.into());
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn sections(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, String>)> {
        self.sections.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut out = serde_json::Map::new();
        for (name, keys) in self.sections().filter(|(_, k)| !k.is_empty()) {
            let obj = keys
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect();
            let label = if name.is_empty() { "root" } else { name };
            out.insert(label.to_string(), serde_json::Value::Object(obj));
        }
        serde_json::Value::Object(out)
    }

    pub fn from_json(value: &serde_json::Value) -> CliResult<Ini> {
        let obj = value
            .as_object()
            .ok_or_else(|| usage("manifest `config` must be an object"))?;
        let mut ini = Ini::default();
        ini.sections.insert(ROOT.to_string(), BTreeMap::new());
        for (name, keys) in obj {
            let section = if name == "root" { ROOT } else { name.as_str() };
            let keys = keys
                .as_object()
                .ok_or_else(|| usage(format!("manifest section `{name}` must be an object")))?;
            for (k, v) in keys {
                let v = v
                    .as_str()
                    .ok_or_else(|| usage(format!("manifest value `{name}.{k}` must be a string")))?;
                ini.set(section, k, v);
            }
        }
        Ok(ini)
    }
}

impl fmt::Display for Ini {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(root) = self.sections.get(ROOT) {
            for (k, v) in root {
                writeln!(f, "{k} = {v}")?;
            }
        }
        for (name, keys) in self.sections.iter().filter(|(n, _)| !n.is_empty()) {
            writeln!(f, "\n[{name}]")?;
            for (k, v) in keys {
                writeln!(f, "{k} = {v}")?;
            }
        }
        Ok(())
    }
}

/// Typed reads from an [`Ini`] that remember which keys were consumed and
/// record the resolved value of every key, defaults included.
pub struct Reader<'a> {
    ini: &'a Ini,
    base_dir: PathBuf,
    used: RefCell<BTreeSet<(String, String)>>,
    resolved: RefCell<Ini>,
}

impl<'a> Reader<'a> {
    pub fn new(ini: &'a Ini, base_dir: &Path) -> Self {
        Reader {
            ini,
            base_dir: base_dir.to_path_buf(),
            used: RefCell::default(),
            resolved: RefCell::default(),
        }
    }

    fn raw(&self, section: &str, key: &str) -> Option<&'a str> {
        self.used
            .borrow_mut()
            .insert((section.to_string(), key.to_string()));
        self.ini.get(section, key)
    }

    fn record(&self, section: &str, key: &str, value: String) {
        self.resolved.borrow_mut().set(section, key, value);
    }

    fn parse_value<T: FromStr>(section: &str, key: &str, raw: &str) -> CliResult<T>
    where
        T::Err: fmt::Display,
    {
        raw.parse()
            .map_err(|e: T::Err| usage(format!("{}: {e}", display_key(section, key))))
    }

    pub fn required<T>(&self, section: &str, key: &str) -> CliResult<T>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        let raw = self
            .raw(section, key)
            .ok_or_else(|| usage(format!("missing {}", display_key(section, key))))?;
        let v: T = Self::parse_value(section, key, raw)?;
        self.record(section, key, v.to_string());
        Ok(v)
    }

    pub fn or<T>(&self, section: &str, key: &str, default: T) -> CliResult<T>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        let v = match self.raw(section, key) {
            Some(raw) => Self::parse_value(section, key, raw)?,
            None => default,
        };
        self.record(section, key, v.to_string());
        Ok(v)
    }

    pub fn list<T>(&self, section: &str, key: &str) -> CliResult<Vec<T>>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        let raw = self
            .raw(section, key)
            .ok_or_else(|| usage(format!("missing {}", display_key(section, key))))?;
        let items = split_top_level(raw, ',')
            .into_iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .map(|s| Self::parse_value::<T>(section, key, &s))
            .collect::<CliResult<Vec<T>>>()?;
        if items.is_empty() {
            return Err(usage(format!("{} is empty", display_key(section, key))));
        }
        let canon = items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ");
        self.record(section, key, canon);
        Ok(items)
    }

    pub fn list_or<T>(&self, section: &str, key: &str, default: Vec<T>) -> CliResult<Vec<T>>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        if self.ini.get(section, key).is_some() {
            return self.list(section, key);
        }
        self.raw(section, key);
        let canon = default.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ");
        self.record(section, key, canon);
        Ok(default)
    }

    /// Takes `value` in place of whatever the file says for `key`.
    pub fn overridden<T: fmt::Display>(&self, section: &str, key: &str, value: T) -> T {
        self.raw(section, key);
        self.record(section, key, value.to_string());
        value
    }

    /// A path relative to the config file's directory, resolved to an
    /// absolute path when possible.
    pub fn path(&self, section: &str, key: &str) -> CliResult<PathBuf> {
        let raw: String = self
            .raw(section, key)
            .ok_or_else(|| usage(format!("missing {}", display_key(section, key))))?
            .to_string();
        let p = self.base_dir.join(raw);
        let p = std::path::absolute(&p).unwrap_or(p);
        self.record(section, key, p.display().to_string());
        Ok(p)
    }

    /// Fails on keys that were present but never read.
    pub fn finish(self) -> CliResult<Ini> {
        let used = self.used.into_inner();
        for (section, keys) in self.ini.sections() {
            for key in keys.keys() {
                if !used.contains(&(section.to_string(), key.clone())) {
                    return Err(usage(format!("unknown key {}", display_key(section, key))));
                }
            }
        }
        Ok(self.resolved.into_inner())
    }
}

fn display_key(section: &str, key: &str) -> String {
    if section.is_empty() {
        format!("`{key}`")
    } else {
        format!("`[{section}] {key}`")
    }
}
