//! Flat `key=value` configuration files. A file supplies defaults for the
//! flags of whichever command is run; explicit flags always win. Keys the
//! command does not recognize are rejected, so a typo fails the run instead
//! of silently using a built-in default.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aescore::{Error, Result};

pub struct ConfigFile {
    values: BTreeMap<String, String>,
    recognized: BTreeSet<String>,
    path: Option<PathBuf>,
}

impl ConfigFile {
    /// No-op source when the user gave no `--config`.
    pub fn empty() -> ConfigFile {
        ConfigFile { values: BTreeMap::new(), recognized: BTreeSet::new(), path: None }
    }

    /// Parses `key=value` lines; `#` starts a comment, blank lines are
    /// skipped, duplicate keys are an error.
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{} line {}: expected key=value, found {raw:?}", path.display(), lineno + 1))
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("{} line {}: empty key", path.display(), lineno + 1)));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("{} line {}: duplicate key {key:?}", path.display(), lineno + 1)));
            }
        }
        Ok(ConfigFile { values, recognized: BTreeSet::new(), path: Some(path.to_path_buf()) })
    }

    /// Looks up a key and parses it, marking the key as recognized by the
    /// active command whether or not the file sets it.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.recognized.insert(key.to_string());
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                Error::Config(format!("{}: key {key:?} has invalid value {raw:?}: {e}", self.where_from()))
            }),
        }
    }

    /// Fails on any key the command never asked about.
    pub fn finish(&self) -> Result<()> {
        let unknown: Vec<&str> = self
            .values
            .keys()
            .filter(|k| !self.recognized.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("{}: unknown key(s): {}", self.where_from(), unknown.join(", "))))
        }
    }

    fn where_from(&self) -> String {
        match &self.path {
            Some(p) => p.display().to_string(),
            None => "config".to_string(),
        }
    }
}

/// Resolved settings a command actually ran with, echoed into the output
/// directory so a run can be reproduced from its artifacts alone.
pub struct EffectiveConfig {
    command: &'static str,
    lines: Vec<(String, String)>,
    notes: Vec<&'static str>,
}

impl EffectiveConfig {
    pub fn new(command: &'static str) -> EffectiveConfig {
        EffectiveConfig { command, lines: Vec::new(), notes: Vec::new() }
    }

    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn set_path(&mut self, key: &str, value: &Path) {
        self.lines.push((key.to_string(), value.display().to_string()));
    }

    /// A caveat worth surfacing next to the settings (conventions the run
    /// depends on that are not obvious from the keys themselves).
    pub fn note(&mut self, text: &'static str) {
        self.notes.push(text);
    }

    pub fn render(&self) -> String {
        let mut out = format!("command={}\n", self.command);
        for (key, value) in &self.lines {
            out.push_str(&format!("{key}={value}\n"));
        }
        for note in &self.notes {
            out.push_str(&format!("# {note}\n"));
        }
        out
    }

    /// Writes `effective-config.txt` into `dir`, creating the directory.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("effective-config.txt");
        std::fs::write(&path, self.render()).map_err(|e| Error::io(path, e))
    }
}
