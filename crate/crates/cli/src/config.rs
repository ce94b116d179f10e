//! `key = value` config files backing every subcommand's flags.
//!
//! One option per line, `#` starts a comment anywhere, blank lines are
//! fine. Keys are the long flag names of the subcommand; unknown or
//! duplicate keys are usage errors, and command-line flags always win
//! over config values.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::AppError;

pub struct Config {
    /// key -> (line number, raw value)
    values: BTreeMap<String, (usize, String)>,
    source: String,
}

impl Config {
    pub fn empty() -> Config {
        Config { values: BTreeMap::new(), source: String::new() }
    }

    /// Loads and parses a config file; `None` means an empty config.
    pub fn load(path: Option<&Path>) -> Result<Config, AppError> {
        let Some(path) = path else { return Ok(Config::empty()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let source = path.display().to_string();
        let mut values = BTreeMap::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(at) => &raw_line[..at],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(AppError::Usage(format!(
                    "{source}:{}: expected `key = value`, found `{line}`",
                    i + 1
                )));
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(AppError::Usage(format!("{source}:{}: empty key", i + 1)));
            }
            if let Some((first, _)) = values.insert(key.clone(), (i + 1, value.trim().to_string()))
            {
                return Err(AppError::Usage(format!(
                    "{source}:{}: duplicate key `{key}` (first set on line {first})",
                    i + 1
                )));
            }
        }
        Ok(Config { values, source })
    }

    /// Removes and parses one key, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, AppError>
    where
        T::Err: Display,
    {
        match self.values.remove(key) {
            None => Ok(None),
            Some((line, raw)) => raw.parse().map(Some).map_err(|e| {
                AppError::Usage(format!(
                    "{}:{line}: bad value `{raw}` for `{key}`: {e}",
                    self.source
                ))
            }),
        }
    }

    /// Errors if any key was never consumed: those are unknown options.
    pub fn finish(self) -> Result<(), AppError> {
        if let Some((key, (line, _))) = self.values.into_iter().next() {
            return Err(AppError::Usage(format!(
                "{}:{line}: unknown config key `{key}`",
                self.source
            )));
        }
        Ok(())
    }
}
