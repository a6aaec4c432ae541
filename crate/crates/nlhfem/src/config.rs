//! Flat key-value configuration files with `[section]` headers.
//!
//! ```text
//! # comment
//! [adapt]
//! theta_D = 0.4      # trailing comments are stripped
//! I_list = 0, 1e5, 2e5
//! ```
//!
//! Keys keep their file order for error reporting; lookups are by
//! (section, key). Unknown keys are rejected by [`Config::validate_keys`] so
//! a typo in an experiment file fails loudly instead of silently running
//! with a default.

use crate::problem::C64;
use crate::{Error, Result};
use std::path::Path;

/// Default CIP penalty γ = −√3/24 + 0.005i. The real part cancels the
/// leading phase-lag term of P1 on equilateral lattices; the small positive
/// imaginary part keeps the discrete system away from resonances.
pub fn default_gamma() -> C64 {
    C64::new(-(3.0f64.sqrt()) / 24.0, 0.005)
}

/// Default Dörfler marking fraction.
pub const DEFAULT_THETA_D: f64 = 0.4;
/// Default bisections per marked element.
pub const DEFAULT_BISECTIONS: u32 = 1;

#[derive(Clone, Debug)]
struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
}

/// A parsed configuration file.
#[derive(Clone, Debug, Default)]
pub struct Config {
    entries: Vec<Entry>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut entries: Vec<Entry> = Vec::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            // strip comments: whole-line or trailing after whitespace
            let mut code = raw;
            if let Some(pos) = code.find('#') {
                let before = &code[..pos];
                if before.trim().is_empty() || before.ends_with(char::is_whitespace) {
                    code = before;
                }
            }
            let code = code.trim();
            if code.is_empty() {
                continue;
            }
            if let Some(name) = code.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {line}: unterminated section header")))?
                    .trim();
                if name.is_empty() {
                    return Err(Error::Config(format!("line {line}: empty section name")));
                }
                section = name.to_string();
                continue;
            }
            let Some((key, value)) = code.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {line}: expected `key = value` or `[section]`, got `{code}`"
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {line}: empty key")));
            }
            if let Some(prev) =
                entries.iter().find(|e| e.section == section && e.key == key)
            {
                return Err(Error::Config(format!(
                    "line {line}: key `{key}` in section `[{section}]` already set on line {}",
                    prev.line
                )));
            }
            entries.push(Entry { section: section.clone(), key, value, line });
        }
        Ok(Config { entries })
    }

    pub fn from_file(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Config::parse(&text)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.section == section && e.key == key)
            .map(|e| e.value.as_str())
    }

    fn parsed<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!(
                    "[{section}] {key} = `{raw}` is not a valid {}",
                    std::any::type_name::<T>()
                ))
            }),
        }
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        Ok(self.parsed(section, key)?.unwrap_or(default))
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        Ok(self.parsed(section, key)?.unwrap_or(default))
    }

    pub fn u32_or(&self, section: &str, key: &str, default: u32) -> Result<u32> {
        Ok(self.parsed(section, key)?.unwrap_or(default))
    }

    pub fn str_or<'a>(&'a self, section: &str, key: &str, default: &'a str) -> &'a str {
        self.get(section, key).unwrap_or(default)
    }

    pub fn require_f64(&self, section: &str, key: &str) -> Result<f64> {
        self.parsed(section, key)?.ok_or_else(|| {
            Error::Config(format!("missing required key [{section}] {key}"))
        })
    }

    /// Comma- or whitespace-separated list of floats.
    pub fn f64_list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(raw) = self.get(section, key) else { return Ok(None) };
        let mut out = Vec::new();
        for tok in raw.split(|c: char| c == ',' || c.is_whitespace()) {
            if tok.is_empty() {
                continue;
            }
            out.push(tok.parse::<f64>().map_err(|_| {
                Error::Config(format!("[{section}] {key}: `{tok}` is not a number"))
            })?);
        }
        Ok(Some(out))
    }

    /// Comma-separated list of identifiers.
    pub fn str_list(&self, section: &str, key: &str) -> Option<Vec<String>> {
        self.get(section, key).map(|raw| {
            raw.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
        })
    }

    /// Reject keys outside the allowed (section, keys) table.
    pub fn validate_keys(&self, allowed: &[(&str, &[&str])]) -> Result<()> {
        for e in &self.entries {
            let known = allowed
                .iter()
                .any(|(sec, keys)| *sec == e.section && keys.contains(&e.key.as_str()));
            if !known {
                return Err(Error::Config(format!(
                    "line {}: unknown key `{}` in section `[{}]`",
                    e.line, e.key, e.section
                )));
            }
        }
        Ok(())
    }

    /// Normalized text form: sections and keys sorted, one `key = value` per
    /// line. Stable under reformatting of the source file, used to hash the
    /// resolved inputs of a run.
    pub fn canonical_string(&self) -> String {
        let mut sorted: Vec<&Entry> = self.entries.iter().collect();
        sorted.sort_by(|a, b| (&a.section, &a.key).cmp(&(&b.section, &b.key)));
        let mut out = String::new();
        for e in sorted {
            out.push_str(&format!("[{}] {} = {}\n", e.section, e.key, e.value));
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
