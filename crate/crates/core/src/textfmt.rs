//! Versioned `key: values` text documents.
//!
//! Used for fitted models (pose models, PCA reducers) and network specs. The
//! first non-comment line is `<magic> v<version>`; every following line is
//! `key: value`. Floats are written in Rust's shortest round-trip form, so
//! reading a document back reproduces every value bit for bit.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TextFormatError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("expected a `{expected}` document, found `{found}`")]
    WrongMagic { expected: String, found: String },
    #[error("unsupported {magic} version {version}")]
    UnsupportedVersion { magic: String, version: u32 },
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("key `{key}`: {message}")]
    BadValue { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KvDocument {
    pub magic: String,
    pub version: u32,
    entries: Vec<(String, String)>,
}

impl KvDocument {
    pub fn new(magic: &str, version: u32) -> Self {
        Self {
            magic: magic.to_string(),
            version,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn push_floats(&mut self, key: &str, values: &[f64]) {
        let mut s = String::with_capacity(values.len() * 20);
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{v:?}");
        }
        self.entries.push((key.to_string(), s));
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn parse(text: &str) -> Result<Self, TextFormatError> {
        let mut doc: Option<KvDocument> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |message: &str| TextFormatError::Syntax {
                line: line_no,
                message: message.to_string(),
            };
            match doc.as_mut() {
                None => {
                    let mut parts = line.split_whitespace();
                    let magic = parts.next().ok_or_else(|| syntax("missing header"))?;
                    let version = parts
                        .next()
                        .and_then(|v| v.strip_prefix('v'))
                        .and_then(|v| v.parse::<u32>().ok())
                        .ok_or_else(|| syntax("header must be `<magic> v<version>`"))?;
                    if parts.next().is_some() {
                        return Err(syntax("trailing text after header"));
                    }
                    doc = Some(KvDocument::new(magic, version));
                }
                Some(d) => {
                    let (key, value) = line
                        .split_once(':')
                        .ok_or_else(|| syntax("expected `key: value`"))?;
                    let key = key.trim();
                    if key.is_empty() || key.contains(char::is_whitespace) {
                        return Err(syntax("invalid key"));
                    }
                    if d.entries.iter().any(|(k, _)| k == key) {
                        return Err(syntax(&format!("duplicate key `{key}`")));
                    }
                    d.entries.push((key.to_string(), value.trim().to_string()));
                }
            }
        }
        doc.ok_or(TextFormatError::Syntax {
            line: 0,
            message: "empty document".into(),
        })
    }

    /// Checks magic and that the version is at most `max_version`.
    pub fn expect(&self, magic: &str, max_version: u32) -> Result<(), TextFormatError> {
        if self.magic != magic {
            return Err(TextFormatError::WrongMagic {
                expected: magic.to_string(),
                found: self.magic.clone(),
            });
        }
        if self.version == 0 || self.version > max_version {
            return Err(TextFormatError::UnsupportedVersion {
                magic: magic.to_string(),
                version: self.version,
            });
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&str, TextFormatError> {
        self.get_opt(key)
            .ok_or_else(|| TextFormatError::MissingKey(key.to_string()))
    }

    pub fn get_opt(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn value<T: FromStr>(&self, key: &str) -> Result<T, TextFormatError> {
        let raw = self.get(key)?;
        raw.parse().map_err(|_| TextFormatError::BadValue {
            key: key.to_string(),
            message: format!("cannot parse `{}`", truncate(raw)),
        })
    }

    pub fn values<T: FromStr>(&self, key: &str) -> Result<Vec<T>, TextFormatError> {
        self.get(key)?
            .split_whitespace()
            .map(|tok| {
                tok.parse().map_err(|_| TextFormatError::BadValue {
                    key: key.to_string(),
                    message: format!("cannot parse `{}`", truncate(tok)),
                })
            })
            .collect()
    }

    /// Finite floats, optionally with an exact expected count.
    pub fn floats(&self, key: &str, len: Option<usize>) -> Result<Vec<f64>, TextFormatError> {
        let v: Vec<f64> = self.values(key)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(TextFormatError::BadValue {
                key: key.to_string(),
                message: "non-finite value".into(),
            });
        }
        if let Some(n) = len {
            if v.len() != n {
                return Err(TextFormatError::BadValue {
                    key: key.to_string(),
                    message: format!("expected {n} values, found {}", v.len()),
                });
            }
        }
        Ok(v)
    }
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(32) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl fmt::Display for KvDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} v{}", self.magic, self.version)?;
        for (k, v) in &self.entries {
            writeln!(f, "{k}: {v}")?;
        }
        Ok(())
    }
}
