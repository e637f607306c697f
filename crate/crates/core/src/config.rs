//! Plain `key = value` configuration text.
//!
//! One entry per line; `#` starts a comment; blank lines are ignored. Keys
//! are unique. Rendering preserves insertion order so a logged config can be
//! diffed and fed back unchanged.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("key `{key}`: cannot parse {value:?}: {reason}")]
    Value {
        key: String,
        value: String,
        reason: String,
    },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("unknown key `{0}`")]
    Unknown(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut kv = KeyValues::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            if kv.get(k).is_some() {
                return Err(ConfigError::Duplicate {
                    line: i + 1,
                    key: k.to_string(),
                });
            }
            kv.entries.push((k.to_string(), v.to_string()));
        }
        Ok(kv)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Inserts or replaces `key`, keeping its original position.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn parsed<T>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse().map_err(|e: T::Err| ConfigError::Value {
                    key: key.to_string(),
                    value: v.to_string(),
                    reason: e.to_string(),
                })
            })
            .transpose()
    }

    pub fn require<T>(&self, key: &str) -> Result<T, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.parsed(key)?.ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    /// Fails on the first key not in `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(ConfigError::Unknown(k.to_string())),
            None => Ok(()),
        }
    }
}

impl fmt::Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render() {
        let kv = KeyValues::parse("# header\nepochs = 15\n\nlr=0.01 # trailing\n").unwrap();
        assert_eq!(kv.get("epochs"), Some("15"));
        assert_eq!(kv.require::<f64>("lr").unwrap(), 0.01);
        assert_eq!(kv.to_string(), "epochs = 15\nlr = 0.01\n");
        assert_eq!(KeyValues::parse(&kv.to_string()).unwrap(), kv);
    }

    #[test]
    fn errors() {
        assert!(matches!(KeyValues::parse("novalue"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(KeyValues::parse("a=1\na=2"), Err(ConfigError::Duplicate { line: 2, .. })));
        let kv = KeyValues::parse("n = x").unwrap();
        assert!(matches!(kv.require::<u32>("n"), Err(ConfigError::Value { .. })));
        assert!(matches!(kv.require::<u32>("m"), Err(ConfigError::Missing(_))));
        assert!(matches!(kv.check_keys(&["m"]), Err(ConfigError::Unknown(_))));
    }

    #[test]
    fn set_overrides_in_place() {
        let mut kv = KeyValues::parse("a = 1\nb = 2").unwrap();
        kv.set("a", "9");
        kv.set("c", "3");
        assert_eq!(kv.to_string(), "a = 9\nb = 2\nc = 3\n");
    }
}
