//! Merges `--config` file values with command-line flags (flags win).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use lesionmap_core::config::KeyValues;

/// Missing or unusable arguments; reported like a clap usage error.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub struct Settings {
    file: KeyValues,
    /// Every value actually used, in lookup order.
    resolved: KeyValues,
}

impl Settings {
    pub fn load(path: Option<&Path>, allowed: &[&str]) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let kv = KeyValues::parse(&text).with_context(|| format!("parsing config {}", p.display()))?;
                kv.check_keys(allowed)
                    .with_context(|| format!("config {}", p.display()))?;
                kv
            }
            None => KeyValues::new(),
        };
        Ok(Settings {
            file,
            resolved: KeyValues::new(),
        })
    }

    fn lookup<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => self.file.parsed(key)?,
        };
        if let Some(v) = &value {
            self.resolved.set(key, v.to_string());
        }
        Ok(value)
    }

    pub fn or<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        let v = self.lookup(key, flag)?.unwrap_or(default);
        self.resolved.set(key, v.to_string());
        Ok(v)
    }

    pub fn opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        self.lookup(key, flag)
    }

    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        self.lookup(key, flag)?
            .ok_or_else(|| UsageError(format!("missing required argument --{key}")).into())
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        let s = self.required(key, flag.map(|p| p.display().to_string()))?;
        Ok(PathBuf::from(s))
    }

    pub fn opt_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        Ok(self.opt(key, flag.map(|p| p.display().to_string()))?.map(PathBuf::from))
    }

    /// A switch is on when given on the command line or set true in the file.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        self.or(key, flag.then_some(true), false)
    }

    pub fn resolved(&self) -> &KeyValues {
        &self.resolved
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "epochs = 3\nseed = 9\n").unwrap();
        let mut s = Settings::load(Some(&cfg), &["epochs", "seed", "lr"]).unwrap();
        assert_eq!(s.or("epochs", Some(5usize), 15).unwrap(), 5);
        assert_eq!(s.or("seed", None, 0u64).unwrap(), 9);
        assert_eq!(s.or("lr", None, 0.01f64).unwrap(), 0.01);
        assert_eq!(s.resolved().to_string(), "epochs = 5\nseed = 9\nlr = 0.01\n");
        assert!(s.required::<String>("out", None).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "epochz = 3\n").unwrap();
        assert!(Settings::load(Some(&cfg), &["epochs"]).is_err());
    }
}
