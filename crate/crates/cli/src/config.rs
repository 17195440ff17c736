//! Flat `key=value` run configuration with `#` comment lines.

use std::collections::BTreeMap;
use std::fmt::{self, Display};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

pub const CONFIG_FILE: &str = "config.txt";

/// Ordered `(key, default)` pairs accepted by one command.
pub type Schema = Vec<(&'static str, String)>;

/// Parse `key=value` lines; blank lines and lines starting with `#` are
/// skipped.
pub fn parse_text(text: &str) -> Result<Vec<(String, String)>, Vec<String>> {
    let mut out = Vec::new();
    let mut errs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => out.push((k.trim().to_string(), v.trim().to_string())),
            _ => errs.push(format!("line {}: expected key=value", n + 1)),
        }
    }
    if errs.is_empty() {
        Ok(out)
    } else {
        Err(errs)
    }
}

pub fn read_file(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    parse_text(&text).map_err(|errs| CliError::config(format!("{}: {}", path.display(), errs.join("; "))))
}

/// Values for one command: defaults, then the config file, then `--set`
/// overrides, then `--seed`. Problems are collected rather than returned so
/// that every offending key is reported together.
pub struct RunConfig {
    command: &'static str,
    keys: Vec<&'static str>,
    values: BTreeMap<&'static str, String>,
    errors: Vec<String>,
}

impl RunConfig {
    pub fn resolve(
        command: &'static str,
        schema: Schema,
        file: Option<&Path>,
        sets: &[String],
        seed: Option<u64>,
    ) -> Result<Self, CliError> {
        let mut cfg = Self {
            command,
            keys: schema.iter().map(|(k, _)| *k).collect(),
            values: schema.into_iter().collect(),
            errors: Vec::new(),
        };
        if let Some(path) = file {
            for (k, v) in read_file(path)? {
                cfg.assign(&k, v);
            }
        }
        for s in sets {
            match s.split_once('=') {
                Some((k, v)) => cfg.assign(k.trim(), v.trim().to_string()),
                None => cfg.errors.push(format!("--set `{s}` is not key=value")),
            }
        }
        if let Some(seed) = seed {
            cfg.assign("seed", seed.to_string());
        }
        Ok(cfg)
    }

    fn assign(&mut self, key: &str, value: String) {
        if key == "command" {
            if value != self.command {
                self.errors.push(format!("config is for `{value}`, not `{}`", self.command));
            }
            return;
        }
        match self.keys.iter().find(|k| **k == key) {
            Some(k) => {
                self.values.insert(k, value);
            }
            None => self.errors.push(format!("unknown key `{key}`")),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("key `{key}` not in schema"))
    }

    /// Parsed value; on failure the error is recorded and `fallback` returned.
    pub fn get_or<T>(&mut self, key: &str, fallback: T) -> T
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key).parse() {
            Ok(v) => v,
            Err(e) => {
                self.errors.push(format!("`{key}`: {e}"));
                fallback
            }
        }
    }

    pub fn get<T>(&mut self, key: &str) -> T
    where
        T: FromStr + Default,
        T::Err: Display,
    {
        self.get_or(key, T::default())
    }

    /// Empty means unset.
    pub fn opt<T>(&mut self, key: &str) -> Option<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        if self.raw(key).is_empty() {
            return None;
        }
        match self.raw(key).parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.errors.push(format!("`{key}`: {e}"));
                None
            }
        }
    }

    /// A path that must be given.
    pub fn path(&mut self, key: &str) -> PathBuf {
        if self.raw(key).is_empty() {
            self.errors.push(format!("`{key}` is required"));
        }
        PathBuf::from(self.raw(key))
    }

    /// Record the error of a validation result, if any.
    pub fn check<E: Display>(&mut self, r: Result<(), E>) {
        if let Err(e) = r {
            self.errors.push(e.to_string());
        }
    }

    pub fn finish(&mut self) -> Result<(), CliError> {
        if self.errors.is_empty() {
            Ok(())
        } else {
            Err(CliError::config(self.errors.join("; ")))
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# trafficnet {} resolved configuration\ncommand={}\n", self.command, self.command);
        for k in &self.keys {
            s.push_str(&format!("{k}={}\n", self.values[k]));
        }
        s
    }
}

/// Comma-separated pair `a,b`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pair<T>(pub T, pub T);

impl<T: FromStr> FromStr for Pair<T> {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("expected `a,b`, got `{s}`");
        let (a, b) = s.split_once(',').ok_or_else(bad)?;
        Ok(Pair(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
    }
}

impl<T: Display> Display for Pair<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.0, self.1)
    }
}

/// Comma-separated triple, or a single value repeated.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Triple<T>(pub [T; 3]);

impl<T: FromStr + Copy> FromStr for Triple<T> {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("expected `a,b,c` or a single value, got `{s}`");
        let parts: Vec<T> = s
            .split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [v] => Ok(Triple([v; 3])),
            [a, b, c] => Ok(Triple([a, b, c])),
            _ => Err(bad()),
        }
    }
}

impl<T: Display> Display for Triple<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.0[0], self.0[1], self.0[2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        vec![("epochs", "3".into()), ("seed", "7".into()), ("data", String::new())]
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let kv = parse_text("# header\n\nepochs = 4\n  # indented\nseed=9\n").unwrap();
        assert_eq!(kv, vec![("epochs".into(), "4".into()), ("seed".into(), "9".into())]);
        assert!(parse_text("novalue\n=3\n").unwrap_err().len() == 2);
    }

    #[test]
    fn every_unknown_key_is_reported() {
        let sets = vec!["bogus=1".to_string(), "epochs=5".into(), "other=2".into()];
        let mut c = RunConfig::resolve("train", schema(), None, &sets, Some(11)).unwrap();
        let err = c.finish().unwrap_err();
        assert!(err.msg.contains("`bogus`") && err.msg.contains("`other`"), "{}", err.msg);
        assert_eq!(c.raw("epochs"), "5");
        assert_eq!(c.raw("seed"), "11");
    }

    #[test]
    fn parse_errors_accumulate_with_unknown_keys() {
        let sets = vec!["epochs=x".to_string(), "nope=1".into()];
        let mut c = RunConfig::resolve("train", schema(), None, &sets, None).unwrap();
        let _: usize = c.get("epochs");
        let _ = c.path("data");
        let err = c.finish().unwrap_err();
        assert_eq!(err.kind, "config");
        assert_eq!(err.msg.matches("; ").count(), 2, "{}", err.msg);
    }

    #[test]
    fn resolved_text_round_trips() {
        let sets = vec!["data=/tmp/x".to_string()];
        let c = RunConfig::resolve("train", schema(), None, &sets, None).unwrap();
        let text = c.to_text();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(CONFIG_FILE);
        std::fs::write(&p, &text).unwrap();
        let mut again = RunConfig::resolve("train", schema(), Some(&p), &[], None).unwrap();
        again.finish().unwrap();
        assert_eq!(again.to_text(), text);
        let mut wrong = RunConfig::resolve("eval", schema(), Some(&p), &[], None).unwrap();
        assert!(wrong.finish().unwrap_err().msg.contains("not `eval`"));
    }

    #[test]
    fn pairs_and_triples() {
        assert_eq!("1,8".parse::<Pair<usize>>().unwrap(), Pair(1, 8));
        assert!("1-8".parse::<Pair<usize>>().is_err());
        assert_eq!("5".parse::<Triple<usize>>().unwrap(), Triple([5; 3]));
        assert_eq!("1, 2,3".parse::<Triple<usize>>().unwrap().to_string(), "1,2,3");
        assert!("1,2".parse::<Triple<usize>>().is_err());
    }
}
