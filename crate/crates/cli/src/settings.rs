//! Run settings: a flat TOML key-value file overlaid by command-line flags.

use std::fmt;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

/// A single value or a list, so `anchors = 9` and `anchors = [3, 6, 9]` both parse.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Counts {
    One(usize),
    Many(Vec<usize>),
}

impl Counts {
    pub fn to_vec(&self) -> Vec<usize> {
        match self {
            Counts::One(v) => vec![*v],
            Counts::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Probabilities {
    One(f64),
    Many(Vec<f64>),
}

impl Probabilities {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Probabilities::One(v) => vec![*v],
            Probabilities::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixKind {
    Binary,
    Planted,
    Digits,
}

/// Every setting any subcommand understands. Unset fields keep the
/// subcommand's defaults.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub seed: Option<u64>,
    pub anchors: Option<Counts>,
    pub bits: Option<u32>,
    pub noiseless: Option<bool>,
    pub tau: Option<f64>,
    pub trials: Option<usize>,
    pub paper_scale: Option<bool>,
    pub input_dim: Option<usize>,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub target_peak: Option<f64>,
    pub restarts: Option<usize>,
    pub projections: Option<Counts>,
    pub matrix: Option<MatrixKind>,
    pub density: Option<f64>,
    pub decay: Option<f64>,
    pub classes: Option<usize>,
    pub keep_probability: Option<Probabilities>,
    pub sets: Option<usize>,
    pub alpha: Option<f64>,
    pub frames: Option<usize>,
}

/// Parse failure pinned to a line of the settings file.
#[derive(Debug)]
pub struct ConfigError {
    pub path: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.path, line, self.message),
            None => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// Line on which `key` is assigned, for keys that parse but do not apply.
fn key_line(src: &str, key: &str) -> Option<usize> {
    src.lines().position(|l| l.trim_start().strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))).map(|i| i + 1)
}

impl Settings {
    /// Parses `src` and rejects keys outside `allowed`.
    pub fn parse(src: &str, path: &str, allowed: &[&str]) -> Result<Self, ConfigError> {
        let settings: Settings = toml::from_str(src).map_err(|e| ConfigError {
            path: path.to_string(),
            line: e.span().map(|s| line_of(src, s.start)),
            message: e.message().trim().to_string(),
        })?;
        let table: toml::Table = toml::from_str(src).expect("already parsed");
        if let Some(key) = table.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(ConfigError {
                path: path.to_string(),
                line: key_line(src, key),
                message: format!("`{key}` does not apply to this command"),
            });
        }
        Ok(settings)
    }

    pub fn load(path: &Path, allowed: &[&str]) -> Result<Self> {
        let src = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self::parse(&src, &path.display().to_string(), allowed)?)
    }

    /// Fields set in `flags` replace those from the file.
    pub fn overlay(self, flags: Settings) -> Settings {
        macro_rules! pick {
            ($($f:ident),*) => { Settings { $($f: flags.$f.or(self.$f)),* } };
        }
        pick!(
            seed, anchors, bits, noiseless, tau, trials, paper_scale, input_dim, rows, cols, target_peak, restarts,
            projections, matrix, density, decay, classes, keep_probability, sets, alpha, frames
        )
    }

    /// Names of the fields that are set, for checking flags against a command.
    pub fn set_keys(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        macro_rules! collect {
            ($($f:ident),*) => { $( if self.$f.is_some() { keys.push(stringify!($f)); } )* };
        }
        collect!(
            seed, anchors, bits, noiseless, tau, trials, paper_scale, input_dim, rows, cols, target_peak, restarts,
            projections, matrix, density, decay, classes, keep_probability, sets, alpha, frames
        );
        keys
    }

    pub fn check_applies(&self, allowed: &[&str], command: &str) -> Result<()> {
        if let Some(key) = self.set_keys().into_iter().find(|k| !allowed.contains(k)) {
            bail!("--{} does not apply to `{command}`", key.replace('_', "-"));
        }
        Ok(())
    }

    pub fn paper_scale(&self) -> bool {
        self.paper_scale.unwrap_or(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: &[&str] = &["seed", "anchors", "bits", "tau", "trials", "matrix", "keep_probability"];

    #[test]
    fn scalar_and_list_counts() {
        let s = Settings::parse("anchors = 9\nseed = 3", "c.toml", ALL).unwrap();
        assert_eq!(s.anchors.unwrap().to_vec(), vec![9]);
        let s = Settings::parse("anchors = [3, 6]", "c.toml", ALL).unwrap();
        assert_eq!(s.anchors.unwrap().to_vec(), vec![3, 6]);
        let s = Settings::parse("keep_probability = [0.6, 0.9]\nmatrix = \"digits\"", "c.toml", ALL).unwrap();
        assert_eq!(s.keep_probability.unwrap().to_vec(), vec![0.6, 0.9]);
        assert_eq!(s.matrix, Some(MatrixKind::Digits));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = Settings::parse("seed = 1\n\nbits = \"eight\"\n", "c.toml", ALL).unwrap_err();
        assert_eq!(err.line, Some(3), "{err}");
        let err = Settings::parse("seed = 1\nbogus = 2\n", "c.toml", ALL).unwrap_err();
        assert_eq!(err.line, Some(2), "{err}");
        let err = Settings::parse("seed = 1\nrows = 2\n", "c.toml", ALL).unwrap_err();
        assert_eq!(err.line, Some(2));
        assert!(err.to_string().starts_with("c.toml:2: "), "{err}");
        let err = Settings::parse("seed = \n", "c.toml", ALL).unwrap_err();
        assert_eq!(err.line, Some(1));
    }

    #[test]
    fn flags_win() {
        let file = Settings { seed: Some(1), bits: Some(6), ..Default::default() };
        let flags = Settings { seed: Some(2), ..Default::default() };
        let merged = file.overlay(flags);
        assert_eq!((merged.seed, merged.bits), (Some(2), Some(6)));
    }
}
